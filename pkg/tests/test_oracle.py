import numpy as np
import pytest

from minislot_aoi.mdp import VISettings, enumerate_states, idle_policy, value_iteration
from minislot_aoi.model import SensorConfig, SystemParams, epoch_reward
from minislot_aoi.oracle import (
    TinyInstance,
    TooLargeError,
    discounted_value,
    enumerate_best_policy,
    monte_carlo_evaluate,
)


@pytest.mark.parametrize("y", [0.0, 2.0])
@pytest.mark.parametrize("q_max", [1, 2])
def test_value_iteration_matches_enumeration(tiny_params, y, q_max):
    inst = TinyInstance(SensorConfig(10, q_max, age_cap=3), tiny_params)
    best = enumerate_best_policy(inst, y, 0.9)
    pol, _ = value_iteration(inst.cfg, inst.params, y, VISettings(gamma=0.9))
    assert discounted_value(pol, inst.cfg, inst.params, y, 0.9) - best.value <= 0.01
    assert discounted_value(best.policy, inst.cfg, inst.params, y, 0.9) == pytest.approx(best.value)


def test_policy_count_is_product_of_choices():
    p = SystemParams(channel_probs=(1.0,), snr_linear=(1.0,))
    inst = TinyInstance(SensorConfig(10, 1, age_cap=1), p)
    states = inst.reachable()
    # with q_max = 1 every state holding a packet offers idle or send one
    assert inst.policy_count() == 2 ** sum(s.q_scaled >= 10 for s in states)
    best = enumerate_best_policy(inst, 0.0, 0.5)
    assert best.evaluated == inst.policy_count()


def test_myopic_oracle(tiny_params):
    inst = TinyInstance(SensorConfig(10, 2, age_cap=3), tiny_params)
    best = enumerate_best_policy(inst, 0.0, 0.0)
    # with gamma = 0 every policy scores r(start); ties keep the idle policy
    assert best.value == pytest.approx(epoch_reward(inst.reachable()[0], 10))
    assert not best.policy.u.any()


def test_guard(default_params):
    with pytest.raises(TooLargeError):
        enumerate_best_policy(TinyInstance(SensorConfig(5, 3), default_params), 0.0, 0.9)


class TestMonteCarlo:
    def test_idle_cost_exact(self, default_params, cfg_half):
        pol = idle_policy(enumerate_states(default_params, cfg_half))
        mc = monte_carlo_evaluate(pol, cfg_half, default_params, 1000, seed=0)
        assert mc.avg_cost == pytest.approx(0.5, abs=1e-12)

    def test_degenerate_channel_is_deterministic(self, cfg_half):
        p = SystemParams(channel_probs=(0.0, 1.0), snr_linear=(1.0, 2.0))
        pol, _ = value_iteration(cfg_half, p, 0.3)
        a = monte_carlo_evaluate(pol, cfg_half, p, 5000, seed=1)
        b = monte_carlo_evaluate(pol, cfg_half, p, 5000, seed=2)
        assert (a.avg_aoi, a.avg_cost) == (b.avg_aoi, b.avg_cost)

    def test_standard_error_shrinks(self, default_params):
        cfg = SensorConfig(3, 3)
        pol, _ = value_iteration(cfg, default_params, 0.0)
        se = [np.mean([monte_carlo_evaluate(pol, cfg, default_params, n, seed=s).se_aoi for s in range(3)])
              for n in (10**4, 10**5)]
        assert se[1] < se[0] / 2          # about 1/sqrt(10) = 0.32

    def test_rejects_bad_input(self, default_params, cfg_half):
        pol = idle_policy(enumerate_states(default_params, cfg_half))
        with pytest.raises(ValueError):
            monte_carlo_evaluate(pol, cfg_half, default_params, 0)
        with pytest.raises(ValueError):
            monte_carlo_evaluate(pol, cfg_half, default_params, 10, redraw="never")
