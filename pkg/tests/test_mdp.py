import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from minislot_aoi.errors import ConvergenceError, SpaceTooLargeError
from minislot_aoi.mdp import (
    ACTIONS,
    VISettings,
    action_index,
    build_kernel,
    enumerate_states,
    feasible_actions,
    greedy_actions,
    transition_distribution,
    value_iteration,
)
from minislot_aoi.model import IDLE, Action, SensorConfig, SensorState, SystemParams, epoch_cost, epoch_reward
from minislot_aoi.oracle import TinyInstance, enumerate_best_policy
from minislot_aoi.steady_state import evaluate_policy


def test_state_count_default(default_params):
    space = enumerate_states(default_params, SensorConfig(5, 3, age_cap=10))
    assert space.size == 770
    assert list(space.q_values) == [0, 5, 10, 15, 20, 25, 30]
    assert len(space.a_values) == 11


def test_state_count_minimal():
    p = SystemParams(channel_probs=(1.0,), snr_linear=(1.0,))
    assert enumerate_states(p, SensorConfig(10, 1, age_cap=1)).size == 8


def test_space_limit(default_params):
    with pytest.raises(SpaceTooLargeError):
        enumerate_states(default_params, SensorConfig(5, 3), limit=100)


@settings(max_examples=25, deadline=None)
@given(units=st.integers(1, 10), q_max=st.integers(1, 4))
def test_ids_are_a_bijection(units, q_max):
    p = SystemParams.default()
    space = enumerate_states(p, SensorConfig(units, q_max))
    ids = np.arange(space.size)
    assert all(space.index(space.state(i)) == i for i in ids)


def test_off_grid_state_rejected(default_params):
    space = enumerate_states(default_params, SensorConfig(5, 3))
    with pytest.raises(KeyError):
        space.index(SensorState(3, 0, 0, 1))


class TestFeasibleActions:
    cfg = SensorConfig(5, 20)

    def test_half_packet(self):
        assert feasible_actions(SensorState(0, 0, 5, 1), self.cfg) == [IDLE]

    def test_two_packets(self):
        assert set(feasible_actions(SensorState(0, 0, 20, 1), self.cfg)) == {IDLE, Action(1, 1), Action(1, 2)}

    def test_cap_at_fourteen(self):
        acts = feasible_actions(SensorState(0, 0, 200, 1), self.cfg)
        assert max(g.k for g in acts) == 14 and len(acts) == 15

    def test_action_index_roundtrip(self):
        assert all(ACTIONS[action_index(g)] == g for g in ACTIONS)


class TestTransitions:
    def test_sums_to_one(self, default_params, cfg_half):
        space = enumerate_states(default_params, cfg_half)
        for s in (SensorState(0, 0, 0, 1), SensorState(20, 0, 20, 4), SensorState(60, 10, 30, 5)):
            for g in feasible_actions(s, cfg_half):
                dist = transition_distribution(cfg_half, default_params, s, g, space)
                assert sum(p for _, p in dist) == pytest.approx(1.0, abs=1e-12)
                nc = {tuple(space.state(i))[:3] for i, _ in dist}
                assert len(nc) == 1 and len(dist) == default_params.W

    def test_degenerate_channel(self, cfg_half):
        p = SystemParams(channel_probs=(1, 0, 0), snr_linear=(1, 2, 3))
        dist = transition_distribution(cfg_half, p, SensorState(0, 0, 10, 1), Action(1, 1))
        assert len(dist) == 1 and dist[0][1] == 1.0

    def test_kernel_matches_step_state(self, default_params, cfg_half):
        space = enumerate_states(default_params, cfg_half)
        ker = build_kernel(space, default_params)
        rng = np.random.default_rng(0)
        for i in rng.choice(space.size, 200, replace=False):
            s = space.state(int(i))
            for g in feasible_actions(s, cfg_half):
                expect = {j for j, _ in transition_distribution(cfg_half, default_params, s, g, space)}
                nc = ker.succ[action_index(g), int(i) // space.W]
                assert expect == {int(nc) * space.W + w for w in range(space.W)}


class TestValueIteration:
    def test_myopic_when_gamma_zero(self, default_params, cfg_half):
        y = 0.7
        pol, _ = value_iteration(cfg_half, default_params, y, VISettings(gamma=0.0))
        for i in range(0, pol.space.size, 7):
            s = pol.space.state(i)
            acts = feasible_actions(s, cfg_half)
            scores = [epoch_reward(s, 5) + y * epoch_cost(cfg_half, s, g, default_params) for g in acts]
            assert pol.action(i) == acts[int(np.argmin(scores))]

    def test_large_multiplier_idles(self, tiny_params):
        inst = TinyInstance(SensorConfig(10, 2, age_cap=3), tiny_params)
        pol, _ = value_iteration(inst.cfg, inst.params, 1e6)
        assert not pol.u.any()
        best = enumerate_best_policy(inst, 1e6, 0.95)
        assert not best.policy.u.any()

    def test_contraction(self, default_params, cfg_half):
        pol, _ = value_iteration(cfg_half, default_params, 0.5)
        d = np.array(pol.deltas)
        assert np.all(d[1:] <= 0.95 * d[:-1] + 1e-9)
        assert pol.delta < 0.01

    def test_greedy_wrt_own_values(self, default_params, cfg_half):
        pol, table = value_iteration(cfg_half, default_params, 0.5)
        ker = build_kernel(pol.space, default_params)
        assert np.array_equal(greedy_actions(ker, table.values, 0.5, 0.95), pol.actions)

    def test_stored_actions_feasible(self, default_params, cfg_half):
        pol, _ = value_iteration(cfg_half, default_params, 0.0)
        for i in range(pol.space.size):
            assert pol.action(i) in feasible_actions(pol.space.state(i), cfg_half)

    def test_cost_non_increasing_in_multiplier(self, default_params):
        cfg = SensorConfig(3, 3)
        costs = []
        for y in np.arange(0, 5.01, 0.5):
            pol, _ = value_iteration(cfg, default_params, float(y))
            costs.append(evaluate_policy(pol, cfg, default_params).avg_cost)
        assert all(a >= b - 1e-9 for a, b in zip(costs, costs[1:]))

    def test_prune_agrees_on_reachable_states(self, default_params, cfg_half):
        full, _ = value_iteration(cfg_half, default_params, 0.5)
        pruned, _ = value_iteration(cfg_half, default_params, 0.5, prune=True)
        a = evaluate_policy(full, cfg_half, default_params)
        b = evaluate_policy(pruned, cfg_half, default_params)
        assert a.avg_aoi == pytest.approx(b.avg_aoi, rel=1e-9)

    def test_non_convergence(self, default_params, cfg_half):
        with pytest.raises(ConvergenceError):
            value_iteration(cfg_half, default_params, 0.5, VISettings(max_iter=3))

    def test_negative_multiplier(self, default_params, cfg_half):
        with pytest.raises(ValueError):
            value_iteration(cfg_half, default_params, -1.0)
