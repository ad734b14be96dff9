import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from minislot_aoi.errors import InfeasibleActionError, InvalidChannelError
from minislot_aoi.model import (
    IDLE,
    Action,
    SensorConfig,
    SensorState,
    SystemParams,
    db_to_linear,
    epoch_cost,
    epoch_reward,
    power_for_channel,
    sample_channel,
    sample_channels,
    step_state,
)


def _shannon_power(snr_linear: float) -> float:
    # independent evaluation: 8 bits in 1/14 ms over 180 kHz
    return (2.0 ** (8 / (180e3 * (1e-3 / 14))) - 1.0) / snr_linear


class TestPower:
    def test_zero_db(self):
        p = SystemParams.default()
        assert power_for_channel(p, 3) == pytest.approx(0.539, abs=5e-4)
        assert power_for_channel(p, 3) == pytest.approx(_shannon_power(1.0), rel=1e-12)

    def test_twenty_db(self):
        p = SystemParams.default()
        assert power_for_channel(p, 5) == pytest.approx(0.00539, abs=5e-6)

    def test_vanishes_with_snr(self):
        p = SystemParams(channel_probs=(1.0,), snr_linear=(1e12,))
        assert power_for_channel(p, 1) < 1e-11

    def test_strictly_decreasing(self):
        table = SystemParams.default().power_table
        assert all(a > b for a, b in zip(table, table[1:]))

    @pytest.mark.parametrize("w", [0, 6, -1])
    def test_channel_out_of_range(self, w):
        with pytest.raises(InvalidChannelError):
            power_for_channel(SystemParams.default(), w)

    def test_snr_offset_shifts_table(self):
        base = SystemParams.default().power_table
        up = SystemParams.default(snr_offset_db=10).power_table
        assert np.allclose(np.array(base) / np.array(up), 10.0)

    def test_rejects_bad_distribution(self):
        with pytest.raises(ValueError):
            SystemParams(channel_probs=(0.5, 0.6), snr_linear=(1.0, 2.0))

    def test_db(self):
        assert db_to_linear(20) == pytest.approx(100.0)


class TestSampling:
    def test_degenerate(self):
        p = SystemParams(channel_probs=(1, 0, 0, 0, 0), snr_linear=(1, 2, 3, 4, 5))
        rng = np.random.default_rng(0)
        assert {sample_channel(p, rng) for _ in range(200)} == {1}

    def test_two_state_frequency(self):
        p = SystemParams(channel_probs=(0.5, 0.5), snr_linear=(1, 2))
        x = sample_channels(p, np.random.default_rng(3), 10**6)
        assert 0.498 <= np.mean(x == 1) <= 0.502

    def test_uniform_default(self):
        p = SystemParams.default()
        x = sample_channels(p, np.random.default_rng(4), 10**6)
        freq = np.bincount(x, minlength=6)[1:] / x.size
        assert np.all((freq >= 0.195) & (freq <= 0.205))

    def test_seeded(self):
        p = SystemParams.default()
        a = sample_channels(p, np.random.default_rng(9), 100)
        b = sample_channels(p, np.random.default_rng(9), 100)
        assert np.array_equal(a, b)


class TestStep:
    cfg = SensorConfig(rate_units=5, q_max=3)

    def test_idle_branch(self):
        out = step_state(self.cfg, SensorState(4, 0, 10, 2), Action(0, 1), 3)
        assert out.b_tra == 0
        assert out.next_state == SensorState(9, 0, 15, 3)

    def test_scheduled_branch(self):
        out = step_state(self.cfg, SensorState(20, 0, 20, 4), Action(1, 2), 1)
        assert out.b_tra == 2
        assert out.next_state == SensorState(10, 10, 10, 1)
        s = out.next_state
        assert (s.a_buf(self.cfg), s.d(self.cfg), s.q(self.cfg)) == (2.0, 2.0, 1.0)

    def test_queue_saturates(self):
        out = step_state(self.cfg, SensorState(0, 0, 30, 1), IDLE, 1)
        assert out.next_state.q_scaled == 30

    def test_no_whole_packet(self):
        with pytest.raises(InfeasibleActionError):
            step_state(self.cfg, SensorState(0, 0, 5, 1), Action(1, 1), 1)

    def test_idle_must_last_one_minislot(self):
        with pytest.raises(InfeasibleActionError):
            step_state(self.cfg, SensorState(0, 0, 5, 1), Action(0, 2), 1)

    def test_b_tra_capped_by_queue(self):
        out = step_state(self.cfg, SensorState(20, 0, 20, 1), Action(1, 2), 1)
        assert out.b_tra <= 2


class TestRewardCost:
    def test_reward(self):
        assert epoch_reward(SensorState(0, 0, 0, 1), 7) == 0
        assert epoch_reward(SensorState(10, 10, 0, 1), 5) == 4.0
        assert epoch_reward(SensorState(7, 10, 0, 1), 10) == pytest.approx(1.7, rel=1e-12)

    def test_cost(self):
        p = SystemParams.default()
        cfg = SensorConfig(5, 3)
        assert epoch_cost(cfg, SensorState(0, 0, 0, 3), IDLE, p) == pytest.approx(0.5)
        sent = epoch_cost(cfg, SensorState(0, 0, 20, 3), Action(1, 2), p)
        assert sent == pytest.approx(1.0 + 2 * _shannon_power(1.0))
        assert sent == pytest.approx(2.078, abs=1e-3)
        free = SensorConfig(5, 3, sampling_cost=0.0)
        assert epoch_cost(free, SensorState(0, 0, 0, 3), IDLE, p) == 0

    def test_cost_monotone_in_k(self):
        p = SystemParams.default()
        cfg = SensorConfig(5, 3)
        s = SensorState(0, 0, 30, 2)
        costs = [epoch_cost(cfg, s, Action(1, k), p) for k in (1, 2, 3)]
        assert costs == sorted(costs)


class TestConfig:
    def test_default_age_cap(self):
        assert SensorConfig(5, 3).age_cap == 12
        assert SensorConfig(3, 3).age_cap == math.ceil(60 / 3)

    def test_from_lambda(self):
        assert SensorConfig.from_lambda(0.3, 3).rate_units == 3
        c = SensorConfig.from_lambda(0.27, 3)
        assert (c.rate_units, c.rate_scale) == (27, 100)

    @pytest.mark.parametrize("kw", [dict(rate_units=0), dict(rate_units=11), dict(q_max=0),
                                    dict(rate_scale=7)])
    def test_rejects(self, kw):
        base = dict(rate_units=5, q_max=3) | kw
        with pytest.raises(ValueError):
            SensorConfig(**base)


_rates = st.sampled_from([(u, 10) for u in range(1, 11)] + [(27, 100), (33, 100)])


@settings(max_examples=60, deadline=None)
@given(rate=_rates, q_max=st.integers(1, 5), seed=st.integers(0, 2**32 - 1))
def test_random_trajectories_stay_in_range(rate, q_max, seed):
    units, scale = rate
    cfg = SensorConfig(units, q_max, rate_scale=scale)
    p = SystemParams.default()
    rng = np.random.default_rng(seed)
    s = SensorState(0, 0, 0, 1)
    sent_once = False
    for _ in range(300):
        whole = s.q_scaled // scale
        if whole and rng.random() < 0.5:
            g = Action(1, int(rng.integers(1, min(14, whole) + 1)))
        else:
            g = IDLE
        out = step_state(cfg, s, g, int(rng.integers(1, 6)), p)
        s = out.next_state
        sent_once |= g.u == 1
        assert 0 <= s.a_buf_scaled <= cfg.a_cap_scaled
        assert 0 <= s.q_scaled <= cfg.q_cap_scaled
        assert s.d_scaled == (scale if sent_once else 0)
        assert s.a_buf_scaled % cfg.step == 0 and s.q_scaled % cfg.step == 0
        assert out.b_tra <= g.k and (g.u or out.b_tra == 0)
