"""Sensor model: channel, transmit power, queue and age dynamics.

Unit conventions
----------------
Time is counted in mini-slots (1/14 ms).  The sampling rate is a rational
``lambda = rate_units / rate_scale`` (``rate_scale`` is 10 for the tenths grid,
100 for the refined grid).  All state components are stored as integers so the
dynamics stay exact:

* ``a_buf_scaled = a_buf * rate_units``   (a_buf in mini-slots)
* ``d_scaled     = d * rate_units``       (0 or ``rate_scale``, i.e. d = 1/lambda)
* ``q_scaled     = q * rate_scale``       (q in packets)
* ``h``                                   channel state, 1-based

One idle mini-slot adds ``rate_units`` to both ``a_buf_scaled`` and ``q_scaled``;
sending one packet removes ``rate_scale`` from both.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .errors import InfeasibleActionError, InvalidChannelError

SLOT_MINISLOTS = 14
MINISLOT_DURATION = 1e-3 / SLOT_MINISLOTS
DEFAULT_SNR_DB = (-20.0, -10.0, 0.0, 10.0, 20.0)


def db_to_linear(db: float) -> float:
    return 10.0 ** (db / 10.0)


@dataclass(frozen=True)
class SystemParams:
    """Radio parameters shared by all sensors.

    ``power_table[w-1]`` is the per-mini-slot transmit energy needed in channel
    state ``w`` so that one ``packet_bits`` packet fits in one mini-slot.
    """

    channel_probs: tuple[float, ...]
    snr_linear: tuple[float, ...]
    bandwidth: float = 180e3
    packet_bits: int = 8
    minislot_duration: float = MINISLOT_DURATION
    slot_minislots: int = SLOT_MINISLOTS
    power_table: tuple[float, ...] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        alpha = tuple(float(a) for a in self.channel_probs)
        snr = tuple(float(s) for s in self.snr_linear)
        object.__setattr__(self, "channel_probs", alpha)
        object.__setattr__(self, "snr_linear", snr)
        if len(alpha) != len(snr) or not alpha:
            raise ValueError("channel_probs and snr_linear must be non-empty and equally long")
        if any(a < 0.0 or a > 1.0 for a in alpha) or abs(sum(alpha) - 1.0) > 1e-9:
            raise ValueError(f"channel_probs is not a distribution: {alpha}")
        if any(s <= 0.0 for s in snr) or any(b <= a for a, b in zip(snr, snr[1:])):
            raise ValueError("snr_linear must be positive and strictly increasing")
        if self.slot_minislots != SLOT_MINISLOTS:
            raise ValueError("a slot holds exactly 14 mini-slots")
        if self.bandwidth <= 0 or self.packet_bits <= 0 or self.minislot_duration <= 0:
            raise ValueError("bandwidth, packet_bits and minislot_duration must be positive")
        gain = 2.0 ** (self.packet_bits / (self.bandwidth * self.minislot_duration)) - 1.0
        object.__setattr__(self, "power_table", tuple(gain / s for s in snr))

    @property
    def W(self) -> int:
        return len(self.channel_probs)

    @property
    def alpha(self) -> np.ndarray:
        return np.asarray(self.channel_probs, dtype=float)

    @classmethod
    def default(cls, snr_offset_db: float = 0.0, **overrides) -> "SystemParams":
        """Five equiprobable channel states at -20..20 dB, shifted by ``snr_offset_db``."""
        snr_db = overrides.pop("snr_db", DEFAULT_SNR_DB)
        snr = tuple(db_to_linear(s + snr_offset_db) for s in snr_db)
        W = len(snr)
        probs = overrides.pop("channel_probs", (1.0 / W,) * W)
        return cls(channel_probs=probs, snr_linear=snr, **overrides)


@dataclass(frozen=True)
class SensorConfig:
    rate_units: int
    q_max: int
    age_cap: int | None = None  # mini-slots; default 2*q_max/lambda
    sampling_cost: float = 1.0
    energy_budget: float = 1.0
    rate_scale: int = 10

    def __post_init__(self):
        if self.rate_scale not in (10, 100):
            raise ValueError("rate_scale must be 10 or 100")
        if not 1 <= self.rate_units <= self.rate_scale:
            raise ValueError(f"rate_units must lie in 1..{self.rate_scale}")
        if self.q_max < 1:
            raise ValueError("q_max must be >= 1")
        if self.sampling_cost < 0 or self.energy_budget < 0:
            raise ValueError("sampling_cost and energy_budget must be non-negative")
        if self.age_cap is None:
            cap = math.ceil(2 * self.q_max * self.rate_scale / self.rate_units)
            object.__setattr__(self, "age_cap", cap)
        elif self.age_cap < 1:
            raise ValueError("age_cap must be >= 1")

    @classmethod
    def from_lambda(cls, lam: float, q_max: int, **kw) -> "SensorConfig":
        scale = kw.pop("rate_scale", None)
        if scale is None:
            scale = 10 if abs(lam * 10 - round(lam * 10)) < 1e-9 else 100
        units = round(lam * scale)
        if abs(units - lam * scale) > 1e-6:
            raise ValueError(f"lambda={lam} is not on the 1/{scale} grid")
        return cls(rate_units=units, q_max=q_max, rate_scale=scale, **kw)

    @property
    def lam(self) -> float:
        return self.rate_units / self.rate_scale

    @property
    def step(self) -> int:
        """Spacing of the scaled a_buf / q grids; closed under the update rules."""
        return math.gcd(self.rate_units, self.rate_scale)

    @property
    def a_cap_scaled(self) -> int:
        return self.age_cap * self.rate_units

    @property
    def q_cap_scaled(self) -> int:
        return self.q_max * self.rate_scale


class SensorState(NamedTuple):
    a_buf_scaled: int
    d_scaled: int
    q_scaled: int
    h: int

    def a_buf(self, cfg: SensorConfig) -> float:
        return self.a_buf_scaled / cfg.rate_units

    def d(self, cfg: SensorConfig) -> float:
        return self.d_scaled / cfg.rate_units

    def q(self, cfg: SensorConfig) -> float:
        return self.q_scaled / cfg.rate_scale

    def whole_packets(self, cfg: SensorConfig) -> int:
        return self.q_scaled // cfg.rate_scale


class Action(NamedTuple):
    u: int
    k: int


IDLE = Action(0, 1)


class TransitionOutcome(NamedTuple):
    b_tra: int
    next_state: SensorState
    epoch_cost: float
    epoch_reward: float


def initial_state(h: int) -> SensorState:
    return SensorState(0, 0, 0, h)


def power_for_channel(params: SystemParams, w: int) -> float:
    if not 1 <= w <= params.W:
        raise InvalidChannelError(f"channel state {w} outside 1..{params.W}")
    return params.power_table[w - 1]


def sample_channel(params: SystemParams, rng: np.random.Generator) -> int:
    return int(rng.choice(params.W, p=params.channel_probs)) + 1


def sample_channels(params: SystemParams, rng: np.random.Generator, size) -> np.ndarray:
    """Vectorised :func:`sample_channel`; returns 1-based states."""
    return rng.choice(params.W, size=size, p=params.channel_probs) + 1


def advance(cfg: SensorConfig, s: SensorState, u: int, k: int, h_next: int) -> tuple[int, SensorState]:
    """Apply one epoch of ``k`` mini-slots; ``u=1`` means this sensor transmits.

    Unlike :func:`step_state`, an unscheduled sensor may sit through a TTI of any
    length (another sensor holds the channel).  Returns ``(b_tra, next_state)``.
    """
    L, R = cfg.rate_units, cfg.rate_scale
    if u:
        b = min(k, s.q_scaled // R)
        a = s.a_buf_scaled + L * k - R * b
        d = R
        q = s.q_scaled + L * k - R * b
    else:
        b = 0
        a = s.a_buf_scaled + L * k
        d = s.d_scaled
        q = s.q_scaled + L * k
    a = min(max(a, 0), cfg.a_cap_scaled)
    q = min(max(q, 0), cfg.q_cap_scaled)
    return b, SensorState(a, d, q, h_next)


def check_action(cfg: SensorConfig, s: SensorState, g: Action) -> None:
    if g.u not in (0, 1) or not 1 <= g.k <= SLOT_MINISLOTS:
        raise InfeasibleActionError(f"malformed action {g}")
    if g.u == 0 and g.k != 1:
        raise InfeasibleActionError("an idle epoch lasts exactly one mini-slot")
    if g.u == 1 and s.q_scaled // cfg.rate_scale < 1:
        raise InfeasibleActionError(f"no whole packet queued in {s}")


def step_state(cfg: SensorConfig, s: SensorState, g: Action, h_next: int,
               params: SystemParams | None = None) -> TransitionOutcome:
    check_action(cfg, s, g)
    b, nxt = advance(cfg, s, g.u, g.k, h_next)
    cost = epoch_cost(cfg, s, g, params) if params is not None else math.nan
    return TransitionOutcome(b, nxt, cost, epoch_reward(s, cfg.rate_units))


def epoch_reward(s: SensorState, rate_units: int) -> float:
    """a_buf + d in mini-slots."""
    return (s.a_buf_scaled + s.d_scaled) / rate_units


def epoch_cost(cfg: SensorConfig, s: SensorState, g: Action, params: SystemParams) -> float:
    tx = power_for_channel(params, s.h) * g.k * g.u
    return cfg.sampling_cost * cfg.lam * g.k + tx
