"""Mini-slot simulator for N sensors sharing one uplink.

Two schedulers are available:

* ``semi-distributed``: every sensor consults its own policy each epoch; the
  ones that want to transmit and whose TTI fits the current slot report to
  the central scheduler, which grants the channel to the largest destination
  AoI (lowest sensor id on ties).
* ``slot-based``: decisions only at slot boundaries; the largest-AoI sensor
  holding a whole packet gets the full 14 mini-slot slot.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ConfigError
from .mdp import ACTIONS, DeterministicPolicy
from .model import SLOT_MINISLOTS, SensorConfig, SystemParams, advance, initial_state

SCHEDULERS = ("semi-distributed", "slot-based")
REDRAW_MODES = ("slot", "epoch")
_CHUNK = 4096


@dataclass(frozen=True)
class SensorSpec:
    cfg: SensorConfig
    policy: object = field(default=None, repr=False)  # DeterministicPolicy, MixedPolicy or None


@dataclass(frozen=True)
class Scenario:
    sensors: tuple[SensorSpec, ...]
    params: SystemParams
    horizon: int = 1000                 # slots
    seed: int = 0
    scheduler: str = "semi-distributed"
    redraw: str = "slot"
    slot_aligned: bool = True           # TTIs may not cross slot boundaries
    sampling: str = "optimized"         # label only: "optimized" or "fixed"

    def __post_init__(self):
        object.__setattr__(self, "sensors", tuple(self.sensors))
        if not self.sensors:
            raise ConfigError("a scenario needs at least one sensor")
        if self.horizon < 1:
            raise ConfigError("horizon must be >= 1 slot")
        if self.scheduler not in SCHEDULERS:
            raise ConfigError(f"unknown scheduler {self.scheduler!r}")
        if self.redraw not in REDRAW_MODES:
            raise ConfigError(f"unknown channel redraw mode {self.redraw!r}")
        if self.scheduler == "semi-distributed":
            for n, sp in enumerate(self.sensors):
                if sp.policy is None:
                    raise ConfigError(f"sensor {n} has no solved policy")
                if _tables(sp.policy)[0].space.cfg != sp.cfg:
                    raise ConfigError(f"sensor {n}: policy was solved for a different configuration")

    @property
    def N(self) -> int:
        return len(self.sensors)

    @property
    def total_rate(self) -> float:
        return sum(sp.cfg.lam for sp in self.sensors)


@dataclass
class SimClock:
    minislot: int = 0     # absolute mini-slot counter
    slot_used: int = 0    # o: mini-slots consumed in the current slot

    def fits(self, k: int) -> bool:
        return self.slot_used + k <= SLOT_MINISLOTS

    def advance(self, k: int) -> bool:
        """Move ``k`` mini-slots ahead; True when a slot boundary was crossed or reached."""
        before = self.minislot // SLOT_MINISLOTS
        self.minislot += k
        self.slot_used = self.minislot % SLOT_MINISLOTS
        return self.minislot // SLOT_MINISLOTS != before


def _tables(policy) -> tuple[DeterministicPolicy, DeterministicPolicy, float]:
    if isinstance(policy, DeterministicPolicy):
        return policy, policy, 1.0
    return policy.pi_low, policy.pi_high, float(policy.theta)


class _Sensor:
    """Mutable run-time view of one sensor with its own random streams."""

    def __init__(self, n: int, spec: SensorSpec, params: SystemParams, seq: np.random.SeedSequence):
        self.n = n
        self.cfg = spec.cfg
        ch_seq, mix_seq = seq.spawn(2)
        self.ch_rng = np.random.default_rng(ch_seq)
        self.mix_rng = np.random.default_rng(mix_seq)
        self.W = params.W
        self.alpha = params.alpha
        self._ch, self._ci = np.empty(0, dtype=np.int64), 0
        self._mix, self._mi = np.empty(0), 0
        if spec.policy is not None:
            low, high, self.theta = _tables(spec.policy)
            self.space = low.space
            self.act_low = low.actions.tolist()
            self.act_high = high.actions.tolist()
        else:
            self.space = None
        self.state = initial_state(self.draw_channel())

    def draw_channel(self) -> int:
        if self._ci >= len(self._ch):
            self._ch = self.ch_rng.choice(self.W, size=_CHUNK, p=self.alpha) + 1
            self._ci = 0
        h = int(self._ch[self._ci])
        self._ci += 1
        return h

    def _coin(self) -> float:
        if self._mi >= len(self._mix):
            self._mix, self._mi = self.mix_rng.random(_CHUNK), 0
        x = float(self._mix[self._mi])
        self._mi += 1
        return x

    def action_index(self) -> int:
        sp, s = self.space, self.state
        nc = ((s.a_buf_scaled // sp.step) * 2 + (s.d_scaled != 0)) * sp.nq + s.q_scaled // sp.step
        i = nc * self.W + s.h - 1
        if self.act_low is self.act_high or self.theta >= 1.0:
            return self.act_low[i]
        if self.theta <= 0.0:
            return self.act_high[i]
        return self.act_low[i] if self._coin() < self.theta else self.act_high[i]

    @property
    def a_des(self) -> float:
        return (self.state.a_buf_scaled + self.state.d_scaled) / self.cfg.rate_units

    @property
    def q(self) -> float:
        return self.state.q_scaled / self.cfg.rate_scale


@dataclass(frozen=True)
class Request:
    sensor: int
    a_des: float
    k: int


def local_decisions(sensors: Sequence[_Sensor], clock: SimClock, slot_aligned: bool = True) -> list[Request]:
    """Sensors whose policy transmits and whose TTI fits the slot; the rest stay silent."""
    omega = []
    for sn in sensors:
        g = ACTIONS[sn.action_index()]
        if g.u == 1 and (not slot_aligned or clock.fits(g.k)):
            omega.append(Request(sn.n, sn.a_des, g.k))
    return omega


def central_select(omega: Sequence[Request]) -> Request | None:
    """Largest destination AoI wins; the lowest sensor id breaks ties."""
    if not omega:
        return None
    return min(omega, key=lambda r: (-r.a_des, r.sensor))


def slot_based_scheduler(sensors: Sequence[_Sensor], clock: SimClock) -> Request | None:
    """Full-slot grant to the largest-AoI sensor holding at least one whole packet."""
    if clock.slot_used != 0:
        raise ValueError("slot-based decisions happen only at slot boundaries")
    ready = [Request(sn.n, sn.a_des, SLOT_MINISLOTS) for sn in sensors
             if sn.state.q_scaled // sn.cfg.rate_scale >= 1]
    return central_select(ready)


@dataclass
class _Tally:
    epochs: int = 0
    aoi_sum: float = 0.0
    aoi_time_sum: float = 0.0
    cost_sum: float = 0.0
    granted: int = 0
    sent: int = 0
    q_time_sum: float = 0.0
    q_max_seen: float = 0.0


def advance_epoch(sensors: Sequence[_Sensor], clock: SimClock, winner: Request | None, k: int,
                  params: SystemParams, tallies: Sequence[_Tally], *, redraw: str = "slot",
                  charge_sent_only: bool = False) -> list[float]:
    """Apply one epoch of ``k`` mini-slots to every sensor; returns per-sensor energy."""
    power = params.power_table
    energy = []
    for sn, t in zip(sensors, tallies):
        s = sn.state
        aoi = (s.a_buf_scaled + s.d_scaled) / sn.cfg.rate_units
        q = s.q_scaled / sn.cfg.rate_scale
        u = 1 if winner is not None and winner.sensor == sn.n else 0
        b, nxt = advance(sn.cfg, s, u, k, s.h)
        e = sn.cfg.sampling_cost * sn.cfg.lam * k
        if u:
            e += power[s.h - 1] * (b if charge_sent_only else k)
            t.granted += k
            t.sent += b
        t.epochs += 1
        t.aoi_sum += aoi
        t.aoi_time_sum += aoi * k
        t.cost_sum += e
        t.q_time_sum += q * k
        t.q_max_seen = max(t.q_max_seen, q)
        sn.state = nxt
        energy.append(e)
    crossed = clock.advance(k)
    if redraw == "epoch" or crossed:
        for sn in sensors:
            sn.state = sn.state._replace(h=sn.draw_channel())
    return energy


@dataclass(frozen=True)
class SensorReport:
    avg_aoi: float          # per epoch
    avg_aoi_time: float     # per mini-slot
    avg_energy: float       # per epoch
    f: float                # share of mini-slots granted to this sensor
    tau: float
    packets_sent: int
    mean_queue: float
    max_queue: float


@dataclass(frozen=True)
class SimReport:
    scheduler: str
    redraw: str
    seed: int
    epochs: int
    minislots: int
    sensors: tuple[SensorReport, ...]
    reports_sent: int       # state reports received by the central scheduler
    total_rate: float
    stable: bool
    trace: tuple = field(default=(), repr=False)

    @property
    def maoi(self) -> float:
        return max(s.avg_aoi for s in self.sensors)

    @property
    def maoi_time(self) -> float:
        return max(s.avg_aoi_time for s in self.sensors)

    def to_dict(self) -> dict:
        return {
            "scheduler": self.scheduler, "redraw": self.redraw, "seed": self.seed,
            "epochs": self.epochs, "minislots": self.minislots,
            "maoi": self.maoi, "maoi_time": self.maoi_time,
            "reports_sent": self.reports_sent, "total_rate": self.total_rate,
            "stable": self.stable,
            "sensors": [vars(s) for s in self.sensors],
        }

    def trace_csv(self, n_sensors: int) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        head = ["epoch", "minislot", "winner", "k"]
        for n in range(n_sensors):
            head += [f"a_buf_{n}", f"a_des_{n}", f"q_{n}", f"h_{n}", f"energy_{n}"]
        w.writerow(head)
        w.writerows(self.trace)
        return buf.getvalue()


def compute_metrics(tallies: Sequence[_Tally], minislots: int, rates: Sequence[float],
                    q_caps: Sequence[int], queue_limit: float = 0.9) -> tuple[tuple[SensorReport, ...], bool]:
    """Per-sensor averages and the stability verdict.

    Stable means the total sampling rate is below one packet per mini-slot and
    every sensor's time-average queue stays under ``queue_limit * q_max``.
    """
    out = []
    ok = sum(rates) < 1.0
    for t, q_cap in zip(tallies, q_caps):
        f = t.granted / minislots if minislots else 0.0
        mean_q = t.q_time_sum / minislots if minislots else 0.0
        ok = ok and mean_q < queue_limit * q_cap
        out.append(SensorReport(
            avg_aoi=t.aoi_sum / t.epochs, avg_aoi_time=t.aoi_time_sum / minislots,
            avg_energy=t.cost_sum / t.epochs, f=f, tau=f, packets_sent=t.sent,
            mean_queue=mean_q, max_queue=t.q_max_seen))
    return tuple(out), ok


def run_simulation(scenario: Scenario, *, record_trace: bool = False) -> SimReport:
    """Run the scenario for ``horizon`` slots; fully determined by ``scenario.seed``."""
    params = scenario.params
    seqs = np.random.SeedSequence(scenario.seed).spawn(scenario.N)
    sensors = [_Sensor(n, sp, params, seq) for n, (sp, seq) in enumerate(zip(scenario.sensors, seqs))]
    tallies = [_Tally() for _ in sensors]
    clock = SimClock()
    end = scenario.horizon * SLOT_MINISLOTS
    reports = 0
    trace = []
    slot_based = scenario.scheduler == "slot-based"
    while clock.minislot < end:
        if slot_based:
            winner = slot_based_scheduler(sensors, clock)
            reports += scenario.N
            k = SLOT_MINISLOTS
        else:
            omega = local_decisions(sensors, clock, scenario.slot_aligned)
            reports += len(omega)
            winner = central_select(omega)
            k = winner.k if winner else 1
        if record_trace:
            row = [tallies[0].epochs, clock.minislot, -1 if winner is None else winner.sensor, k]
            snap = [(sn.state, sn.cfg) for sn in sensors]
        energy = advance_epoch(sensors, clock, winner, k, params, tallies,
                               redraw=scenario.redraw, charge_sent_only=slot_based)
        if record_trace:
            for (s, cfg), e in zip(snap, energy):
                row += [s.a_buf_scaled / cfg.rate_units, (s.a_buf_scaled + s.d_scaled) / cfg.rate_units,
                        s.q_scaled / cfg.rate_scale, s.h, e]
            trace.append(tuple(row))
    rates = [sp.cfg.lam for sp in scenario.sensors]
    per_sensor, stable = compute_metrics(tallies, clock.minislot, rates,
                                         [sp.cfg.q_max for sp in scenario.sensors])
    return SimReport(scheduler=scenario.scheduler, redraw=scenario.redraw, seed=scenario.seed,
                     epochs=tallies[0].epochs, minislots=clock.minislot, sensors=per_sensor,
                     reports_sent=reports, total_rate=sum(rates), stable=stable, trace=tuple(trace))


def aggregate(reports: Sequence[SimReport], time_weighted: bool = True) -> tuple[float, float]:
    """Mean MAoI over seeds and its standard error."""
    x = np.array([r.maoi_time if time_weighted else r.maoi for r in reports])
    se = float(x.std(ddof=1) / math.sqrt(len(x))) if len(x) > 1 else math.nan
    return float(x.mean()), se
