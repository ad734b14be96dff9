"""Optimal sampling rate: bisection over a unimodal AoI profile and a grid-search oracle."""
from __future__ import annotations

import csv
import io
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Iterable

from .cmdp import MixedPolicy, SolverSettings, solve_cmdp
from .errors import AllInfeasibleError, NoFeasiblePolicyError, SpaceTooLargeError
from .model import SensorConfig, SystemParams

log = logging.getLogger(__name__)

DROP_TOL = 1e-12
LAMBDA_CSV_COLUMNS = ("lambda", "feasible", "avg_aoi", "avg_cost", "theta")


@dataclass(frozen=True)
class LambdaEntry:
    """Outcome at one sampling rate ``rate_units / rate_scale``.

    A rate is feasible when the constrained solver finds a policy within budget
    that never loses samples to a full queue.  Infeasible entries carry no
    averages; ``reason`` says why.
    """

    rate_units: int
    rate_scale: int
    feasible: bool
    avg_aoi: float | None = None
    avg_cost: float | None = None
    theta: float | None = None
    drop_rate: float | None = None
    reason: str = ""
    policy: MixedPolicy | None = field(default=None, repr=False, compare=False)

    @property
    def lam(self) -> float:
        return self.rate_units / self.rate_scale

    @property
    def score(self) -> float:
        """AoI used for ranking; +inf when infeasible."""
        return self.avg_aoi if self.feasible else math.inf


@dataclass(frozen=True)
class LambdaReport:
    entries: tuple[LambdaEntry, ...]
    lambda_star: float
    method: str                   # "bisection" or "grid"
    feasibility_monotone: bool = True

    @property
    def best(self) -> LambdaEntry:
        return next(e for e in self.entries if e.feasible and math.isclose(e.lam, self.lambda_star))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(LAMBDA_CSV_COLUMNS)
        for e in self.entries:
            if e.feasible:
                w.writerow([f"{e.lam:.2f}", 1, f"{e.avg_aoi:.6f}", f"{e.avg_cost:.6f}", f"{e.theta:.6f}"])
            else:
                w.writerow([f"{e.lam:.2f}", 0, "", "", ""])
        return buf.getvalue()


def grid_upper_for(n_sensors: int) -> int:
    """Largest tenths grid point strictly below 1/N."""
    if n_sensors < 1:
        raise ValueError("need at least one sensor")
    if 10 % n_sensors == 0:
        return 10 // n_sensors - 1
    return 10 // n_sensors


def config_at(template: SensorConfig, rate_units: int, rate_scale: int = 10,
              age_cap: int | None = None) -> SensorConfig:
    """Copy of ``template`` at another rate; the age cap is re-derived unless given."""
    return replace(template, rate_units=rate_units, rate_scale=rate_scale, age_cap=age_cap)


def evaluate_rate(cfg: SensorConfig, params: SystemParams,
                  settings: SolverSettings = SolverSettings()) -> LambdaEntry:
    units, scale = cfg.rate_units, cfg.rate_scale
    try:
        mixed = solve_cmdp(cfg, params, settings)
    except NoFeasiblePolicyError as exc:
        return LambdaEntry(units, scale, False, reason=f"over budget: {exc}")
    except SpaceTooLargeError as exc:
        return LambdaEntry(units, scale, False, reason=f"skipped: {exc}")
    if mixed.drop_rate > DROP_TOL:
        return LambdaEntry(units, scale, False, drop_rate=mixed.drop_rate, policy=mixed,
                           reason=f"queue overflows ({mixed.drop_rate:.3g} packets/epoch); AoI unbounded")
    return LambdaEntry(units, scale, True, avg_aoi=mixed.avg_aoi, avg_cost=mixed.avg_cost,
                       theta=mixed.theta, drop_rate=mixed.drop_rate, policy=mixed)


def _evaluate_job(args) -> LambdaEntry:
    return evaluate_rate(*args)


class RateEvaluator:
    """Memoised :func:`evaluate_rate` over one sensor template."""

    def __init__(self, template: SensorConfig, params: SystemParams,
                 settings: SolverSettings = SolverSettings(), age_cap: int | None = None):
        self.template = template
        self.params = params
        self.settings = settings
        self.age_cap = age_cap
        self.cache: dict[tuple[int, int], LambdaEntry] = {}

    def config(self, units: int, scale: int = 10) -> SensorConfig:
        return config_at(self.template, units, scale, self.age_cap)

    def __call__(self, units: int, scale: int = 10) -> LambdaEntry:
        key = (units, scale)
        if key not in self.cache:
            entry = evaluate_rate(self.config(units, scale), self.params, self.settings)
            log.info("lambda=%.2f feasible=%s aoi=%s", entry.lam, entry.feasible, entry.avg_aoi)
            self.cache[key] = entry
        return self.cache[key]

    def prefetch(self, keys: Iterable[tuple[int, int]], jobs: int = 1) -> None:
        todo = [k for k in dict.fromkeys(keys) if k not in self.cache]
        if jobs > 1 and len(todo) > 1:
            args = [(self.config(u, s), self.params, self.settings) for u, s in todo]
            with ProcessPoolExecutor(max_workers=jobs) as pool:
                for key, entry in zip(todo, pool.map(_evaluate_job, args)):
                    self.cache[key] = entry
        else:
            for u, s in todo:
                self(u, s)


def bisect_unimodal(f: Callable[[int], float], lo: int, hi: int) -> int:
    """Argmin of a unimodal integer profile on ``lo..hi`` (smallest index on ties).

    Keeps the argmin inside ``[l, m]``: the midpoint replaces the lower end
    when it beats its left neighbour, otherwise the upper end drops below it.
    Infeasible points are ``+inf``.
    """
    if lo > hi:
        raise ValueError("empty search interval")
    l, m = lo, hi
    while l < m:
        mid = (l + m + 1) // 2
        f_mid = f(mid)
        if math.isfinite(f_mid) and f_mid < f(mid - 1):
            l = mid
        else:
            m = mid - 1
    return l


def _check_monotone(entries: list[LambdaEntry]) -> bool:
    seen_infeasible = False
    for e in entries:
        if e.reason.startswith("skipped"):
            continue
        if not e.feasible:
            seen_infeasible = True
        elif seen_infeasible:
            log.warning("feasibility is not monotone: lambda=%.2f feasible after an infeasible rate", e.lam)
            return False
    return True


def _report(entries: list[LambdaEntry], best: LambdaEntry, method: str) -> LambdaReport:
    entries = sorted(entries, key=lambda e: e.lam)
    return LambdaReport(tuple(entries), best.lam, method, _check_monotone(entries))


def optimize_sampling_rate(template: SensorConfig, params: SystemParams,
                           settings: SolverSettings = SolverSettings(), grid_upper: int = 10,
                           *, age_cap: int | None = None,
                           evaluator: RateEvaluator | None = None) -> LambdaReport:
    """Bisection for the AoI-minimising rate on the tenths grid ``0.1 .. grid_upper/10``."""
    if not 1 <= grid_upper <= 10:
        raise ValueError("grid_upper must lie in 1..10")
    ev = evaluator or RateEvaluator(template, params, settings, age_cap)
    star = bisect_unimodal(lambda u: ev(u).score, 1, grid_upper)
    best = ev(star)
    entries = [e for (u, s), e in ev.cache.items() if s == 10 and u <= grid_upper]
    if not best.feasible:
        raise AllInfeasibleError(f"no feasible sampling rate up to {grid_upper / 10:.1f}")
    return _report(entries, best, "bisection")


def grid_search(template: SensorConfig, params: SystemParams,
                settings: SolverSettings = SolverSettings(), grid: Iterable[int] = range(1, 11),
                *, refine_cliff: bool = False, age_cap: int | None = None, jobs: int = 1,
                evaluator: RateEvaluator | None = None) -> LambdaReport:
    """Evaluate every tenths grid point; optionally refine the cliff to 0.01 steps."""
    grid = sorted(set(grid))
    if not grid:
        raise ValueError("empty lambda grid")
    if grid[0] < 1 or grid[-1] > 10:
        raise ValueError("grid points are tenths in 1..10")
    ev = evaluator or RateEvaluator(template, params, settings, age_cap)
    ev.prefetch(((u, 10) for u in grid), jobs)
    entries = [ev(u) for u in grid]
    if refine_cliff:
        feasible = [e.rate_units for e in entries if e.feasible]
        if feasible and feasible[-1] < 10:
            base = feasible[-1] * 10
            fine = [(base + j, 100) for j in range(1, 10)]
            ev.prefetch(fine, jobs)
            entries += [ev(u, s) for u, s in fine]
    feasible = [e for e in entries if e.feasible]
    if not feasible:
        raise AllInfeasibleError("no feasible sampling rate on the grid")
    best = min(feasible, key=lambda e: (e.avg_aoi, e.lam))
    return _report(entries, best, "grid")
