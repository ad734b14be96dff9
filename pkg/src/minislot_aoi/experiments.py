"""Experiment orchestration: schemes, sweeps, multi-seed simulation and artifact writing."""
from __future__ import annotations

import csv
import io
import json
import math
import os
import tempfile
from dataclasses import replace
from pathlib import Path

import numpy as np

from .cmdp import MixedPolicy
from .config import FIXED_LAMBDA, ExperimentConfig
from .errors import AllInfeasibleError, ConfigError
from .sampling import LambdaEntry, LambdaReport, RateEvaluator, grid_search, grid_upper_for, optimize_sampling_rate
from .sim import Scenario, SensorSpec, SimReport, aggregate, run_simulation

SWEEP_SCHEMA = "sweep/1"
SWEEP_COLUMNS = ("axis", "value", "scheme", "lambda", "feasible", "stable", "avg_aoi",
                 "avg_aoi_time", "avg_cost", "theta", "maoi", "maoi_se")


def _rate_units(lam: float) -> int:
    units = round(lam * 10)
    if units < 1 or units > 10 or abs(units - lam * 10) > 1e-9:
        raise ConfigError(f"lambda={lam} is not a tenths grid point in 0.1..1.0")
    return units


class Experiment:
    """One configuration plus memoised constrained solves keyed by (SNR offset, budget)."""

    def __init__(self, config: ExperimentConfig, jobs: int = 1):
        self.config = config
        self.jobs = jobs
        self._evaluators: dict[tuple[float, float], RateEvaluator] = {}

    # --- solving -----------------------------------------------------------
    def evaluator(self, snr_offset: float | None = None, energy_budget: float | None = None) -> RateEvaluator:
        c = self.config
        off = c.system.snr_offset_db if snr_offset is None else snr_offset
        budget = c.sensor.energy_budget if energy_budget is None else energy_budget
        key = (off, budget)
        if key not in self._evaluators:
            template = c.sensor.template(energy_budget=budget)
            self._evaluators[key] = RateEvaluator(template, c.system.params(off), c.solver,
                                                  age_cap=c.sensor.age_cap)
        return self._evaluators[key]

    def at_rate(self, lam: float, **kw) -> LambdaEntry:
        return self.evaluator(**kw)(_rate_units(lam))

    def optimal_rate(self, n_sensors: int = 1, **kw) -> LambdaReport:
        upper = min(self.config.sensor.grid_upper, grid_upper_for(n_sensors) if n_sensors > 1 else 10)
        ev = self.evaluator(**kw)
        return optimize_sampling_rate(ev.template, ev.params, ev.settings, upper, evaluator=ev)

    def lambda_table(self, grid=range(1, 11), refine_cliff: bool = False, **kw) -> LambdaReport:
        ev = self.evaluator(**kw)
        return grid_search(ev.template, ev.params, ev.settings, grid, refine_cliff=refine_cliff,
                           jobs=self.jobs, evaluator=ev)

    def scheme_entry(self, scheme: str, n_sensors: int = 1, lam: float | None = None,
                     **kw) -> LambdaEntry:
        """Rate and policy a scheme runs with; ``lam`` pins the controlled rate."""
        if scheme.endswith("without-SC"):
            return self.at_rate(FIXED_LAMBDA, **kw)
        if lam is not None:
            return self.at_rate(lam, **kw)
        try:
            return self.optimal_rate(n_sensors, **kw).best
        except AllInfeasibleError:
            return self.at_rate(FIXED_LAMBDA, **kw)

    # --- simulation ----------------------------------------------------------
    def scenario(self, entry: LambdaEntry, scheduler: str, n_sensors: int, seed: int,
                 snr_offset: float | None = None) -> Scenario:
        c = self.config
        off = c.system.snr_offset_db if snr_offset is None else snr_offset
        policy = entry.policy if scheduler == "semi-distributed" else None
        if scheduler == "semi-distributed" and policy is None:
            raise ConfigError(f"no solved policy for lambda={entry.lam}")
        cfg = policy.cfg if policy is not None else self.evaluator(off).config(entry.rate_units,
                                                                               entry.rate_scale)
        sim = c.simulation
        return Scenario(sensors=tuple(SensorSpec(cfg, policy) for _ in range(n_sensors)),
                        params=c.system.params(off), horizon=sim.horizon, seed=seed,
                        scheduler=scheduler, redraw=sim.redraw, slot_aligned=sim.slot_aligned,
                        sampling="fixed" if math.isclose(entry.lam, FIXED_LAMBDA) else "optimized")

    def seeds(self) -> list[int]:
        sim = self.config.simulation
        return [sim.seed + i for i in range(sim.seeds)]

    def simulate(self, entry: LambdaEntry, scheduler: str, n_sensors: int, *,
                 snr_offset: float | None = None, record_trace: bool = False) -> list[SimReport]:
        return [run_simulation(self.scenario(entry, scheduler, n_sensors, seed, snr_offset),
                               record_trace=record_trace)
                for seed in self.seeds()]

    # --- sweeps ---------------------------------------------------------------
    def sweep(self, axis: str | None = None, values=None, schemes=None) -> list[dict]:
        c = self.config
        axis = axis or c.sweep.axis
        values = tuple(values if values is not None else c.sweep.values)
        schemes = tuple(schemes or c.sweep.schemes)
        if axis is None:
            raise ConfigError("no sweep axis configured")
        if not values:
            raise ConfigError(f"sweep axis {axis!r} has no values")
        rows = []
        for v in values:
            for scheme in schemes:
                rows.append(self.sweep_point(axis, v, scheme))
        return rows

    def sweep_point(self, axis: str, value: float, scheme: str) -> dict:
        c = self.config
        kw, n, lam = {}, 1, None
        if axis == "lambda":
            lam = value
            _rate_units(lam)
        elif axis == "cmax":
            kw["energy_budget"] = value
        elif axis == "snr":
            kw["snr_offset"] = value
            n = c.simulation.n_sensors
        elif axis == "n_sensors":
            n = int(value)
            if n != value or n < 1:
                raise ConfigError(f"n_sensors axis value {value} is not a positive integer")
        else:
            raise ConfigError(f"unknown sweep axis {axis!r}")
        row = dict.fromkeys(SWEEP_COLUMNS, "")
        row.update(axis=axis, value=value, scheme=scheme)
        entry = self.scheme_entry(scheme, n, lam, **kw)
        row["lambda"] = entry.lam
        semi = scheme.startswith("proposed")
        if semi and not entry.feasible:
            row.update(feasible=0, stable=0)
            return row
        if semi and n == 1:
            m = entry.policy
            row.update(feasible=1, stable=1, avg_aoi=m.avg_aoi, avg_aoi_time=m.aoi_time,
                       avg_cost=m.avg_cost, theta=m.theta, maoi=m.aoi_time, maoi_se=0.0)
            return row
        scheduler = "semi-distributed" if semi else "slot-based"
        reps = self.simulate(entry, scheduler, n, snr_offset=kw.get("snr_offset"))
        maoi, se = aggregate(reps)
        row.update(
            feasible=int(entry.feasible) if semi else 1,
            stable=int(all(r.stable for r in reps)),
            avg_aoi=float(np.mean([r.maoi for r in reps])),
            avg_aoi_time=maoi,
            avg_cost=float(np.mean([s.avg_energy for r in reps for s in r.sensors])),
            theta=entry.theta if semi else "", maoi=maoi, maoi_se=se)
        return row


# --- rendering -----------------------------------------------------------------

def _fmt(x) -> str:
    if isinstance(x, float):
        return "nan" if math.isnan(x) else f"{x:.6f}"
    return str(x)


def _config_comment(config: ExperimentConfig) -> str:
    return "# config: " + json.dumps(config.as_dict(), sort_keys=True, separators=(",", ":")) + "\n"


def sweep_csv(rows: list[dict], config: ExperimentConfig) -> str:
    buf = io.StringIO()
    buf.write(f"# schema: {SWEEP_SCHEMA}\n")
    buf.write(_config_comment(config))
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SWEEP_COLUMNS)
    for r in rows:
        w.writerow([_fmt(r[k]) for k in SWEEP_COLUMNS])
    return buf.getvalue()


def lambda_csv(report: LambdaReport, config: ExperimentConfig) -> str:
    return _config_comment(config) + report.to_csv()


SUMMARY_COLUMNS = ("lambda_star", "avg_aoi", "avg_aoi_time", "avg_cost", "theta",
                   "y_low", "y_high", "differing_states", "drop_rate", "method")


def summary_csv(mixed: MixedPolicy, method: str, config: ExperimentConfig) -> str:
    buf = io.StringIO()
    buf.write(_config_comment(config))
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SUMMARY_COLUMNS)
    w.writerow([f"{mixed.lam:.2f}", _fmt(mixed.avg_aoi), _fmt(mixed.aoi_time), _fmt(mixed.avg_cost),
                _fmt(mixed.theta), _fmt(mixed.y_low), _fmt(mixed.y_high),
                len(mixed.differing_states()), _fmt(mixed.drop_rate), method])
    return buf.getvalue()


def report_json(report: SimReport, config: ExperimentConfig, extra: dict | None = None) -> str:
    body = {"config": config.as_dict(), "report": report.to_dict()} | (extra or {})
    return json.dumps(body, sort_keys=True, indent=1) + "\n"


def aggregate_json(reports: list[SimReport], config: ExperimentConfig, extra: dict | None = None) -> str:
    maoi, se = aggregate(reports)
    maoi_epoch, se_epoch = aggregate(reports, time_weighted=False)
    body = {
        "config": config.as_dict(),
        "seeds": [r.seed for r in reports],
        "maoi": maoi, "maoi_se": se, "maoi_epoch": maoi_epoch, "maoi_epoch_se": se_epoch,
        "stable": all(r.stable for r in reports),
        "reports_sent": [r.reports_sent for r in reports],
    } | (extra or {})
    return json.dumps(body, sort_keys=True, indent=1) + "\n"


class ArtifactWriter:
    """Stages files in memory and writes them together, so a failed run leaves nothing behind."""

    def __init__(self, out_dir: str | Path):
        self.out_dir = Path(out_dir)
        self.files: dict[str, str] = {}

    def add(self, name: str, text: str) -> None:
        self.files[name] = text

    def commit(self) -> list[Path]:
        self.out_dir.mkdir(parents=True, exist_ok=True)
        written = []
        with tempfile.TemporaryDirectory(dir=self.out_dir, prefix=".staging-") as tmp:
            for name, text in self.files.items():
                Path(tmp, name).write_text(text)
            for name in self.files:
                os.replace(Path(tmp, name), self.out_dir / name)
                written.append(self.out_dir / name)
        return written


def with_overrides(config: ExperimentConfig, *, seed: int | None = None, lam: float | None = None,
                   out: str | None = None) -> ExperimentConfig:
    if seed is not None:
        config = config.with_seed(seed)
    if lam is not None:
        _rate_units(lam)
        config = config.with_lambda(lam)
    if out is not None:
        config = replace(config, output=replace(config.output, dir=out))
    return config
