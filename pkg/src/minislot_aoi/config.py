"""Experiment configuration: INI sections of ``key = value`` lines.

Sections and keys (all optional, defaults reproduce the reference parameters)::

    [system]      snr_db, snr_offset_db, channel_probs, bandwidth, packet_bits
    [sensor]      q_max, lambda, age_cap, sampling_cost, energy_budget, grid_upper
    [solver]      eta, epsilon, i_stop, gamma, zeta, step_rule, max_iter, prune, cross_check
    [sweep]       axis, values, schemes, refine_cliff
    [simulation]  n_sensors, horizon, seeds, seed, scheduler, sampling, redraw,
                  slot_aligned, policy_file
    [output]      dir, trace

Unknown sections or keys are rejected.
"""
from __future__ import annotations

import configparser
import hashlib
import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from .cmdp import STEP_RULES, SolverSettings
from .errors import ConfigError
from .model import DEFAULT_SNR_DB, SensorConfig, SystemParams, db_to_linear
from .sim import REDRAW_MODES, SCHEDULERS

AXES = ("lambda", "cmax", "snr", "n_sensors")
SCHEMES = ("proposed", "proposed-without-SC", "slot-based", "slot-based-without-SC")
FIXED_LAMBDA = 0.1


@dataclass(frozen=True)
class SystemSection:
    snr_db: tuple[float, ...] = DEFAULT_SNR_DB
    snr_offset_db: float = 0.0
    channel_probs: tuple[float, ...] | None = None
    bandwidth: float = 180e3
    packet_bits: int = 8

    def params(self, snr_offset_db: float | None = None) -> SystemParams:
        off = self.snr_offset_db if snr_offset_db is None else snr_offset_db
        probs = self.channel_probs or (1.0 / len(self.snr_db),) * len(self.snr_db)
        snr = tuple(db_to_linear(s + off) for s in self.snr_db)
        return SystemParams(channel_probs=probs, snr_linear=snr, bandwidth=self.bandwidth,
                            packet_bits=self.packet_bits)


@dataclass(frozen=True)
class SensorSection:
    q_max: int = 3
    lam: float | None = None            # fixed rate; None means optimise
    age_cap: int | None = None
    sampling_cost: float = 1.0
    energy_budget: float = 1.0
    grid_upper: int = 10

    def template(self, lam: float | None = None, energy_budget: float | None = None) -> SensorConfig:
        lam = lam if lam is not None else (self.lam if self.lam is not None else FIXED_LAMBDA)
        return SensorConfig.from_lambda(
            lam, self.q_max, age_cap=self.age_cap, sampling_cost=self.sampling_cost,
            energy_budget=self.energy_budget if energy_budget is None else energy_budget)


@dataclass(frozen=True)
class SweepSection:
    axis: str | None = None
    values: tuple[float, ...] = ()
    schemes: tuple[str, ...] = SCHEMES
    refine_cliff: bool = False


@dataclass(frozen=True)
class SimulationSection:
    n_sensors: int = 4
    horizon: int = 1000
    seeds: int = 10
    seed: int = 0
    scheduler: str = "semi-distributed"
    sampling: str = "optimized"
    redraw: str = "slot"
    slot_aligned: bool = True
    policy_file: str | None = None


@dataclass(frozen=True)
class OutputSection:
    dir: str = "out"
    trace: bool = False


@dataclass(frozen=True)
class ExperimentConfig:
    system: SystemSection = field(default_factory=SystemSection)
    sensor: SensorSection = field(default_factory=SensorSection)
    solver: SolverSettings = field(default_factory=SolverSettings)
    sweep: SweepSection = field(default_factory=SweepSection)
    simulation: SimulationSection = field(default_factory=SimulationSection)
    output: OutputSection = field(default_factory=OutputSection)

    def as_dict(self) -> dict:
        d = asdict(self)
        d["sensor"]["lambda"] = d["sensor"].pop("lam")
        del d["output"]["dir"]          # where results go does not change them
        return d

    def digest(self) -> str:
        return digest_of(self.as_dict())

    def with_seed(self, seed: int) -> "ExperimentConfig":
        return replace(self, simulation=replace(self.simulation, seed=seed))

    def with_lambda(self, lam: float) -> "ExperimentConfig":
        return replace(self, sensor=replace(self.sensor, lam=lam))


def digest_of(obj) -> str:
    blob = json.dumps(obj, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


# --- parsing -----------------------------------------------------------------

def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(x) for x in text.replace(";", ",").split(",") if x.strip())


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _optional(conv):
    def parse(text: str):
        return None if text.strip().lower() in ("", "none") else conv(text)
    return parse


def _names(text: str) -> tuple[str, ...]:
    return tuple(x.strip() for x in text.split(",") if x.strip())


_KEYS = {
    "system": {
        "snr_db": ("snr_db", _floats), "snr_offset_db": ("snr_offset_db", float),
        "channel_probs": ("channel_probs", _optional(_floats)),
        "bandwidth": ("bandwidth", float), "packet_bits": ("packet_bits", int),
    },
    "sensor": {
        "q_max": ("q_max", int), "lambda": ("lam", _optional(float)),
        "age_cap": ("age_cap", _optional(int)), "sampling_cost": ("sampling_cost", float),
        "energy_budget": ("energy_budget", float), "grid_upper": ("grid_upper", int),
    },
    "solver": {
        "eta": ("eta", float), "epsilon": ("epsilon", float), "i_stop": ("i_stop", int),
        "gamma": ("gamma", float), "zeta": ("zeta", float), "step_rule": ("step_rule", str),
        "max_iter": ("max_iter", int), "prune": ("prune", _bool),
        "warm_start": ("warm_start", _bool), "cross_check": ("cross_check", _bool),
    },
    "sweep": {
        "axis": ("axis", _optional(str)), "values": ("values", _floats),
        "schemes": ("schemes", _names), "refine_cliff": ("refine_cliff", _bool),
    },
    "simulation": {
        "n_sensors": ("n_sensors", int), "horizon": ("horizon", int), "seeds": ("seeds", int),
        "seed": ("seed", int), "scheduler": ("scheduler", str), "sampling": ("sampling", str),
        "redraw": ("redraw", str), "slot_aligned": ("slot_aligned", _bool),
        "policy_file": ("policy_file", _optional(str)),
    },
    "output": {"dir": ("dir", str), "trace": ("trace", _bool)},
}

_SECTION_TYPES = {
    "system": SystemSection, "sensor": SensorSection, "solver": SolverSettings,
    "sweep": SweepSection, "simulation": SimulationSection, "output": OutputSection,
}


def parse_config(text: str) -> ExperimentConfig:
    cp = configparser.ConfigParser(interpolation=None, default_section="__defaults__")
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from exc
    sections = {}
    for name in cp.sections():
        if name not in _KEYS:
            raise ConfigError(f"unknown section [{name}]")
        kw = {}
        for key, raw in cp.items(name):
            if key not in _KEYS[name]:
                raise ConfigError(f"unknown key {key!r} in [{name}]")
            attr, conv = _KEYS[name][key]
            try:
                kw[attr] = conv(raw)
            except ValueError as exc:
                raise ConfigError(f"[{name}] {key}: {exc}") from exc
        try:
            sections[name] = _SECTION_TYPES[name](**kw)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"[{name}]: {exc}") from exc
    cfg = ExperimentConfig(**sections)
    validate(cfg)
    return cfg


def load_config(path: str | Path) -> ExperimentConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text)


def validate(cfg: ExperimentConfig) -> None:
    """Cross-field checks; raises :class:`ConfigError`."""
    try:
        cfg.system.params()
        cfg.sensor.template()
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    if not 1 <= cfg.sensor.grid_upper <= 10:
        raise ConfigError("grid_upper must lie in 1..10")
    if cfg.solver.step_rule not in STEP_RULES:
        raise ConfigError(f"step_rule must be one of {STEP_RULES}")
    sw = cfg.sweep
    if sw.axis is not None and sw.axis not in AXES:
        raise ConfigError(f"sweep axis must be one of {AXES}")
    bad = [s for s in sw.schemes if s not in SCHEMES]
    if bad:
        raise ConfigError(f"unknown schemes {bad}")
    sim = cfg.simulation
    if sim.n_sensors < 1 or sim.horizon < 1 or sim.seeds < 1:
        raise ConfigError("n_sensors, horizon and seeds must be positive")
    if sim.scheduler not in SCHEDULERS:
        raise ConfigError(f"scheduler must be one of {SCHEDULERS}")
    if sim.redraw not in REDRAW_MODES:
        raise ConfigError(f"redraw must be one of {REDRAW_MODES}")
    if sim.sampling not in ("optimized", "fixed"):
        raise ConfigError("sampling must be 'optimized' or 'fixed'")


def section_fields(name: str) -> tuple[str, ...]:
    return tuple(f.name for f in fields(_SECTION_TYPES[name]))
