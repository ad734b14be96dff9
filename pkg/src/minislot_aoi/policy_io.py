"""Mixed-policy files.

A policy file is JSON with these top-level keys:

``format``
    ``"minislot-aoi-policy/1"``.
``config``
    The resolved experiment configuration that produced the policy (or null).
``digest``
    SHA-256 of the canonical JSON of every other key; checked on load.
``problem``
    ``system`` (channel_probs, snr_linear, bandwidth, packet_bits,
    minislot_duration), ``sensor`` (rate_units, rate_scale, q_max, age_cap,
    sampling_cost, energy_budget) and ``solver`` settings.
``mix``
    theta, multipliers, costs and AoI of both tables, the mixed averages and
    the multiplier / cost traces.
``tables``
    ``low`` and ``high``: lists of ``[a_buf_scaled, d_scaled, q_scaled, h, u, k]``
    for every state whose action is not idle.  States not listed idle.
"""
from __future__ import annotations

import json
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .cmdp import MixedPolicy, SolverSettings
from .config import digest_of
from .errors import ConfigError
from .mdp import DeterministicPolicy, action_index, enumerate_states
from .model import Action, SensorConfig, SensorState, SystemParams

FORMAT = "minislot-aoi-policy/1"
_MIX_KEYS = ("theta", "y_low", "y_high", "cost_low", "cost_high", "aoi_low", "aoi_high",
             "avg_aoi", "avg_cost", "aoi_time", "drop_rate", "bracketed")


def system_dict(params: SystemParams) -> dict:
    return {"channel_probs": list(params.channel_probs), "snr_linear": list(params.snr_linear),
            "bandwidth": params.bandwidth, "packet_bits": params.packet_bits,
            "minislot_duration": params.minislot_duration}


def sensor_dict(cfg: SensorConfig) -> dict:
    return {"rate_units": cfg.rate_units, "rate_scale": cfg.rate_scale, "q_max": cfg.q_max,
            "age_cap": cfg.age_cap, "sampling_cost": cfg.sampling_cost,
            "energy_budget": cfg.energy_budget}


def _table(policy: DeterministicPolicy) -> list[list[int]]:
    space = policy.space
    rows = []
    for i in np.flatnonzero(policy.actions):
        s = space.state(int(i))
        g = policy.action(int(i))
        rows.append([s.a_buf_scaled, s.d_scaled, s.q_scaled, s.h, g.u, g.k])
    return rows


def policy_payload(mixed: MixedPolicy, params: SystemParams, settings: SolverSettings,
                   config: dict | None = None) -> dict:
    body = {
        "config": config,
        "format": FORMAT,
        "problem": {"system": system_dict(params), "sensor": sensor_dict(mixed.cfg),
                    "solver": asdict(settings)},
        "mix": {k: getattr(mixed, k) for k in _MIX_KEYS}
               | {"y_trace": list(mixed.y_trace), "cost_trace": list(mixed.cost_trace),
                  "gamma": mixed.pi_low.gamma},
        "tables": {"low": _table(mixed.pi_low), "high": _table(mixed.pi_high)},
    }
    return {"digest": digest_of(body)} | body


def dumps_policy(mixed: MixedPolicy, params: SystemParams, settings: SolverSettings,
                 config: dict | None = None) -> str:
    return json.dumps(policy_payload(mixed, params, settings, config), sort_keys=True, indent=1) + "\n"


def save_policy(path: str | Path, mixed: MixedPolicy, params: SystemParams,
                settings: SolverSettings, config: dict | None = None) -> None:
    Path(path).write_text(dumps_policy(mixed, params, settings, config))


def loads_policy(text: str) -> tuple[MixedPolicy, SystemParams, SolverSettings]:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"policy file is not valid JSON: {exc}") from exc
    if data.get("format") != FORMAT:
        raise ConfigError(f"unsupported policy format {data.get('format')!r}")
    body = {k: v for k, v in data.items() if k != "digest"}
    if digest_of(body) != data.get("digest"):
        raise ConfigError("policy file digest mismatch")
    prob = data["problem"]
    sysd = prob["system"]
    params = SystemParams(channel_probs=tuple(sysd["channel_probs"]), snr_linear=tuple(sysd["snr_linear"]),
                          bandwidth=sysd["bandwidth"], packet_bits=sysd["packet_bits"],
                          minislot_duration=sysd["minislot_duration"])
    cfg = SensorConfig(**prob["sensor"])
    settings = SolverSettings(**prob["solver"])
    mix = data["mix"]
    space = enumerate_states(params, cfg)
    tables = []
    for name, y in (("low", mix["y_low"]), ("high", mix["y_high"])):
        acts = np.zeros(space.size, dtype=np.int8)
        for a, d, q, h, u, k in data["tables"][name]:
            acts[space.index(SensorState(a, d, q, h))] = action_index(Action(u, k))
        tables.append(DeterministicPolicy(space=space, actions=acts, y=y, gamma=mix["gamma"]))
    mixed = MixedPolicy(pi_low=tables[0], pi_high=tables[1], cfg=cfg,
                        y_trace=tuple(mix["y_trace"]), cost_trace=tuple(mix["cost_trace"]),
                        **{k: mix[k] for k in _MIX_KEYS})
    return mixed, params, settings


def load_policy(path: str | Path) -> tuple[MixedPolicy, SystemParams, SolverSettings]:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read policy file {path}: {exc}") from exc
    return loads_policy(text)
