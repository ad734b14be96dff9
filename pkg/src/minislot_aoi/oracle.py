"""Independent checks: brute-force policy enumeration and Monte-Carlo evaluation.

Nothing here uses the vectorised kernel from :mod:`minislot_aoi.mdp`; all
dynamics come straight from :func:`minislot_aoi.model.step_state`.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import AoIError
from .mdp import ACTIONS, DeterministicPolicy, StateSpace, action_index, enumerate_states
from .model import (
    SLOT_MINISLOTS,
    Action,
    IDLE,
    SensorConfig,
    SensorState,
    SystemParams,
    advance,
    epoch_cost,
    epoch_reward,
    initial_state,
)

MAX_TINY_STATES = 200
MAX_POLICIES = 10**6


class TooLargeError(AoIError):
    pass


def _actions(cfg: SensorConfig, s: SensorState, k_cap: int) -> list[Action]:
    kmax = min(k_cap, SLOT_MINISLOTS, s.q_scaled // cfg.rate_scale)
    return [IDLE] + [Action(1, k) for k in range(1, kmax + 1)]


@dataclass(frozen=True)
class TinyInstance:
    cfg: SensorConfig
    params: SystemParams
    k_cap: int = 2

    def __post_init__(self):
        if not 1 <= self.k_cap <= 2:
            raise ValueError("tiny instances cap the TTI length at 2")

    @property
    def space(self) -> StateSpace:
        return enumerate_states(self.params, self.cfg)

    def reachable(self) -> list[SensorState]:
        """States reachable from the canonical start under any allowed action."""
        alpha = self.params.channel_probs
        hs = [h for h in range(1, self.params.W + 1) if alpha[h - 1] > 0]
        todo = [initial_state(h) for h in hs]
        seen = set(todo)
        while todo:
            s = todo.pop()
            for g in _actions(self.cfg, s, self.k_cap):
                for h in hs:
                    _, nxt = advance(self.cfg, s, g.u, g.k, h)
                    if nxt not in seen:
                        seen.add(nxt)
                        todo.append(nxt)
        return sorted(seen)

    def policy_count(self, states=None) -> int:
        states = self.reachable() if states is None else states
        return math.prod(len(_actions(self.cfg, s, self.k_cap)) for s in states)


@dataclass(frozen=True)
class OracleResult:
    policy: DeterministicPolicy
    value: float        # expected discounted Lagrangian cost from the start state
    evaluated: int      # number of policies scored


def enumerate_best_policy(instance: TinyInstance, y: float, gamma: float,
                          batch: int = 4096) -> OracleResult:
    """Score every deterministic policy exactly and return the cheapest one.

    Only states reachable from the start state matter for its value, so
    policies are enumerated over that set; everywhere else the returned policy
    idles.  Ties keep the first policy in enumeration order (idle first).
    """
    cfg, params = instance.cfg, instance.params
    space = instance.space
    if space.size > MAX_TINY_STATES:
        raise TooLargeError(f"{space.size} states > {MAX_TINY_STATES}")
    states = instance.reachable()
    total = instance.policy_count(states)
    if total > MAX_POLICIES:
        raise TooLargeError(f"{total} policies > {MAX_POLICIES}")
    pos = {s: i for i, s in enumerate(states)}
    n = len(states)
    options = [_actions(cfg, s, instance.k_cap) for s in states]
    width = max(len(o) for o in options)
    P = np.zeros((n, width, n))
    c = np.full((n, width), np.inf)
    for i, s in enumerate(states):
        for j, g in enumerate(options[i]):
            c[i, j] = epoch_reward(s, cfg.rate_units) + y * epoch_cost(cfg, s, g, params)
            for h, a in enumerate(params.channel_probs, start=1):
                if a > 0:
                    P[i, j, pos[advance(cfg, s, g.u, g.k, h)[1]]] += a
    radix = np.array([len(o) for o in options], dtype=np.int64)
    start = np.array([pos[initial_state(h)] for h in range(1, params.W + 1)
                      if params.channel_probs[h - 1] > 0])
    w0 = np.array([params.channel_probs[h - 1] for h in range(1, params.W + 1)
                   if params.channel_probs[h - 1] > 0])
    eye = np.eye(n)
    best_val, best_code = np.inf, 0
    rows = np.arange(n)
    for lo in range(0, total, batch):
        codes = np.arange(lo, min(total, lo + batch), dtype=np.int64)
        choice = np.empty((len(codes), n), dtype=np.int64)
        rem = codes.copy()
        for i in range(n - 1, -1, -1):  # last state varies fastest
            choice[:, i] = rem % radix[i]
            rem //= radix[i]
        Pb = P[rows[None, :], choice]                      # (B, n, n)
        cb = c[rows[None, :], choice]                      # (B, n)
        v = np.linalg.solve(eye[None] - gamma * Pb, cb[..., None])[..., 0]
        vals = v[:, start] @ w0
        j = int(np.argmin(vals))
        if vals[j] < best_val - 1e-12:
            best_val, best_code = float(vals[j]), int(codes[j])
    choice = []
    rem = best_code
    for i in range(n - 1, -1, -1):
        choice.append(rem % radix[i])
        rem //= radix[i]
    choice.reverse()
    acts = np.zeros(space.size, dtype=np.int8)
    for s, j in zip(states, choice):
        acts[space.index(s)] = action_index(options[pos[s]][j])
    policy = DeterministicPolicy(space=space, actions=acts, y=float(y), gamma=float(gamma))
    return OracleResult(policy=policy, value=best_val, evaluated=total)


def discounted_value(policy: DeterministicPolicy, cfg: SensorConfig, params: SystemParams,
                     y: float, gamma: float) -> float:
    """Exact expected discounted Lagrangian cost of ``policy`` from the start state."""
    space = policy.space
    n = space.size
    P = np.zeros((n, n))
    c = np.zeros(n)
    for i in range(n):
        s = space.state(i)
        g = ACTIONS[int(policy.actions[i])]
        c[i] = epoch_reward(s, cfg.rate_units) + y * epoch_cost(cfg, s, g, params)
        for h, a in enumerate(params.channel_probs, start=1):
            if a > 0:
                P[i, space.index(advance(cfg, s, g.u, g.k, h)[1])] += a
    v = np.linalg.solve(np.eye(n) - gamma * P, c)
    return float(sum(a * v[space.index(initial_state(h))]
                     for h, a in enumerate(params.channel_probs, start=1) if a > 0))


@dataclass(frozen=True)
class MonteCarloResult:
    avg_aoi: float
    avg_cost: float
    avg_aoi_time: float
    se_aoi: float
    se_cost: float
    epochs: int


def _batch_se(x: np.ndarray, batches: int = 50) -> float:
    if len(x) < 2 * batches:
        return float(np.std(x, ddof=1) / math.sqrt(len(x))) if len(x) > 1 else math.nan
    means = np.array([b.mean() for b in np.array_split(x, batches)])
    return float(means.std(ddof=1) / math.sqrt(batches))


def monte_carlo_evaluate(policy, cfg: SensorConfig, params: SystemParams, epochs: int,
                         seed: int = 0, redraw: str = "epoch") -> MonteCarloResult:
    """Simulate one sensor from the canonical start for ``epochs`` decision epochs.

    ``policy`` is a :class:`DeterministicPolicy` or a mixed policy (anything with
    ``pi_low``, ``pi_high`` and ``theta``; a fresh Bernoulli(theta) draw picks
    the table each epoch).  ``redraw`` is ``"epoch"`` (new channel every TTI)
    or ``"slot"`` (new channel whenever a 14 mini-slot boundary is crossed).
    """
    if epochs < 1:
        raise ValueError("epochs must be >= 1")
    if redraw not in ("epoch", "slot"):
        raise ValueError(f"unknown redraw mode {redraw!r}")
    rng = np.random.default_rng(seed)
    mixed = hasattr(policy, "theta")
    tables = (policy.pi_low, policy.pi_high) if mixed else (policy, policy)
    space = tables[0].space
    acts_low = tables[0].actions.tolist()
    acts_high = tables[1].actions.tolist()
    theta = policy.theta if mixed else 1.0
    pick_low = (rng.random(epochs) < theta).tolist() if mixed else None
    channels = (rng.choice(params.W, size=epochs + 1, p=params.channel_probs) + 1).tolist()
    power = params.power_table
    L = cfg.rate_units
    sample_rate = cfg.sampling_cost * cfg.lam
    aoi = np.empty(epochs)
    cost = np.empty(epochs)
    ks = np.empty(epochs)
    ch = 0
    s = initial_state(channels[ch])
    clock = 0
    for t in range(epochs):
        i = space.index(s)
        a = acts_low[i] if (not mixed or pick_low[t]) else acts_high[i]
        g = ACTIONS[a]
        aoi[t] = (s.a_buf_scaled + s.d_scaled) / L
        cost[t] = sample_rate * g.k + power[s.h - 1] * g.k * g.u
        ks[t] = g.k
        new_clock = clock + g.k
        if redraw == "epoch" or new_clock // SLOT_MINISLOTS != clock // SLOT_MINISLOTS:
            ch += 1
            h = channels[ch]
        else:
            h = s.h
        clock = new_clock
        s = advance(cfg, s, g.u, g.k, h)[1]
    return MonteCarloResult(
        avg_aoi=float(aoi.mean()), avg_cost=float(cost.mean()),
        avg_aoi_time=float(aoi @ ks / ks.sum()),
        se_aoi=_batch_se(aoi), se_cost=_batch_se(cost), epochs=epochs)
