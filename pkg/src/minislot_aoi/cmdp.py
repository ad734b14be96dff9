"""Energy-constrained scheduling: Lagrange multiplier search and two-policy mixing."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidBracketError, NoFeasiblePolicyError
from .mdp import (
    DeterministicPolicy,
    Kernel,
    VISettings,
    build_kernel,
    enumerate_states,
    value_iteration,
)
from .model import Action, SensorConfig, SensorState, SystemParams
from .steady_state import PolicyEvaluation, evaluate_policy

log = logging.getLogger(__name__)


STEP_RULES = ("constant", "harmonic", "bracket")


@dataclass(frozen=True)
class SolverSettings:
    eta: float = 0.1
    epsilon: float = 0.01
    i_stop: int = 200
    gamma: float = 0.95
    zeta: float = 0.01
    step_rule: str = "bracket"  # "constant", "harmonic" (eta / i) or "bracket"
    max_iter: int = 10**5       # value-iteration sweep cap
    prune: bool = False         # value iteration over reachable states only
    warm_start: bool = True     # seed each value iteration with the previous table
    cross_check: bool = True    # power-iteration check of every stationary solve

    def __post_init__(self):
        for name in ("eta", "epsilon", "i_stop", "zeta", "max_iter"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if not 0 <= self.gamma < 1:
            raise ValueError("gamma must lie in [0, 1)")
        if self.step_rule not in STEP_RULES:
            raise ValueError(f"step_rule must be one of {STEP_RULES}")

    @property
    def vi(self) -> VISettings:
        return VISettings(gamma=self.gamma, zeta=self.zeta, max_iter=self.max_iter)


@dataclass(frozen=True)
class SolvedPolicy:
    policy: DeterministicPolicy = field(repr=False)
    evaluation: PolicyEvaluation = field(repr=False)

    @property
    def y(self) -> float:
        return self.policy.y

    @property
    def cost(self) -> float:
        return self.evaluation.avg_cost

    @property
    def aoi(self) -> float:
        return self.evaluation.avg_aoi


@dataclass(frozen=True)
class MixedPolicy:
    """theta * pi_low + (1 - theta) * pi_high, randomised per decision epoch.

    ``pi_low`` carries the smaller multiplier (cost above budget), ``pi_high``
    the larger one (cost at or below budget).
    """

    pi_low: DeterministicPolicy = field(repr=False)
    pi_high: DeterministicPolicy = field(repr=False)
    theta: float
    avg_aoi: float
    avg_cost: float
    cfg: SensorConfig
    y_low: float = 0.0
    y_high: float = 0.0
    cost_low: float = 0.0
    cost_high: float = 0.0
    aoi_low: float = 0.0
    aoi_high: float = 0.0
    aoi_time: float = 0.0
    drop_rate: float = 0.0        # packets lost to a full queue per epoch
    y_trace: tuple[float, ...] = ()
    cost_trace: tuple[float, ...] = ()
    bracketed: bool = False       # True when the multiplier search ran

    @property
    def lam(self) -> float:
        return self.cfg.lam

    @property
    def space(self):
        return self.pi_low.space

    def differing_states(self) -> np.ndarray:
        return np.flatnonzero(self.pi_low.actions != self.pi_high.actions)


def mixing_parameter(c_high: float, c_low: float, c_max: float) -> float:
    """Weight on the over-budget policy that puts the mixture exactly on budget."""
    if not c_high > c_max > c_low:
        raise InvalidBracketError(f"need c_high > c_max > c_low, got {c_high}, {c_max}, {c_low}")
    return (c_max - c_low) / (c_high - c_low)


def mixed_action(mixed: MixedPolicy, s: SensorState, rng: np.random.Generator) -> Action:
    if rng.random() < mixed.theta:
        return mixed.pi_low.action(s)
    return mixed.pi_high.action(s)


def _solve_at(cfg, params, y, settings, kernel, v0) -> tuple[SolvedPolicy, np.ndarray]:
    policy, table = value_iteration(cfg, params, y, settings.vi, kernel=kernel, v0=v0,
                                    prune=settings.prune)
    ev = evaluate_policy(policy, cfg, params, kernel=kernel, cross_check=settings.cross_check)
    return SolvedPolicy(policy, ev), table.values


def solve_cmdp(cfg: SensorConfig, params: SystemParams, settings: SolverSettings = SolverSettings(),
               *, kernel: Kernel | None = None) -> MixedPolicy:
    """Minimise average AoI subject to average energy <= ``cfg.energy_budget``.

    Starts from y = 0 and, if that policy overspends, runs the subgradient
    update ``y <- max(0, y + eta_i * (cost - budget))`` until a policy under
    budget is found with a multiplier step below ``epsilon``.  The closest
    over-budget and under-budget policies seen are then mixed so the mixture
    sits on the budget.

    ``settings.step_rule`` picks the step: ``"constant"`` uses ``eta``,
    ``"harmonic"`` uses ``eta / i``.  ``"bracket"`` takes subgradient steps of
    at least ``epsilon`` (doubled while the cost stays flat) until multipliers
    on both sides of the budget are known, then bisects between the closest
    pair.
    """
    c_max = cfg.energy_budget
    floor = cfg.sampling_cost * cfg.lam
    if c_max <= floor and cfg.sampling_cost > 0:
        # every epoch costs at least c_b * lambda; only idling everywhere reaches it
        raise NoFeasiblePolicyError(
            f"budget {c_max} does not exceed the sampling floor {floor:.4g} (lambda={cfg.lam})")
    if kernel is None:
        kernel = build_kernel(enumerate_states(params, cfg), params)
    first, v = _solve_at(cfg, params, 0.0, settings, kernel, None)
    ys, costs = [0.0], [first.cost]
    if first.cost <= c_max:
        return _mixture(cfg, first, first, 1.0, ys, costs, bracketed=False)

    above, below = first, None
    y_over, y_under = 0.0, None   # largest y seen over budget, smallest seen within
    y_prev, c_prev = 0.0, first.cost
    floor_step = settings.epsilon
    for i in range(1, settings.i_stop + 1):
        y = _next_multiplier(settings, i, y_prev, c_prev - c_max, y_over, y_under, floor_step)
        cur, v = _solve_at(cfg, params, y, settings, kernel, v if settings.warm_start else None)
        ys.append(y)
        costs.append(cur.cost)
        if cur.cost > c_max:
            y_over = max(y_over, y)
            if cur.cost < above.cost:
                above = cur
        else:
            y_under = y if y_under is None else min(y_under, y)
            if below is None or cur.cost > below.cost:
                below = cur
        if cur.cost < c_max and abs(y - y_prev) < settings.epsilon:
            break
        if (settings.step_rule == "bracket" and below is not None
                and y_under - y_over < settings.epsilon / 2):
            break
        # a cost plateau means the next policy change is further away: widen the step
        floor_step = 2 * floor_step if math.isclose(cur.cost, c_prev, rel_tol=1e-9) else settings.epsilon
        y_prev, c_prev = y, cur.cost
    else:
        raise NoFeasiblePolicyError(
            f"no policy within budget {c_max} after {settings.i_stop} multiplier updates "
            f"(lambda={cfg.lam}, last y={ys[-1]:.4g}, last cost={costs[-1]:.4g})")
    if below.cost == c_max:
        theta = 0.0
    else:
        theta = mixing_parameter(above.cost, below.cost, c_max)
    return _mixture(cfg, above, below, theta, ys, costs, bracketed=True)


def _next_multiplier(settings: SolverSettings, i: int, y: float, gap: float,
                     y_over: float, y_under: float | None, floor_step: float) -> float:
    if settings.step_rule == "constant":
        return max(0.0, y + settings.eta * gap)
    if settings.step_rule == "harmonic":
        return max(0.0, y + settings.eta / i * gap)
    if y_under is not None and y_under > y_over:
        return 0.5 * (y_over + y_under)
    step = max(settings.eta * abs(gap), floor_step)
    return max(0.0, y + step if gap > 0 else y - step)


def _mixture(cfg, low: SolvedPolicy, high: SolvedPolicy, theta: float, ys, costs,
             bracketed: bool) -> MixedPolicy:
    mix = lambda a, b: theta * a + (1.0 - theta) * b  # noqa: E731
    return MixedPolicy(
        pi_low=low.policy, pi_high=high.policy, theta=theta,
        avg_aoi=mix(low.aoi, high.aoi), avg_cost=mix(low.cost, high.cost), cfg=cfg,
        y_low=low.y, y_high=high.y, cost_low=low.cost, cost_high=high.cost,
        aoi_low=low.aoi, aoi_high=high.aoi,
        aoi_time=mix(low.evaluation.avg_aoi_time, high.evaluation.avg_aoi_time),
        drop_rate=mix(low.evaluation.drop_rate, high.evaluation.drop_rate),
        y_trace=tuple(ys), cost_trace=tuple(costs), bracketed=bracketed)
