"""Finite state space, transition kernel and discounted value iteration."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConvergenceError, SpaceTooLargeError
from .model import (
    IDLE,
    SLOT_MINISLOTS,
    Action,
    SensorConfig,
    SensorState,
    SystemParams,
    step_state,
)

# Action index 0 is idle, index k (1..14) is "transmit for k mini-slots".
ACTIONS: tuple[Action, ...] = (IDLE,) + tuple(Action(1, k) for k in range(1, SLOT_MINISLOTS + 1))
ACTION_U = np.array([a.u for a in ACTIONS], dtype=np.int64)
ACTION_K = np.array([a.k for a in ACTIONS], dtype=np.int64)
N_ACTIONS = len(ACTIONS)


def action_index(g: Action) -> int:
    return 0 if g.u == 0 else g.k


@dataclass(frozen=True)
class StateSpace:
    """Cartesian grid a_buf x d x q x h in scaled-integer units.

    Ids are laid out channel-fastest: ``id = nc * W + (h - 1)`` with the
    non-channel index ``nc = (ia * 2 + id_) * nq + iq``.
    """

    cfg: SensorConfig
    W: int
    a_values: np.ndarray = field(repr=False)
    q_values: np.ndarray = field(repr=False)

    @property
    def step(self) -> int:
        return self.cfg.step

    @property
    def na(self) -> int:
        return len(self.a_values)

    @property
    def nq(self) -> int:
        return len(self.q_values)

    @property
    def n_nc(self) -> int:
        return self.na * 2 * self.nq

    @property
    def size(self) -> int:
        return self.n_nc * self.W

    def __len__(self) -> int:
        return self.size

    def nc_index(self, a_scaled, d_scaled, q_scaled):
        """Vectorised non-channel index; inputs must lie on the grid."""
        ia = np.asarray(a_scaled) // self.step
        idd = (np.asarray(d_scaled) != 0).astype(np.int64)
        iq = np.asarray(q_scaled) // self.step
        return (ia * 2 + idd) * self.nq + iq

    def index(self, s: SensorState) -> int:
        cfg = self.cfg
        if (s.a_buf_scaled % self.step or s.q_scaled % self.step
                or not 0 <= s.a_buf_scaled <= cfg.a_cap_scaled
                or not 0 <= s.q_scaled <= cfg.q_cap_scaled
                or s.d_scaled not in (0, cfg.rate_scale)
                or not 1 <= s.h <= self.W):
            raise KeyError(f"{s} is not on the state grid")
        nc = ((s.a_buf_scaled // self.step) * 2 + (s.d_scaled != 0)) * self.nq + s.q_scaled // self.step
        return int(nc) * self.W + s.h - 1

    def state(self, i: int) -> SensorState:
        nc, h0 = divmod(int(i), self.W)
        rest, iq = divmod(nc, self.nq)
        ia, idd = divmod(rest, 2)
        return SensorState(int(self.a_values[ia]), self.cfg.rate_scale * idd,
                           int(self.q_values[iq]), h0 + 1)

    def states(self):
        for i in range(self.size):
            yield self.state(i)

    # per non-channel index component arrays
    @property
    def nc_a(self) -> np.ndarray:
        return np.repeat(self.a_values, 2 * self.nq)

    @property
    def nc_d(self) -> np.ndarray:
        return np.tile(np.repeat(np.array([0, self.cfg.rate_scale]), self.nq), self.na)

    @property
    def nc_q(self) -> np.ndarray:
        return np.tile(self.q_values, 2 * self.na)

    def initial_ids(self, params: SystemParams) -> np.ndarray:
        """Ids of the canonical start states (zero age, empty queue) with alpha_h > 0."""
        hs = [h for h in range(1, self.W + 1) if params.channel_probs[h - 1] > 0]
        return np.array([self.index(SensorState(0, 0, 0, h)) for h in hs], dtype=np.int64)


def enumerate_states(params: SystemParams, cfg: SensorConfig, limit: int = 10**6) -> StateSpace:
    step = cfg.step
    a_values = np.arange(0, cfg.a_cap_scaled + 1, step, dtype=np.int64)
    q_values = np.arange(0, cfg.q_cap_scaled + 1, step, dtype=np.int64)
    size = len(a_values) * 2 * len(q_values) * params.W
    if size > limit:
        raise SpaceTooLargeError(f"{size} states exceeds the limit of {limit}")
    return StateSpace(cfg=cfg, W=params.W, a_values=a_values, q_values=q_values)


@dataclass(frozen=True)
class Kernel:
    """Vectorised one-step model over non-channel indices.

    ``succ[g, nc]`` is the non-channel successor of action ``g`` (-1 when
    infeasible); the next channel is drawn independently from alpha.
    """

    space: StateSpace
    succ: np.ndarray
    reward: np.ndarray      # (n_nc,)  a_buf + d in mini-slots
    cost: np.ndarray        # (N_ACTIONS, W) energy, same for every nc
    alpha: np.ndarray

    @property
    def feasible(self) -> np.ndarray:
        return self.succ >= 0


def build_kernel(space: StateSpace, params: SystemParams) -> Kernel:
    cfg = space.cfg
    L, R = cfg.rate_units, cfg.rate_scale
    a, d, q = space.nc_a, space.nc_d, space.nc_q
    whole = q // R
    succ = np.full((N_ACTIONS, space.n_nc), -1, dtype=np.int64)
    succ[0] = space.nc_index(np.minimum(a + L, cfg.a_cap_scaled), d,
                             np.minimum(q + L, cfg.q_cap_scaled))
    for k in range(1, SLOT_MINISLOTS + 1):
        ok = whole >= k
        delta = L * k - R * k
        na = np.clip(a[ok] + delta, 0, cfg.a_cap_scaled)
        nq = np.clip(q[ok] + delta, 0, cfg.q_cap_scaled)
        succ[k, ok] = space.nc_index(na, np.full(na.shape, R), nq)
    power = np.asarray(params.power_table)
    cost = (cfg.sampling_cost * cfg.lam * ACTION_K)[:, None] + (ACTION_U * ACTION_K)[:, None] * power[None, :]
    reward = (a + d) / L
    return Kernel(space=space, succ=succ, reward=reward, cost=cost, alpha=params.alpha)


def feasible_actions(s: SensorState, cfg: SensorConfig) -> list[Action]:
    kmax = min(SLOT_MINISLOTS, s.q_scaled // cfg.rate_scale)
    return [IDLE] + [Action(1, k) for k in range(1, kmax + 1)]


def transition_distribution(cfg: SensorConfig, params: SystemParams, s: SensorState, g: Action,
                            space: StateSpace | None = None) -> list[tuple[int, float]]:
    """Successor ids with probabilities alpha_w' (zero-probability channels dropped)."""
    space = space or enumerate_states(params, cfg)
    out: dict[int, float] = {}
    for w, p in enumerate(params.channel_probs, start=1):
        if p <= 0:
            continue
        nxt = step_state(cfg, s, g, w).next_state
        i = space.index(nxt)
        out[i] = out.get(i, 0.0) + p
    return sorted(out.items())


@dataclass(frozen=True)
class VISettings:
    gamma: float = 0.95
    zeta: float = 0.01
    max_iter: int = 10**5

    def __post_init__(self):
        if not 0 <= self.gamma < 1:
            raise ValueError("gamma must lie in [0, 1)")
        if self.zeta <= 0 or self.max_iter < 1:
            raise ValueError("zeta and max_iter must be positive")


@dataclass(frozen=True)
class ValueTable:
    values: np.ndarray = field(repr=False)   # (M,)
    y: float
    gamma: float


@dataclass(frozen=True)
class DeterministicPolicy:
    space: StateSpace = field(repr=False)
    actions: np.ndarray = field(repr=False)  # action index per state id
    y: float = 0.0
    gamma: float = 0.0
    iterations: int = 0
    delta: float = 0.0
    deltas: tuple[float, ...] = field(default=(), repr=False)

    def action(self, s: SensorState | int) -> Action:
        i = s if isinstance(s, (int, np.integer)) else self.space.index(s)
        return ACTIONS[int(self.actions[i])]

    @property
    def u(self) -> np.ndarray:
        return ACTION_U[self.actions]

    @property
    def k(self) -> np.ndarray:
        return ACTION_K[self.actions]

    def nc_successors(self, kernel: Kernel) -> np.ndarray:
        """Non-channel successor for every state id under this policy."""
        nc = np.arange(self.space.size) // self.space.W
        return kernel.succ[self.actions, nc]

    def same_actions(self, other: "DeterministicPolicy") -> bool:
        return np.array_equal(self.actions, other.actions)


def idle_policy(space: StateSpace) -> DeterministicPolicy:
    return DeterministicPolicy(space=space, actions=np.zeros(space.size, dtype=np.int8))


def _q_values(kernel: Kernel, v: np.ndarray, y: float, gamma: float) -> np.ndarray:
    """Lagrangian Q table of shape (N_ACTIONS, n_nc, W); infeasible entries are +inf."""
    ev = v.reshape(-1, kernel.space.W) @ kernel.alpha               # (n_nc,)
    feas = kernel.feasible
    cont = ev[np.where(feas, kernel.succ, 0)]                       # (A, n_nc)
    base = np.where(feas, kernel.reward[None, :] + gamma * cont, np.inf)
    return base[:, :, None] + y * kernel.cost[:, None, :]


def greedy_actions(kernel: Kernel, v: np.ndarray, y: float, gamma: float) -> np.ndarray:
    """Argmin action per state; ties go to the lowest action index (smallest (u, k))."""
    Q = _q_values(kernel, v, y, gamma)
    return np.argmin(Q, axis=0).reshape(-1).astype(np.int8)


def value_iteration(cfg: SensorConfig, params: SystemParams, y: float,
                    settings: VISettings = VISettings(), *,
                    space: StateSpace | None = None, kernel: Kernel | None = None,
                    v0: np.ndarray | None = None,
                    prune: bool = False) -> tuple[DeterministicPolicy, ValueTable]:
    """Discounted value iteration on the Lagrangian cost r + y*c.

    Iterates until the sup-norm change drops below ``settings.zeta`` and then
    extracts the greedy policy from the last iterate.  With ``prune`` the sweep
    only touches states reachable from the start states; the rest keep value 0
    and the idle action.
    """
    if y < 0:
        raise ValueError("the Lagrange multiplier must be non-negative")
    if kernel is None:
        space = space or enumerate_states(params, cfg)
        kernel = build_kernel(space, params)
    space = kernel.space
    work = kernel
    keep = None
    if prune:
        keep = reachable_nc(kernel, params)
        work = _restrict_kernel(kernel, keep)
    W = space.W
    n = work.succ.shape[1] * W
    v = np.zeros(n) if v0 is None else np.asarray(v0, dtype=float).reshape(-1, W)[
        keep if keep is not None else slice(None)].reshape(-1).copy()
    deltas = []
    for it in range(1, settings.max_iter + 1):
        v_new = _q_values(work, v, y, settings.gamma).min(axis=0).reshape(-1)
        delta = float(np.max(np.abs(v_new - v))) if n else 0.0
        deltas.append(delta)
        v = v_new
        if delta < settings.zeta:
            break
    else:
        raise ConvergenceError(f"value iteration did not reach zeta={settings.zeta} "
                               f"in {settings.max_iter} sweeps (last delta {deltas[-1]:.3g})")
    acts = greedy_actions(work, v, y, settings.gamma)
    if keep is not None:
        full_v = np.zeros((space.n_nc, W))
        full_v[keep] = v.reshape(-1, W)
        full_a = np.zeros((space.n_nc, W), dtype=np.int8)
        full_a[keep] = acts.reshape(-1, W)
        v, acts = full_v.reshape(-1), full_a.reshape(-1)
    policy = DeterministicPolicy(space=space, actions=acts, y=float(y), gamma=settings.gamma,
                                 iterations=it, delta=deltas[-1], deltas=tuple(deltas))
    return policy, ValueTable(values=v, y=float(y), gamma=settings.gamma)


def reachable_nc(kernel: Kernel, params: SystemParams | None = None) -> np.ndarray:
    """Non-channel indices reachable from the start state under any feasible action."""
    space = kernel.space
    start = int(space.nc_index(0, 0, 0))
    seen = np.zeros(space.n_nc, dtype=bool)
    seen[start] = True
    frontier = np.array([start])
    while frontier.size:
        nxt = kernel.succ[:, frontier].reshape(-1)
        nxt = np.unique(nxt[nxt >= 0])
        nxt = nxt[~seen[nxt]]
        seen[nxt] = True
        frontier = nxt
    return np.flatnonzero(seen)


def _restrict_kernel(kernel: Kernel, keep: np.ndarray) -> Kernel:
    remap = np.full(kernel.space.n_nc, -1, dtype=np.int64)
    remap[keep] = np.arange(len(keep))
    succ = kernel.succ[:, keep]
    succ = np.where(succ >= 0, remap[np.where(succ >= 0, succ, 0)], -1)
    return Kernel(space=kernel.space, succ=succ, reward=kernel.reward[keep],
                  cost=kernel.cost, alpha=kernel.alpha)
