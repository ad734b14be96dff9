"""Policy-induced Markov chain, its stationary distribution, and long-run averages."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse import csgraph
from scipy.sparse.linalg import spsolve

from .errors import NonUnichainError
from .mdp import DeterministicPolicy, Kernel, StateSpace, build_kernel
from .model import SensorConfig, SystemParams

log = logging.getLogger(__name__)

DENSE_LIMIT = 1500


@dataclass(frozen=True)
class ChainMatrix:
    """Column-stochastic transition matrix: ``X[m2, m1]`` = P(m1 -> m2)."""

    matrix: sp.csc_matrix = field(repr=False)

    @property
    def size(self) -> int:
        return self.matrix.shape[0]

    def column_sums(self) -> np.ndarray:
        return np.asarray(self.matrix.sum(axis=0)).ravel()

    def toarray(self) -> np.ndarray:
        return self.matrix.toarray()

    def restrict(self, ids: np.ndarray) -> "ChainMatrix":
        return ChainMatrix(self.matrix[ids][:, ids].tocsc())


@dataclass(frozen=True)
class StationaryDistribution:
    beta: np.ndarray = field(repr=False)
    balance_residual: float      # ||X beta - beta||_inf
    mass_residual: float         # |sum(beta) - 1|
    power_tv: float | None = None  # total variation to the power-iteration estimate


def build_chain(policy: DeterministicPolicy, space: StateSpace | None = None,
                cfg: SensorConfig | None = None, params: SystemParams | None = None,
                kernel: Kernel | None = None) -> ChainMatrix:
    space = space or policy.space
    if kernel is None:
        kernel = build_kernel(space, params)
    W = space.W
    nxt = policy.nc_successors(kernel)
    if np.any(nxt < 0):
        raise ValueError("policy holds an infeasible action")
    alpha = kernel.alpha
    keep = alpha > 0
    ws = np.flatnonzero(keep)
    rows = (nxt[:, None] * W + ws[None, :]).ravel()
    cols = np.repeat(np.arange(space.size), len(ws))
    vals = np.tile(alpha[ws], space.size)
    X = sp.csc_matrix((vals, (rows, cols)), shape=(space.size, space.size))
    return ChainMatrix(X)


def closed_classes(X: ChainMatrix) -> list[np.ndarray]:
    """Closed communicating classes (the recurrent classes of a finite chain)."""
    A = X.matrix.T.tocsr()  # A[i, j] > 0 means an edge i -> j
    n, labels = csgraph.connected_components(A, directed=True, connection="strong")
    coo = A.tocoo()
    leaks = labels[coo.row] != labels[coo.col]
    open_ = np.zeros(n, dtype=bool)
    open_[labels[coo.row[leaks]]] = True
    return [np.flatnonzero(labels == c) for c in range(n) if not open_[c]]


def power_iteration(X: ChainMatrix, tol: float = 1e-13, max_iter: int = 200_000,
                    start: np.ndarray | None = None) -> tuple[np.ndarray, bool]:
    """Iterate the lazy chain (X + I)/2 from uniform until the L1 change is below ``tol``."""
    M = X.matrix
    n = X.size
    x = np.full(n, 1.0 / n) if start is None else np.asarray(start, dtype=float)
    for _ in range(max_iter):
        nx = 0.5 * (x + M @ x)
        if np.abs(nx - x).sum() < tol:
            return nx, True
        x = nx
    return x, False


def solve_stationary(X: ChainMatrix | np.ndarray, *, cross_check: bool = True,
                     power_max_iter: int = 200_000) -> StationaryDistribution:
    """Solve the stacked system [X - I; 1^T] beta = [0; 1].

    Small chains use a dense least-squares solve; larger ones a sparse direct
    solve of the same system with the redundant last balance row replaced by
    the normalisation row.  Raises :class:`NonUnichainError` when the chain has
    more than one closed class.
    """
    if not isinstance(X, ChainMatrix):
        X = ChainMatrix(sp.csc_matrix(np.asarray(X, dtype=float)))
    n = X.size
    if len(closed_classes(X)) != 1:
        raise NonUnichainError("chain has several recurrent classes")
    I = sp.identity(n, format="csc")
    if n <= DENSE_LIMIT:
        A = np.vstack([(X.matrix - I).toarray(), np.ones((1, n))])
        rhs = np.zeros(n + 1)
        rhs[-1] = 1.0
        beta, *_, rank, _sv = np.linalg.lstsq(A, rhs, rcond=None)
        if rank < n:
            raise NonUnichainError("stacked stationary system is rank deficient")
    else:
        A = (X.matrix - I).tolil()
        A[n - 1, :] = np.ones(n)
        rhs = np.zeros(n)
        rhs[-1] = 1.0
        beta = spsolve(A.tocsc(), rhs)
        if not np.all(np.isfinite(beta)):
            raise NonUnichainError("stationary system is singular")
    if beta.min() < -1e-10:
        log.warning("stationary solve produced negative mass %.3g", beta.min())
    beta = np.clip(beta, 0.0, None)
    beta /= beta.sum()
    bal = float(np.max(np.abs(X.matrix @ beta - beta)))
    mass = float(abs(beta.sum() - 1.0))
    tv = None
    if cross_check:
        est, converged = power_iteration(X, max_iter=power_max_iter)
        tv = 0.5 * float(np.abs(est - beta).sum())
        if not converged:
            log.warning("power iteration did not settle; TV gap %.3g", tv)
    return StationaryDistribution(beta=beta, balance_residual=bal, mass_residual=mass, power_tv=tv)


def policy_averages(policy: DeterministicPolicy, beta: np.ndarray, cfg: SensorConfig,
                    params: SystemParams) -> tuple[float, float]:
    """Per-epoch average AoI (a_buf + d) and energy under ``beta``."""
    space = policy.space
    nc = np.arange(space.size) // space.W
    h = np.arange(space.size) % space.W
    aoi = (space.nc_a[nc] + space.nc_d[nc]) / cfg.rate_units
    u, k = policy.u, policy.k
    power = np.asarray(params.power_table)[h]
    cost = cfg.sampling_cost * cfg.lam * k + power * u * k
    return float(aoi @ beta), float(cost @ beta)


def time_weighted_aoi(policy: DeterministicPolicy, beta: np.ndarray, cfg: SensorConfig) -> float:
    """AoI averaged per mini-slot: each epoch weighted by its length k."""
    space = policy.space
    nc = np.arange(space.size) // space.W
    aoi = (space.nc_a[nc] + space.nc_d[nc]) / cfg.rate_units
    w = beta * policy.k
    return float(aoi @ w / w.sum())


def drop_rate(policy: DeterministicPolicy, beta: np.ndarray, cfg: SensorConfig) -> float:
    """Long-run packets lost to a full queue per epoch.

    A positive rate means the head-of-line wait keeps outgrowing the queue
    content, so a_buf only stays finite because of the ``age_cap`` truncation.
    """
    space = policy.space
    nc = np.arange(space.size) // space.W
    q = space.nc_q[nc]
    L, R = cfg.rate_units, cfg.rate_scale
    u, k = policy.u, policy.k
    sent = u * np.minimum(k, q // R)
    excess = np.maximum(q + L * k - R * sent - cfg.q_cap_scaled, 0) / R
    return float(excess @ beta)


@dataclass(frozen=True)
class PolicyEvaluation:
    avg_aoi: float
    avg_cost: float
    avg_aoi_time: float
    method: str                       # "stationary" (unichain) or "limiting"
    beta: np.ndarray | None = field(default=None, repr=False)
    support: int = 0                  # number of states in the evaluated chain
    classes: int = 1                  # closed classes reachable from the start
    drop_rate: float = 0.0            # packets lost to a full queue per epoch


def reachable_ids(X: ChainMatrix, start: np.ndarray) -> np.ndarray:
    A = X.matrix.T.tocsr()
    seen = np.zeros(X.size, dtype=bool)
    for s in np.atleast_1d(start):
        if not seen[s]:
            seen[csgraph.breadth_first_order(A, int(s), directed=True, return_predecessors=False)] = True
    return np.flatnonzero(seen)


def limiting_distribution(X: ChainMatrix, start: np.ndarray, *,
                          cross_check: bool = False) -> tuple[np.ndarray, int]:
    """Cesaro limit of the state distribution started from ``start``.

    Equals the stationary distribution when the chain is unichain.  Otherwise
    each closed class gets its stationary distribution, weighted by the
    probability of being absorbed into it.  Returns ``(beta, n_classes)``.
    """
    classes = closed_classes(X)
    start = np.asarray(start, dtype=float)
    if len(classes) == 1:
        ids = classes[0]
        beta = np.zeros(X.size)
        beta[ids] = solve_stationary(X.restrict(ids), cross_check=cross_check).beta
        return beta, 1
    in_class = np.zeros(X.size, dtype=bool)
    for c in classes:
        in_class[c] = True
    T = np.flatnonzero(~in_class)
    M = X.matrix
    # expected visits to transient states: (I - Q) n = mu0_T
    Q = M[T][:, T].tocsc()
    visits = spsolve((sp.identity(len(T), format="csc") - Q), start[T]) if len(T) else np.zeros(0)
    visits = np.atleast_1d(visits)
    inflow = M[:, T] @ visits + start   # mass that ever enters each state from T or starts there
    beta = np.zeros(X.size)
    for c in classes:
        mass = float(inflow[c].sum())
        if mass <= 1e-15:
            continue
        beta[c] = mass * solve_stationary(X.restrict(c), cross_check=cross_check).beta
    beta = np.clip(beta, 0.0, None)
    return beta / beta.sum(), len(classes)


def evaluate_policy(policy: DeterministicPolicy, cfg: SensorConfig, params: SystemParams, *,
                    kernel: Kernel | None = None, restrict: bool = True,
                    cross_check: bool = True) -> PolicyEvaluation:
    """Long-run per-epoch averages of a deterministic policy from the start states.

    With ``restrict`` the chain is first cut down to the states reachable from
    the canonical start.  A unichain policy is evaluated through its stationary
    distribution; otherwise through the start-dependent limiting distribution.
    """
    space = policy.space
    X = build_chain(policy, space, cfg, params, kernel=kernel)
    init = space.initial_ids(params)
    ids = reachable_ids(X, init) if restrict else np.arange(space.size)
    sub = X.restrict(ids) if restrict else X
    mu0 = np.zeros(space.size)
    mu0[init] = params.alpha[params.alpha > 0]
    sub_beta, n_classes = limiting_distribution(sub, mu0[ids], cross_check=cross_check)
    beta = np.zeros(space.size)
    beta[ids] = sub_beta
    aoi, cost = policy_averages(policy, beta, cfg, params)
    method = "stationary" if n_classes == 1 else "limiting"
    return PolicyEvaluation(aoi, cost, time_weighted_aoi(policy, beta, cfg), method,
                            beta=beta, support=len(ids), classes=n_classes,
                            drop_rate=drop_rate(policy, beta, cfg))
