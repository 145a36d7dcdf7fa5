"""Optimal-transport primitives: cost matrices, log-domain Sinkhorn,
an exact small-instance solver, Laplacian-regularized transport, and
barycentric projection.

All solvers are pure functions of their inputs; every returned plan
carries its marginals and convergence diagnostics.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog
from scipy.special import logsumexp

_EXACT_SIZE_LIMIT = 64


@dataclass(frozen=True)
class CostMatrix:
    """Nonnegative ground-cost matrix with its metric tag."""

    values: np.ndarray
    metric: str  # "cosine" or "squared_euclidean"

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 2:
            raise ValueError("cost matrix must be 2-dimensional")
        if not np.all(np.isfinite(v)):
            raise ValueError("cost entries must be finite")
        if v.size and v.min() < -1e-12:
            raise ValueError("cost entries must be nonnegative")
        if self.metric == "cosine" and v.size and v.max() > 2.0 + 1e-9:
            raise ValueError("cosine distances cannot exceed 2")
        object.__setattr__(self, "values", v)

    @property
    def shape(self):
        return self.values.shape


@dataclass
class TransportPlan:
    """Coupling matrix with prescribed marginals.

    ``converged`` is False when the solver hit its iteration cap; the
    plan is still returned so that adaptation can degrade gracefully.
    """

    gamma: np.ndarray
    a: np.ndarray
    b: np.ndarray
    converged: bool = True
    n_iter: int = 0
    violation: float = 0.0
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        self.gamma = np.asarray(self.gamma, dtype=np.float64)
        self.a = np.asarray(self.a, dtype=np.float64)
        self.b = np.asarray(self.b, dtype=np.float64)
        if self.gamma.shape != (self.a.size, self.b.size):
            raise ValueError("plan shape disagrees with marginal sizes")
        if self.gamma.size and self.gamma.min() < -1e-15:
            raise ValueError("plan entries must be nonnegative")
        for w in (self.a, self.b):
            if abs(w.sum() - 1.0) > 1e-9:
                raise ValueError("marginal weights must sum to 1")
        if self.converged and self.marginal_violation() > 1e-6:
            raise ValueError(
                f"marginal violation {self.marginal_violation():.3e} exceeds 1e-6"
            )

    def marginal_violation(self) -> float:
        row = np.abs(self.gamma.sum(axis=1) - self.a).max() if self.a.size else 0.0
        col = np.abs(self.gamma.sum(axis=0) - self.b).max() if self.b.size else 0.0
        return max(row, col)

    def cost(self, C) -> float:
        return float(np.sum(self.gamma * _cost_values(C)))


@dataclass(frozen=True)
class OTConfig:
    """Solver parameters.  ``lam`` is the Laplacian-regularization strength;
    the similarity graph uses ``knn`` mutual neighbors."""

    epsilon: float = 0.01
    lam: float = 100.0
    knn: int = 3
    max_iter: int = 1000
    tol: float = 1e-9
    outer_iter: int = 10

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError("epsilon must be > 0")
        if self.lam < 0:
            raise ValueError("lam must be >= 0")
        if min(self.max_iter, self.outer_iter, self.knn) < 1:
            raise ValueError("iteration counts and knn must be >= 1")


def _cost_values(C) -> np.ndarray:
    return C.values if isinstance(C, CostMatrix) else np.asarray(C, dtype=np.float64)


def cost_cosine(X, Y) -> CostMatrix:
    """Pairwise cosine distances 1 - cos(x_i, y_j)."""
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    nx = np.linalg.norm(X, axis=1)
    ny = np.linalg.norm(Y, axis=1)
    if np.any(nx == 0) or np.any(ny == 0):
        raise ValueError("cosine distance is undefined for zero vectors")
    vals = 1.0 - (X / nx[:, None]) @ (Y / ny[:, None]).T
    return CostMatrix(np.clip(vals, 0.0, 2.0), "cosine")


def cost_sqeuclidean(X, Y) -> CostMatrix:
    """Pairwise squared Euclidean distances."""
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    if X.shape[1] != Y.shape[1]:
        raise ValueError("dimension mismatch between point clouds")
    sq = (X * X).sum(axis=1)[:, None] + (Y * Y).sum(axis=1)[None, :] - 2.0 * X @ Y.T
    return CostMatrix(np.maximum(sq, 0.0), "squared_euclidean")


def _check_marginals(a, b, n_s, n_t):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != (n_s,) or b.shape != (n_t,):
        raise ValueError("marginal sizes disagree with the cost matrix")
    for w, name in ((a, "a"), (b, "b")):
        if np.any(w <= 0):
            raise ValueError(f"marginal {name} must be strictly positive")
        if abs(w.sum() - 1.0) > 1e-9:
            raise ValueError(f"marginal {name} must sum to 1")
    return a, b


def _lse(X, axis):
    m = X.max(axis=axis, keepdims=True)
    return (m + np.log(np.exp(X - m).sum(axis=axis, keepdims=True))).squeeze(axis)


def _scaling_kernel_py(A, log_a, log_b, phi, max_iter, tol):
    """Stabilized alternating scaling on the recentred kernel.

    Multiplicative sweeps with the scaling vectors absorbed into the
    log-domain potentials whenever they grow large, so arbitrarily small
    epsilon stays stable.  Row sums are exact after each sweep; ``est``
    tracks the column violation.
    """
    a = np.exp(log_a)
    b = np.exp(log_b)
    psi = np.zeros(b.size)
    K = np.exp(A + phi[:, None] + psi[None, :])
    u = np.ones(a.size)
    v = np.ones(b.size)
    est = np.inf
    it = 0
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        for it in range(1, max_iter + 1):
            v = b / (K.T @ u)
            u = a / (K @ v)
            if not (np.all(np.isfinite(u)) and np.all(np.isfinite(v))):
                # Kernel too stale: re-center with one log-domain sweep.
                psi = log_b - _lse(A + phi[:, None], axis=0)
                phi = log_a - _lse(A + psi[None, :], axis=1)
                K = np.exp(A + phi[:, None] + psi[None, :])
                u = np.ones(a.size)
                v = np.ones(b.size)
                continue
            est = float(np.abs(v * (K.T @ u) - b).max())
            if est < tol:
                break
            big = max(np.abs(np.log(u)).max(), np.abs(np.log(v)).max())
            if big > 25.0:
                phi = phi + np.log(u)
                psi = psi + np.log(v)
                K = np.exp(A + phi[:, None] + psi[None, :])
                u = np.ones(a.size)
                v = np.ones(b.size)
    phi = phi + np.log(u)
    psi = psi + np.log(v)
    return phi, psi, it, est


def _scaling_kernel_loops(A, log_a, log_b, phi, max_iter, tol):
    # Explicit-loop twin of _scaling_kernel_py for the numba jit; the
    # matrices here are small enough that call overhead dominates numpy.
    ns, nt = A.shape
    a = np.exp(log_a)
    b = np.exp(log_b)
    phi = phi.copy()
    psi = np.zeros(nt)
    K = np.empty((ns, nt))
    for i in range(ns):
        for j in range(nt):
            K[i, j] = np.exp(A[i, j] + phi[i] + psi[j])
    u = np.ones(ns)
    v = np.ones(nt)
    est = np.inf
    it = 0
    for it in range(1, max_iter + 1):
        ok = True
        for j in range(nt):
            s = 0.0
            for i in range(ns):
                s += K[i, j] * u[i]
            if not (s > 0.0 and np.isfinite(s)):
                ok = False
                break
            v[j] = b[j] / s
        if ok:
            for i in range(ns):
                s = 0.0
                for j in range(nt):
                    s += K[i, j] * v[j]
                if not (s > 0.0 and np.isfinite(s)):
                    ok = False
                    break
                u[i] = a[i] / s
        if not ok:
            for j in range(nt):
                m = -np.inf
                for i in range(ns):
                    t = A[i, j] + phi[i]
                    if t > m:
                        m = t
                s = 0.0
                for i in range(ns):
                    s += np.exp(A[i, j] + phi[i] - m)
                psi[j] = log_b[j] - (m + np.log(s))
            for i in range(ns):
                m = -np.inf
                for j in range(nt):
                    t = A[i, j] + psi[j]
                    if t > m:
                        m = t
                s = 0.0
                for j in range(nt):
                    s += np.exp(A[i, j] + psi[j] - m)
                phi[i] = log_a[i] - (m + np.log(s))
            for i in range(ns):
                u[i] = 1.0
                for j in range(nt):
                    K[i, j] = np.exp(A[i, j] + phi[i] + psi[j])
            for j in range(nt):
                v[j] = 1.0
            continue
        est = 0.0
        for j in range(nt):
            s = 0.0
            for i in range(ns):
                s += K[i, j] * u[i]
            d = abs(v[j] * s - b[j])
            if d > est:
                est = d
        if est < tol:
            break
        big = 0.0
        for i in range(ns):
            t = abs(np.log(u[i]))
            if t > big:
                big = t
        for j in range(nt):
            t = abs(np.log(v[j]))
            if t > big:
                big = t
        if big > 25.0:
            for i in range(ns):
                phi[i] += np.log(u[i])
                u[i] = 1.0
            for j in range(nt):
                psi[j] += np.log(v[j])
                v[j] = 1.0
            for i in range(ns):
                for j in range(nt):
                    K[i, j] = np.exp(A[i, j] + phi[i] + psi[j])
    for i in range(ns):
        phi[i] += np.log(u[i])
    for j in range(nt):
        psi[j] += np.log(v[j])
    return phi, psi, it, est


try:  # optional jit; the numpy twin is the fallback
    from numba import njit

    _scaling_kernel = njit(cache=True, fastmath=False)(_scaling_kernel_loops)
except ImportError:  # pragma: no cover
    _scaling_kernel = _scaling_kernel_py


def _sinkhorn_sweeps(M, log_a, log_b, epsilon, f, max_iter, tol):
    """Run stabilized scaling at one epsilon; returns (f, g, iters, est)."""
    A = -M / epsilon
    phi, psi, it, est = _scaling_kernel(
        np.ascontiguousarray(A), log_a, log_b, f / epsilon, max_iter, tol
    )
    return epsilon * phi, epsilon * psi, it, est


def sinkhorn(C, a, b, epsilon=0.01, max_iter=1000, tol=1e-9,
             init_potentials=None) -> TransportPlan:
    """Entropic OT via log-domain Sinkhorn scaling.

    Alternating scaling runs until the row-marginal violation drops
    below ``tol`` (column marginals are exact after each sweep) or the
    total sweep budget ``max_iter`` is spent; non-convergence flags the
    plan instead of raising.  Cold starts anneal the regularization from
    a coarse level down to ``epsilon``, which keeps small-epsilon solves
    fast; ``init_potentials`` warm-starts from a previous solve instead.
    The final potentials ride along in ``plan.info``.
    """
    M = _cost_values(C)
    n_s, n_t = M.shape
    a, b = _check_marginals(a, b, n_s, n_t)
    if not epsilon > 0:
        raise ValueError("epsilon must be > 0")
    if max_iter < 1:
        raise ValueError("max_iter must be >= 1")

    log_a = np.log(a)
    log_b = np.log(b)
    levels = []
    if init_potentials is None:
        f = np.zeros(n_s)
        level = epsilon * 10.0
        while level < 1.0:
            levels.append(level)
            level *= 10.0
    else:
        f = np.array(init_potentials[0], dtype=np.float64)

    total = 0
    g = None
    for eps_k in reversed(levels):
        budget = max_iter - total - 1
        if budget < 1:
            break
        f, g, used, _ = _sinkhorn_sweeps(
            M, log_a, log_b, eps_k, f, min(budget, 200), max(tol, 1e-4)
        )
        total += used
    f, g, used, est = _sinkhorn_sweeps(
        M, log_a, log_b, epsilon, f, max_iter - total, tol
    )
    total += used

    gamma = np.exp((f[:, None] + g[None, :] - M) / epsilon)
    violation = float(
        max(np.abs(gamma.sum(axis=1) - a).max(), np.abs(gamma.sum(axis=0) - b).max())
    )
    plan = TransportPlan(
        gamma, a, b, converged=est < tol, n_iter=total, violation=violation
    )
    plan.info["potentials"] = (f, g)
    return plan


def exact_ot_small(C, a, b) -> TransportPlan:
    """Exact linear-programming OT for instances with at most 64 cells.

    Serves as the test oracle for the entropic and regularized solvers.
    """
    M = _cost_values(C)
    n_s, n_t = M.shape
    if n_s * n_t > _EXACT_SIZE_LIMIT:
        raise ValueError(f"instance has {n_s * n_t} cells, limit is {_EXACT_SIZE_LIMIT}")
    a, b = _check_marginals(a, b, n_s, n_t)

    # Row-sum constraints plus all but one (redundant) column constraint.
    n_var = n_s * n_t
    rows = []
    rhs = []
    for i in range(n_s):
        r = np.zeros(n_var)
        r[i * n_t : (i + 1) * n_t] = 1.0
        rows.append(r)
        rhs.append(a[i])
    for j in range(n_t - 1):
        r = np.zeros(n_var)
        r[j::n_t] = 1.0
        rows.append(r)
        rhs.append(b[j])
    res = linprog(
        M.ravel(),
        A_eq=np.array(rows),
        b_eq=np.array(rhs),
        bounds=(0, None),
        method="highs",
    )
    if res.status != 0:
        raise RuntimeError(f"exact OT solve failed: {res.message}")
    gamma = np.maximum(res.x.reshape(n_s, n_t), 0.0)
    plan = TransportPlan(gamma, a, b, converged=True, n_iter=0, violation=0.0)
    plan.info["objective"] = float(res.fun)
    return plan


def _similarity_graph(points: np.ndarray, knn: int) -> np.ndarray:
    """Symmetric mutual-kNN Gaussian similarity over the given points.

    Bandwidth is the median neighbor distance; isolated layouts (a single
    point, or all-zero bandwidth) yield an all-zero graph.
    """
    n = points.shape[0]
    if n < 2:
        return np.zeros((n, n))
    d2 = _cost_values(cost_sqeuclidean(points, points))
    np.fill_diagonal(d2, np.inf)
    k = min(knn, n - 1)
    neighbor_idx = np.argsort(d2, axis=1)[:, :k]
    adj = np.zeros((n, n), dtype=bool)
    rows = np.repeat(np.arange(n), k)
    adj[rows, neighbor_idx.ravel()] = True
    mutual = adj & adj.T
    if not mutual.any():
        return np.zeros((n, n))
    neigh_d = np.sqrt(d2[rows, neighbor_idx.ravel()])
    h = float(np.median(neigh_d))
    if h <= 0:
        # Duplicate points: fall back to a 0/1 graph.
        return mutual.astype(np.float64)
    S = np.where(mutual, np.exp(-d2 / (2.0 * h * h)), 0.0)
    return S


def laplacian_reg_ot(C, a, b, source_points, target_points, config: OTConfig) -> TransportPlan:
    """Structure-preserving transport: <gamma, C> + lam * Omega(gamma).

    Omega penalizes, for similar source points, the squared distance
    between their barycentric images in target space (normalized by the
    squared source count, matching the usual Laplacian-transport form),
    and is minimized by generalized conditional gradient: linearize
    Omega, solve the linear subproblem with Sinkhorn, then take the
    exact quadratic line search over the convex combination.
    """
    M = _cost_values(C)
    n_s, n_t = M.shape
    a, b = _check_marginals(a, b, n_s, n_t)
    Y = np.asarray(target_points, dtype=np.float64)
    P = np.asarray(source_points, dtype=np.float64)
    if P.shape[0] != n_s or Y.shape[0] != n_t:
        raise ValueError("point-cloud sizes disagree with the cost matrix")

    S = _similarity_graph(P, config.knn)
    L = np.diag(S.sum(axis=1)) - S
    inv_a = 1.0 / a
    scale = 1.0 / float(n_s * n_s)

    def images(G):
        return (G * inv_a[:, None]) @ Y

    def omega_pair(G1, G2):
        # Bilinear form with omega(G) = omega_pair(G, G).
        return 2.0 * scale * float(np.sum(images(G1) * (L @ images(G2))))

    def omega_grad(G):
        return 4.0 * scale * inv_a[:, None] * ((L @ images(G)) @ Y.T)

    def objective(G):
        return float(np.sum(G * M)) + config.lam * omega_pair(G, G)

    G = np.outer(a, b)
    trace = [objective(G)]
    converged = True
    n_inner = 0
    for _ in range(config.outer_iter):
        Mi = M + config.lam * omega_grad(G)
        # The linearized cost can dip below zero; shift for the solver.
        sub = sinkhorn(Mi - Mi.min(), a, b, config.epsilon, config.max_iter, config.tol)
        converged = converged and sub.converged
        n_inner += sub.n_iter
        delta = sub.gamma - G
        c1 = float(np.sum(delta * M)) + 2.0 * config.lam * omega_pair(G, delta)
        c2 = config.lam * omega_pair(delta, delta)
        if c2 <= 1e-18:
            t = 1.0 if c1 <= 0 else 0.0
        else:
            t = float(np.clip(-c1 / (2.0 * c2), 0.0, 1.0))
        G = G + t * delta
        trace.append(objective(G))
        if np.abs(t * delta).max() < 1e-16 or abs(trace[-1] - trace[-2]) < 1e-15:
            break

    violation = float(
        max(np.abs(G.sum(axis=1) - a).max(), np.abs(G.sum(axis=0) - b).max())
    )
    plan = TransportPlan(
        G, a, b, converged=converged, n_iter=n_inner, violation=violation
    )
    plan.info["objective_trace"] = trace
    plan.info["objective"] = trace[-1]
    return plan


def barycentric_projection(plan: TransportPlan, targets) -> np.ndarray:
    """Map each source atom to the plan-weighted mean of the target points."""
    Z = np.asarray(targets, dtype=np.float64)
    if Z.shape[0] != plan.gamma.shape[1]:
        raise ValueError("target count disagrees with the plan")
    row_mass = plan.gamma.sum(axis=1)
    dead = np.flatnonzero(row_mass <= 0.0)
    if dead.size:
        raise ValueError(f"plan row {dead[0]} carries no mass")
    return (plan.gamma @ Z) / row_mass[:, None]
