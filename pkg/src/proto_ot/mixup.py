"""Synthetic batches along the transport geodesic between class
prototypes and few-shot target features.

A batch is drawn by sampling a mixing weight w ~ Beta(0.4, 0.4),
perturbing the target features, and solving a free-support entropic
barycenter between the two clouds; w multiplies the source term, so
w -> 1 pulls the supports toward the prototypes.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from ._rng import as_generator
from .ot import barycentric_projection, cost_sqeuclidean, sinkhorn
from .prototypes import PrototypeBank, _normalize_rows


@dataclass(frozen=True)
class BarycenterConfig:
    """Free-support barycenter and batch-sampling parameters.

    ``support_count`` defaults to the bank's K when left as None.
    """

    support_count: int | None = None
    epsilon: float = 0.01
    iterations: int = 10
    tol: float = 1e-6
    beta_a: float = 0.4
    beta_b: float = 0.4
    sigma: float = 0.05
    seed: int = 0
    sinkhorn_max_iter: int = 1000
    sinkhorn_tol: float = 1e-9

    def __post_init__(self):
        if self.support_count is not None and self.support_count < 1:
            raise ValueError("support_count must be >= 1")
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if min(self.beta_a, self.beta_b) <= 0:
            raise ValueError("Beta parameters must be > 0")
        if self.sigma < 0:
            raise ValueError("sigma must be >= 0")
        if not self.epsilon > 0:
            raise ValueError("epsilon must be > 0")


@dataclass(frozen=True)
class SyntheticBatch:
    """Q unit-norm support points labeled with one class and the mixing
    weight they were generated at."""

    points: np.ndarray
    label: int
    weight: float
    iteration: int = 0

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if not np.all(np.isfinite(pts)):
            raise ValueError("synthetic points must be finite")
        norms = np.linalg.norm(pts, axis=1)
        if np.any(np.abs(norms - 1.0) > 1e-9):
            raise ValueError("synthetic points must be unit-norm")
        if not 0.0 <= self.weight <= 1.0:
            raise ValueError("mixing weight must lie in [0, 1]")
        object.__setattr__(self, "points", pts)


def beta_sample(a: float, b: float, rng) -> float:
    """One Beta(a, b) draw as x / (x + y) with two Gamma draws."""
    if a <= 0 or b <= 0:
        raise ValueError("Beta parameters must be > 0")
    rng = as_generator(rng, "beta")
    x = rng.standard_gamma(a)
    y = rng.standard_gamma(b)
    if x + y == 0.0:
        return 0.5
    return float(x / (x + y))


def _resample(points: np.ndarray, q: int, rng) -> np.ndarray:
    n = points.shape[0]
    if n == q:
        return points
    idx = rng.choice(n, size=q, replace=n < q)
    return points[idx]


def _entropic_cost(plan, cost) -> float:
    """Primal entropic value <gamma, C> + eps * sum gamma (log gamma - 1),
    the quantity the fixed-point iteration descends."""
    g = plan.gamma
    ent = np.sum(np.where(g > 0, g * (np.log(np.where(g > 0, g, 1.0)) - 1.0), 0.0))
    return plan.cost(cost) + plan.info["epsilon"] * float(ent)


def _solve_side(X, side, weights_x, weights_side, config, warm=None):
    cost = cost_sqeuclidean(X, side)
    plan = sinkhorn(
        cost, weights_x, weights_side, config.epsilon,
        config.sinkhorn_max_iter, config.sinkhorn_tol,
        init_potentials=warm,
    )
    plan.info["epsilon"] = config.epsilon
    return plan, cost


def free_support_barycenter(source, target, w, config: BarycenterConfig,
                            rng=None, log=False):
    """Q equally-weighted supports minimizing
    w * W2_eps(mu, source) + (1 - w) * W2_eps(mu, target).

    Fixed-point iteration: solve entropic OT from the current supports to
    each side and move every support to the w-weighted combination of its
    two barycentric images.  Supports start on the entropic displacement
    interpolation between the clouds.  Outputs are not normalized.
    """
    source = np.atleast_2d(np.asarray(source, dtype=np.float64))
    target = np.atleast_2d(np.asarray(target, dtype=np.float64))
    if source.shape[1] != target.shape[1]:
        raise ValueError("source and target dimensions disagree")
    if not 0.0 <= w <= 1.0:
        raise ValueError("w must lie in [0, 1]")
    rng = as_generator(rng if rng is not None else config.seed, "barycenter")
    q = config.support_count or source.shape[0]

    u_q = np.full(q, 1.0 / q)
    u_s = np.full(source.shape[0], 1.0 / source.shape[0])
    u_t = np.full(target.shape[0], 1.0 / target.shape[0])

    # Initialization: anchor resampled source points to their entropic
    # images in the target cloud and interpolate at weight w.
    anchors = _resample(source, q, rng)
    if w >= 1.0:
        X = anchors.copy()
    else:
        init_plan, _ = _solve_side(anchors, target, u_q, u_t, config)
        X = w * anchors + (1.0 - w) * barycentric_projection(init_plan, target)

    trace = []
    warm_s = warm_t = None
    for _ in range(config.iterations):
        pieces = np.zeros_like(X)
        objective = 0.0
        if w > 0.0:
            plan_s, cost_s = _solve_side(X, source, u_q, u_s, config, warm_s)
            warm_s = plan_s.info["potentials"]
            pieces += w * barycentric_projection(plan_s, source)
            objective += w * _entropic_cost(plan_s, cost_s)
        if w < 1.0:
            plan_t, cost_t = _solve_side(X, target, u_q, u_t, config, warm_t)
            warm_t = plan_t.info["potentials"]
            pieces += (1.0 - w) * barycentric_projection(plan_t, target)
            objective += (1.0 - w) * _entropic_cost(plan_t, cost_t)
        trace.append(objective)
        displacement = float(np.linalg.norm(pieces - X, axis=1).max())
        X = pieces
        if displacement < config.tol:
            break
    if log:
        return X, {"objective_trace": trace, "iterations": len(trace)}
    return X


def sample_mixup_batch(bank: PrototypeBank, support, label: int,
                       config: BarycenterConfig, rng, iteration: int = 0) -> SyntheticBatch:
    """Draw one synthetic batch for the given class.

    The class's support features are perturbed with isotropic noise and
    renormalized, then a barycenter at w ~ Beta is solved between the
    class centroids and the perturbed cloud; the Q outputs are
    unit-normalized and labeled with the class.
    """
    rng = as_generator(rng, "mixup-batch")
    cls = support.for_class(label)
    if len(cls) == 0:
        raise ValueError(f"support has no records of class {label}")
    w = beta_sample(config.beta_a, config.beta_b, rng)
    feats = cls.vectors
    if config.sigma > 0:
        feats = _normalize_rows(feats + config.sigma * rng.standard_normal(feats.shape))
    centroids = bank.class_centroids(label)
    cfg = config if config.support_count else replace(config, support_count=bank.k)
    points = free_support_barycenter(centroids, feats, w, cfg, rng=rng)
    return SyntheticBatch(_normalize_rows(points), label, w, iteration)
