"""Training-free adaptation: class-wise transport of prototype centroids
onto few-shot target features, plus the one-class variant that leaves the
unsupported class untouched.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .features import FeatureSet
from .ot import OTConfig, cost_cosine, laplacian_reg_ot
from .prototypes import PrototypeBank, _normalize_rows


@dataclass
class AdaptedBank:
    """A transported prototype bank with per-class provenance and
    transport diagnostics (objective, marginal violation, mean angular
    displacement in radians, indices of centroids left in place)."""

    bank: PrototypeBank
    transported: dict = field(default_factory=dict)   # label -> bool
    diagnostics: dict = field(default_factory=dict)   # label -> dict


def _transport_class(centroids: np.ndarray, feats: np.ndarray, config: OTConfig):
    k = centroids.shape[0]
    m = feats.shape[0]
    cost = cost_cosine(centroids, feats)
    a = np.full(k, 1.0 / k)
    b = np.full(m, 1.0 / m)
    plan = laplacian_reg_ot(cost, a, b, centroids, feats, config)

    row_mass = plan.gamma.sum(axis=1)
    dead = row_mass <= 0.0
    moved = np.where(
        dead[:, None], centroids, (plan.gamma @ feats) / np.where(dead, 1.0, row_mass)[:, None]
    )
    norms = np.linalg.norm(moved, axis=1)
    collapsed = norms == 0.0
    moved = np.where(collapsed[:, None], centroids, moved)
    moved = _normalize_rows(moved)

    cos_disp = np.clip(np.sum(moved * centroids, axis=1), -1.0, 1.0)
    diag = {
        "objective": plan.info.get("objective"),
        "violation": plan.violation,
        "converged": plan.converged,
        "mean_angular_displacement": float(np.mean(np.arccos(cos_disp))),
        "degenerate_rows": [int(i) for i in np.flatnonzero(dead | collapsed)],
    }
    return moved, diag


def _check_support(support: FeatureSet, bank: PrototypeBank):
    if support.dimension != bank.dimension:
        raise ValueError("support dimension disagrees with the bank")
    norms = np.linalg.norm(support.vectors, axis=1)
    if np.any(np.abs(norms - 1.0) > 1e-6):
        raise ValueError("support vectors must be unit-norm; call l2_normalize first")


def adapt_prototypes(bank: PrototypeBank, support: FeatureSet,
                     config: OTConfig | None = None) -> AdaptedBank:
    """Transport both classes' centroids onto their class's support
    features (uniform weights on both sides) and renormalize.

    Degenerate transport rows leave the affected centroid unchanged and
    are reported in the diagnostics; a missing class is an error (use
    ``adapt_one_class``).
    """
    config = config or OTConfig()
    _check_support(support, bank)
    n_bona, n_spoof = support.class_counts()
    if n_bona == 0 or n_spoof == 0:
        raise ValueError(
            "support must contain both classes; use adapt_one_class for "
            "single-class support"
        )
    blocks = {}
    diagnostics = {}
    for label in (0, 1):
        feats = support.for_class(label).vectors
        blocks[label], diagnostics[label] = _transport_class(
            bank.class_centroids(label), feats, config
        )
    adapted = PrototypeBank(blocks[0], blocks[1], scale=bank.scale, margin=bank.margin)
    return AdaptedBank(adapted, {0: True, 1: True}, diagnostics)


def adapt_one_class(bank: PrototypeBank, support: FeatureSet,
                    config: OTConfig | None = None) -> AdaptedBank:
    """Transport only the class present in the support set; the other
    class's centroids are returned bitwise unchanged."""
    config = config or OTConfig()
    _check_support(support, bank)
    n_bona, n_spoof = support.class_counts()
    if n_bona > 0 and n_spoof > 0:
        raise ValueError("support contains both classes; use adapt_prototypes")
    if n_bona == 0 and n_spoof == 0:
        raise ValueError("support is empty")
    present = 0 if n_bona > 0 else 1

    moved, diag = _transport_class(
        bank.class_centroids(present), support.for_class(present).vectors, config
    )
    blocks = {
        0: moved if present == 0 else bank.bona_fide.copy(),
        1: moved if present == 1 else bank.spoof.copy(),
    }
    adapted = PrototypeBank(blocks[0], blocks[1], scale=bank.scale, margin=bank.margin)
    return AdaptedBank(
        adapted,
        {present: True, 1 - present: False},
        {present: diag},
    )
