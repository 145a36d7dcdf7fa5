"""Biometric evaluation metrics (HTER at the EER operating point, ROC
AUC, TPR at a fixed FPR) and the few-shot baseline methods.

Bona fide is the positive class throughout: a spoof accepted as bona
fide is a false positive, and higher scores mean more bona fide.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from ._rng import stream
from .features import FeatureSet
from .light import (LightTrainConfig, LinearClassifier, _bce_with_logits,
                    _init_classifier)
from ._optim import Adam
from .prototypes import PrototypeBank, _normalize_rows


@dataclass(frozen=True)
class ScoreSet:
    """Per-sample scores (higher = more bona fide) with ground truth."""

    scores: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        scores = np.asarray(self.scores, dtype=np.float64)
        labels = np.asarray(self.labels, dtype=np.int64)
        if scores.ndim != 1 or scores.shape != labels.shape or scores.size == 0:
            raise ValueError("scores and labels must be equal-length, nonempty")
        if not np.all(np.isfinite(scores)):
            raise ValueError("scores must be finite")
        if not np.all((labels == 0) | (labels == 1)):
            raise ValueError("labels must be 0 or 1")
        object.__setattr__(self, "scores", scores)
        object.__setattr__(self, "labels", labels)

    def require_both_classes(self):
        if not (np.any(self.labels == 0) and np.any(self.labels == 1)):
            raise ValueError("threshold metrics need both classes present")


@dataclass(frozen=True)
class MetricReport:
    hter: float
    auc: float
    tpr_at_fpr1: float
    eer_threshold: float
    n_bona_fide: int
    n_spoof: int

    def as_dict(self) -> dict:
        return {
            "hter": self.hter,
            "auc": self.auc,
            "tpr_at_fpr1": self.tpr_at_fpr1,
            "eer_threshold": self.eer_threshold,
            "n_bona_fide": self.n_bona_fide,
            "n_spoof": self.n_spoof,
        }


def roc_points(s: ScoreSet) -> list[tuple[float, float, float]]:
    """(fpr, tpr, threshold) per distinct threshold, descending, with the
    (0, 0) endpoint prepended; acceptance is score >= threshold."""
    s.require_both_classes()
    bona = s.scores[s.labels == 0]
    spoof = s.scores[s.labels == 1]
    points = [(0.0, 0.0, np.inf)]
    for thr in np.unique(s.scores)[::-1]:
        tpr = float(np.mean(bona >= thr))
        fpr = float(np.mean(spoof >= thr))
        points.append((fpr, tpr, float(thr)))
    return points


def auc(s: ScoreSet) -> float:
    """Trapezoidal area under the ROC; ties contribute half credit,
    matching the Mann-Whitney statistic."""
    pts = roc_points(s)
    fpr = np.array([p[0] for p in pts])
    tpr = np.array([p[1] for p in pts])
    return float(np.trapz(tpr, fpr))


def _threshold_grid(scores: np.ndarray) -> np.ndarray:
    """Candidate thresholds: midpoints between consecutive distinct scores
    plus sentinels beyond both extremes."""
    uniq = np.unique(scores)
    mids = (uniq[:-1] + uniq[1:]) / 2.0
    return np.concatenate([[uniq[0] - 1.0], mids, [uniq[-1] + 1.0]])


def hter_at_eer(s: ScoreSet) -> tuple[float, float]:
    """HTER = (FAR + FRR) / 2 at the threshold minimizing |FAR - FRR|
    over the midpoint grid; ties pick the lower threshold."""
    s.require_both_classes()
    bona = s.scores[s.labels == 0]
    spoof = s.scores[s.labels == 1]
    best = None
    for thr in _threshold_grid(s.scores):
        far = float(np.mean(spoof >= thr))
        frr = float(np.mean(bona < thr))
        key = (abs(far - frr), thr)
        if best is None or key < best[0]:
            best = (key, (far + frr) / 2.0, float(thr))
    return best[1], best[2]


def tpr_at_fpr(s: ScoreSet, target_fpr: float = 0.01) -> float:
    """TPR at the target FPR, linearly interpolated between the adjacent
    ROC points when no point sits exactly at the target."""
    pts = roc_points(s)
    below = [p for p in pts if p[0] <= target_fpr]
    above = [p for p in pts if p[0] > target_fpr]
    p0 = below[-1]
    if not above or p0[0] == target_fpr:
        return p0[1]
    p1 = above[0]
    frac = (target_fpr - p0[0]) / (p1[0] - p0[0])
    return float(p0[1] + frac * (p1[1] - p0[1]))


def metric_report(s: ScoreSet, target_fpr: float = 0.01) -> MetricReport:
    hter, thr = hter_at_eer(s)
    return MetricReport(
        hter=hter,
        auc=auc(s),
        tpr_at_fpr1=tpr_at_fpr(s, target_fpr),
        eer_threshold=thr,
        n_bona_fide=int(np.sum(s.labels == 0)),
        n_spoof=int(np.sum(s.labels == 1)),
    )


# ---------------------------------------------------------------------------
# Baselines.
# ---------------------------------------------------------------------------

def baseline_ncm(support: FeatureSet):
    """Nearest-class-mean scorer: cosine to the bona fide mean minus
    cosine to the spoof mean, both means unit-normalized."""
    n_bona, n_spoof = support.class_counts()
    if n_bona == 0 or n_spoof == 0:
        raise ValueError("NCM needs both classes in the support set")
    means = np.stack([
        support.for_class(0).vectors.mean(axis=0),
        support.for_class(1).vectors.mean(axis=0),
    ])
    means = _normalize_rows(means)

    def score(Z) -> np.ndarray:
        Zn = _normalize_rows(np.atleast_2d(np.asarray(Z, dtype=np.float64)))
        return Zn @ means[0] - Zn @ means[1]

    return score


def baseline_linear_probe(bank: PrototypeBank, support: FeatureSet,
                          config: LightTrainConfig) -> LinearClassifier:
    """Lightweight training with mixup and perturbation switched off."""
    from .light import train_light

    return train_light(
        bank, support, replace(config, use_mixup=False, perturb_support=False)
    )


def baseline_manifold_mixup(bank: PrototypeBank, support: FeatureSet,
                            config: LightTrainConfig) -> LinearClassifier:
    """Linear probe augmented with instance-wise mixes: each iteration
    adds 2Q points lam * z_i + (1 - lam) * z_j from random pool pairs,
    lam ~ Beta, with soft labels mixed identically."""
    from .mixup import beta_sample

    if support.dimension != bank.dimension:
        raise ValueError("support dimension disagrees with the bank")
    n_bona, n_spoof = support.class_counts()
    if n_bona == 0 or n_spoof == 0:
        raise ValueError("support must contain both classes")

    rng = stream(config.seed, "manifold-mixup")
    dim = bank.dimension
    w, b = _init_classifier(dim, rng)
    opt = Adam(dim + 1, config.learning_rate, config.beta1, config.beta2,
               config.adam_eps)

    pool_X = np.vstack([bank.bona_fide, bank.spoof, support.vectors])
    pool_t = np.concatenate([
        np.ones(bank.k), np.zeros(bank.k), 1.0 - support.labels
    ])
    n_pool = pool_X.shape[0]
    n_mix = 2 * bank.k

    for _ in range(config.iterations):
        i = rng.integers(0, n_pool, size=n_mix)
        j = rng.integers(0, n_pool, size=n_mix)
        lam = np.array([
            beta_sample(config.barycenter.beta_a, config.barycenter.beta_b, rng)
            for _ in range(n_mix)
        ])
        mix_X = lam[:, None] * pool_X[i] + (1.0 - lam[:, None]) * pool_X[j]
        mix_t = lam * pool_t[i] + (1.0 - lam) * pool_t[j]
        X = np.vstack([pool_X, mix_X])
        t = np.concatenate([pool_t, mix_t])
        scores = X @ w + b
        _, dscores = _bce_with_logits(scores, t)
        params = opt.step(
            np.concatenate([w, [b]]),
            np.concatenate([X.T @ dscores, [float(dscores.sum())]]),
        )
        w, b = params[:dim], float(params[dim])

    return LinearClassifier(w, b)
