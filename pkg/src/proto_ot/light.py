"""Lightweight adaptation: a binary linear classifier trained with Adam
on prototypes, perturbed support features, and per-iteration synthetic
mixup batches.

Score convention matches the prototype classifier: higher means more
bona fide, and a zero score fails secure to spoof.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from ._optim import Adam
from ._rng import stream
from .features import FeatureSet, FeatureTableError
from .mixup import BarycenterConfig, sample_mixup_batch
from .prototypes import PrototypeBank, _normalize_rows


@dataclass
class LinearClassifier:
    weight: np.ndarray
    bias: float

    def __post_init__(self):
        self.weight = np.asarray(self.weight, dtype=np.float64)
        if self.weight.ndim != 1:
            raise ValueError("weight must be a vector")
        if not (np.all(np.isfinite(self.weight)) and np.isfinite(self.bias)):
            raise ValueError("classifier parameters must be finite")

    def scores(self, Z) -> np.ndarray:
        Z = np.atleast_2d(np.asarray(Z, dtype=np.float64))
        if Z.shape[1] != self.weight.shape[0]:
            raise ValueError("feature dimension disagrees with the classifier")
        return Z @ self.weight + self.bias


@dataclass(frozen=True)
class LightTrainConfig:
    iterations: int = 100
    learning_rate: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    barycenter: BarycenterConfig = field(default_factory=BarycenterConfig)
    seed: int = 0
    use_mixup: bool = True
    perturb_support: bool = True

    def __post_init__(self):
        if self.iterations < 0:
            raise ValueError("iterations must be >= 0")
        if not self.learning_rate > 0:
            raise ValueError("learning rate must be > 0")


def predict_linear(clf: LinearClassifier, z) -> tuple[int, float]:
    """(class, score) for one feature vector; zero score goes to spoof."""
    score = float(clf.scores(np.asarray(z)[None, :])[0])
    return (0 if score > 0 else 1), score


def _bce_with_logits(scores, targets):
    """Mean binary cross-entropy of the logistic output, where target is
    the bona-fide probability; returns (loss, dloss/dscores)."""
    scores = np.asarray(scores, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    # -[t log sig(s) + (1-t) log(1 - sig(s))] in softplus form
    per = targets * np.logaddexp(0.0, -scores) + (1.0 - targets) * np.logaddexp(0.0, scores)
    grad = (expit(scores) - targets) / scores.shape[0]
    return float(per.mean()), grad


def cross_entropy(scores, labels) -> float:
    """Mean cross-entropy with hard labels (0 bona fide, 1 spoof)."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if scores.size == 0:
        raise ValueError("empty score list")
    if scores.shape != labels.shape:
        raise ValueError("scores and labels must have equal length")
    value, _ = _bce_with_logits(scores, 1.0 - labels)
    return value


@dataclass
class LightTrainResult:
    classifier: LinearClassifier
    loss_history: list


def _init_classifier(dim: int, rng) -> tuple[np.ndarray, float]:
    return rng.standard_normal(dim) / np.sqrt(dim), 0.0


def fit_light(bank: PrototypeBank, support: FeatureSet,
              config: LightTrainConfig) -> LightTrainResult:
    """Train the linear head for ``config.iterations`` full-batch Adam steps.

    Each iteration rebuilds the training set: the 2K prototypes (labeled
    by class), the support features (noise-perturbed when enabled), and
    one synthetic batch per class when mixup is enabled.
    """
    if support.dimension != bank.dimension:
        raise ValueError("support dimension disagrees with the bank")
    n_bona, n_spoof = support.class_counts()
    if n_bona == 0 or n_spoof == 0:
        raise ValueError(
            "support must contain both classes; use the training-free "
            "one-class path instead"
        )
    rng = stream(config.seed, "light-train")
    dim = bank.dimension
    w, b = _init_classifier(dim, rng)
    opt = Adam(dim + 1, config.learning_rate, config.beta1, config.beta2,
               config.adam_eps)

    proto_X = np.vstack([bank.bona_fide, bank.spoof])
    proto_t = np.concatenate([np.ones(bank.k), np.zeros(bank.k)])
    support_t = 1.0 - support.labels

    history = []
    sigma = config.barycenter.sigma
    for it in range(config.iterations):
        feats = support.vectors
        if config.perturb_support and sigma > 0:
            feats = _normalize_rows(feats + sigma * rng.standard_normal(feats.shape))
        X = [proto_X, feats]
        t = [proto_t, support_t]
        if config.use_mixup:
            for label in (0, 1):
                batch = sample_mixup_batch(bank, support, label,
                                           config.barycenter, rng, iteration=it)
                X.append(batch.points)
                t.append(np.full(batch.points.shape[0], 1.0 - label))
        X = np.vstack(X)
        t = np.concatenate(t)
        scores = X @ w + b
        loss, dscores = _bce_with_logits(scores, t)
        grad_w = X.T @ dscores
        grad_b = float(dscores.sum())
        params = opt.step(np.concatenate([w, [b]]),
                          np.concatenate([grad_w, [grad_b]]))
        w, b = params[:dim], float(params[dim])
        history.append(loss)

    return LightTrainResult(LinearClassifier(w, b), history)


def train_light(bank: PrototypeBank, support: FeatureSet,
                config: LightTrainConfig) -> LinearClassifier:
    return fit_light(bank, support, config).classifier


# ---------------------------------------------------------------------------
# Classifier file format: '#linclf v1 D=<int>' then 'b,<float>' and
# 'w,<v0>,...,<v{D-1}>'.
# ---------------------------------------------------------------------------

def save_linear_classifier(clf: LinearClassifier, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"#linclf v1 D={clf.weight.shape[0]}\n")
        fh.write(f"b,{format(clf.bias, '.17g')}\n")
        fh.write("w," + ",".join(format(v, ".17g") for v in clf.weight) + "\n")


def load_linear_classifier(path) -> LinearClassifier:
    with open(path, "r", encoding="utf-8") as fh:
        lines = [l for l in fh.read().splitlines() if l.strip()]
    if not lines or not lines[0].startswith("#linclf v1 "):
        raise FeatureTableError(f"{path}: missing '#linclf v1' header")
    try:
        dim = int(lines[0].split("D=", 1)[1])
        fields = {line.split(",", 1)[0]: line.split(",", 1)[1] for line in lines[1:]}
        bias = float(fields["b"])
        weight = np.array([float(v) for v in fields["w"].split(",")])
    except (KeyError, IndexError, ValueError) as exc:
        raise FeatureTableError(f"{path}: malformed classifier file") from exc
    if weight.shape[0] != dim:
        raise FeatureTableError(f"{path}: weight length disagrees with header")
    return LinearClassifier(weight, bias)
