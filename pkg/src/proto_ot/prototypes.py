"""Multi-centroid prototype bank: cosine classification, the margin /
orthogonality / supervised-contrastive losses with analytic gradients,
and the Adam training loop over centroids and the learnable margin.

Centroids live on the unit sphere; every optimizer step is followed by
renormalization, and the margin is clamped to [0, 1] rad.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy.special import expit

from ._optim import Adam
from ._rng import stream
from .features import FeatureSet, FeatureTableError

# Mean cosine similarities are clamped before arccos so gradients stay finite.
_COS_CLAMP = 1.0 - 1e-7
_MARGIN_MAX = 1.0


@dataclass
class PrototypeBank:
    """K unit-norm sub-centroids per class plus the logit scale and margin."""

    bona_fide: np.ndarray  # (K, D)
    spoof: np.ndarray      # (K, D)
    scale: float = 30.0
    margin: float = 0.5

    def __post_init__(self):
        self.bona_fide = np.asarray(self.bona_fide, dtype=np.float64)
        self.spoof = np.asarray(self.spoof, dtype=np.float64)
        if self.bona_fide.ndim != 2 or self.bona_fide.shape != self.spoof.shape:
            raise ValueError("class centroid blocks must share one (K, D) shape")
        if self.bona_fide.shape[0] < 1:
            raise ValueError("need at least one sub-centroid per class")
        if not self.scale > 0:
            raise ValueError("scale must be > 0")
        if not (0.0 <= self.margin < np.pi / 2):
            raise ValueError("margin must lie in [0, pi/2)")
        for name, block in (("bona_fide", self.bona_fide), ("spoof", self.spoof)):
            if not np.all(np.isfinite(block)):
                raise ValueError(f"{name} centroids must be finite")
            norms = np.linalg.norm(block, axis=1)
            if np.any(np.abs(norms - 1.0) > 1e-6):
                raise ValueError(f"{name} centroids must be unit-norm (+-1e-6)")

    @property
    def dimension(self) -> int:
        return self.bona_fide.shape[1]

    @property
    def k(self) -> int:
        return self.bona_fide.shape[0]

    def class_centroids(self, label: int) -> np.ndarray:
        return self.bona_fide if label == 0 else self.spoof

    def stacked(self) -> np.ndarray:
        """(2, K, D) view ordered (bona fide, spoof)."""
        return np.stack([self.bona_fide, self.spoof])


@dataclass(frozen=True)
class TrainConfig:
    k: int = 50
    alpha: float = 0.01
    beta: float = 0.01
    eta: float = 1.0
    temperature: float = 0.07
    scale: float = 30.0
    margin_init: float = 0.5
    learning_rate: float = 0.01
    batch_size: int = 128
    epochs: int = 30
    seed: int = 0
    view_sigma: float = 0.05
    fine_grouping: str = "domain_attack"  # or "attack_only"

    def __post_init__(self):
        if min(self.k, self.batch_size) < 1 or self.epochs < 0:
            raise ValueError("k and batch_size must be >= 1, epochs >= 0")
        for name in ("alpha", "beta", "eta", "temperature", "scale",
                     "learning_rate"):
            v = getattr(self, name)
            if not np.isfinite(v) or v < 0:
                raise ValueError(f"{name} must be finite and nonnegative")
        if self.temperature <= 0 or self.learning_rate <= 0 or self.scale <= 0:
            raise ValueError("temperature, learning_rate and scale must be > 0")
        if self.fine_grouping not in ("domain_attack", "attack_only"):
            raise ValueError("fine_grouping must be 'domain_attack' or 'attack_only'")


@dataclass(frozen=True)
class LossBreakdown:
    proto: float
    orth: float
    con_coarse: float
    con_fine: float
    total: float


def _normalize_rows(X: np.ndarray) -> np.ndarray:
    return X / np.linalg.norm(X, axis=-1, keepdims=True)


def mean_cosine(z: np.ndarray, bank: PrototypeBank, label: int) -> float:
    """Mean cosine similarity between z and the class's K sub-centroids."""
    z = np.asarray(z, dtype=np.float64)
    if z.shape != (bank.dimension,):
        raise ValueError(f"expected a vector of dimension {bank.dimension}")
    P = _normalize_rows(bank.class_centroids(label))
    zn = z / np.linalg.norm(z)
    return float(np.mean(P @ zn))


def decision_scores(Z: np.ndarray, bank: PrototypeBank) -> np.ndarray:
    """Bona-fide-ness scores for a feature matrix: mean cos to the bona
    fide centroids minus mean cos to the spoof centroids."""
    Z = _normalize_rows(np.atleast_2d(np.asarray(Z, dtype=np.float64)))
    if Z.shape[1] != bank.dimension:
        raise ValueError("feature dimension disagrees with the bank")
    sim_b = Z @ _normalize_rows(bank.bona_fide).T
    sim_s = Z @ _normalize_rows(bank.spoof).T
    return sim_b.mean(axis=1) - sim_s.mean(axis=1)


def classify(z: np.ndarray, bank: PrototypeBank) -> tuple[int, float]:
    """Assign bona fide (0) or spoof (1) by the higher mean similarity.

    Ties resolve to spoof: a security classifier fails secure.
    """
    score = float(decision_scores(np.asarray(z)[None, :], bank)[0])
    label = 0 if score > 1e-12 else 1
    return label, score


# ---------------------------------------------------------------------------
# Loss kernels.  Each returns its value together with analytic gradients;
# the gradients are exercised against finite differences in the test suite.
# ---------------------------------------------------------------------------

def margin_loss(Z, y, protos, scale, margin):
    """Additive angular-margin loss toward each sample's own class bank.

    The true-class angle is arccos of the mean cosine to that class's
    centroids; the margin is added there before the two-logit softmax.
    Returns (loss, grad wrt protos (2,K,D), grad wrt margin).
    """
    Z = np.asarray(Z, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if Z.shape[0] == 0:
        raise ValueError("batch must be nonempty")
    P = np.asarray(protos, dtype=np.float64)  # (2, K, D)
    k = P.shape[1]
    norms = np.linalg.norm(P, axis=2, keepdims=True)
    Pn = P / norms

    sims = np.einsum("ckd,bd->bck", Pn, Z)  # (B, 2, K)
    mean_sim = sims.mean(axis=2)            # (B, 2)
    clamped = np.clip(mean_sim, -_COS_CLAMP, _COS_CLAMP)
    active = np.abs(mean_sim) < _COS_CLAMP  # clamp blocks the gradient

    B = Z.shape[0]
    rows = np.arange(B)
    u = clamped[rows, y]          # own-class mean cosine
    v = clamped[rows, 1 - y]      # other-class mean cosine
    theta = np.arccos(u)
    lt = scale * np.cos(theta + margin)
    lo = scale * v
    diff = lo - lt
    loss = float(np.mean(np.logaddexp(0.0, diff)))

    sig = expit(diff)  # dloss_i / d diff
    # d lt / d u = scale * sin(theta + margin) / sqrt(1 - u^2)
    dlt_du = scale * np.sin(theta + margin) / np.sqrt(1.0 - u * u)
    du_coeff = -sig * dlt_du * active[rows, y] / (k * B)
    dv_coeff = sig * scale * active[rows, 1 - y] / (k * B)

    grad_pn = np.zeros_like(Pn)
    for c in (0, 1):
        own = y == c
        other = ~own
        coeff = np.zeros(B)
        coeff[own] = du_coeff[own]
        coeff[other] = dv_coeff[other]
        grad_pn[c] = np.einsum("b,bd->d", coeff, Z)[None, :].repeat(k, axis=0)
    # Chain through row normalization p_hat = p / |p|.
    inner = np.sum(grad_pn * Pn, axis=2, keepdims=True)
    grad_p = (grad_pn - inner * Pn) / norms

    grad_margin = float(np.sum(sig * scale * np.sin(theta + margin)) / B)
    return loss, grad_p, grad_margin


def orthogonality_loss(protos):
    """Sum over classes of ||G - I||_F^2 for the Gram matrix G of the
    class's unit-normalized centroids.  Returns (loss, grad)."""
    P = np.asarray(protos, dtype=np.float64)
    k = P.shape[1]
    norms = np.linalg.norm(P, axis=2, keepdims=True)
    Pn = P / norms
    loss = 0.0
    grad_pn = np.zeros_like(Pn)
    eye = np.eye(k)
    for c in (0, 1):
        G = Pn[c] @ Pn[c].T
        R = G - eye
        loss += float(np.sum(R * R))
        grad_pn[c] = 4.0 * R @ Pn[c]
    inner = np.sum(grad_pn * Pn, axis=2, keepdims=True)
    grad_p = (grad_pn - inner * Pn) / norms
    return loss, grad_p


def supcon_loss(F, groups, tau):
    """Supervised contrastive loss over a multiviewed batch.

    ``F`` holds the 2B stacked views; anchors with no positive partner
    contribute zero and are tallied.  The value is the mean over anchors.
    Returns (loss, grad wrt F, n_isolated).
    """
    if tau <= 0:
        raise ValueError("temperature must be > 0")
    F = np.asarray(F, dtype=np.float64)
    n = F.shape[0]
    if n < 2:
        raise ValueError("multiview batch needs at least 2 elements")
    groups = np.asarray(groups)
    if groups.shape[0] != n:
        raise ValueError("group labels disagree with the batch")

    S = F @ F.T / tau
    off = ~np.eye(n, dtype=bool)
    pos = (groups[:, None] == groups[None, :]) & off
    n_pos = pos.sum(axis=1)
    isolated = n_pos == 0

    S_masked = np.where(off, S, -np.inf)
    row_max = S_masked.max(axis=1, keepdims=True)
    expS = np.exp(S_masked - row_max)
    denom = expS.sum(axis=1)
    log_denom = np.log(denom) + row_max[:, 0]

    safe_np = np.where(isolated, 1, n_pos)
    per_anchor = -np.where(pos, S, 0.0).sum(axis=1) / safe_np + log_denom
    per_anchor = np.where(isolated, 0.0, per_anchor)
    loss = float(per_anchor.mean())

    softmax = expS / denom[:, None]
    dS = np.where(pos, -1.0 / safe_np[:, None], 0.0) + np.where(off, softmax, 0.0)
    dS[isolated] = 0.0
    dS /= n
    grad = (dS + dS.T) @ F / tau
    return loss, grad, int(isolated.sum())


def make_views(Z: np.ndarray, rng: np.random.Generator, sigma: float) -> np.ndarray:
    """Second view of each feature: add isotropic noise, renormalize."""
    if sigma == 0.0:
        return Z.copy()
    return _normalize_rows(Z + sigma * rng.standard_normal(Z.shape))


def _fine_groups(batch: FeatureSet, mode: str) -> np.ndarray:
    if mode == "attack_only":
        keys = [(int(l), a) for l, a in zip(batch.labels, batch.attacks)]
    else:
        keys = [
            (int(l), d, a)
            for l, d, a in zip(batch.labels, batch.domains, batch.attacks)
        ]
    uniq = {key: i for i, key in enumerate(dict.fromkeys(keys))}
    return np.array([uniq[key] for key in keys])


def loss_proto(batch: FeatureSet, bank: PrototypeBank) -> float:
    if batch.vectors.shape[1] != bank.dimension:
        raise ValueError("batch dimension disagrees with the bank")
    value, _, _ = margin_loss(
        batch.vectors, batch.labels, bank.stacked(), bank.scale, bank.margin
    )
    return value


def loss_orth(bank: PrototypeBank) -> float:
    value, _ = orthogonality_loss(bank.stacked())
    return value


def loss_supcon(batch: FeatureSet, groups, tau, rng=None, view_sigma=0.05):
    """Spec-level wrapper: builds the multiview batch (noisy second views)
    and returns (loss, n_isolated)."""
    if len(batch) < 2:
        raise ValueError("need at least 2 records")
    rng = rng if rng is not None else stream(0, "supcon-views")
    groups = np.asarray(groups)
    F = np.vstack([batch.vectors, make_views(batch.vectors, rng, view_sigma)])
    value, _, isolated = supcon_loss(F, np.concatenate([groups, groups]), tau)
    return value, isolated


def total_loss(batch: FeatureSet, bank: PrototypeBank, config: TrainConfig,
               rng=None) -> LossBreakdown:
    """Combined objective over one batch (see ``LossBreakdown``)."""
    rng = rng if rng is not None else stream(config.seed, "total-loss-views")
    breakdown, _, _ = _total_loss_grads(batch, bank.stacked(), bank.scale,
                                        bank.margin, config, rng)
    return breakdown


def _total_loss_grads(batch, protos, scale, margin, config, rng):
    Z = batch.vectors
    views = make_views(Z, rng, config.view_sigma)
    F = np.vstack([Z, views])

    proto_val, grad_p, grad_m = margin_loss(Z, batch.labels, protos, scale, margin)
    orth_val, grad_orth = orthogonality_loss(protos)

    coarse_groups = np.concatenate([batch.labels, batch.labels])
    coarse_val, _, _ = supcon_loss(F, coarse_groups, config.temperature)
    fine = _fine_groups(batch, config.fine_grouping)
    fine_val, _, _ = supcon_loss(F, np.concatenate([fine, fine]), config.temperature)

    total = (proto_val + config.alpha * coarse_val + config.beta * fine_val
             + config.eta * orth_val)
    breakdown = LossBreakdown(proto_val, orth_val, coarse_val, fine_val, total)
    return breakdown, grad_p + config.eta * grad_orth, grad_m


@dataclass
class PrototypeTrainResult:
    bank: PrototypeBank
    history: list  # one (epoch, LossBreakdown, margin) triple per epoch


def _init_centroids(vectors, labels, k, rng):
    blocks = []
    for label in (0, 1):
        pool = np.flatnonzero(labels == label)
        if pool.size == 0:
            raise ValueError("both classes must be present in the training data")
        if pool.size < k:
            raise ValueError(
                f"class {label} has {pool.size} samples, cannot draw {k} centroids"
            )
        picked = rng.choice(pool, size=k, replace=False)
        blocks.append(_normalize_rows(vectors[picked]))
    return np.stack(blocks)


def fit_prototype_bank(sources, config: TrainConfig) -> PrototypeTrainResult:
    """Learn centroids and margin by Adam over the combined loss.

    Centroids are renormalized to the sphere after every step and the
    margin is clamped to [0, 1] rad.  Deterministic given config.seed.
    """
    if isinstance(sources, FeatureSet):
        sources = [sources]
    if not sources:
        raise ValueError("need at least one source FeatureSet")
    dim = sources[0].dimension
    merged = FeatureSet.from_records(
        dim, [r for s in sources for r in s]
    )
    if len(merged) == 0:
        raise ValueError("training data is empty")
    norms = np.linalg.norm(merged.vectors, axis=1)
    if np.any(np.abs(norms - 1.0) > 1e-6):
        raise ValueError("training vectors must be unit-norm; call l2_normalize first")

    rng = stream(config.seed, "proto-train")
    protos = _init_centroids(merged.vectors, merged.labels, config.k, rng)
    margin = float(config.margin_init)
    k, d = config.k, dim
    n_proto = 2 * k * d
    opt = Adam(n_proto + 1, config.learning_rate)

    history = []
    n = len(merged)
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        epoch_rows = []
        for start in range(0, n, config.batch_size):
            batch = merged.subset(order[start:start + config.batch_size])
            breakdown, grad_p, grad_m = _total_loss_grads(
                batch, protos, config.scale, margin, config, rng
            )
            params = np.concatenate([protos.ravel(), [margin]])
            grads = np.concatenate([grad_p.ravel(), [grad_m]])
            params = opt.step(params, grads)
            protos = _normalize_rows(params[:n_proto].reshape(2, k, d))
            margin = float(np.clip(params[-1], 0.0, _MARGIN_MAX))
            epoch_rows.append(breakdown)
        mean = LossBreakdown(*[
            float(np.mean([getattr(row, f) for row in epoch_rows]))
            for f in ("proto", "orth", "con_coarse", "con_fine", "total")
        ])
        history.append((epoch, mean, margin))

    bank = PrototypeBank(protos[0], protos[1], scale=config.scale, margin=margin)
    return PrototypeTrainResult(bank, history)


def train_prototypes(sources, config: TrainConfig) -> PrototypeBank:
    return fit_prototype_bank(sources, config).bank


# ---------------------------------------------------------------------------
# Prototype-bank file format: '#protobank v1 D=<int> K=<int> s=<float> m=<float>'
# followed by 2K lines 'class,k,v0,...,v{D-1}'.
# ---------------------------------------------------------------------------

def save_prototype_bank(bank: PrototypeBank, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(
            f"#protobank v1 D={bank.dimension} K={bank.k} "
            f"s={format(bank.scale, '.17g')} m={format(bank.margin, '.17g')}\n"
        )
        for label, block in ((0, bank.bona_fide), (1, bank.spoof)):
            for k in range(bank.k):
                coords = ",".join(format(v, ".17g") for v in block[k])
                fh.write(f"{label},{k},{coords}\n")


def load_prototype_bank(path) -> PrototypeBank:
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines or not lines[0].startswith("#protobank v1 "):
        raise FeatureTableError(f"{path}: missing '#protobank v1' header")
    fields = dict(
        part.split("=", 1) for part in lines[0].split()[2:] if "=" in part
    )
    try:
        dim = int(fields["D"])
        k = int(fields["K"])
        scale = float(fields["s"])
        margin = float(fields["m"])
    except (KeyError, ValueError) as exc:
        raise FeatureTableError(f"{path}: unreadable bank header") from exc
    blocks = np.full((2, k, dim), np.nan)
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip() or line.startswith("#"):
            continue
        parts = line.split(",")
        if len(parts) != 2 + dim:
            raise FeatureTableError(
                f"{path}:{lineno}: expected {2 + dim} fields, got {len(parts)}"
            )
        try:
            label, kk = int(parts[0]), int(parts[1])
            vec = np.array([float(v) for v in parts[2:]])
        except ValueError as exc:
            raise FeatureTableError(f"{path}:{lineno}: non-numeric value") from exc
        if label not in (0, 1) or not 0 <= kk < k:
            raise FeatureTableError(f"{path}:{lineno}: class/index out of range")
        blocks[label, kk] = vec
    if np.any(np.isnan(blocks)):
        raise FeatureTableError(f"{path}: bank is missing centroid rows")
    return PrototypeBank(blocks[0], blocks[1], scale=scale, margin=margin)
