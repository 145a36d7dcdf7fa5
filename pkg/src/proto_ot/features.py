"""Feature-vector data model: on-disk tables, normalization, few-shot splits,
and a synthetic multi-domain generator for desk-scale experiments.

Feature tables are plain UTF-8 text.  Line 1 is ``#features v1 D=<int>``;
every following non-empty, non-``#`` line is
``id,domain,label,attack,v0,...,v{D-1}``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

from ._rng import stream

# Sub-cluster centers are drawn around two orthogonal class anchors; the
# bona fide class is compact while spoof sub-clusters scatter widely
# (attack types vary far more than genuine presentations).  The layout is
# independent of the sampling seed so that reruns with new seeds resample
# the same population.
_SPREAD_BONA = 0.3
_SPREAD_SPOOF = 1.0
_LAYOUT_SEED = 909090


class FeatureTableError(ValueError):
    """Raised when a feature or prototype-bank file is malformed."""


@dataclass(frozen=True)
class FeatureRecord:
    """One labelled, domain-tagged feature vector.

    ``label`` is 0 for bona fide and 1 for spoof; ``attack`` is the attack
    tag and must be empty exactly when the record is bona fide.
    """

    id: str
    domain: str
    label: int
    attack: str
    vector: np.ndarray


class FeatureSet:
    """An ordered collection of feature records sharing one dimension.

    Vectors are stored as one (n, D) float64 matrix; per-record metadata
    lives in parallel arrays.  Instances are treated as immutable.
    """

    def __init__(self, dimension, ids, domains, labels, attacks, vectors):
        vectors = np.array(vectors, dtype=np.float64)
        if vectors.size == 0:
            vectors = vectors.reshape(0, dimension)
        if vectors.ndim != 2 or vectors.shape[1] != dimension:
            raise ValueError(
                f"vectors must have shape (n, {dimension}), got {vectors.shape}"
            )
        n = vectors.shape[0]
        ids = list(ids)
        domains = list(domains)
        attacks = list(attacks)
        labels = np.asarray(labels, dtype=np.int64)
        if not (len(ids) == len(domains) == len(attacks) == labels.shape[0] == n):
            raise ValueError("metadata lengths disagree with vector count")
        if len(set(ids)) != n:
            raise ValueError("record ids must be unique within a FeatureSet")
        if not np.all(np.isfinite(vectors)):
            raise ValueError("feature vectors must be finite")
        if n and not np.all((labels == 0) | (labels == 1)):
            raise ValueError("labels must be 0 (bona fide) or 1 (spoof)")
        for i in range(n):
            if (attacks[i] == "") != (labels[i] == 0):
                raise ValueError(
                    f"record {ids[i]!r}: attack tag must be empty iff bona fide"
                )
        self.dimension = int(dimension)
        self.ids = ids
        self.domains = domains
        self.labels = labels
        self.attacks = attacks
        self.vectors = vectors
        self.vectors.setflags(write=False)

    def __len__(self) -> int:
        return self.vectors.shape[0]

    def __iter__(self) -> Iterator[FeatureRecord]:
        for i in range(len(self)):
            yield self.record(i)

    def record(self, i: int) -> FeatureRecord:
        return FeatureRecord(
            id=self.ids[i],
            domain=self.domains[i],
            label=int(self.labels[i]),
            attack=self.attacks[i],
            vector=self.vectors[i],
        )

    def subset(self, indices) -> "FeatureSet":
        indices = np.asarray(indices, dtype=np.int64)
        return FeatureSet(
            self.dimension,
            [self.ids[i] for i in indices],
            [self.domains[i] for i in indices],
            self.labels[indices],
            [self.attacks[i] for i in indices],
            self.vectors[indices],
        )

    def for_class(self, label: int) -> "FeatureSet":
        return self.subset(np.flatnonzero(self.labels == label))

    def class_counts(self) -> tuple[int, int]:
        return int(np.sum(self.labels == 0)), int(np.sum(self.labels == 1))

    @staticmethod
    def from_records(dimension: int, records) -> "FeatureSet":
        records = list(records)
        vectors = np.array([r.vector for r in records], dtype=np.float64)
        return FeatureSet(
            dimension,
            [r.id for r in records],
            [r.domain for r in records],
            [r.label for r in records],
            [r.attack for r in records],
            vectors if records else np.empty((0, dimension)),
        )


@dataclass(frozen=True)
class SynthConfig:
    """Parameters of the synthetic multi-domain generator.

    Domain d is the base population rotated by ``d * angle`` in the
    (axis 0, axis 1) plane and shifted by ``d * shift`` along axis 2,
    with centers renormalized to the unit sphere afterwards.
    """

    dimension: int = 16
    domains: int = 4
    per_domain: int = 500
    clusters_per_class: int = 3
    angle: float = 0.6
    shift: float = 0.3
    noise: float = 0.12
    seed: int = 0

    def __post_init__(self):
        if self.dimension < 3:
            raise ValueError("dimension must be >= 3")
        if min(self.domains, self.per_domain, self.clusters_per_class) < 1:
            raise ValueError("domains, per_domain and clusters_per_class must be >= 1")
        if not self.noise > 0:
            raise ValueError("noise scale must be > 0")


def load_feature_table(path) -> FeatureSet:
    """Parse a feature table file.  Vectors are not normalized on load."""
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines or not lines[0].startswith("#features v1 "):
        raise FeatureTableError(f"{path}: missing '#features v1 D=<int>' header")
    try:
        dimension = int(lines[0].split("D=", 1)[1])
    except (IndexError, ValueError) as exc:
        raise FeatureTableError(f"{path}: unreadable dimension in header") from exc
    if dimension < 1:
        raise FeatureTableError(f"{path}: dimension must be positive")

    ids, domains, labels, attacks, rows = [], [], [], [], []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip() or line.startswith("#"):
            continue
        parts = line.split(",")
        if len(parts) != 4 + dimension:
            raise FeatureTableError(
                f"{path}:{lineno}: expected {4 + dimension} fields, got {len(parts)}"
            )
        rec_id, domain, label_txt, attack = parts[:4]
        if label_txt not in ("0", "1"):
            raise FeatureTableError(f"{path}:{lineno}: label must be 0 or 1")
        try:
            vec = np.array([float(v) for v in parts[4:]], dtype=np.float64)
        except ValueError as exc:
            raise FeatureTableError(f"{path}:{lineno}: non-numeric coordinate") from exc
        ids.append(rec_id)
        domains.append(domain)
        labels.append(int(label_txt))
        attacks.append(attack)
        rows.append(vec)

    vectors = np.array(rows) if rows else np.empty((0, dimension))
    try:
        return FeatureSet(dimension, ids, domains, labels, attacks, vectors)
    except ValueError as exc:
        raise FeatureTableError(f"{path}: {exc}") from exc


def save_feature_table(fset: FeatureSet, path) -> None:
    """Write a feature table; floats keep 17 significant digits so that
    save followed by load reproduces the set exactly."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"#features v1 D={fset.dimension}\n")
        for i in range(len(fset)):
            coords = ",".join(format(v, ".17g") for v in fset.vectors[i])
            fh.write(
                f"{fset.ids[i]},{fset.domains[i]},{int(fset.labels[i])},"
                f"{fset.attacks[i]},{coords}\n"
            )


def l2_normalize(fset: FeatureSet) -> FeatureSet:
    """Return a copy with every vector scaled to unit Euclidean norm."""
    norms = np.linalg.norm(fset.vectors, axis=1)
    bad = np.flatnonzero(norms == 0.0)
    if bad.size:
        raise ValueError(f"record {fset.ids[bad[0]]!r} has zero norm")
    return FeatureSet(
        fset.dimension,
        fset.ids,
        fset.domains,
        fset.labels,
        fset.attacks,
        fset.vectors / norms[:, None],
    )


def split_few_shot(fset: FeatureSet, shots_per_class: int, seed: int):
    """Split into a per-class support sample and the remainder.

    Exactly ``shots_per_class`` records per class are drawn without
    replacement (deterministic given seed); the remainder is the
    complement, both in original record order.
    """
    if shots_per_class < 0:
        raise ValueError("shots_per_class must be >= 0")
    rng = stream(seed, "few-shot-split")
    chosen = []
    for label in (0, 1):
        pool = np.flatnonzero(fset.labels == label)
        if pool.size < shots_per_class:
            raise ValueError(
                f"class {label} has {pool.size} records, need {shots_per_class}"
            )
        picked = rng.choice(pool, size=shots_per_class, replace=False)
        chosen.append(picked)
    support_idx = np.sort(np.concatenate(chosen)) if chosen else np.empty(0, int)
    mask = np.zeros(len(fset), dtype=bool)
    mask[support_idx] = True
    return fset.subset(np.flatnonzero(mask)), fset.subset(np.flatnonzero(~mask))


def _base_centers(dimension: int, clusters: int) -> np.ndarray:
    """Sub-cluster centers (2, clusters, D): fixed layout, seed-independent.

    Class anchors are axes 0 and 1, i.e. they span the plane the domain
    rotation acts in, so increasing the rotation angle genuinely moves
    class geometry instead of an irrelevant subspace.
    """
    rng = stream(_LAYOUT_SEED, "synth-layout")
    anchors = np.zeros((2, dimension))
    anchors[0, 0] = 1.0
    anchors[1, 1] = 1.0
    spread = np.array([_SPREAD_BONA, _SPREAD_SPOOF])
    centers = anchors[:, None, :] + spread[:, None, None] * rng.standard_normal(
        (2, clusters, dimension)
    )
    return centers / np.linalg.norm(centers, axis=2, keepdims=True)


def _domain_transform(centers: np.ndarray, d: int, angle: float, shift: float):
    out = centers.copy()
    theta = d * angle
    c0, c1 = out[..., 0].copy(), out[..., 1].copy()
    out[..., 0] = c0 * np.cos(theta) - c1 * np.sin(theta)
    out[..., 1] = c0 * np.sin(theta) + c1 * np.cos(theta)
    out[..., 2] += d * shift
    return out / np.linalg.norm(out, axis=-1, keepdims=True)


def synth_multidomain(config: SynthConfig) -> list[FeatureSet]:
    """Generate one FeatureSet per domain from a shared two-class mixture.

    All domains share the same sub-cluster layout; domain d sees it
    rotated and shifted (see SynthConfig).  Samples are unit-normalized.
    """
    base = _base_centers(config.dimension, config.clusters_per_class)
    rng = stream(config.seed, "synth-samples")
    out = []
    for d in range(config.domains):
        centers = _domain_transform(base, d, config.angle, config.shift)
        n_bona = config.per_domain // 2
        counts = {0: n_bona, 1: config.per_domain - n_bona}
        ids, domains, labels, attacks, rows = [], [], [], [], []
        idx = 0
        for label in (0, 1):
            which = rng.integers(0, config.clusters_per_class, size=counts[label])
            noise = rng.standard_normal((counts[label], config.dimension))
            pts = centers[label, which] + config.noise * noise
            pts /= np.linalg.norm(pts, axis=1, keepdims=True)
            for j in range(counts[label]):
                ids.append(f"dom{d}-{idx:05d}")
                domains.append(f"dom{d}")
                labels.append(label)
                attacks.append("" if label == 0 else f"attack{which[j]}")
                rows.append(pts[j])
                idx += 1
        out.append(
            FeatureSet(config.dimension, ids, domains, labels, attacks, np.array(rows))
        )
    return out
