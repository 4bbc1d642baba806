"""Voxel clustering: merge similar dose-matrix rows into super-voxels.

Rows are summarized by their (mean, variance) statistics, z-scored, and
k-means-clustered per structure, so clusters never span structures.  A
super-voxel's dose row is the arithmetic mean of its members' rows; the
structure's bounds apply to super-voxels unchanged, so a clustered-feasible
fluence may still violate individual member bounds -- evaluation reports that
gap instead of hiding it.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from sklearn.base import BaseEstimator, TransformerMixin

from .model import LinearObjective, ProblemModel, Structure
from .validation import ValidationError, require

__all__ = [
    "VoxelFeatures",
    "ClusterMap",
    "ClusteredProblem",
    "row_features",
    "kmeans",
    "aggregate",
    "VoxelClusterer",
]

DEFAULT_SEED = 42


@dataclass(frozen=True)
class VoxelFeatures:
    """Per-voxel row statistics over all beamlet columns (zeros included)."""

    structure: str
    mean: np.ndarray
    variance: np.ndarray

    def matrix(self) -> np.ndarray:
        return np.column_stack([self.mean, self.variance])


def row_features(model: ProblemModel, structure: str | Structure) -> VoxelFeatures:
    name = structure if isinstance(structure, str) else structure.name
    rows = model.structure_rows(name)
    n = model.num_beamlets
    mean = np.asarray(rows.sum(axis=1)).ravel() / n
    sq = np.asarray(rows.multiply(rows).sum(axis=1)).ravel() / n
    variance = np.maximum(sq - mean * mean, 0.0)
    return VoxelFeatures(structure=name, mean=mean, variance=variance)


def kmeans(features: VoxelFeatures, k: int, seed: int = DEFAULT_SEED, max_iter: int = 100) -> np.ndarray:
    """Lloyd's algorithm from k-means++ seeding on z-scored features.

    Deterministic for a fixed seed; stops when assignments stop changing.
    Returns dense labels (identical rows always share a label).
    """
    X = features.matrix()
    npts = X.shape[0]
    require(1 <= k <= npts, "k", f"must lie in [1, {npts}]")
    if k == npts:
        return np.arange(npts, dtype=np.int64)
    if k == 1:
        return np.zeros(npts, dtype=np.int64)

    mu = X.mean(axis=0)
    sd = X.std(axis=0)
    sd[sd == 0] = 1.0
    Xn = (X - mu) / sd

    rng = np.random.default_rng(seed)
    centers = np.empty((k, Xn.shape[1]))
    centers[0] = Xn[rng.integers(npts)]
    d2 = np.sum((Xn - centers[0]) ** 2, axis=1)
    for c in range(1, k):
        total = d2.sum()
        if total <= 0:
            centers[c:] = centers[0]
            break
        centers[c] = Xn[rng.choice(npts, p=d2 / total)]
        d2 = np.minimum(d2, np.sum((Xn - centers[c]) ** 2, axis=1))

    labels = np.zeros(npts, dtype=np.int64)
    for _ in range(max_iter):
        dist = np.sum((Xn[:, None, :] - centers[None, :, :]) ** 2, axis=2)
        new_labels = np.argmin(dist, axis=1)
        for c in range(k):
            members = new_labels == c
            if np.any(members):
                centers[c] = Xn[members].mean(axis=0)
            else:
                far = int(np.argmax(np.min(dist, axis=1)))
                centers[c] = Xn[far]
                new_labels[far] = c
        if np.array_equal(new_labels, labels):
            break
        labels = new_labels
    _, dense = np.unique(labels, return_inverse=True)
    return dense.astype(np.int64)


@dataclass(frozen=True)
class ClusterMap:
    """Per-structure labels; clusters never span structures."""

    labels: dict[str, np.ndarray]
    requested: dict[str, int]
    seed: int

    def num_clusters(self, structure: str) -> int:
        return int(self.labels[structure].max()) + 1 if self.labels[structure].size else 0

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "requested": dict(self.requested),
            "labels": {name: [int(v) for v in lab] for name, lab in self.labels.items()},
        }

    @staticmethod
    def from_dict(doc: dict) -> "ClusterMap":
        return ClusterMap(
            labels={k: np.asarray(v, dtype=np.int64) for k, v in doc["labels"].items()},
            requested={k: int(v) for k, v in doc["requested"].items()},
            seed=int(doc["seed"]),
        )


@dataclass(frozen=True)
class SuperVoxel:
    structure: str
    members: np.ndarray      # original voxel indices


@dataclass(frozen=True)
class ClusteredProblem:
    """Clustered model plus the lineage needed to evaluate on original voxels."""

    model: ProblemModel
    lineage: tuple[SuperVoxel, ...]
    source_hash: str | None = None


def aggregate(model: ProblemModel, cmap: ClusterMap) -> ClusteredProblem:
    """Replace each cluster by the column-wise mean of its member rows.

    Only constrained structures are clustered (they drive the constraint
    count); objective coefficient rows are copied from the unclustered model.
    """
    rows: list[sp.spmatrix] = []
    lineage: list[SuperVoxel] = []
    structures: list[Structure] = []
    next_index = 0
    for s in model.structures:
        if not s.is_constrained:
            continue
        if s.name not in cmap.labels:
            raise ValidationError("cluster_map", f"missing labels for constrained structure {s.name!r}")
        labels = cmap.labels[s.name]
        require(labels.size == s.size, "cluster_map", f"label count mismatch for {s.name!r}")
        sub = model.dose_matrix[s.voxel_indices, :]
        ids = []
        for c in range(int(labels.max()) + 1):
            members = s.voxel_indices[labels == c]
            rows.append(sp.csr_matrix(model.dose_matrix[members, :].mean(axis=0)))
            lineage.append(SuperVoxel(structure=s.name, members=members))
            ids.append(next_index)
            next_index += 1
        structures.append(
            Structure(
                name=s.name,
                voxel_indices=np.asarray(ids, dtype=np.int64),
                lower_bound=s.lower_bound,
                upper_bound=s.upper_bound,
                is_constrained=True,
                is_optimized=s.is_optimized,
                mean_lower=s.mean_lower,
                mean_upper=s.mean_upper,
            )
        )
    matrix = sp.vstack(rows, format="csr") if rows else sp.csr_matrix((0, model.num_beamlets))
    clustered = ProblemModel(
        num_voxels=next_index,
        num_beamlets=model.num_beamlets,
        dose_matrix=matrix,
        structures=tuple(structures),
        fluence_lower=model.fluence_lower.copy(),
        fluence_upper=model.fluence_upper.copy(),
        objectives=tuple(
            LinearObjective(name=o.name, coefficients=o.coefficients.copy()) for o in model.objectives
        ),
    )
    return ClusteredProblem(model=clustered, lineage=tuple(lineage))


def _resolve_k(requested: int | float, size: int) -> int:
    if isinstance(requested, float) and 0 < requested < 1:
        return max(1, min(size, int(round(requested * size))))
    return max(1, min(size, int(requested)))


class VoxelClusterer(BaseEstimator, TransformerMixin):
    """Estimator wrapper so clustering composes with sklearn pipelines.

    Parameters
    ----------
    n_clusters : int or float
        Clusters per constrained structure; a float in (0, 1) is interpreted
        as a fraction of the structure's voxel count.
    seed : int
        k-means++ seed (one stream shared across structures).
    max_iter : int
        Lloyd iteration cap per structure.
    """

    def __init__(self, n_clusters: int | float = 0.25, seed: int = DEFAULT_SEED, max_iter: int = 100):
        self.n_clusters = n_clusters
        self.seed = seed
        self.max_iter = max_iter

    def fit(self, model: ProblemModel, y=None):
        labels: dict[str, np.ndarray] = {}
        requested: dict[str, int] = {}
        for s in model.structures:
            if not s.is_constrained:
                continue
            k = _resolve_k(self.n_clusters, s.size)
            feats = row_features(model, s)
            labels[s.name] = kmeans(feats, k, seed=self.seed, max_iter=self.max_iter)
            requested[s.name] = k
        self.cluster_map_ = ClusterMap(labels=labels, requested=requested, seed=self.seed)
        return self

    def transform(self, model: ProblemModel) -> ClusteredProblem:
        if not hasattr(self, "cluster_map_"):
            raise ValidationError("VoxelClusterer", "fit must be called before transform")
        return aggregate(model, self.cluster_map_)

    def fit_transform(self, model: ProblemModel, y=None, **fit_params) -> ClusteredProblem:
        return self.fit(model).transform(model)
