"""Feature-space diagnostics: uniformity, accuracy fluctuation, distances.

Uniformity follows the log-mean Gaussian-potential form
U = -log E[exp(-2 ||a - b||^2)] over distinct pairs of unit vectors; 0 for a
collapsed point mass, 8 for an antipodal pair. All math is float64.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .datasets import EmbeddingSet, l2_normalize
from .errors import ConfigError, DataError, NumericError
from .rngs import make_rng

EXACT_PAIR_LIMIT = 2048
SAMPLES_PER_POINT = 100


@dataclass(frozen=True)
class UniformityEstimate:
    """Uniformity value plus how it was obtained."""

    value: float
    n_pairs: int
    exact: bool


@dataclass(frozen=True)
class CheckpointSeries:
    """Per-class accuracy over training checkpoints, rows = checkpoints."""

    per_class_accuracy: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.per_class_accuracy, dtype=np.float64)
        if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
            raise DataError(
                f"checkpoint series must be TxC with T,C >= 1, got {arr.shape}"
            )
        if arr.min() < 0.0 or arr.max() > 1.0:
            raise DataError("checkpoint accuracies must lie in [0, 1]")
        out = np.ascontiguousarray(arr)
        out.flags.writeable = False
        object.__setattr__(self, "per_class_accuracy", out)

    @property
    def num_checkpoints(self) -> int:
        return self.per_class_accuracy.shape[0]

    @property
    def num_classes(self) -> int:
        return self.per_class_accuracy.shape[1]


def class_accuracy_fluctuation(series: CheckpointSeries) -> tuple[np.ndarray, float]:
    """Mean absolute step-to-step change of each class's accuracy.

    Returns the per-class fluctuation vector and its mean over classes.
    Needs at least two checkpoints.
    """
    acc = series.per_class_accuracy
    if acc.shape[0] < 2:
        raise DataError(
            f"fluctuation needs >= 2 checkpoints, got {acc.shape[0]}"
        )
    steps = np.abs(np.diff(acc, axis=0))
    per_class = steps.mean(axis=0)
    return per_class, float(per_class.mean())


def _pair_sq_dists(rows: np.ndarray) -> np.ndarray:
    """Dense pairwise squared distances, clamped at zero."""
    sq = (rows * rows).sum(axis=1)
    d2 = sq[:, None] + sq[None, :] - 2.0 * (rows @ rows.T)
    return np.maximum(d2, 0.0)


def uniformity(
    emb: EmbeddingSet,
    class_id: int | None = None,
    pairs: int | str = "auto",
    seed: int = 0,
) -> UniformityEstimate:
    """Uniformity of (a class slice of) an embedding set.

    Rows are L2-normalized first if the set is not already normalized.
    `pairs="auto"` computes the exact all-pairs value up to
    EXACT_PAIR_LIMIT points and switches to seeded sampling of
    SAMPLES_PER_POINT * N ordered pairs beyond that; `pairs="exact"` forces
    the all-pairs sum regardless of size; an integer requests that many
    sampled pairs outright.
    """
    feats = _as_normalized_rows(emb)
    if class_id is not None:
        if class_id < 0:
            raise ConfigError(f"class id must be non-negative, got {class_id}")
        feats = feats[emb.labels == class_id]
    n = len(feats)
    if n < 2:
        raise NumericError(
            f"uniformity needs >= 2 points, got {n}"
            + (f" in class {class_id}" if class_id is not None else "")
        )
    if pairs == "auto":
        if n <= EXACT_PAIR_LIMIT:
            return _uniformity_exact(feats)
        return _uniformity_sampled(feats, SAMPLES_PER_POINT * n, seed)
    if pairs == "exact":
        return _uniformity_exact(feats)
    if isinstance(pairs, int) and not isinstance(pairs, bool):
        if pairs < 1:
            raise ConfigError(f"pair sample count must be >= 1, got {pairs}")
        return _uniformity_sampled(feats, pairs, seed)
    raise ConfigError(
        f"pairs must be 'auto', 'exact', or a positive integer, got {pairs!r}"
    )


def _as_normalized_rows(emb: EmbeddingSet) -> np.ndarray:
    if emb.normalized:
        return emb.features.astype(np.float64)
    return l2_normalize(emb).features.astype(np.float64)


def _uniformity_exact(feats: np.ndarray) -> UniformityEstimate:
    n = len(feats)
    d2 = _pair_sq_dists(feats)
    iu = np.triu_indices(n, k=1)
    mean_pot = float(np.exp(-2.0 * d2[iu]).mean())
    return UniformityEstimate(-float(np.log(mean_pot)), n * (n - 1) // 2, True)


def _uniformity_sampled(feats: np.ndarray, m: int, seed: int) -> UniformityEstimate:
    n = len(feats)
    rng = make_rng([seed, n, m])
    left = rng.integers(0, n, size=m)
    right = rng.integers(0, n - 1, size=m)
    right = right + (right >= left)  # uniform over ordered pairs with left != right
    diff = feats[left] - feats[right]
    d2 = np.maximum((diff * diff).sum(axis=1), 0.0)
    mean_pot = float(np.exp(-2.0 * d2).mean())
    return UniformityEstimate(-float(np.log(mean_pot)), m, False)


def feature_distance(emb: EmbeddingSet, class_i: int, class_j: int) -> float:
    """Mean squared distance between feature pairs drawn from two classes.

    Cross-class (i != j) averages over the full product of pairs; same-class
    averages over distinct ordered pairs, which equals
    2N/(N-1) * trace of the class covariance. Uses closed forms, so it runs
    in O(N D) instead of O(N^2 D).
    """
    for cid in (class_i, class_j):
        if cid < 0:
            raise ConfigError(f"class id must be non-negative, got {cid}")
    feats = emb.features.astype(np.float64)
    a = feats[emb.labels == class_i]
    b = feats[emb.labels == class_j]
    if len(a) == 0 or len(b) == 0:
        empty = class_i if len(a) == 0 else class_j
        raise NumericError(f"class {empty} has no points")
    if class_i == class_j:
        n = len(a)
        if n < 2:
            raise NumericError(
                f"within-class distance needs >= 2 points in class {class_i}"
            )
        mean_sq = float((a * a).sum(axis=1).mean())
        mean_vec = a.mean(axis=0)
        var_trace = mean_sq - float(mean_vec @ mean_vec)
        return max(2.0 * n / (n - 1) * var_trace, 0.0)
    mean_sq_a = float((a * a).sum(axis=1).mean())
    mean_sq_b = float((b * b).sum(axis=1).mean())
    cross = float(a.mean(axis=0) @ b.mean(axis=0))
    return max(mean_sq_a + mean_sq_b - 2.0 * cross, 0.0)
