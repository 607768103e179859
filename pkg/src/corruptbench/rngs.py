"""Seeded random streams with cross-version stable draws."""
from __future__ import annotations

from typing import Sequence

import numpy as np

from .errors import ConfigError


def make_rng(key: Sequence[int]) -> np.random.Generator:
    """Generator keyed by a tuple of non-negative integers."""
    parts = [int(k) for k in key]
    if any(k < 0 for k in parts):
        raise ConfigError(f"seed components must be non-negative, got {parts}")
    return np.random.default_rng(np.random.SeedSequence(parts))


def fisher_yates(n: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform random permutation of range(n).

    Built from bounded integer draws only, so the result is reproducible
    across numpy releases (unlike Generator.permutation, whose internal
    algorithm is not part of the API contract).
    """
    idx = np.arange(n, dtype=np.int64)
    for i in range(n - 1, 0, -1):
        j = int(rng.integers(0, i + 1))
        if j != i:
            idx[i], idx[j] = idx[j], idx[i]
    return idx
