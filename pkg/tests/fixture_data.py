"""Synthetic image fixtures for the test suite.

Class identity is carried by two channels of signal: a per-class color tint
(linearly separable, survives spatial scrambling) and an oriented sinusoidal
grating (spatial structure that patch shuffles destroy and gamma compresses).
Per-sample phase, amplitude, and pixel noise give intra-class variety.
"""
from __future__ import annotations

from functools import lru_cache

import numpy as np

from corruptbench.datasets import LabeledDataset

FIXTURE_SIDE = 16
FIXTURE_CLASSES = 10


def make_images(
    n: int,
    num_classes: int = FIXTURE_CLASSES,
    side: int = FIXTURE_SIDE,
    seed: int = 0,
    class_seed: int = 7,
    tint_scale: float = 16.0,
    grating_amp: float = 45.0,
    noise_sigma: float = 10.0,
    base_level: float = 160.0,
) -> LabeledDataset:
    """Balanced synthetic dataset of tinted, enveloped gratings.

    Classes come in pairs that share one color tint, so color alone cannot
    separate them. Even pairs differ by envelope position (patch order
    matters); odd pairs differ by grating orientation at one position
    (within-patch texture matters). Gamma compression squeezes the whole
    intensity profile. `class_seed` fixes the per-class signatures, so
    splits built with different `seed` values share classes.
    """
    sig_rng = np.random.default_rng(np.random.SeedSequence([class_seed, num_classes]))
    n_pairs = (num_classes + 1) // 2
    pair_tints = sig_rng.normal(0.0, tint_scale, size=(n_pairs, 3))
    pair_chroma = sig_rng.normal(1.0, 0.2, size=(n_pairs, 3))
    pair_angle = sig_rng.uniform(0.0, np.pi, size=n_pairs)
    pair_freq = 3.0 + (np.arange(n_pairs) % 3)
    near = sig_rng.uniform(0.28 * side, 0.42 * side, size=(n_pairs, 2))
    far = sig_rng.uniform(0.58 * side, 0.72 * side, size=(n_pairs, 2))
    mid = sig_rng.uniform(0.38 * side, 0.62 * side, size=(n_pairs, 2))

    tints = np.empty((num_classes, 3))
    chroma = np.empty((num_classes, 3))
    centers = np.empty((num_classes, 2))
    angles = np.empty(num_classes)
    freqs = np.empty(num_classes)
    for c in range(num_classes):
        p, member = divmod(c, 2)
        tints[c] = pair_tints[p]
        chroma[c] = pair_chroma[p]
        freqs[c] = pair_freq[p]
        if p % 2 == 0:  # position pair: same texture, different place
            angles[c] = pair_angle[p]
            centers[c] = near[p] if member == 0 else far[p]
        else:  # orientation pair: same place, perpendicular texture
            angles[c] = pair_angle[p] + member * (np.pi / 2.0)
            centers[c] = mid[p]
    env_sigma = 0.20 * side
    rng = np.random.default_rng(np.random.SeedSequence([seed, side, num_classes]))

    yy, xx = np.mgrid[0:side, 0:side].astype(np.float64)
    labels = np.arange(n) % num_classes
    order = rng.permutation(n)
    labels = labels[order]

    images = np.empty((n, side, side, 3), dtype=np.uint8)
    for i in range(n):
        c = labels[i]
        phase = rng.uniform(0.0, 2.0 * np.pi)
        amp = rng.uniform(0.75, 1.25) * grating_amp
        theta = angles[c] + rng.normal(0.0, 0.06)
        cy, cx = centers[c] + rng.normal(0.0, 0.9, size=2)
        axis = xx * np.cos(theta) + yy * np.sin(theta)
        wave = np.sin(2.0 * np.pi * freqs[c] * axis / side + phase)
        envelope = np.exp(-(((xx - cx) ** 2 + (yy - cy) ** 2) / (2.0 * env_sigma**2)))
        pix = (
            base_level
            + tints[c][None, None, :]
            + amp * (wave * envelope)[:, :, None] * chroma[c][None, None, :]
            + rng.normal(0.0, noise_sigma, size=(side, side, 3))
        )
        images[i] = np.clip(np.rint(pix), 0, 255).astype(np.uint8)
    return LabeledDataset(images, labels, num_classes)


@lru_cache(maxsize=4)
def acceptance_fixture(seed: int = 0) -> tuple[LabeledDataset, LabeledDataset]:
    """The 2000/1000-image split the sign-level reproduction tests use."""
    train = make_images(2000, seed=seed * 2 + 100)
    test = make_images(1000, seed=seed * 2 + 101)
    return train, test


def random_embeddings(n: int, d: int, num_classes: int, seed: int, normalized=False):
    """Gaussian class blobs in feature space."""
    from corruptbench.datasets import EmbeddingSet, l2_normalize

    rng = np.random.default_rng(seed)
    centers = rng.normal(0.0, 1.0, size=(num_classes, d))
    labels = rng.integers(0, num_classes, size=n)
    feats = centers[labels] + rng.normal(0.0, 0.6, size=(n, d))
    emb = EmbeddingSet(feats.astype(np.float32), labels)
    return l2_normalize(emb) if normalized else emb
