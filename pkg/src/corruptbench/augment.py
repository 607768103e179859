"""Stochastic training-time augmentations.

Each op consumes draws from a caller-supplied Generator in a documented,
fixed order, so one seeded stream per image replays identically.
"""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .datasets import check_image
from .errors import ConfigError

# ITU-R 601 luma weights for RGB -> gray.
LUMA_WEIGHTS = (0.299, 0.587, 0.114)


class AugmentKind(str, Enum):
    CROP = "crop"
    HFLIP = "hflip"
    COLOR_JITTER = "color_jitter"
    GRAYSCALE = "grayscale"
    RESIZE = "resize"


@dataclass(frozen=True)
class AugmentationSpec:
    kind: AugmentKind
    padding: int | None = None
    prob: float | None = None
    strength: float | None = None
    target: int | None = None

    def __post_init__(self):
        if not isinstance(self.kind, AugmentKind):
            raise ConfigError(f"unknown augmentation kind {self.kind!r}")
        k = self.kind
        if k is AugmentKind.CROP:
            self._expect(padding=True)
            if self.padding < 0:
                raise ConfigError(f"crop padding must be >= 0, got {self.padding}")
        elif k is AugmentKind.HFLIP:
            self._expect(prob=True)
            self._check_prob()
        elif k is AugmentKind.COLOR_JITTER:
            self._expect(prob=True, strength=True)
            self._check_prob()
            if not np.isfinite(self.strength) or self.strength < 0:
                raise ConfigError(
                    f"jitter strength must be >= 0, got {self.strength}"
                )
        elif k is AugmentKind.GRAYSCALE:
            self._expect(prob=True)
            self._check_prob()
        elif k is AugmentKind.RESIZE:
            self._expect(target=True)
            if self.target < 1:
                raise ConfigError(f"resize target must be >= 1, got {self.target}")

    def _expect(self, **wanted):
        for name in ("padding", "prob", "strength", "target"):
            value = getattr(self, name)
            if wanted.get(name):
                if value is None:
                    raise ConfigError(f"{self.kind.value} requires {name}")
            elif value is not None:
                raise ConfigError(f"{self.kind.value} does not take {name}")

    def _check_prob(self):
        if not 0.0 <= self.prob <= 1.0:
            raise ConfigError(f"probability must be in [0, 1], got {self.prob}")

    def to_dict(self) -> dict:
        out = {"kind": self.kind.value}
        for name in ("padding", "prob", "strength", "target"):
            value = getattr(self, name)
            if value is not None:
                out[name] = value
        return out


_AUG_PARAMS = {
    "crop": {"padding": "padding"},
    "hflip": {"prob": "prob"},
    "color_jitter": {"strength": "strength", "prob": "prob"},
    "grayscale": {"prob": "prob"},
    "resize": {"target": "target"},
}

_AUG_DEFAULTS = {
    "hflip": {"prob": 0.5},
    "color_jitter": {"strength": 0.4, "prob": 0.8},
    "grayscale": {"prob": 0.2},
}


def augment_from_call(name: str, kwargs: dict) -> AugmentationSpec:
    """Build an AugmentationSpec from a parsed call like crop(padding=4)."""
    if name not in _AUG_PARAMS:
        raise ConfigError(f"unknown augmentation kind {name!r}")
    mapping = _AUG_PARAMS[name]
    fields = dict(_AUG_DEFAULTS.get(name, {}))
    for key, value in kwargs.items():
        if key not in mapping:
            raise ConfigError(f"{name} does not take parameter {key!r}")
        fields[mapping[key]] = value
    return AugmentationSpec(kind=AugmentKind(name), **fields)


def augment_to_call(spec: AugmentationSpec) -> str:
    mapping = _AUG_PARAMS[spec.kind.value]
    parts = []
    for key, field_name in mapping.items():
        value = getattr(spec, field_name)
        if isinstance(value, float):
            parts.append(f"{key}={value:g}")
        else:
            parts.append(f"{key}={value}")
    return f"{spec.kind.value}({', '.join(parts)})"


def _luma(pix: np.ndarray) -> np.ndarray:
    """Per-pixel gray level of a float HxWxC array, keepdims."""
    if pix.shape[-1] == 3:
        w = np.asarray(LUMA_WEIGHTS)
        return (pix * w).sum(axis=-1, keepdims=True)
    return pix.mean(axis=-1, keepdims=True)


def random_crop(img: np.ndarray, padding: int, rng: np.random.Generator) -> np.ndarray:
    """Reflect-pad by `padding` on every side, then crop back at a random
    offset. Consumes two bounded integer draws (top, left)."""
    h, w, _ = img.shape
    if padding >= min(h, w):
        raise ConfigError(
            f"crop padding {padding} too large for a {h}x{w} image"
        )
    top = int(rng.integers(0, 2 * padding + 1))
    left = int(rng.integers(0, 2 * padding + 1))
    if padding == 0:
        return img.copy()
    padded = np.pad(img, ((padding, padding), (padding, padding), (0, 0)), mode="reflect")
    return np.ascontiguousarray(padded[top : top + h, left : left + w])


def horizontal_flip(img: np.ndarray, prob: float, rng: np.random.Generator) -> np.ndarray:
    """Mirror left-right with the given probability. One uniform draw."""
    if rng.random() < prob:
        return np.ascontiguousarray(img[:, ::-1])
    return img.copy()


def color_jitter(
    img: np.ndarray, strength: float, prob: float, rng: np.random.Generator
) -> np.ndarray:
    """Randomized brightness, contrast, and saturation blends, in that order.

    One uniform gate draw; if it fires, three factor draws from
    [max(0, 1 - strength), 1 + strength]. Rounds to uint8 once at the end.
    """
    if rng.random() >= prob:
        return img.copy()
    lo, hi = max(0.0, 1.0 - strength), 1.0 + strength
    fb, fc, fs = rng.uniform(lo, hi, size=3)
    x = img.astype(np.float64)
    x = x * fb
    mean_gray = float(_luma(x).mean())
    x = mean_gray + (x - mean_gray) * fc
    gray = _luma(x)
    x = gray + (x - gray) * fs
    return np.clip(np.rint(x), 0, 255).astype(np.uint8)


def random_grayscale(img: np.ndarray, prob: float, rng: np.random.Generator) -> np.ndarray:
    """Replace all channels by the luma value with the given probability.
    One uniform draw."""
    if rng.random() >= prob:
        return img.copy()
    gray = np.clip(np.rint(_luma(img.astype(np.float64))), 0, 255).astype(np.uint8)
    return np.repeat(gray, img.shape[-1], axis=-1)


def resize_bilinear(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resample with half-pixel centers and edge clamping.

    Deterministic (no rng); an identity when the size is unchanged.
    """
    if out_h < 1 or out_w < 1:
        raise ConfigError(f"resize target must be >= 1, got {out_h}x{out_w}")
    h, w, _ = img.shape
    src = img.astype(np.float64)
    ys = (np.arange(out_h) + 0.5) * (h / out_h) - 0.5
    xs = (np.arange(out_w) + 0.5) * (w / out_w) - 0.5
    y0 = np.floor(ys).astype(np.int64)
    x0 = np.floor(xs).astype(np.int64)
    wy = (ys - y0)[:, None, None]
    wx = (xs - x0)[None, :, None]
    y0c = np.clip(y0, 0, h - 1)
    y1c = np.clip(y0 + 1, 0, h - 1)
    x0c = np.clip(x0, 0, w - 1)
    x1c = np.clip(x0 + 1, 0, w - 1)
    top = src[y0c][:, x0c] * (1 - wx) + src[y0c][:, x1c] * wx
    bot = src[y1c][:, x0c] * (1 - wx) + src[y1c][:, x1c] * wx
    out = top * (1 - wy) + bot * wy
    return np.clip(np.rint(out), 0, 255).astype(np.uint8)


def apply_augmentation(
    img: np.ndarray, spec: AugmentationSpec, rng: np.random.Generator
) -> np.ndarray:
    """Run one augmentation stage on one image."""
    check_image(img)
    k = spec.kind
    if k is AugmentKind.CROP:
        return random_crop(img, spec.padding, rng)
    if k is AugmentKind.HFLIP:
        return horizontal_flip(img, spec.prob, rng)
    if k is AugmentKind.COLOR_JITTER:
        return color_jitter(img, spec.strength, spec.prob, rng)
    if k is AugmentKind.GRAYSCALE:
        return random_grayscale(img, spec.prob, rng)
    if k is AugmentKind.RESIZE:
        return resize_bilinear(img, spec.target, spec.target)
    raise ConfigError(f"unknown augmentation kind {k!r}")
