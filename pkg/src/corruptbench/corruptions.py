"""Image and dataset corruptions.

Four families: pixel-value distortion (gamma), spatial structure destruction
(patch shuffles), class-balance distortion (long-tail / uniform subsampling),
and dataset substitution. All randomness flows from explicit seeds; applying
the same spec to the same data always yields the same bytes.
"""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .datasets import ClassProfile, LabeledDataset, check_image, class_histogram
from .errors import ConfigError, DataError
from .rngs import fisher_yates, make_rng


class CorruptionKind(str, Enum):
    GAMMA = "gamma"
    GLOBAL_SHUFFLE = "global_shuffle"
    LOCAL_SHUFFLE = "local_shuffle"
    LONGTAIL = "longtail"
    UNIFORM = "uniform"
    SUBSTITUTE = "substitute"


class PatchScope(Enum):
    GLOBAL = 0
    LOCAL = 1


@dataclass(frozen=True)
class Permutation:
    """A bijection on range(n), stored as the forward mapping."""

    mapping: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.mapping, dtype=np.int64)
        if arr.ndim != 1 or len(arr) < 1:
            raise ConfigError(f"permutation must be a non-empty vector, got {arr.shape}")
        if not np.array_equal(np.sort(arr), np.arange(len(arr))):
            raise ConfigError("permutation is not a bijection on range(n)")
        out = np.ascontiguousarray(arr)
        out.flags.writeable = False
        object.__setattr__(self, "mapping", out)

    def __len__(self) -> int:
        return len(self.mapping)

    def inverse(self) -> "Permutation":
        inv = np.empty(len(self.mapping), dtype=np.int64)
        inv[self.mapping] = np.arange(len(self.mapping))
        return Permutation(inv)


def make_patch_permutation(
    side: int, patch: int, seed: int, scope: PatchScope
) -> Permutation:
    """Fixed permutation for a patch shuffle.

    GLOBAL scope permutes the (side/patch)^2 grid cells; LOCAL scope permutes
    the patch*patch pixel slots inside a cell. Same (side, patch, seed, scope)
    always gives the same permutation.
    """
    _check_patch_geometry(side, patch)
    n = (side // patch) ** 2 if scope is PatchScope.GLOBAL else patch * patch
    rng = make_rng([seed, scope.value, side, patch])
    return Permutation(fisher_yates(n, rng))


def _check_patch_geometry(side: int, patch: int) -> None:
    if side < 1:
        raise ConfigError(f"image side must be >= 1, got {side}")
    if patch < 1:
        raise ConfigError(f"patch size must be >= 1, got {patch}")
    if side % patch != 0:
        raise ConfigError(f"patch size {patch} does not divide image side {side}")


def gamma_lut(gamma: float) -> np.ndarray:
    """256-entry uint8 lookup table for x -> floor(255 * (x/255)**gamma)."""
    if not np.isfinite(gamma) or gamma <= 0:
        raise ConfigError(f"gamma must be a positive finite number, got {gamma}")
    levels = np.arange(256, dtype=np.float64) / 255.0
    return np.floor(255.0 * np.power(levels, gamma)).astype(np.uint8)


def gamma_distort(img: np.ndarray, gamma: float) -> np.ndarray:
    """Remap pixel intensities through the gamma curve."""
    check_image(img)
    return gamma_lut(gamma)[img]


def _to_patches(stack: np.ndarray, patch: int) -> tuple[np.ndarray, int]:
    n, h, w, c = stack.shape
    if h != w:
        raise ConfigError(f"patch shuffles need square images, got {h}x{w}")
    _check_patch_geometry(h, patch)
    g = h // patch
    cells = stack.reshape(n, g, patch, g, patch, c).swapaxes(2, 3)
    return np.ascontiguousarray(cells).reshape(n, g * g, patch, patch, c), g


def _from_patches(cells: np.ndarray, g: int, patch: int) -> np.ndarray:
    n = cells.shape[0]
    c = cells.shape[-1]
    grid = cells.reshape(n, g, g, patch, patch, c).swapaxes(2, 3)
    return np.ascontiguousarray(grid).reshape(n, g * patch, g * patch, c)


def global_shuffle_stack(stack: np.ndarray, patch: int, perm: Permutation) -> np.ndarray:
    """Move the patch at row-major grid index i to grid index perm[i]."""
    cells, g = _to_patches(stack, patch)
    if len(perm) != g * g:
        raise ConfigError(
            f"permutation length {len(perm)} != patch count {g * g}"
        )
    out = np.empty_like(cells)
    out[:, perm.mapping] = cells
    return _from_patches(out, g, patch)


def local_shuffle_stack(stack: np.ndarray, patch: int, perm: Permutation) -> np.ndarray:
    """Move pixel j of every patch to within-patch slot perm[j] (row-major).

    One permutation is shared by every patch of every image; channels travel
    together.
    """
    cells, g = _to_patches(stack, patch)
    if len(perm) != patch * patch:
        raise ConfigError(
            f"permutation length {len(perm)} != patch pixel count {patch * patch}"
        )
    n, m, _, _, c = cells.shape
    flat = cells.reshape(n, m, patch * patch, c)
    out = np.empty_like(flat)
    out[:, :, perm.mapping] = flat
    return _from_patches(out.reshape(n, m, patch, patch, c), g, patch)


def global_patch_shuffle(img: np.ndarray, patch: int, perm: Permutation) -> np.ndarray:
    check_image(img)
    return global_shuffle_stack(img[None], patch, perm)[0]


def local_pixel_shuffle(img: np.ndarray, patch: int, perm: Permutation) -> np.ndarray:
    check_image(img)
    return local_shuffle_stack(img[None], patch, perm)[0]


def longtail_targets(max_per_class: int, min_per_class: int, num_classes: int) -> list[int]:
    """Per-rank sample counts decaying exponentially from max to min."""
    if min_per_class < 1:
        raise ConfigError(f"min per-class count must be >= 1, got {min_per_class}")
    if max_per_class < min_per_class:
        raise ConfigError(
            f"max per-class count {max_per_class} < min {min_per_class}"
        )
    if num_classes == 1:
        return [max_per_class]
    ratio = min_per_class / max_per_class
    return [
        int(round(max_per_class * ratio ** (k / (num_classes - 1))))
        for k in range(num_classes)
    ]


def longtail_selection(
    ds: LabeledDataset, max_per_class: int, min_per_class: int, seed: int
) -> tuple[np.ndarray, ClassProfile]:
    """Pick which rows survive a long-tail subsample.

    Ranks are assigned by a seeded shuffle of the class ids, then each class
    keeps a seeded without-replacement sample of its rank's target count.
    Returns the kept row indices in ascending (original) order and the
    realized per-class profile (indexed by class id).
    """
    if len(ds) == 0:
        raise DataError("cannot subsample an empty dataset")
    c = ds.num_classes
    targets = longtail_targets(max_per_class, min_per_class, c)
    rng = make_rng([seed])
    rank_order = fisher_yates(c, rng)  # rank_order[k] = class id holding rank k
    target_of = np.empty(c, dtype=np.int64)
    target_of[rank_order] = targets
    keep_parts = []
    for cls in range(c):
        need = int(target_of[cls])
        idx = np.flatnonzero(ds.labels == cls)
        if len(idx) < need:
            raise DataError(
                f"class {cls} has {len(idx)} samples but the profile needs {need}"
            )
        order = fisher_yates(len(idx), rng)
        keep_parts.append(idx[order[:need]])
    keep = np.sort(np.concatenate(keep_parts))
    return keep, ClassProfile(target_of)


def longtail_subsample(
    ds: LabeledDataset, max_per_class: int, min_per_class: int, seed: int
) -> tuple[LabeledDataset, ClassProfile]:
    """Subsample to an exponentially decaying class distribution.

    Kept records stay in their original order.
    """
    keep, profile = longtail_selection(ds, max_per_class, min_per_class, seed)
    return ds.subset(keep), profile


def uniform_subsample(
    ds: LabeledDataset, per_class: int, seed: int
) -> tuple[LabeledDataset, ClassProfile]:
    """Keep the same seeded sample count from every class."""
    return longtail_subsample(ds, per_class, per_class, seed)


def substitute_dataset(
    original: LabeledDataset,
    replacement: LabeledDataset,
    count_tolerance: int = 0,
) -> LabeledDataset:
    """Swap in a replacement dataset after checking it lines up.

    Class count, image shape, and per-class sample counts (within
    count_tolerance) must match the original.
    """
    if replacement.num_classes != original.num_classes:
        raise DataError(
            f"replacement has {replacement.num_classes} classes, "
            f"original has {original.num_classes}"
        )
    if replacement.image_shape != original.image_shape:
        raise DataError(
            f"replacement image shape {replacement.image_shape} != "
            f"original {original.image_shape}"
        )
    mine = class_histogram(original.labels, original.num_classes)
    theirs = class_histogram(replacement.labels, replacement.num_classes)
    gap = np.abs(mine - theirs)
    if gap.max() > count_tolerance:
        cls = int(gap.argmax())
        raise DataError(
            f"class {cls} count mismatch: original {mine[cls]}, "
            f"replacement {theirs[cls]} (tolerance {count_tolerance})"
        )
    return replacement


DATASET_LEVEL_KINDS = frozenset(
    {CorruptionKind.LONGTAIL, CorruptionKind.UNIFORM, CorruptionKind.SUBSTITUTE}
)


@dataclass(frozen=True)
class CorruptionSpec:
    """A fully parameterized corruption instance."""

    kind: CorruptionKind
    gamma: float | None = None
    patch_size: int | None = None
    max_per_class: int | None = None
    min_per_class: int | None = None
    per_class: int | None = None
    substitute_path: str | None = None
    seed: int = 0

    def __post_init__(self):
        kind = self.kind
        if not isinstance(kind, CorruptionKind):
            raise ConfigError(f"unknown corruption kind {kind!r}")
        if self.seed < 0:
            raise ConfigError(f"seed must be non-negative, got {self.seed}")
        required = {
            CorruptionKind.GAMMA: ("gamma",),
            CorruptionKind.GLOBAL_SHUFFLE: ("patch_size",),
            CorruptionKind.LOCAL_SHUFFLE: ("patch_size",),
            CorruptionKind.LONGTAIL: ("max_per_class", "min_per_class"),
            CorruptionKind.UNIFORM: ("per_class",),
            CorruptionKind.SUBSTITUTE: ("substitute_path",),
        }[kind]
        optional = ("seed",)
        for name in required:
            if getattr(self, name) is None:
                raise ConfigError(f"{kind.value} corruption requires {name}")
        for name in (
            "gamma",
            "patch_size",
            "max_per_class",
            "min_per_class",
            "per_class",
            "substitute_path",
        ):
            if name not in required and name not in optional and getattr(self, name) is not None:
                raise ConfigError(f"{kind.value} corruption does not take {name}")
        if kind is CorruptionKind.GAMMA:
            if not np.isfinite(self.gamma) or self.gamma <= 0:
                raise ConfigError(f"gamma must be positive and finite, got {self.gamma}")
        if kind in (CorruptionKind.GLOBAL_SHUFFLE, CorruptionKind.LOCAL_SHUFFLE):
            if self.patch_size < 1:
                raise ConfigError(f"patch size must be >= 1, got {self.patch_size}")
        if kind is CorruptionKind.LONGTAIL:
            longtail_targets(self.max_per_class, self.min_per_class, 2)
        if kind is CorruptionKind.UNIFORM and self.per_class < 1:
            raise ConfigError(f"per-class count must be >= 1, got {self.per_class}")
        if kind is CorruptionKind.SUBSTITUTE and not self.substitute_path:
            raise ConfigError("substitute corruption needs a non-empty path")

    @property
    def is_dataset_level(self) -> bool:
        return self.kind in DATASET_LEVEL_KINDS

    @property
    def default_label(self) -> str:
        k = self.kind
        if k is CorruptionKind.GAMMA:
            return f"gamma{self.gamma:g}"
        if k is CorruptionKind.GLOBAL_SHUFFLE:
            return f"G{self.patch_size}x{self.patch_size}"
        if k is CorruptionKind.LOCAL_SHUFFLE:
            return f"L{self.patch_size}x{self.patch_size}"
        if k is CorruptionKind.LONGTAIL:
            return f"LT{self.max_per_class}-{self.min_per_class}"
        if k is CorruptionKind.UNIFORM:
            return f"U{self.per_class}"
        return "Sub"

    def to_dict(self) -> dict:
        out = {"kind": self.kind.value, "seed": self.seed}
        for name in (
            "gamma",
            "patch_size",
            "max_per_class",
            "min_per_class",
            "per_class",
            "substitute_path",
        ):
            value = getattr(self, name)
            if value is not None:
                out[name] = value
        return out


_CALL_PARAMS = {
    "gamma": {"gamma": "gamma", "seed": "seed"},
    "global_shuffle": {"p": "patch_size", "seed": "seed"},
    "local_shuffle": {"p": "patch_size", "seed": "seed"},
    "longtail": {"max": "max_per_class", "min": "min_per_class", "seed": "seed"},
    "uniform": {"n": "per_class", "seed": "seed"},
    "substitute": {"path": "substitute_path", "seed": "seed"},
}


def spec_from_call(name: str, kwargs: dict) -> CorruptionSpec:
    """Build a CorruptionSpec from a parsed config call like gamma(gamma=5)."""
    if name not in _CALL_PARAMS:
        raise ConfigError(f"unknown corruption kind {name!r}")
    mapping = _CALL_PARAMS[name]
    fields = {}
    for key, value in kwargs.items():
        if key not in mapping:
            raise ConfigError(f"{name} does not take parameter {key!r}")
        fields[mapping[key]] = value
    return CorruptionSpec(kind=CorruptionKind(name), **fields)


def spec_to_call(spec: CorruptionSpec) -> str:
    """Render a spec back to its config call form."""
    mapping = _CALL_PARAMS[spec.kind.value]
    parts = []
    for key, field_name in mapping.items():
        if key == "seed":
            continue
        value = getattr(spec, field_name)
        if isinstance(value, str):
            parts.append(f'{key}="{value}"')
        elif isinstance(value, float):
            parts.append(f"{key}={value:g}")
        else:
            parts.append(f"{key}={value}")
    if spec.seed:
        parts.append(f"seed={spec.seed}")
    return f"{spec.kind.value}({', '.join(parts)})"


def apply_corruption(
    ds: LabeledDataset,
    spec: CorruptionSpec,
    replacement: LabeledDataset | None = None,
) -> LabeledDataset:
    """Apply one corruption to a whole dataset.

    For SUBSTITUTE the replacement dataset may be passed directly; otherwise
    it is loaded from the spec's path.
    """
    kind = spec.kind
    if kind is CorruptionKind.GAMMA:
        lut = gamma_lut(spec.gamma)
        return ds.replace_images(lut[ds.images])
    if kind in (CorruptionKind.GLOBAL_SHUFFLE, CorruptionKind.LOCAL_SHUFFLE):
        side = ds.image_shape[0]
        if ds.image_shape[1] != side:
            raise ConfigError(
                f"patch shuffles need square images, got {ds.image_shape[:2]}"
            )
        scope = (
            PatchScope.GLOBAL
            if kind is CorruptionKind.GLOBAL_SHUFFLE
            else PatchScope.LOCAL
        )
        perm = make_patch_permutation(side, spec.patch_size, spec.seed, scope)
        op = (
            global_shuffle_stack
            if kind is CorruptionKind.GLOBAL_SHUFFLE
            else local_shuffle_stack
        )
        return ds.replace_images(op(ds.images, spec.patch_size, perm))
    if kind is CorruptionKind.LONGTAIL:
        out, _ = longtail_subsample(
            ds, spec.max_per_class, spec.min_per_class, spec.seed
        )
        return out
    if kind is CorruptionKind.UNIFORM:
        out, _ = uniform_subsample(ds, spec.per_class, spec.seed)
        return out
    if kind is CorruptionKind.SUBSTITUTE:
        if replacement is None:
            from .datasets import read_image_dir

            replacement = read_image_dir(
                spec.substitute_path, num_classes=ds.num_classes
            )
        return substitute_dataset(ds, replacement)
    raise ConfigError(f"unknown corruption kind {kind!r}")
