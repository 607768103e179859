"""Ordered transform pipelines mixing corruptions and augmentations.

Corruption stages use their own fixed seeds (identical across images);
augmentation stages draw from one per-image stream seeded by
(pipeline seed, image index, epoch), so a pipeline replays exactly for a
given epoch and differs across epochs.
"""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .augment import AugmentationSpec, apply_augmentation, augment_from_call, augment_to_call, _AUG_PARAMS
from .configfile import CallExpr, parse_config
from .corruptions import (
    _CALL_PARAMS as _CORR_PARAMS,
    CorruptionKind,
    CorruptionSpec,
    apply_corruption,
    longtail_selection,
    spec_from_call,
    spec_to_call,
)
from .datasets import LabeledDataset
from .errors import BenchError, ConfigError
from .rngs import make_rng

Stage = CorruptionSpec | AugmentationSpec


class PipelineMode(str, Enum):
    CORRUPT_THEN_AUGMENT = "corrupt-aug"
    AUGMENT_THEN_CORRUPT = "aug-corrupt"
    CUSTOM = "custom"


@dataclass(frozen=True)
class TransformPipeline:
    stages: tuple[Stage, ...]
    mode: PipelineMode = PipelineMode.CUSTOM
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "stages", tuple(self.stages))
        for stage in self.stages:
            if not isinstance(stage, (CorruptionSpec, AugmentationSpec)):
                raise ConfigError(f"bad pipeline stage {stage!r}")
        if not isinstance(self.mode, PipelineMode):
            raise ConfigError(f"unknown pipeline mode {self.mode!r}")
        if self.seed < 0:
            raise ConfigError(f"pipeline seed must be non-negative, got {self.seed}")
        flags = [isinstance(s, AugmentationSpec) for s in self.stages]
        if self.mode is PipelineMode.CORRUPT_THEN_AUGMENT and flags != sorted(flags):
            raise ConfigError("corrupt-aug mode requires corruptions before augmentations")
        if self.mode is PipelineMode.AUGMENT_THEN_CORRUPT and flags != sorted(
            flags, reverse=True
        ):
            raise ConfigError("aug-corrupt mode requires augmentations before corruptions")

    @property
    def has_augmentation(self) -> bool:
        return any(isinstance(s, AugmentationSpec) for s in self.stages)

    def with_seed(self, seed: int) -> "TransformPipeline":
        return TransformPipeline(self.stages, self.mode, seed)

    def to_dict(self) -> dict:
        return {
            "mode": self.mode.value,
            "seed": self.seed,
            "stages": [s.to_dict() for s in self.stages],
        }


def ordered_pipeline(
    corruptions: list[CorruptionSpec],
    augments: list[AugmentationSpec],
    mode: PipelineMode,
    seed: int = 0,
) -> TransformPipeline:
    """Arrange corruption and augmentation stages per the requested order."""
    if mode is PipelineMode.CORRUPT_THEN_AUGMENT:
        stages = [*corruptions, *augments]
    elif mode is PipelineMode.AUGMENT_THEN_CORRUPT:
        stages = [*augments, *corruptions]
    else:
        raise ConfigError("ordered_pipeline needs corrupt-aug or aug-corrupt mode")
    return TransformPipeline(tuple(stages), mode, seed)


def _stage_from_call(call: CallExpr) -> Stage:
    if call.name in _CORR_PARAMS:
        return spec_from_call(call.name, call.kwargs)
    if call.name in _AUG_PARAMS:
        return augment_from_call(call.name, call.kwargs)
    raise ConfigError(f"line {call.line}: unknown stage kind {call.name!r}")


def pipeline_from_text(text: str) -> TransformPipeline:
    """Parse a pipeline config: optional mode/seed lines plus stage calls."""
    doc = parse_config(text)
    doc.check_known({"mode", "seed", "stage"})
    mode_text = doc.single("mode", PipelineMode.CUSTOM.value)
    try:
        mode = PipelineMode(mode_text)
    except ValueError:
        raise ConfigError(f"unknown pipeline mode {mode_text!r}") from None
    seed = doc.single("seed", 0)
    if not isinstance(seed, int) or isinstance(seed, bool):
        raise ConfigError(f"pipeline seed must be an integer, got {seed!r}")
    stages = []
    for value in doc.many("stage"):
        if not isinstance(value, CallExpr):
            raise ConfigError(f"stage must be a call like gamma(gamma=5), got {value!r}")
        stages.append(_stage_from_call(value))
    return TransformPipeline(tuple(stages), mode, seed)


def pipeline_to_text(pipe: TransformPipeline) -> str:
    lines = [f"mode = {pipe.mode.value}", f"seed = {pipe.seed}"]
    for stage in pipe.stages:
        if isinstance(stage, CorruptionSpec):
            lines.append(f"stage = {spec_to_call(stage)}")
        else:
            lines.append(f"stage = {augment_to_call(stage)}")
    return "\n".join(lines) + "\n"


def _stage_name(stage: Stage) -> str:
    return stage.kind.value


def apply_pipeline(
    ds: LabeledDataset, pipe: TransformPipeline, epoch: int = 0
) -> LabeledDataset:
    """Run every stage in order over a dataset.

    Per-image augmentation streams are created once at entry; if a subsample
    stage drops rows, surviving images keep their original streams, and a
    substitution rebinds streams to the new dataset's indices.
    """
    if epoch < 0:
        raise ConfigError(f"epoch must be non-negative, got {epoch}")
    work = ds
    rngs = None
    if pipe.has_augmentation:
        rngs = [make_rng([pipe.seed, i, epoch]) for i in range(len(ds))]
    for k, stage in enumerate(pipe.stages):
        try:
            if isinstance(stage, CorruptionSpec):
                if stage.kind in (CorruptionKind.LONGTAIL, CorruptionKind.UNIFORM):
                    if stage.kind is CorruptionKind.LONGTAIL:
                        keep, _ = longtail_selection(
                            work, stage.max_per_class, stage.min_per_class, stage.seed
                        )
                    else:
                        keep, _ = longtail_selection(
                            work, stage.per_class, stage.per_class, stage.seed
                        )
                    work = work.subset(keep)
                    if rngs is not None:
                        rngs = [rngs[i] for i in keep]
                elif stage.kind is CorruptionKind.SUBSTITUTE:
                    work = apply_corruption(work, stage)
                    if rngs is not None:
                        rngs = [make_rng([pipe.seed, i, epoch]) for i in range(len(work))]
                else:
                    work = apply_corruption(work, stage)
            else:
                imgs = np.stack(
                    [
                        apply_augmentation(work.images[i], stage, rngs[i])
                        for i in range(len(work))
                    ]
                )
                work = LabeledDataset(imgs, work.labels, work.num_classes)
        except BenchError as exc:
            raise type(exc)(f"stage {k} ({_stage_name(stage)}): {exc}") from exc
    return work
