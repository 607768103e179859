"""Experiment harness: corruption grids, robustness reports, serialization.

Two modes. Downstream keeps training data clean and corrupts only the test
split; pretrain corrupts training (and, for pixel/patch corruptions, test)
data before fitting. Feature sources are either a built-in MLP probe or
externally supplied embedding files. Reports carry the relative accuracy
drop per corruption and are byte-identical across reruns and thread counts.
"""
from __future__ import annotations

import hashlib
import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .augment import AugmentationSpec, augment_from_call
from .configfile import CallExpr, parse_config
from .corruptions import CorruptionSpec, CorruptionKind, spec_from_call
from .datasets import (
    EmbeddingSet,
    LabeledDataset,
    read_cifar_binary,
    read_embeddings,
    read_image_dir,
)
from .errors import ConfigError, DataError
from .evaluation import (
    KnnConfig,
    LinearProbeConfig,
    evaluate_linear,
    format_delta_percent,
    knn_predict,
    relative_drop,
    train_linear_probe,
)
from .metrics import uniformity
from .pipeline import PipelineMode, TransformPipeline, ordered_pipeline
from .probe import MlpModel, TrainConfig, embed_dataset, train

THREADS_ENV = "CORRUPT_BENCH_THREADS"
DELTA_CHECK_TOL = 1e-9
ORIG_LABEL = "Orig"


class TestMode(str, Enum):
    DOWNSTREAM = "downstream"
    PRETRAIN = "pretrain"


class EvalKind(str, Enum):
    KNN = "knn"
    LINEAR = "linear"


class AugOrder(str, Enum):
    CORRUPT_THEN_AUG = "corrupt-aug"
    AUG_THEN_CORRUPT = "aug-corrupt"
    BOTH = "both"


@dataclass(frozen=True)
class GridEntry:
    """One corruption cell: its spec, display label, optional embeddings."""

    spec: CorruptionSpec
    label: str
    test_emb: str | None = None

    def to_dict(self) -> dict:
        out = {"label": self.label, "spec": self.spec.to_dict()}
        if self.test_emb is not None:
            out["test_emb"] = self.test_emb
        return out


@dataclass(frozen=True)
class ExternalSource:
    """Precomputed embedding files for the bank and the clean test split."""

    train_emb: str
    test_emb: str

    def to_dict(self) -> dict:
        return {
            "kind": "external",
            "train_emb": self.train_emb,
            "test_emb": self.test_emb,
        }


@dataclass(frozen=True)
class ProbeSource:
    """Built-in MLP feature extractor settings."""

    hidden: tuple[int, ...] = (512,)
    feat: int = 128
    train: TrainConfig = field(default_factory=TrainConfig)

    def __post_init__(self):
        bad = not self.hidden or any(
            not isinstance(h, int) or isinstance(h, bool) or h < 1 for h in self.hidden
        )
        if bad:
            raise ConfigError(f"hidden sizes must be positive integers, got {self.hidden}")
        if not isinstance(self.feat, int) or isinstance(self.feat, bool) or self.feat < 1:
            raise ConfigError(f"feature dim must be a positive integer, got {self.feat!r}")

    def layer_sizes(self, input_dim: int, num_classes: int) -> list[int]:
        return [input_dim, *self.hidden, self.feat, num_classes]

    def to_dict(self) -> dict:
        return {
            "kind": "probe",
            "hidden": list(self.hidden),
            "feat": self.feat,
            "train": self.train.to_dict(),
        }


@dataclass(frozen=True)
class ExperimentConfig:
    mode: TestMode
    source: ExternalSource | ProbeSource
    grid: tuple[GridEntry, ...] = ()
    eval_kind: EvalKind = EvalKind.KNN
    knn: KnnConfig = field(default_factory=KnnConfig)
    linear: LinearProbeConfig = field(default_factory=LinearProbeConfig)
    train_data: str | None = None
    test_data: str | None = None
    augments: tuple[AugmentationSpec, ...] = ()
    aug_order: AugOrder = AugOrder.CORRUPT_THEN_AUG
    with_uniformity: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.seed < 0:
            raise ConfigError(f"seed must be non-negative, got {self.seed}")
        labels = [entry.label for entry in self.grid]
        if len(set(labels)) != len(labels):
            dupes = sorted({l for l in labels if labels.count(l) > 1})
            raise ConfigError(f"duplicate grid labels: {dupes}")
        if ORIG_LABEL in labels:
            raise ConfigError(f"{ORIG_LABEL!r} is reserved for the clean row")
        external = isinstance(self.source, ExternalSource)
        if external:
            if self.mode is not TestMode.DOWNSTREAM:
                raise ConfigError("external embeddings only support downstream mode")
            if self.augments:
                raise ConfigError("augmentations need the built-in probe")
            if self.train_data is not None or self.test_data is not None:
                raise ConfigError("external mode takes embeddings, not image data paths")
            missing = [e.label for e in self.grid if not e.test_emb]
            if missing:
                raise ConfigError(
                    f"external mode needs test_emb for every corruption: {missing}"
                )
        else:
            if self.train_data is None or self.test_data is None:
                raise ConfigError("built-in probe needs train_data and test_data")
            given = [e.label for e in self.grid if e.test_emb]
            if given:
                raise ConfigError(
                    f"test_emb only applies to external mode: {given}"
                )
        if self.augments and self.mode is not TestMode.PRETRAIN:
            raise ConfigError("augmentation schedules apply to pretrain mode only")

    def to_dict(self) -> dict:
        return {
            "mode": self.mode.value,
            "source": self.source.to_dict(),
            "grid": [entry.to_dict() for entry in self.grid],
            "eval": self.eval_kind.value,
            "knn": self.knn.to_dict(),
            "linear": self.linear.to_dict(),
            "train_data": self.train_data,
            "test_data": self.test_data,
            "augments": [a.to_dict() for a in self.augments],
            "aug_order": self.aug_order.value,
            "uniformity": self.with_uniformity,
            "seed": self.seed,
        }


def config_hash(cfg: ExperimentConfig) -> str:
    blob = json.dumps(cfg.to_dict(), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


# ---------------------------------------------------------------------------
# config parsing


def _call_only(value, what: str) -> CallExpr:
    if not isinstance(value, CallExpr):
        raise ConfigError(f"{what} must be a call like {what}(...), got {value!r}")
    return value


def _parse_hidden(value) -> tuple[int, ...]:
    if isinstance(value, int) and not isinstance(value, bool):
        return (value,)
    if isinstance(value, str):
        try:
            return tuple(int(part) for part in value.split(",") if part.strip())
        except ValueError:
            pass
    raise ConfigError(f"hidden must be an int or 'a,b,...' list, got {value!r}")


def _parse_eval(doc) -> tuple[EvalKind, KnnConfig, LinearProbeConfig]:
    value = doc.single("eval", None)
    knn, linear = KnnConfig(), LinearProbeConfig()
    if value is None:
        return EvalKind.KNN, knn, linear
    call = _call_only(value, "eval")
    if call.name == "knn":
        allowed = {"k", "tau"}
        _reject_unknown(call, allowed)
        knn = KnnConfig(
            k=call.kwargs.get("k", knn.k), tau=call.kwargs.get("tau", knn.tau)
        )
        return EvalKind.KNN, knn, linear
    if call.name == "linear":
        allowed = {"epochs", "batch", "lr", "decay", "seed"}
        _reject_unknown(call, allowed)
        linear = LinearProbeConfig(
            epochs=call.kwargs.get("epochs", linear.epochs),
            batch_size=call.kwargs.get("batch", linear.batch_size),
            learning_rate=call.kwargs.get("lr", linear.learning_rate),
            weight_decay=call.kwargs.get("decay", linear.weight_decay),
            seed=call.kwargs.get("seed", linear.seed),
        )
        return EvalKind.LINEAR, knn, linear
    raise ConfigError(f"eval must be knn(...) or linear(...), got {call.name!r}")


def _reject_unknown(call: CallExpr, allowed: set[str]) -> None:
    for key in call.kwargs:
        if key not in allowed:
            raise ConfigError(f"{call.name} does not take parameter {key!r}")


def _parse_source(doc) -> ExternalSource | ProbeSource:
    call = _call_only(doc.single("source"), "source")
    if call.name == "external":
        _reject_unknown(call, {"train_emb", "test_emb"})
        for key in ("train_emb", "test_emb"):
            if key not in call.kwargs:
                raise ConfigError(f"external source requires {key}")
        return ExternalSource(
            train_emb=str(call.kwargs["train_emb"]),
            test_emb=str(call.kwargs["test_emb"]),
        )
    if call.name == "probe":
        allowed = {
            "hidden",
            "feat",
            "epochs",
            "batch",
            "lr",
            "lambda",
            "seed",
            "checkpoint_every",
        }
        _reject_unknown(call, allowed)
        base = TrainConfig()
        train_cfg = TrainConfig(
            epochs=call.kwargs.get("epochs", base.epochs),
            batch_size=call.kwargs.get("batch", base.batch_size),
            learning_rate=call.kwargs.get("lr", base.learning_rate),
            lam=call.kwargs.get("lambda", base.lam),
            seed=call.kwargs.get("seed", base.seed),
            checkpoint_every=call.kwargs.get("checkpoint_every", base.checkpoint_every),
        )
        probe = ProbeSource(
            hidden=_parse_hidden(call.kwargs.get("hidden", 512)),
            feat=call.kwargs.get("feat", 128),
            train=train_cfg,
        )
        return probe
    raise ConfigError(f"source must be external(...) or probe(...), got {call.name!r}")


def _parse_grid(doc) -> tuple[GridEntry, ...]:
    entries = []
    for value in doc.many("corruption"):
        call = _call_only(value, "corruption")
        kwargs = dict(call.kwargs)
        label = kwargs.pop("label", None)
        test_emb = kwargs.pop("test_emb", None)
        spec = spec_from_call(call.name, kwargs)
        entries.append(
            GridEntry(
                spec=spec,
                label=str(label) if label is not None else spec.default_label,
                test_emb=str(test_emb) if test_emb is not None else None,
            )
        )
    return tuple(entries)


_EXPERIMENT_KEYS = {
    "mode",
    "eval",
    "source",
    "corruption",
    "augment",
    "aug_order",
    "train_data",
    "test_data",
    "uniformity",
    "seed",
}


def parse_experiment(text: str) -> ExperimentConfig:
    """Build an ExperimentConfig from config text."""
    doc = parse_config(text)
    doc.check_known(_EXPERIMENT_KEYS)
    mode_text = doc.single("mode")
    try:
        mode = TestMode(mode_text)
    except ValueError:
        raise ConfigError(f"mode must be downstream or pretrain, got {mode_text!r}") from None
    eval_kind, knn, linear = _parse_eval(doc)
    augments = []
    for value in doc.many("augment"):
        call = _call_only(value, "augment")
        augments.append(augment_from_call(call.name, call.kwargs))
    order_text = doc.single("aug_order", AugOrder.CORRUPT_THEN_AUG.value)
    try:
        aug_order = AugOrder(order_text)
    except ValueError:
        raise ConfigError(
            f"aug_order must be corrupt-aug, aug-corrupt, or both, got {order_text!r}"
        ) from None
    if doc.single("aug_order", None) is not None and not augments:
        raise ConfigError("aug_order given but no augment stages configured")
    uniform_flag = doc.single("uniformity", False)
    if not isinstance(uniform_flag, bool):
        raise ConfigError(f"uniformity must be true or false, got {uniform_flag!r}")
    seed = doc.single("seed", 0)
    if not isinstance(seed, int) or isinstance(seed, bool):
        raise ConfigError(f"seed must be an integer, got {seed!r}")
    train_data = doc.single("train_data", None)
    test_data = doc.single("test_data", None)
    return ExperimentConfig(
        mode=mode,
        source=_parse_source(doc),
        grid=_parse_grid(doc),
        eval_kind=eval_kind,
        knn=knn,
        linear=linear,
        train_data=str(train_data) if train_data is not None else None,
        test_data=str(test_data) if test_data is not None else None,
        augments=tuple(augments),
        aug_order=aug_order,
        with_uniformity=uniform_flag,
        seed=seed,
    )


# ---------------------------------------------------------------------------
# reports


@dataclass(frozen=True)
class ReportRow:
    label: str
    accuracy: float
    delta: float
    clean_accuracy: float | None = None
    clean_delta: float | None = None
    extras: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        out = {
            "label": self.label,
            "accuracy": self.accuracy,
            "delta": self.delta,
            "delta_pct": format_delta_percent(self.delta),
        }
        if self.clean_accuracy is not None:
            out["clean_accuracy"] = self.clean_accuracy
            out["clean_delta"] = self.clean_delta
            out["clean_delta_pct"] = format_delta_percent(self.clean_delta)
        for key in sorted(self.extras):
            out[key] = self.extras[key]
        return out


@dataclass(frozen=True)
class MetricsReport:
    """Accuracy grid: one Orig row plus one row per corruption cell."""

    rows: tuple[ReportRow, ...]
    avg_delta: float | None
    avg_clean_delta: float | None
    metadata: dict

    def __post_init__(self):
        object.__setattr__(self, "rows", tuple(self.rows))
        if not self.rows or self.rows[0].label != ORIG_LABEL:
            raise DataError(f"first report row must be {ORIG_LABEL!r}")
        orig = self.rows[0]
        if orig.delta != 0.0:
            raise DataError(f"{ORIG_LABEL} delta must be 0, got {orig.delta}")
        labels = [row.label for row in self.rows]
        if len(set(labels)) != len(labels):
            raise DataError("report rows carry duplicate labels")
        for row in self.rows:
            expect = relative_drop(orig.accuracy, row.accuracy)
            if abs(expect - row.delta) > DELTA_CHECK_TOL:
                raise DataError(
                    f"row {row.label!r} delta {row.delta} != recomputed {expect}"
                )
            if row.clean_accuracy is not None:
                expect_clean = relative_drop(orig.accuracy, row.clean_accuracy)
                if abs(expect_clean - row.clean_delta) > DELTA_CHECK_TOL:
                    raise DataError(
                        f"row {row.label!r} clean delta {row.clean_delta} != "
                        f"recomputed {expect_clean}"
                    )
        body = self.rows[1:]
        if body:
            want = float(np.mean([row.delta for row in body]))
            if self.avg_delta is None or abs(want - self.avg_delta) > DELTA_CHECK_TOL:
                raise DataError(f"avg_delta {self.avg_delta} != recomputed {want}")
            cleans = [row.clean_delta for row in body if row.clean_delta is not None]
            if len(cleans) == len(body):
                want_clean = float(np.mean(cleans))
                if (
                    self.avg_clean_delta is None
                    or abs(want_clean - self.avg_clean_delta) > DELTA_CHECK_TOL
                ):
                    raise DataError(
                        f"avg_clean_delta {self.avg_clean_delta} != recomputed {want_clean}"
                    )
        elif self.avg_delta is not None or self.avg_clean_delta is not None:
            raise DataError("averages must be null without corruption rows")

    @property
    def orig_accuracy(self) -> float:
        return self.rows[0].accuracy

    def to_dict(self) -> dict:
        summary = {
            "avg_delta": self.avg_delta,
            "avg_clean_delta": self.avg_clean_delta,
            "n_corruptions": len(self.rows) - 1,
        }
        if self.avg_delta is not None:
            summary["avg_delta_pct"] = format_delta_percent(self.avg_delta)
        return {
            "metadata": self.metadata,
            "rows": [row.to_dict() for row in self.rows],
            "summary": summary,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":")) + "\n"

    def to_csv(self) -> str:
        has_clean = any(row.clean_accuracy is not None for row in self.rows)
        extra_keys = sorted({key for row in self.rows for key in row.extras})
        header = ["label", "accuracy", "delta_pct"]
        if has_clean:
            header += ["clean_accuracy", "clean_delta_pct"]
        header += extra_keys
        lines = [",".join(header)]
        for row in self.rows:
            cells = [row.label, f"{row.accuracy * 100:.2f}", format_delta_percent(row.delta)]
            if has_clean:
                if row.clean_accuracy is not None:
                    cells += [
                        f"{row.clean_accuracy * 100:.2f}",
                        format_delta_percent(row.clean_delta),
                    ]
                else:
                    cells += ["", ""]
            for key in extra_keys:
                value = row.extras.get(key)
                cells.append("" if value is None else f"{value:.6g}")
            lines.append(",".join(cells))
        return "\n".join(lines) + "\n"


def build_report(
    orig_accuracy: float,
    cells: list[tuple[str, float, float | None, dict]],
    metadata: dict,
) -> MetricsReport:
    """Assemble rows and averages from raw cell accuracies.

    Each cell is (label, corrupted accuracy, clean-eval accuracy or None,
    extras dict).
    """
    rows = [
        ReportRow(
            label=ORIG_LABEL,
            accuracy=orig_accuracy,
            delta=relative_drop(orig_accuracy, orig_accuracy),
            extras=metadata.pop("_orig_extras", {}),
        )
    ]
    for label, acc, clean_acc, extras in cells:
        rows.append(
            ReportRow(
                label=label,
                accuracy=acc,
                delta=relative_drop(orig_accuracy, acc),
                clean_accuracy=clean_acc,
                clean_delta=(
                    relative_drop(orig_accuracy, clean_acc)
                    if clean_acc is not None
                    else None
                ),
                extras=extras,
            )
        )
    body = rows[1:]
    avg_delta = float(np.mean([r.delta for r in body])) if body else None
    cleans = [r.clean_delta for r in body if r.clean_delta is not None]
    avg_clean = float(np.mean(cleans)) if body and len(cleans) == len(body) else None
    return MetricsReport(
        rows=tuple(rows),
        avg_delta=avg_delta,
        avg_clean_delta=avg_clean,
        metadata=metadata,
    )


# ---------------------------------------------------------------------------
# execution


def worker_count() -> int:
    """Grid-cell parallelism, capped by the CORRUPT_BENCH_THREADS env var."""
    raw = os.environ.get(THREADS_ENV)
    if raw is None:
        return min(os.cpu_count() or 1, 8)
    try:
        count = int(raw)
    except ValueError:
        raise ConfigError(f"{THREADS_ENV} must be an integer, got {raw!r}") from None
    if count < 1:
        raise ConfigError(f"{THREADS_ENV} must be >= 1, got {count}")
    return count


def _map_cells(fn, items: list):
    """Order-preserving map, parallel across grid cells when allowed."""
    workers = min(worker_count(), max(len(items), 1))
    if workers <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def load_dataset(path: str, num_classes: int | None = None) -> LabeledDataset:
    """Directory -> raw-image dir; file -> CIFAR-style binary."""
    if os.path.isdir(path):
        return read_image_dir(path, num_classes=num_classes)
    if os.path.isfile(path):
        return (
            read_cifar_binary(path, num_classes=num_classes)
            if num_classes is not None
            else read_cifar_binary(path)
        )
    raise DataError(f"no dataset at {path!r}")


def _resolve(path: str | None, base_dir: str | None) -> str | None:
    if path is None or base_dir is None or os.path.isabs(path):
        return path
    return os.path.join(base_dir, path)


def _evaluate(
    cfg: ExperimentConfig,
    bank: EmbeddingSet,
    queries: EmbeddingSet,
    linear_model=None,
) -> float:
    if cfg.eval_kind is EvalKind.KNN:
        knn_cfg = cfg.knn
        if knn_cfg.k > len(bank):
            knn_cfg = KnnConfig(k=len(bank), tau=knn_cfg.tau)
        _, result = knn_predict(bank, queries, knn_cfg)
        return result.top1
    if linear_model is None:
        linear_model, _ = train_linear_probe(bank, cfg.linear)
    return evaluate_linear(linear_model, queries).top1


def _uniformity_extra(cfg: ExperimentConfig, emb: EmbeddingSet) -> dict:
    if not cfg.with_uniformity:
        return {}
    est = uniformity(emb, pairs="auto", seed=cfg.seed)
    return {"uniformity": est.value}


def _check_external_files(cfg: ExperimentConfig) -> None:
    paths = [cfg.source.train_emb, cfg.source.test_emb]
    paths += [entry.test_emb for entry in cfg.grid]
    missing = sorted({p for p in paths if not os.path.isfile(p)})
    if missing:
        raise DataError(f"missing embedding files: {missing}")


def _metadata(cfg: ExperimentConfig) -> dict:
    return {
        "config": cfg.to_dict(),
        "config_hash": config_hash(cfg),
        "format": "corruption-robustness-report/1",
    }


def _run_downstream_external(cfg: ExperimentConfig) -> MetricsReport:
    _check_external_files(cfg)
    bank = read_embeddings(cfg.source.train_emb)
    orig = read_embeddings(cfg.source.test_emb)
    linear_model = None
    if cfg.eval_kind is EvalKind.LINEAR:
        linear_model, _ = train_linear_probe(bank, cfg.linear)
    acc_orig = _evaluate(cfg, bank, orig, linear_model)

    def cell(entry: GridEntry):
        queries = read_embeddings(entry.test_emb)
        acc = _evaluate(cfg, bank, queries, linear_model)
        return entry.label, acc, None, _uniformity_extra(cfg, queries)

    cells = _map_cells(cell, list(cfg.grid))
    meta = _metadata(cfg)
    meta["_orig_extras"] = _uniformity_extra(cfg, orig)
    return build_report(acc_orig, cells, meta)


def _run_downstream_probe(cfg: ExperimentConfig, base_dir: str | None) -> MetricsReport:
    train_ds = load_dataset(_resolve(cfg.train_data, base_dir))
    test_ds = load_dataset(_resolve(cfg.test_data, base_dir), num_classes=train_ds.num_classes)
    source: ProbeSource = cfg.source
    input_dim = int(np.prod(train_ds.image_shape))
    model = MlpModel.initialize(
        source.layer_sizes(input_dim, train_ds.num_classes), source.train.seed
    )
    run_cfg = _final_only(source.train)
    result = train(model, train_ds, test_ds, run_cfg)
    fitted = result.model
    bank = embed_dataset(fitted, train_ds)
    orig = embed_dataset(fitted, test_ds)
    linear_model = None
    if cfg.eval_kind is EvalKind.LINEAR:
        linear_model, _ = train_linear_probe(bank, cfg.linear)
    acc_orig = _evaluate(cfg, bank, orig, linear_model)

    def cell(entry: GridEntry):
        test_c = apply_grid_corruption(test_ds, entry.spec, base_dir)
        queries = embed_dataset(fitted, test_c)
        acc = _evaluate(cfg, bank, queries, linear_model)
        return entry.label, acc, None, _uniformity_extra(cfg, queries)

    cells = _map_cells(cell, list(cfg.grid))
    meta = _metadata(cfg)
    meta["_orig_extras"] = _uniformity_extra(cfg, orig)
    return build_report(acc_orig, cells, meta)


def apply_grid_corruption(
    ds: LabeledDataset, spec: CorruptionSpec, base_dir: str | None
) -> LabeledDataset:
    from .corruptions import apply_corruption

    if spec.kind is CorruptionKind.SUBSTITUTE:
        replacement = load_dataset(
            _resolve(spec.substitute_path, base_dir), num_classes=ds.num_classes
        )
        return apply_corruption(ds, spec, replacement=replacement)
    return apply_corruption(ds, spec)


def _resolved_spec(spec: CorruptionSpec, base_dir: str | None) -> CorruptionSpec:
    """Spec with its substitute path made loadable from anywhere."""
    if spec.kind is not CorruptionKind.SUBSTITUTE:
        return spec
    import dataclasses

    return dataclasses.replace(
        spec, substitute_path=_resolve(spec.substitute_path, base_dir)
    )


def _final_only(train_cfg: TrainConfig) -> TrainConfig:
    """Checkpoint only at the end; the harness never reads the series."""
    return TrainConfig(
        epochs=train_cfg.epochs,
        batch_size=train_cfg.batch_size,
        learning_rate=train_cfg.learning_rate,
        lam=train_cfg.lam,
        seed=train_cfg.seed,
        checkpoint_every=train_cfg.epochs,
    )


def _run_pretrain(cfg: ExperimentConfig, base_dir: str | None) -> MetricsReport:
    train_ds = load_dataset(_resolve(cfg.train_data, base_dir))
    test_ds = load_dataset(_resolve(cfg.test_data, base_dir), num_classes=train_ds.num_classes)
    source: ProbeSource = cfg.source
    input_dim = int(np.prod(train_ds.image_shape))
    sizes = source.layer_sizes(input_dim, train_ds.num_classes)
    run_cfg = _final_only(source.train)

    def fit(dataset: LabeledDataset, pipeline, bank_ds: LabeledDataset):
        model = MlpModel.initialize(sizes, source.train.seed)
        result = train(
            model,
            dataset,
            test_ds,
            run_cfg,
            pipeline=pipeline,
            bank_dataset=bank_ds,
        )
        return result.model

    base_pipe = None
    if cfg.augments:
        base_pipe = TransformPipeline(cfg.augments, PipelineMode.CUSTOM, cfg.seed)
    baseline = fit(train_ds, base_pipe, train_ds)
    bank0 = embed_dataset(baseline, train_ds)
    orig0 = embed_dataset(baseline, test_ds)
    acc_orig = _evaluate(cfg, bank0, orig0)

    orders = (
        [cfg.aug_order]
        if cfg.aug_order is not AugOrder.BOTH
        else [AugOrder.CORRUPT_THEN_AUG, AugOrder.AUG_THEN_CORRUPT]
    )
    tasks = []
    for entry in cfg.grid:
        for order in orders:
            label = entry.label
            if len(orders) > 1:
                label = f"{label}/{order.value}"
            tasks.append((entry, order, label))

    def cell(task):
        entry, order, label = task
        spec = entry.spec
        train_c = apply_grid_corruption(train_ds, spec, base_dir)
        test_c = (
            apply_grid_corruption(test_ds, spec, base_dir)
            if not spec.is_dataset_level
            else test_ds
        )
        if cfg.augments:
            mode = (
                PipelineMode.CORRUPT_THEN_AUGMENT
                if order is AugOrder.CORRUPT_THEN_AUG
                else PipelineMode.AUGMENT_THEN_CORRUPT
            )
            pipe = ordered_pipeline(
                [_resolved_spec(spec, base_dir)], list(cfg.augments), mode, cfg.seed
            )
            fitted = fit(train_ds, pipe, train_c)
        else:
            fitted = fit(train_c, None, train_c)
        bank_c = embed_dataset(fitted, train_c)
        q_c = embed_dataset(fitted, test_c)
        acc_c = _evaluate(cfg, bank_c, q_c)
        bank_clean = embed_dataset(fitted, train_ds)
        q_clean = embed_dataset(fitted, test_ds)
        acc_clean = _evaluate(cfg, bank_clean, q_clean)
        return label, acc_c, acc_clean, _uniformity_extra(cfg, q_c)

    cells = _map_cells(cell, tasks)
    meta = _metadata(cfg)
    meta["_orig_extras"] = _uniformity_extra(cfg, orig0)
    return build_report(acc_orig, cells, meta)


def run_experiment(cfg: ExperimentConfig, base_dir: str | None = None) -> MetricsReport:
    """Execute one experiment config and return its validated report."""
    if isinstance(cfg.source, ExternalSource):
        resolved = ExternalSource(
            train_emb=_resolve(cfg.source.train_emb, base_dir),
            test_emb=_resolve(cfg.source.test_emb, base_dir),
        )
        grid = tuple(
            GridEntry(e.spec, e.label, _resolve(e.test_emb, base_dir)) for e in cfg.grid
        )
        cfg2 = ExperimentConfig(
            mode=cfg.mode,
            source=resolved,
            grid=grid,
            eval_kind=cfg.eval_kind,
            knn=cfg.knn,
            linear=cfg.linear,
            train_data=cfg.train_data,
            test_data=cfg.test_data,
            augments=cfg.augments,
            aug_order=cfg.aug_order,
            with_uniformity=cfg.with_uniformity,
            seed=cfg.seed,
        )
        report = _run_downstream_external(cfg2)
        # hash the config as written, not the resolved copy
        report.metadata["config_hash"] = config_hash(cfg)
        report.metadata["config"] = cfg.to_dict()
        return report
    if cfg.mode is TestMode.DOWNSTREAM:
        return _run_downstream_probe(cfg, base_dir)
    return _run_pretrain(cfg, base_dir)
