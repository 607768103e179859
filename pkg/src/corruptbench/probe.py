"""MLP probe trained with cross-entropy plus a batch uniformity term.

The objective is loss = CE - lambda * U_batch, where U_batch is the
uniformity of the L2-normalized penultimate activations over all distinct
in-batch pairs. Positive lambda rewards spreading features over the sphere;
negative lambda rewards clustering them. All math runs in float64 with
hand-written backprop, so gradients can be checked against finite
differences directly.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .datasets import EmbeddingSet, LabeledDataset
from .errors import ConfigError, DataError, NumericError
from .evaluation import KnnConfig, knn_predict
from .metrics import CheckpointSeries
from .rngs import fisher_yates, make_rng

NORM_GUARD = 1e-12
_EMBED_CHUNK = 1024


@dataclass
class MlpModel:
    """Fully connected ReLU stack; the last layer is a linear head.

    weights[k] has shape (sizes[k], sizes[k+1]). Features are the
    activations feeding the head.
    """

    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def __post_init__(self):
        if len(self.weights) != len(self.biases):
            raise ConfigError("weights and biases must pair up")
        if len(self.weights) < 2:
            raise ConfigError("model needs at least one hidden layer plus a head")
        prev = None
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            w = np.asarray(w, dtype=np.float64)
            b = np.asarray(b, dtype=np.float64)
            if w.ndim != 2 or b.ndim != 1 or w.shape[1] != b.shape[0]:
                raise ConfigError(f"layer {k} has inconsistent shapes {w.shape}/{b.shape}")
            if prev is not None and w.shape[0] != prev:
                raise ConfigError(
                    f"layer {k} input width {w.shape[0]} != previous output {prev}"
                )
            prev = w.shape[1]
            self.weights[k] = w
            self.biases[k] = b

    @property
    def layer_sizes(self) -> list[int]:
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    @property
    def input_dim(self) -> int:
        return self.weights[0].shape[0]

    @property
    def feature_dim(self) -> int:
        return self.weights[-1].shape[0]

    @property
    def num_classes(self) -> int:
        return self.weights[-1].shape[1]

    def copy(self) -> "MlpModel":
        return MlpModel([w.copy() for w in self.weights], [b.copy() for b in self.biases])

    @classmethod
    def initialize(cls, layer_sizes: list[int], seed: int) -> "MlpModel":
        """He-normal weights, zero biases."""
        if len(layer_sizes) < 3:
            raise ConfigError(
                f"need input, >= 1 hidden, and output sizes, got {layer_sizes}"
            )
        if any(s < 1 for s in layer_sizes):
            raise ConfigError(f"layer sizes must be >= 1, got {layer_sizes}")
        rng = make_rng([seed, 0])
        weights, biases = [], []
        for fan_in, fan_out in zip(layer_sizes, layer_sizes[1:]):
            scale = np.sqrt(2.0 / fan_in)
            weights.append(rng.standard_normal((fan_in, fan_out)) * scale)
            biases.append(np.zeros(fan_out))
        return cls(weights, biases)


def forward(model: MlpModel, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Run the network; returns (features, logits).

    Features are the raw post-ReLU activations of the last hidden layer
    (no normalization); the head consumes them as-is.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != model.input_dim:
        raise DataError(
            f"input must be (B, {model.input_dim}), got {x.shape}"
        )
    a = x
    for w, b in zip(model.weights[:-1], model.biases[:-1]):
        a = np.maximum(a @ w + b, 0.0)
    logits = a @ model.weights[-1] + model.biases[-1]
    return a, logits


def batch_uniformity(features: np.ndarray) -> float:
    """Uniformity of one batch of raw features, normalized internally."""
    u, _ = _uniformity_and_grad(np.asarray(features, dtype=np.float64))
    return u


def _normalize_rows(f: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    norms = np.sqrt((f * f).sum(axis=1))
    guarded = np.maximum(norms, NORM_GUARD)
    return f / guarded[:, None], guarded, norms >= NORM_GUARD


def _uniformity_and_grad(f: np.ndarray) -> tuple[float, np.ndarray]:
    """U of normalized rows and dU/df through the normalization.

    Rows with norm below the guard are scaled by 1/guard instead; the
    tangent-space projection is skipped there because the scaled row is not
    unit length.
    """
    b = len(f)
    if b < 2:
        raise NumericError(f"batch uniformity needs >= 2 rows, got {b}")
    fhat, guarded, proj_mask = _normalize_rows(f)
    sq = (fhat * fhat).sum(axis=1)
    d2 = np.maximum(sq[:, None] + sq[None, :] - 2.0 * (fhat @ fhat.T), 0.0)
    e = np.exp(-2.0 * d2)
    np.fill_diagonal(e, 0.0)
    mean_pot = e.sum() / (b * (b - 1))
    u = -float(np.log(mean_pot))
    # dU/dfhat_i = 8/(M*B*(B-1)) * sum_j E_ij (fhat_i - fhat_j)
    coeff = 8.0 / (mean_pot * b * (b - 1))
    g_hat = coeff * (e.sum(axis=1)[:, None] * fhat - e @ fhat)
    radial = (g_hat * fhat).sum(axis=1, keepdims=True)
    g = np.where(proj_mask[:, None], g_hat - radial * fhat, g_hat) / guarded[:, None]
    return u, g


def _softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def loss_and_grad(
    model: MlpModel, x: np.ndarray, y: np.ndarray, lam: float
) -> tuple[float, list[np.ndarray], list[np.ndarray]]:
    """Total loss CE - lam * U_batch and its gradient for every parameter.

    Returns (loss, weight grads, bias grads) with shapes matching the model.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    b = len(x)
    if b == 0:
        raise DataError("empty batch")
    if y.shape != (b,):
        raise DataError(f"labels must be ({b},), got {y.shape}")
    if y.min() < 0 or y.max() >= model.num_classes:
        raise DataError(
            f"label out of range for {model.num_classes}-way head"
        )
    n_layers = len(model.weights)
    acts = [x]
    zs = []
    a = x
    for w, bias in zip(model.weights[:-1], model.biases[:-1]):
        z = a @ w + bias
        zs.append(z)
        a = np.maximum(z, 0.0)
        acts.append(a)
    feats = a
    logits = feats @ model.weights[-1] + model.biases[-1]
    probs = _softmax(logits)
    picked = probs[np.arange(b), y]
    loss = float(-np.log(np.maximum(picked, 1e-300)).mean())
    dlogits = probs.copy()
    dlogits[np.arange(b), y] -= 1.0
    dlogits /= b
    grads_w: list = [None] * n_layers
    grads_b: list = [None] * n_layers
    grads_w[-1] = feats.T @ dlogits
    grads_b[-1] = dlogits.sum(axis=0)
    dfeats = dlogits @ model.weights[-1].T
    if lam != 0.0:
        if b < 2:
            raise ConfigError("uniformity term needs batch size >= 2")
        u, du = _uniformity_and_grad(feats)
        loss -= lam * u
        dfeats = dfeats - lam * du
    delta = dfeats * (zs[-1] > 0.0)
    for k in range(n_layers - 2, -1, -1):
        grads_w[k] = acts[k].T @ delta
        grads_b[k] = delta.sum(axis=0)
        if k > 0:
            delta = (delta @ model.weights[k].T) * (zs[k - 1] > 0.0)
    return loss, grads_w, grads_b


def flatten_images(ds: LabeledDataset) -> np.ndarray:
    """Images as float64 rows scaled to [0, 1]."""
    n = len(ds)
    return ds.images.reshape(n, -1).astype(np.float64) / 255.0


def embed_dataset(model: MlpModel, ds: LabeledDataset) -> EmbeddingSet:
    """Feature rows for a whole dataset, exported as float32."""
    x = flatten_images(ds)
    chunks = []
    for start in range(0, len(x), _EMBED_CHUNK):
        feats, _ = forward(model, x[start : start + _EMBED_CHUNK])
        chunks.append(feats)
    all_feats = np.concatenate(chunks) if chunks else np.zeros((0, model.feature_dim))
    return EmbeddingSet(all_feats.astype(np.float32), ds.labels, normalized=False)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 50
    batch_size: int = 128
    learning_rate: float = 0.1
    lam: float = 0.0
    seed: int = 0
    checkpoint_every: int = 1

    def __post_init__(self):
        for name in ("epochs", "batch_size", "seed", "checkpoint_every"):
            value = getattr(self, name)
            if not isinstance(value, int) or isinstance(value, bool):
                raise ConfigError(f"{name} must be an integer, got {value!r}")
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"batch size must be >= 1, got {self.batch_size}")
        if self.lam != 0.0 and self.batch_size < 2:
            raise ConfigError("batch size must be >= 2 when the uniformity term is on")
        if not np.isfinite(self.learning_rate) or self.learning_rate <= 0:
            raise ConfigError(f"learning rate must be positive, got {self.learning_rate}")
        if not np.isfinite(self.lam):
            raise ConfigError(f"lambda must be finite, got {self.lam}")
        if self.seed < 0:
            raise ConfigError(f"seed must be non-negative, got {self.seed}")
        if self.checkpoint_every < 1:
            raise ConfigError(
                f"checkpoint cadence must be >= 1, got {self.checkpoint_every}"
            )

    def to_dict(self) -> dict:
        return {
            "epochs": self.epochs,
            "batch_size": self.batch_size,
            "learning_rate": self.learning_rate,
            "lambda": self.lam,
            "seed": self.seed,
            "checkpoint_every": self.checkpoint_every,
        }


@dataclass
class TrainResult:
    model: MlpModel
    losses: list[float]
    series: CheckpointSeries
    checkpoints: list[EmbeddingSet] = field(default_factory=list)
    checkpoint_epochs: list[int] = field(default_factory=list)


def train(
    model: MlpModel,
    dataset: LabeledDataset,
    eval_set: LabeledDataset,
    cfg: TrainConfig,
    *,
    knn: KnnConfig | None = None,
    pipeline=None,
    bank_dataset: LabeledDataset | None = None,
) -> TrainResult:
    """SGD over shuffled minibatches, tracking KNN accuracy at checkpoints.

    The input model is not modified. At every checkpoint the current model
    embeds `bank_dataset` (default: the training data, untouched by the
    per-epoch pipeline) and the eval split, and a weighted-KNN pass records
    per-class accuracy. When `pipeline` is given it re-runs per epoch, so
    augmentation stages resample while corruption stages stay fixed.
    """
    from .pipeline import apply_pipeline  # local import to avoid a cycle

    if len(dataset) == 0:
        raise DataError("empty training dataset")
    if len(eval_set) == 0:
        raise DataError("empty evaluation dataset")
    model = model.copy()
    bank_ds = bank_dataset if bank_dataset is not None else dataset
    if knn is None:
        knn = KnnConfig(k=min(50, len(bank_ds)))
    base_x = None
    if pipeline is None:
        base_x = flatten_images(dataset)
    rng = make_rng([cfg.seed, 1])  # distinct from the init stream at [seed, 0]
    losses: list[float] = []
    series_rows: list[np.ndarray] = []
    checkpoints: list[EmbeddingSet] = []
    checkpoint_epochs: list[int] = []
    for epoch in range(cfg.epochs):
        if pipeline is not None:
            epoch_ds = apply_pipeline(dataset, pipeline, epoch=epoch)
            x, y = flatten_images(epoch_ds), epoch_ds.labels
        else:
            x, y = base_x, dataset.labels
        n = len(x)
        if cfg.lam != 0.0 and n % cfg.batch_size == 1:
            raise ConfigError(
                f"{n} samples at batch size {cfg.batch_size} leaves a singleton "
                "batch, which the uniformity term cannot score"
            )
        order = fisher_yates(n, rng)
        total = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            loss, gw, gb = loss_and_grad(model, x[idx], y[idx], cfg.lam)
            total += loss * len(idx)
            for k in range(len(model.weights)):
                model.weights[k] -= cfg.learning_rate * gw[k]
                model.biases[k] -= cfg.learning_rate * gb[k]
        losses.append(total / n)
        if (epoch + 1) % cfg.checkpoint_every == 0 or epoch == cfg.epochs - 1:
            bank_emb = embed_dataset(model, bank_ds)
            eval_emb = embed_dataset(model, eval_set)
            _, result = knn_predict(bank_emb, eval_emb, knn)
            series_rows.append(result.per_class)
            checkpoints.append(eval_emb)
            checkpoint_epochs.append(epoch + 1)
    return TrainResult(
        model=model,
        losses=losses,
        series=CheckpointSeries(np.stack(series_rows)),
        checkpoints=checkpoints,
        checkpoint_epochs=checkpoint_epochs,
    )
