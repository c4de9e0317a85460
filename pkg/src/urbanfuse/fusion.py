"""Late-fusion linear classification head and its SGD+momentum trainer.

Three head variants share one implementation: overhead-only, ground-only
(pooled ground views) and multimodal, which concatenates [ground, overhead]
before the linear layer. Training minimizes softmax cross-entropy.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .aggregation import AggregatedFeature, aggregate
from .container import ContainerError, read_arrays, write_arrays
from .io import DatasetManifest, SplitAssignment, UrbanObjectRecord

MODES = ("overhead_only", "ground_only", "multimodal")


@dataclass
class FusionModel:
    mode: str
    weights: np.ndarray  # (num_classes, input_dim) float64
    bias: np.ndarray  # (num_classes,) float64
    dim_ground: int  # 0 when the mode ignores ground views
    dim_overhead: int  # 0 when the mode ignores the overhead view

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.mode == "overhead_only" and self.dim_ground != 0:
            raise ValueError("overhead_only model must have dim_ground == 0")
        if self.mode == "ground_only" and self.dim_overhead != 0:
            raise ValueError("ground_only model must have dim_overhead == 0")
        if self.weights.shape != (self.num_classes, self.input_dim):
            raise ValueError(
                f"weights shape {self.weights.shape} inconsistent with mode {self.mode!r} "
                f"(expected ({self.num_classes}, {self.input_dim}))"
            )
        if not (np.isfinite(self.weights).all() and np.isfinite(self.bias).all()):
            raise ValueError("non-finite model parameters")

    @property
    def num_classes(self) -> int:
        return self.bias.shape[0]

    @property
    def input_dim(self) -> int:
        return self.dim_ground + self.dim_overhead

    def copy(self) -> "FusionModel":
        return FusionModel(self.mode, self.weights.copy(), self.bias.copy(), self.dim_ground, self.dim_overhead)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 50
    batch_size: int = 4
    lr0: float = 0.001
    lr_decay_factor: float = 10.0
    lr_decay_every: int = 10
    momentum: float = 0.9
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        for name in ("batch_size", "lr0", "lr_decay_factor", "lr_decay_every"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.momentum < 0:
            raise ValueError("momentum must be >= 0")

    def learning_rate(self, epoch: int) -> float:
        return self.lr0 / self.lr_decay_factor ** math.floor(epoch / self.lr_decay_every)


def create_model(mode: str, num_classes: int, dim_ground: int, dim_overhead: int, seed: int) -> FusionModel:
    """Fan-in scaled uniform weight init, zero bias, seeded for reproducibility."""
    if mode == "overhead_only":
        dim_ground = 0
    elif mode == "ground_only":
        dim_overhead = 0
    elif mode != "multimodal":
        raise ValueError(f"unknown mode {mode!r}")
    d_in = dim_ground + dim_overhead
    if d_in < 1 or num_classes < 2:
        raise ValueError(f"bad model dims (input_dim={d_in}, num_classes={num_classes})")
    rng = np.random.default_rng(seed)
    bound = 1.0 / math.sqrt(d_in)
    weights = rng.uniform(-bound, bound, size=(num_classes, d_in))
    return FusionModel(mode, weights, np.zeros(num_classes), dim_ground, dim_overhead)


def _as_vector(value, dim: int, what: str) -> np.ndarray:
    if isinstance(value, AggregatedFeature):
        value = value.values
    vec = np.asarray(value, dtype=np.float64).reshape(-1)
    if vec.shape[0] != dim:
        raise ValueError(f"{what} dim {vec.shape[0]} != expected {dim}")
    return vec


def assemble_input(model: FusionModel, overhead=None, ground=None) -> np.ndarray:
    """Build the head's input vector for the model's mode.

    Multimodal inputs are the concatenation [ground, overhead].
    """
    if model.mode == "overhead_only":
        if overhead is None:
            raise ValueError("overhead_only model requires an overhead feature")
        return _as_vector(overhead, model.dim_overhead, "overhead")
    if model.mode == "ground_only":
        if ground is None:
            raise ValueError("ground_only model requires a ground feature")
        return _as_vector(ground, model.dim_ground, "ground")
    if overhead is None or ground is None:
        raise ValueError("multimodal model requires both modalities")
    return np.concatenate(
        [_as_vector(ground, model.dim_ground, "ground"), _as_vector(overhead, model.dim_overhead, "overhead")]
    )


def forward(model: FusionModel, overhead=None, ground=None) -> np.ndarray:
    """Raw class scores (no softmax)."""
    return forward_batch(model, assemble_input(model, overhead, ground)[None, :])[0]


def forward_batch(model: FusionModel, inputs: np.ndarray) -> np.ndarray:
    return inputs @ model.weights.T + model.bias


def softmax(scores: np.ndarray) -> np.ndarray:
    """Row-wise stable softmax; accepts a single score vector or a batch."""
    scores = np.asarray(scores, dtype=np.float64)
    shifted = scores - scores.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def cross_entropy_loss(scores_batch: np.ndarray, labels_batch) -> float:
    """Mean over the batch of -score_true + logsumexp(scores), max-stabilized."""
    scores = np.atleast_2d(np.asarray(scores_batch, dtype=np.float64))
    labels = np.asarray(labels_batch, dtype=np.int64).reshape(-1)
    if scores.shape[0] == 0:
        raise ValueError("empty batch")
    if scores.shape[0] != labels.shape[0]:
        raise ValueError(f"batch size mismatch: {scores.shape[0]} scores vs {labels.shape[0]} labels")
    if labels.min() < 0 or labels.max() >= scores.shape[1]:
        raise ValueError("label out of range")
    if not np.isfinite(scores).all():
        raise ValueError("non-finite scores")
    m = scores.max(axis=1)
    lse = m + np.log(np.exp(scores - m[:, None]).sum(axis=1))
    return float(np.mean(lse - scores[np.arange(len(labels)), labels]))


def loss_gradients(model: FusionModel, inputs: np.ndarray, labels: np.ndarray):
    """Analytic gradient of the mean cross-entropy w.r.t. weights and bias."""
    scores = forward_batch(model, inputs)
    probs = softmax(scores)
    probs[np.arange(len(labels)), labels] -= 1.0
    probs /= len(labels)
    return probs.T @ inputs, probs.sum(axis=0)


def predict(model: FusionModel, overhead=None, ground=None):
    """Return (class index, softmax probabilities); argmax ties -> lowest index."""
    probs = softmax(forward(model, overhead, ground))
    return int(np.argmax(probs)), probs


def collect_inputs(model_mode: str, records: list[UrbanObjectRecord], pooling: str = "avg"):
    """Stack head inputs and labels for the records usable under ``model_mode``.

    Records without ground views are skipped for ground/multimodal modes;
    their substitution is a prediction-time concern, not a training one.
    """
    inputs, labels, ids = [], [], []
    for rec in records:
        if model_mode == "overhead_only":
            x = np.asarray(rec.overhead, dtype=np.float64)
        else:
            if rec.n_views == 0:
                continue
            g = aggregate(rec.ground_views, pooling).values
            if model_mode == "ground_only":
                x = g
            else:
                x = np.concatenate([g, np.asarray(rec.overhead, dtype=np.float64)])
        inputs.append(x)
        labels.append(rec.label)
        ids.append(rec.object_id)
    if not inputs:
        raise ValueError(f"no usable objects for mode {model_mode!r}")
    return np.asarray(inputs), np.asarray(labels, dtype=np.int64), ids


def train(
    model: FusionModel,
    manifest: DatasetManifest,
    split: SplitAssignment,
    config: TrainConfig,
    pooling: str = "avg",
):
    """SGD with momentum on the train split; returns (model, per-epoch loss trace).

    The update is v <- momentum*v - lr*grad; w <- w + v, with the learning
    rate divided by ``lr_decay_factor`` every ``lr_decay_every`` epochs. The
    shuffle order and therefore the final weights are fully determined by
    ``config.seed``. The last partial batch is processed, not dropped.
    """
    train_records, _ = split.partition(manifest)
    inputs, labels, _ = collect_inputs(model.mode, train_records, pooling)
    rng = np.random.default_rng(config.seed)
    vel_w = np.zeros_like(model.weights)
    vel_b = np.zeros_like(model.bias)
    n = inputs.shape[0]
    trace: list[float] = []
    for epoch in range(config.epochs):
        lr = config.learning_rate(epoch)
        order = rng.permutation(n)
        epoch_loss = 0.0
        for start in range(0, n, config.batch_size):
            idx = order[start : start + config.batch_size]
            xb, yb = inputs[idx], labels[idx]
            scores = forward_batch(model, xb)
            epoch_loss += cross_entropy_loss(scores, yb) * len(idx)
            grad_w, grad_b = loss_gradients(model, xb, yb)
            vel_w = config.momentum * vel_w - lr * grad_w
            vel_b = config.momentum * vel_b - lr * grad_b
            model.weights += vel_w
            model.bias += vel_b
        trace.append(epoch_loss / n)
        if not math.isfinite(trace[-1]):
            raise ValueError(f"training diverged at epoch {epoch} (loss={trace[-1]})")
    return model, trace


_MODE_CODES = {mode: float(i) for i, mode in enumerate(MODES)}


def save_checkpoint(model: FusionModel, path) -> None:
    write_arrays(
        path,
        {
            "mode_code": np.array([_MODE_CODES[model.mode]]),
            "num_classes": np.array([float(model.num_classes)]),
            "dim_ground": np.array([float(model.dim_ground)]),
            "dim_overhead": np.array([float(model.dim_overhead)]),
            "weights": model.weights,
            "bias": model.bias,
        },
    )


def load_checkpoint(path) -> FusionModel:
    arrays = read_arrays(path)
    try:
        code = int(arrays["mode_code"][0])
        mode = MODES[code]
        num_classes = int(arrays["num_classes"][0])
        dim_ground = int(arrays["dim_ground"][0])
        dim_overhead = int(arrays["dim_overhead"][0])
        weights = arrays["weights"]
        bias = arrays["bias"]
    except (KeyError, IndexError) as exc:
        raise ContainerError(f"{path}: not a fusion checkpoint ({exc})") from exc
    if weights.shape != (num_classes, dim_ground + dim_overhead) or bias.shape != (num_classes,):
        raise ContainerError(
            f"{path}: array shapes {weights.shape}/{bias.shape} inconsistent with "
            f"declared mode {mode!r} and dims ({dim_ground}, {dim_overhead})"
        )
    return FusionModel(mode, weights, bias, dim_ground, dim_overhead)
