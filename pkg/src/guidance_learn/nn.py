"""Dense ReLU networks with the losses and optimizer the training recipes need.

Everything operates on float64 numpy arrays. Networks are lists of
(weight, bias) pairs; hidden layers use ReLU, the last layer is linear
and produces logits. Losses come in per-sample (1-D) and batch (2-D,
mean over rows) variants.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass

import numpy as np

from .errors import FormatError, InputError, ParameterError, ShapeError
from .serialize import canonical_json

PROB_CLAMP = 1e-12
CHECKPOINT_FORMAT_VERSION = 1

# Sub-stream tags for seed derivation; every consumer of randomness in the
# package draws from default_rng(SeedSequence([seed, *tags])) so streams
# never alias across purposes.
STREAM_INIT = 1


@dataclass
class ModelParams:
    """Weights/biases of a fully connected ReLU network.

    weights[k] has shape [out_k, in_k]; consecutive layers chain and the
    final out dim is the class count.
    """

    weights: list[np.ndarray]
    biases: list[np.ndarray]
    activation: str = "relu"
    rng_seed: int = 0

    def __post_init__(self) -> None:
        if self.activation != "relu":
            raise ParameterError(f"unsupported activation {self.activation!r}")
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ShapeError("weights and biases must be nonempty parallel lists")
        for k, (W, b) in enumerate(zip(self.weights, self.biases)):
            if W.ndim != 2 or b.ndim != 1 or W.shape[0] != b.shape[0]:
                raise ShapeError(f"layer {k}: weight {W.shape} / bias {b.shape} mismatch")
            if k > 0 and W.shape[1] != self.weights[k - 1].shape[0]:
                raise ShapeError(
                    f"layer {k}: input dim {W.shape[1]} != previous output dim "
                    f"{self.weights[k - 1].shape[0]}"
                )
            if not (np.isfinite(W).all() and np.isfinite(b).all()):
                raise InputError(f"layer {k}: non-finite parameter entries")

    @property
    def layer_dims(self) -> list[int]:
        return [self.weights[0].shape[1]] + [W.shape[0] for W in self.weights]

    @property
    def num_classes(self) -> int:
        return self.weights[-1].shape[0]

    def copy(self) -> "ModelParams":
        return ModelParams(
            weights=[W.copy() for W in self.weights],
            biases=[b.copy() for b in self.biases],
            activation=self.activation,
            rng_seed=self.rng_seed,
        )


@dataclass
class Gradients:
    """Gradient arrays mirroring a ModelParams layout."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]


@dataclass
class OptState:
    """SGD momentum buffers plus step bookkeeping."""

    velocity_w: list[np.ndarray]
    velocity_b: list[np.ndarray]
    step: int = 0
    lr: float = 0.0

    @classmethod
    def zeros(cls, params: ModelParams) -> "OptState":
        return cls(
            velocity_w=[np.zeros_like(W) for W in params.weights],
            velocity_b=[np.zeros_like(b) for b in params.biases],
        )


@dataclass(frozen=True)
class CrossEntropySpec:
    """Mean cross-entropy against fixed target distributions [B, C]."""

    targets: np.ndarray


@dataclass(frozen=True)
class KLDivergenceSpec:
    """Mean KL(targets || softmax_t(logits, temperature)) over the batch."""

    targets: np.ndarray
    temperature: float


@dataclass(frozen=True)
class GuidanceTotalSpec:
    """Combined loss: alpha * T^2 * KL branch (primary batch) + CE branch.

    The primary batch passed to `backward` is the noisy one; the clean
    batch and its targets ride along here. `noisy_targets` are the fused
    guidance distributions, treated as constants.
    """

    noisy_targets: np.ndarray
    clean_batch: np.ndarray
    clean_targets: np.ndarray
    alpha: float
    temperature: float


LossSpec = CrossEntropySpec | KLDivergenceSpec | GuidanceTotalSpec


def init_params(layer_dims: list[int], seed: int) -> ModelParams:
    """Scaled-uniform init: W ~ U(+-sqrt(6/(fan_in+fan_out))), biases zero."""
    if len(layer_dims) < 2:
        raise ParameterError("need at least input and output dims")
    if any(d < 1 for d in layer_dims):
        raise ParameterError(f"layer dims must be positive, got {layer_dims}")
    rng = np.random.default_rng(np.random.SeedSequence([seed, STREAM_INIT]))
    weights, biases = [], []
    for fan_in, fan_out in zip(layer_dims[:-1], layer_dims[1:]):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-limit, limit, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return ModelParams(weights=weights, biases=biases, rng_seed=seed)


def _as_batch(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    return x[None, :] if x.ndim == 1 else x


def _forward_cached(params: ModelParams, batch: np.ndarray):
    """Forward pass keeping pre-activations and activations for backprop."""
    X = _as_batch(batch)
    if X.ndim != 2:
        raise ShapeError(f"batch must be 1-D or 2-D, got ndim={X.ndim}")
    if X.shape[1] != params.weights[0].shape[1]:
        raise ShapeError(
            f"layer 0 expects input dim {params.weights[0].shape[1]}, "
            f"batch has {X.shape[1]} columns"
        )
    pre, acts = [], [X]
    a = X
    last = len(params.weights) - 1
    for k, (W, b) in enumerate(zip(params.weights, params.biases)):
        z = a @ W.T + b
        pre.append(z)
        a = np.maximum(z, 0.0) if k < last else z
        acts.append(a)
    return pre, acts


def forward(params: ModelParams, batch: np.ndarray) -> np.ndarray:
    """Logits [B, C] for a batch [B, d] (a single 1-D sample gives [C])."""
    squeeze = np.asarray(batch).ndim == 1
    _, acts = _forward_cached(params, batch)
    out = acts[-1]
    return out[0] if squeeze else out


def softmax_t(logits: np.ndarray, temperature: float = 1.0) -> np.ndarray:
    """Temperature softmax exp(z_i/T) / sum_j exp(z_j/T), max-subtracted."""
    if not (isinstance(temperature, (int, float, np.floating)) and temperature > 0):
        raise ParameterError(f"temperature must be > 0, got {temperature!r}")
    z = np.asarray(logits, dtype=np.float64)
    if not np.isfinite(z).all():
        raise InputError("logits contain non-finite entries")
    z = z / float(temperature)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def cross_entropy(pred: np.ndarray, target: np.ndarray) -> float:
    """-sum_i target_i * log(pred_i); mean over rows for 2-D inputs."""
    p = np.asarray(pred, dtype=np.float64)
    t = np.asarray(target, dtype=np.float64)
    if p.shape != t.shape:
        raise ShapeError(f"pred shape {p.shape} != target shape {t.shape}")
    per_sample = -(t * np.log(np.maximum(p, PROB_CLAMP))).sum(axis=-1)
    return float(per_sample if per_sample.ndim == 0 else per_sample.mean())


def kl_div(target: np.ndarray, pred: np.ndarray) -> float:
    """sum_i target_i * log(target_i / pred_i); mean over rows for 2-D.

    Zero target entries contribute zero; pred is clamped inside the log.
    """
    g = np.asarray(target, dtype=np.float64)
    q = np.asarray(pred, dtype=np.float64)
    if g.shape != q.shape:
        raise ShapeError(f"target shape {g.shape} != pred shape {q.shape}")
    ratio = np.where(g > 0.0, g, 1.0) / np.maximum(q, PROB_CLAMP)
    per_sample = np.where(g > 0.0, g * np.log(ratio), 0.0).sum(axis=-1)
    value = float(per_sample if per_sample.ndim == 0 else per_sample.mean())
    return max(value, 0.0)


def one_hot(labels: np.ndarray, num_classes: int) -> np.ndarray:
    labels = np.asarray(labels)
    out = np.zeros((labels.shape[0], num_classes))
    out[np.arange(labels.shape[0]), labels] = 1.0
    return out


def _backprop(params: ModelParams, pre, acts, dlogits: np.ndarray) -> Gradients:
    grads_w = [np.empty(0)] * len(params.weights)
    grads_b = [np.empty(0)] * len(params.weights)
    delta = dlogits
    for k in range(len(params.weights) - 1, -1, -1):
        grads_w[k] = delta.T @ acts[k]
        grads_b[k] = delta.sum(axis=0)
        if k > 0:
            delta = (delta @ params.weights[k]) * (pre[k - 1] > 0.0)
    return Gradients(weights=grads_w, biases=grads_b)


def _accumulate(into: Gradients, other: Gradients) -> Gradients:
    return Gradients(
        weights=[a + b for a, b in zip(into.weights, other.weights)],
        biases=[a + b for a, b in zip(into.biases, other.biases)],
    )


def _check_targets(targets: np.ndarray, batch_rows: int, num_classes: int, what: str):
    t = np.asarray(targets, dtype=np.float64)
    if t.shape != (batch_rows, num_classes):
        raise ShapeError(
            f"{what} targets shape {t.shape} != ({batch_rows}, {num_classes})"
        )
    return t


def backward(params: ModelParams, batch: np.ndarray, loss_spec: LossSpec) -> Gradients:
    """Analytic gradients of the mean batch loss w.r.t. every weight and bias."""
    X = _as_batch(batch)
    C = params.num_classes
    if isinstance(loss_spec, CrossEntropySpec):
        t = _check_targets(loss_spec.targets, X.shape[0], C, "cross-entropy")
        pre, acts = _forward_cached(params, X)
        probs = softmax_t(acts[-1], 1.0)
        return _backprop(params, pre, acts, (probs - t) / X.shape[0])
    if isinstance(loss_spec, KLDivergenceSpec):
        T = float(loss_spec.temperature)
        if T <= 0:
            raise ParameterError(f"temperature must be > 0, got {T}")
        g = _check_targets(loss_spec.targets, X.shape[0], C, "KL")
        pre, acts = _forward_cached(params, X)
        q = softmax_t(acts[-1], T)
        return _backprop(params, pre, acts, (q - g) / (T * X.shape[0]))
    if isinstance(loss_spec, GuidanceTotalSpec):
        alpha = float(loss_spec.alpha)
        T = float(loss_spec.temperature)
        if alpha < 0:
            raise ParameterError(f"alpha must be >= 0, got {alpha}")
        if T <= 0:
            raise ParameterError(f"temperature must be > 0, got {T}")
        clean_grads = backward(
            params, loss_spec.clean_batch, CrossEntropySpec(loss_spec.clean_targets)
        )
        if alpha == 0.0:
            # Exact branch isolation: alpha = 0 must reproduce pure clean-CE
            # training bit for bit, so the noisy branch is skipped entirely.
            return clean_grads
        g = _check_targets(loss_spec.noisy_targets, X.shape[0], C, "guidance")
        pre, acts = _forward_cached(params, X)
        q = softmax_t(acts[-1], T)
        # d/dz [alpha * T^2 * mean KL] = alpha * T * (q - g) / B
        noisy_grads = _backprop(params, pre, acts, alpha * T * (q - g) / X.shape[0])
        return _accumulate(noisy_grads, clean_grads)
    raise ParameterError(f"unknown loss spec {type(loss_spec).__name__}")


def sgd_step(
    params: ModelParams,
    grads: Gradients,
    state: OptState,
    lr: float,
    momentum: float,
    weight_decay: float,
) -> tuple[ModelParams, OptState]:
    """v <- momentum*v + (grad + wd*param); param <- param - lr*v."""
    if len(grads.weights) != len(params.weights):
        raise ShapeError("gradient layer count != parameter layer count")
    new_w, new_b, vel_w, vel_b = [], [], [], []
    for W, b, gW, gb, vW, vb in zip(
        params.weights, params.biases, grads.weights, grads.biases,
        state.velocity_w, state.velocity_b,
    ):
        if gW.shape != W.shape or gb.shape != b.shape:
            raise ShapeError(f"gradient shape {gW.shape} != parameter shape {W.shape}")
        vW = momentum * vW + (gW + weight_decay * W)
        vb = momentum * vb + (gb + weight_decay * b)
        vel_w.append(vW)
        vel_b.append(vb)
        new_w.append(W - lr * vW)
        new_b.append(b - lr * vb)
    return (
        ModelParams(weights=new_w, biases=new_b, activation=params.activation,
                    rng_seed=params.rng_seed),
        OptState(velocity_w=vel_w, velocity_b=vel_b, step=state.step + 1, lr=float(lr)),
    )


def checkpoint_dict(params: ModelParams) -> dict:
    return {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "activation": params.activation,
        "layer_dims": params.layer_dims,
        "weights": [W.tolist() for W in params.weights],
        "biases": [b.tolist() for b in params.biases],
        "rng_seed": params.rng_seed,
    }


def checkpoint_bytes(params: ModelParams) -> bytes:
    return canonical_json(checkpoint_dict(params)).encode("utf-8")


def fingerprint(params: ModelParams) -> str:
    """sha256 of the canonical checkpoint serialization."""
    return hashlib.sha256(checkpoint_bytes(params)).hexdigest()


def save_checkpoint(params: ModelParams, path) -> None:
    with open(path, "wb") as fh:
        fh.write(checkpoint_bytes(params))


def load_checkpoint(path) -> ModelParams:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise FormatError(f"{path}: not valid JSON: {exc}") from exc
    version = doc.get("format_version")
    if version != CHECKPOINT_FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported checkpoint format version {version!r}")
    try:
        weights = [np.asarray(W, dtype=np.float64) for W in doc["weights"]]
        biases = [np.asarray(b, dtype=np.float64) for b in doc["biases"]]
        params = ModelParams(
            weights=weights, biases=biases,
            activation=doc["activation"], rng_seed=int(doc["rng_seed"]),
        )
    except KeyError as exc:
        raise FormatError(f"{path}: missing checkpoint field {exc}") from exc
    if params.layer_dims != list(doc["layer_dims"]):
        raise FormatError(
            f"{path}: declared layer_dims {doc['layer_dims']} != actual "
            f"{params.layer_dims}"
        )
    return params
