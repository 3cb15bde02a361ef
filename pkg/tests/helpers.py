"""Shared test utilities: finite-difference gradients and small builders."""
from __future__ import annotations

import numpy as np

from guidance_learn import nn


def fd_gradients(params: nn.ModelParams, loss_fn, step: float = 1e-5) -> nn.Gradients:
    """Central finite differences of loss_fn over every weight and bias."""
    grads_w = [np.zeros_like(W) for W in params.weights]
    grads_b = [np.zeros_like(b) for b in params.biases]
    for arrays, grads in ((params.weights, grads_w), (params.biases, grads_b)):
        for arr, out in zip(arrays, grads):
            it = np.nditer(arr, flags=["multi_index"])
            for _ in it:
                i = it.multi_index
                orig = arr[i]
                arr[i] = orig + step
                plus = loss_fn(params)
                arr[i] = orig - step
                minus = loss_fn(params)
                arr[i] = orig
                out[i] = (plus - minus) / (2.0 * step)
    return nn.Gradients(weights=grads_w, biases=grads_b)


def max_rel_error(analytic: nn.Gradients, numeric: nn.Gradients, floor: float = 1e-3) -> float:
    """Worst relative disagreement; the floor keeps FD noise on near-zero
    entries from dominating."""
    worst = 0.0
    for a_list, n_list in ((analytic.weights, numeric.weights),
                           (analytic.biases, numeric.biases)):
        for a, n in zip(a_list, n_list):
            denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
            worst = max(worst, float((np.abs(a - n) / denom).max()))
    return worst


def random_net(rng: np.random.Generator, max_dim: int = 8, max_classes: int = 5) -> nn.ModelParams:
    d = int(rng.integers(2, max_dim + 1))
    C = int(rng.integers(2, max_classes + 1))
    hidden = int(rng.integers(2, 7))
    return nn.init_params([d, hidden, C], seed=int(rng.integers(0, 2**31)))


def random_probs(rng: np.random.Generator, shape) -> np.ndarray:
    raw = rng.random(shape) + 1e-3
    return raw / raw.sum(axis=-1, keepdims=True)


def params_bytes(params: nn.ModelParams) -> bytes:
    return b"".join([W.tobytes() for W in params.weights] +
                    [b.tobytes() for b in params.biases])
