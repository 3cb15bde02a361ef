"""Frozen-teacher soft targets, fusion with noisy labels, multi-task loss.

The teacher is run once over the noisy subset and its temperature-softened
predictions are cached. During student training each noisy sample is
supervised by the fusion g = (p + beta*y) / (1 + beta) of its cached soft
target p and its (possibly wrong) one-hot label y, via a KL objective
evaluated at the same temperature; clean samples get plain cross-entropy.
"""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from . import nn
from .data import Dataset, NOISY_TRAIN
from .errors import ConsistencyError, FormatError, InputError, ParameterError, ShapeError

CACHE_FORMAT_VERSION = 1


@dataclass
class GuidanceCache:
    """Teacher soft targets keyed by dataset sample index, plus provenance."""

    targets: dict[int, np.ndarray]
    temperature: float
    teacher_fingerprint: str

    def __len__(self) -> int:
        return len(self.targets)

    def lookup(self, index: int) -> np.ndarray:
        try:
            return self.targets[int(index)]
        except KeyError:
            raise ConsistencyError(
                f"guidance cache has no entry for sample index {int(index)}"
            ) from None


def compute_teacher_soft_targets(
    teacher: nn.ModelParams, dataset: Dataset, temperature: float
) -> GuidanceCache:
    """softmax_t(forward(teacher, x_i), T) for every noisy-train sample."""
    if not (temperature > 0):
        raise ParameterError(f"temperature must be > 0, got {temperature}")
    noisy_idx = dataset.indices(NOISY_TRAIN)
    if noisy_idx.size == 0:
        raise InputError("noisy subset is empty; nothing to cache")
    if dataset.features.shape[1] != teacher.layer_dims[0]:
        raise ShapeError(
            f"teacher expects input dim {teacher.layer_dims[0]}, dataset has "
            f"{dataset.features.shape[1]} features"
        )
    probs = nn.softmax_t(nn.forward(teacher, dataset.features[noisy_idx]), temperature)
    return GuidanceCache(
        targets={int(i): probs[row] for row, i in enumerate(noisy_idx)},
        temperature=float(temperature),
        teacher_fingerprint=nn.fingerprint(teacher),
    )


def fuse_guidance(p: np.ndarray, y: np.ndarray, beta: float) -> np.ndarray:
    """g = (p + beta*y) / (1 + beta) for a soft target p and one-hot y."""
    if beta < 0:
        raise ParameterError(f"beta must be >= 0, got {beta}")
    p = np.asarray(p, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if p.shape != y.shape:
        raise ShapeError(f"p shape {p.shape} != y shape {y.shape}")
    _check_prob_vector(p, "p")
    if not (np.isin(y, (0.0, 1.0)).all() and y.sum() == 1.0):
        raise InputError("y must be one-hot")
    return (p + beta * y) / (1.0 + beta)


def _check_prob_vector(p: np.ndarray, name: str) -> None:
    if (p < 0).any() or abs(float(p.sum()) - 1.0) > 1e-9:
        raise InputError(f"{name} is not a probability vector (sum {float(p.sum())})")


def total_loss(loss_guidance: float, loss_clean: float, alpha: float, temperature: float) -> float:
    """alpha * T^2 * L_g + L_c; T^2 offsets the softening's gradient shrink."""
    if alpha < 0:
        raise ParameterError(f"alpha must be >= 0, got {alpha}")
    if not (temperature > 0):
        raise ParameterError(f"temperature must be > 0, got {temperature}")
    return alpha * temperature**2 * loss_guidance + loss_clean


def guidance_targets(
    cache: GuidanceCache,
    indices: np.ndarray,
    noisy_labels: np.ndarray,
    beta: float,
    num_classes: int,
) -> np.ndarray:
    """Fused guidance matrix [B, C] for a noisy batch given by dataset indices."""
    if beta < 0:
        raise ParameterError(f"beta must be >= 0, got {beta}")
    soft = np.stack([cache.lookup(i) for i in indices])
    y = nn.one_hot(np.asarray(noisy_labels), num_classes)
    return (soft + beta * y) / (1.0 + beta)


def student_batch_loss(
    student: nn.ModelParams,
    noisy_batch: np.ndarray,
    noisy_labels: np.ndarray,
    noisy_indices: np.ndarray,
    cache: GuidanceCache,
    clean_batch: np.ndarray,
    clean_labels: np.ndarray,
    *,
    alpha: float,
    beta: float,
    temperature: float,
) -> tuple[float, float, float]:
    """(L_total, L_g, L_c) for one paired batch.

    The KL branch softens the student's own logits with the cache's
    temperature; the clean branch uses plain softmax.
    """
    if cache.temperature != temperature:
        raise ConsistencyError(
            f"cache temperature {cache.temperature} != configured {temperature}"
        )
    C = student.num_classes
    g = guidance_targets(cache, noisy_indices, noisy_labels, beta, C)
    q = nn.softmax_t(nn.forward(student, noisy_batch), temperature)
    loss_g = nn.kl_div(g, q)
    p = nn.softmax_t(nn.forward(student, clean_batch), 1.0)
    loss_c = nn.cross_entropy(p, nn.one_hot(np.asarray(clean_labels), C))
    return total_loss(loss_g, loss_c, alpha, temperature), loss_g, loss_c


def cache_dict(cache: GuidanceCache) -> dict:
    return {
        "format_version": CACHE_FORMAT_VERSION,
        "temperature": cache.temperature,
        "teacher_fingerprint": cache.teacher_fingerprint,
        "targets": {str(i): v.tolist() for i, v in cache.targets.items()},
    }


def save_cache(cache: GuidanceCache, path) -> None:
    from .serialize import canonical_json

    with open(path, "wb") as fh:
        fh.write(canonical_json(cache_dict(cache)).encode("utf-8"))


def load_cache(path, *, expected_fingerprint: str | None = None,
               expected_temperature: float | None = None) -> GuidanceCache:
    """Load a cache sidecar, failing loudly on provenance mismatch."""
    with open(path, "r", encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise FormatError(f"{path}: not valid JSON: {exc}") from exc
    if doc.get("format_version") != CACHE_FORMAT_VERSION:
        raise FormatError(
            f"{path}: unsupported cache format version {doc.get('format_version')!r}"
        )
    cache = GuidanceCache(
        targets={int(k): np.asarray(v, dtype=np.float64) for k, v in doc["targets"].items()},
        temperature=float(doc["temperature"]),
        teacher_fingerprint=str(doc["teacher_fingerprint"]),
    )
    if expected_fingerprint is not None and cache.teacher_fingerprint != expected_fingerprint:
        raise ConsistencyError(
            f"{path}: cache was built from teacher {cache.teacher_fingerprint[:12]}..., "
            f"expected {expected_fingerprint[:12]}..."
        )
    if expected_temperature is not None and cache.temperature != expected_temperature:
        raise ConsistencyError(
            f"{path}: cache temperature {cache.temperature} != configured "
            f"{expected_temperature}"
        )
    return cache
