"""Metrics and single-axis hyperparameter sweeps over the full pipeline."""
from __future__ import annotations

import concurrent.futures
from dataclasses import dataclass, replace

import numpy as np

from . import nn
from .data import DataRecipe, Dataset
from .errors import InputError, ParameterError
from .pipeline import TrainConfig, finetune_clean, train_student, train_teacher

SWEEP_AXES = ("alpha", "beta", "T", "clean_fraction", "noise_rate")
_STAGE2_AXES = ("alpha", "beta", "T")


def _eval_labels(dataset: Dataset) -> np.ndarray:
    return dataset.true_labels if dataset.true_labels is not None else dataset.labels


def accuracy(params: nn.ModelParams, dataset: Dataset, tag: str) -> float:
    """Fraction of split samples whose argmax logit hits the true label.

    np.argmax breaks ties toward the lowest class index.
    """
    idx = dataset.indices(tag)
    if idx.size == 0:
        raise InputError(f"split {tag!r} is empty")
    preds = np.argmax(nn.forward(params, dataset.features[idx]), axis=1)
    return float((preds == _eval_labels(dataset)[idx]).mean())


def confusion_matrix(params: nn.ModelParams, dataset: Dataset, tag: str) -> np.ndarray:
    """Counts indexed [true, predicted]; trace/N equals accuracy."""
    idx = dataset.indices(tag)
    if idx.size == 0:
        raise InputError(f"split {tag!r} is empty")
    C = dataset.num_classes
    preds = np.argmax(nn.forward(params, dataset.features[idx]), axis=1)
    truth = _eval_labels(dataset)[idx]
    flat = truth * C + preds
    return np.bincount(flat, minlength=C * C).reshape(C, C)


@dataclass(frozen=True)
class SweepGrid:
    """One axis, its values, the base config, and the replicate seeds."""

    axis: str
    values: tuple[float, ...]
    base_config: TrainConfig
    seeds: tuple[int, ...]

    def __post_init__(self) -> None:
        if self.axis not in SWEEP_AXES:
            raise ParameterError(f"unknown sweep axis {self.axis!r}; expected one of {SWEEP_AXES}")
        if not self.values:
            raise ParameterError("sweep needs at least one axis value")
        if not all(np.isfinite(v) for v in self.values):
            raise ParameterError(f"sweep values must be finite: {self.values}")
        if not self.seeds:
            raise ParameterError("sweep needs at least one seed")
        for v in self.values:
            self._validate_value(v)

    def _validate_value(self, value: float) -> None:
        if self.axis in ("alpha", "beta") and value < 0:
            raise ParameterError(f"{self.axis} must be >= 0, got {value}")
        if self.axis == "T" and not (value > 0):
            raise ParameterError(f"T must be > 0, got {value}")
        if self.axis in ("clean_fraction", "noise_rate") and not (0.0 <= value < 1.0):
            raise ParameterError(f"{self.axis} must be in [0, 1), got {value}")


@dataclass(frozen=True)
class SweepRow:
    axis: str
    value: float
    seed: int
    acc_teacher: float
    acc_student: float
    acc_finetuned: float


@dataclass
class SweepResult:
    axis: str
    rows: list[SweepRow]

    def aggregates(self) -> list[dict]:
        """Per-value mean/min/max for each recorded accuracy."""
        out = []
        seen: list[float] = []
        for row in self.rows:
            if row.value not in seen:
                seen.append(row.value)
        for value in seen:
            cells = [r for r in self.rows if r.value == value]
            entry: dict = {"value": value}
            for metric in ("acc_teacher", "acc_student", "acc_finetuned"):
                vals = [getattr(r, metric) for r in cells]
                entry[metric] = {
                    "mean": float(np.mean(vals)),
                    "min": float(min(vals)),
                    "max": float(max(vals)),
                }
            out.append(entry)
        return out

    def to_csv_text(self) -> str:
        lines = ["axis,value,seed,acc_teacher,acc_student,acc_finetuned"]
        for r in self.rows:
            lines.append(
                f"{r.axis},{r.value!r},{r.seed},{r.acc_teacher!r},"
                f"{r.acc_student!r},{r.acc_finetuned!r}"
            )
        return "\n".join(lines) + "\n"

    def to_json_dict(self) -> dict:
        return {
            "axis": self.axis,
            "rows": [
                {
                    "value": r.value,
                    "seed": r.seed,
                    "acc_teacher": r.acc_teacher,
                    "acc_student": r.acc_student,
                    "acc_finetuned": r.acc_finetuned,
                }
                for r in self.rows
            ],
            "aggregates": self.aggregates(),
        }

    def to_plotdata_text(self) -> str:
        """Student accuracy per axis value: `x mean min max` rows."""
        lines = ["# x mean min max"]
        for entry in self.aggregates():
            s = entry["acc_student"]
            lines.append(f"{entry['value']!r} {s['mean']!r} {s['min']!r} {s['max']!r}")
        return "\n".join(lines) + "\n"


def _cell_config(grid: SweepGrid, value: float, seed: int) -> TrainConfig:
    cfg = replace(grid.base_config, seed=seed)
    if grid.axis == "alpha":
        return replace(cfg, alpha=value)
    if grid.axis == "beta":
        return replace(cfg, beta=value)
    if grid.axis == "T":
        return replace(cfg, temperature=value)
    return cfg


def _cell_recipe(grid: SweepGrid, recipe: DataRecipe, value: float) -> DataRecipe:
    if grid.axis == "clean_fraction":
        return replace(recipe, clean_fraction=value)
    if grid.axis == "noise_rate":
        return replace(recipe, noise_rate=value)
    return recipe


def _run_cell(dataset: Dataset, teacher, config: TrainConfig) -> tuple[float, float, float]:
    student, _ = train_student(teacher, dataset, config)
    finetuned, _ = finetune_clean(student, dataset, config)
    return (
        accuracy(teacher, dataset, "test"),
        accuracy(student, dataset, "test"),
        accuracy(finetuned, dataset, "test"),
    )


def sweep(grid: SweepGrid, recipe: DataRecipe, max_workers: int = 1) -> SweepResult:
    """Run the full two-stage pipeline for every (value, seed) cell.

    Stage-2-only axes (alpha, beta, T) share one teacher per seed; axes that
    change the data (clean_fraction, noise_rate) retrain it per cell. Cells
    are independent, so max_workers > 1 only changes wall time.
    """
    if grid.axis == "noise_rate" and recipe.noise_model == "none":
        raise ParameterError("noise_rate sweep needs a recipe with a noise model")

    results: dict[tuple[int, int], tuple[float, float, float]] = {}

    def stage2_task(seed: int) -> dict[tuple[int, int], tuple[float, float, float]]:
        dataset, _ = recipe.build(seed)
        teacher, _ = train_teacher(dataset, replace(grid.base_config, seed=seed))
        out = {}
        for vi, value in enumerate(grid.values):
            out[(vi, seed)] = _run_cell(dataset, teacher, _cell_config(grid, value, seed))
        return out

    def stage1_task(vi: int, value: float, seed: int):
        dataset, _ = _cell_recipe(grid, recipe, value).build(seed)
        config = _cell_config(grid, value, seed)
        teacher, _ = train_teacher(dataset, config)
        return {(vi, seed): _run_cell(dataset, teacher, config)}

    if grid.axis in _STAGE2_AXES:
        tasks = [(stage2_task, (seed,)) for seed in grid.seeds]
    else:
        tasks = [(stage1_task, (vi, value, seed))
                 for vi, value in enumerate(grid.values) for seed in grid.seeds]

    if max_workers > 1:
        with concurrent.futures.ThreadPoolExecutor(max_workers=max_workers) as pool:
            for part in pool.map(lambda t: t[0](*t[1]), tasks):
                results.update(part)
    else:
        for fn, args in tasks:
            results.update(fn(*args))

    rows = [
        SweepRow(axis=grid.axis, value=value, seed=seed,
                 acc_teacher=results[(vi, seed)][0],
                 acc_student=results[(vi, seed)][1],
                 acc_finetuned=results[(vi, seed)][2])
        for vi, value in enumerate(grid.values)
        for seed in grid.seeds
    ]
    return SweepResult(axis=grid.axis, rows=rows)
