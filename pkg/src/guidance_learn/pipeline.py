"""Training recipes: stage-1 teacher, stage-2 guidance student, fine-tuning,
and the cross-comparable baseline variants.

All runs are driven by a TrainConfig and are bit-reproducible from
(dataset, config): every shuffle and init draws from seed-derived streams.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import guidance, nn
from .data import CLEAN_TRAIN, NOISY_TRAIN, TEST, Dataset, batch_indices, mixed_batch_iterator
from .errors import ConfigurationError, ParameterError, ShapeError

BASELINE_VARIANTS = ("noisy_only", "clean_only", "mixed", "guidance", "guidance_finetuned")

Schedule = tuple[tuple[int, float], ...]

# Transcribed two-stage schedules: base LRs divided by 10 at fixed epochs
# (teacher 10/15/20 of 25, student 5/8 of 11). Desk-scale blob experiments
# train fine at these values with the default architecture below.
DEFAULT_TEACHER_SCHEDULE: Schedule = ((0, 1e-3), (10, 1e-4), (15, 1e-5), (20, 1e-6))
DEFAULT_STUDENT_SCHEDULE: Schedule = ((0, 1e-4), (5, 1e-5), (8, 1e-6))


def _check_schedule(name: str, schedule: Schedule) -> None:
    if not schedule:
        raise ParameterError(f"{name} must have at least one (epoch, lr) entry")
    epochs = [e for e, _ in schedule]
    if epochs[0] != 0:
        raise ParameterError(f"{name} must start at epoch 0, got {epochs[0]}")
    if any(b <= a for a, b in zip(epochs, epochs[1:])):
        raise ParameterError(f"{name} epochs must be strictly increasing: {epochs}")
    if any(lr < 0 for _, lr in schedule):
        raise ParameterError(f"{name} has a negative learning rate")


def lr_at(schedule: Schedule, epoch: int) -> float:
    """Piecewise-constant: the last schedule entry with epoch <= `epoch`."""
    lr = schedule[0][1]
    for start, value in schedule:
        if start <= epoch:
            lr = value
    return float(lr)


@dataclass(frozen=True)
class TrainConfig:
    """All hyperparameters of a two-stage run."""

    alpha: float = 0.1
    beta: float = 0.3
    temperature: float = 5.0
    momentum: float = 0.9
    weight_decay: float = 1e-3
    batch_size: int = 64
    hidden_dims: tuple[int, ...] = (64,)
    seed: int = 0
    teacher_epochs: int = 25
    student_epochs: int = 11
    finetune_epochs: int = 5
    teacher_lr_schedule: Schedule = DEFAULT_TEACHER_SCHEDULE
    student_lr_schedule: Schedule = DEFAULT_STUDENT_SCHEDULE
    finetune_lr_schedule: Schedule | None = None

    def __post_init__(self) -> None:
        if self.alpha < 0:
            raise ParameterError(f"alpha must be >= 0, got {self.alpha}")
        if self.beta < 0:
            raise ParameterError(f"beta must be >= 0, got {self.beta}")
        if not (self.temperature > 0):
            raise ParameterError(f"temperature must be > 0, got {self.temperature}")
        if self.batch_size < 1:
            raise ParameterError(f"batch_size must be >= 1, got {self.batch_size}")
        if not (0 <= self.momentum < 1):
            raise ParameterError(f"momentum must be in [0, 1), got {self.momentum}")
        if self.weight_decay < 0:
            raise ParameterError(f"weight_decay must be >= 0, got {self.weight_decay}")
        if self.seed < 0:
            raise ParameterError(f"seed must be >= 0, got {self.seed}")
        for name, n in (("teacher_epochs", self.teacher_epochs),
                        ("student_epochs", self.student_epochs),
                        ("finetune_epochs", self.finetune_epochs)):
            if n < 0:
                raise ParameterError(f"{name} must be >= 0, got {n}")
        _check_schedule("teacher_lr_schedule", self.teacher_lr_schedule)
        _check_schedule("student_lr_schedule", self.student_lr_schedule)
        if self.finetune_lr_schedule is not None:
            _check_schedule("finetune_lr_schedule", self.finetune_lr_schedule)

    def effective_finetune_schedule(self) -> Schedule:
        """Fine-tuning default: the student's initial LR divided by 10, flat."""
        if self.finetune_lr_schedule is not None:
            return self.finetune_lr_schedule
        return ((0, self.student_lr_schedule[0][1] / 10.0),)

    def to_dict(self) -> dict:
        return {
            "alpha": self.alpha,
            "beta": self.beta,
            "temperature": self.temperature,
            "momentum": self.momentum,
            "weight_decay": self.weight_decay,
            "batch_size": self.batch_size,
            "hidden_dims": list(self.hidden_dims),
            "seed": self.seed,
            "teacher_epochs": self.teacher_epochs,
            "student_epochs": self.student_epochs,
            "finetune_epochs": self.finetune_epochs,
            "teacher_lr_schedule": [list(e) for e in self.teacher_lr_schedule],
            "student_lr_schedule": [list(e) for e in self.student_lr_schedule],
            "finetune_lr_schedule": None if self.finetune_lr_schedule is None
            else [list(e) for e in self.finetune_lr_schedule],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "TrainConfig":
        def sched(key, default):
            raw = doc.get(key, default)
            if raw is None:
                return None
            return tuple((int(e), float(lr)) for e, lr in raw)

        defaults = cls()
        return cls(
            alpha=float(doc.get("alpha", defaults.alpha)),
            beta=float(doc.get("beta", defaults.beta)),
            temperature=float(doc.get("temperature", defaults.temperature)),
            momentum=float(doc.get("momentum", defaults.momentum)),
            weight_decay=float(doc.get("weight_decay", defaults.weight_decay)),
            batch_size=int(doc.get("batch_size", defaults.batch_size)),
            hidden_dims=tuple(int(h) for h in doc.get("hidden_dims", defaults.hidden_dims)),
            seed=int(doc.get("seed", defaults.seed)),
            teacher_epochs=int(doc.get("teacher_epochs", defaults.teacher_epochs)),
            student_epochs=int(doc.get("student_epochs", defaults.student_epochs)),
            finetune_epochs=int(doc.get("finetune_epochs", defaults.finetune_epochs)),
            teacher_lr_schedule=sched("teacher_lr_schedule", defaults.teacher_lr_schedule),
            student_lr_schedule=sched("student_lr_schedule", defaults.student_lr_schedule),
            finetune_lr_schedule=sched("finetune_lr_schedule", None),
        )


@dataclass
class EpochRecord:
    epoch: int
    lr: float
    loss_total: float
    loss_guidance: float
    loss_clean: float
    test_accuracy: float | None


@dataclass
class RunReport:
    """Per-epoch training record plus final test accuracy, serializable.

    wall_time_sec is informational only and deliberately left out of the
    JSON form so reruns with the same seed serialize byte-identically.
    """

    stage: str
    config: dict
    epochs: list[EpochRecord] = field(default_factory=list)
    final_test_accuracy: float | None = None
    checkpoint_fingerprints: dict[str, str] = field(default_factory=dict)
    variant: str | None = None
    wall_time_sec: float = 0.0

    def to_json_dict(self) -> dict:
        return {
            "stage": self.stage,
            "variant": self.variant,
            "config": self.config,
            "epochs": [
                {
                    "epoch": r.epoch,
                    "lr": r.lr,
                    "loss_total": r.loss_total,
                    "loss_guidance": r.loss_guidance,
                    "loss_clean": r.loss_clean,
                    "test_accuracy": r.test_accuracy,
                }
                for r in self.epochs
            ],
            "final_test_accuracy": self.final_test_accuracy,
            "checkpoint_fingerprints": self.checkpoint_fingerprints,
        }


def _test_accuracy(params: nn.ModelParams, dataset: Dataset) -> float | None:
    from .evaluation import accuracy

    if dataset.indices(TEST).size == 0:
        return None
    return accuracy(params, dataset, TEST)


def _init_for(dataset: Dataset, config: TrainConfig) -> nn.ModelParams:
    dims = [dataset.features.shape[1], *config.hidden_dims, dataset.num_classes]
    return nn.init_params(dims, config.seed)


def _train_cross_entropy(
    dataset: Dataset,
    train_idx: np.ndarray,
    params: nn.ModelParams,
    config: TrainConfig,
    schedule: Schedule,
    epochs: int,
    stage: str,
) -> tuple[nn.ModelParams, RunReport]:
    if train_idx.size == 0:
        raise ConfigurationError(f"{stage}: training subset is empty")
    t0 = time.perf_counter()
    state = nn.OptState.zeros(params)
    report = RunReport(stage=stage, config=config.to_dict())
    X, y, C = dataset.features, dataset.labels, dataset.num_classes
    for epoch in range(epochs):
        lr = lr_at(schedule, epoch)
        losses = []
        for batch in batch_indices(train_idx, config.batch_size, config.seed, epoch):
            targets = nn.one_hot(y[batch], C)
            probs = nn.softmax_t(nn.forward(params, X[batch]), 1.0)
            loss = nn.cross_entropy(probs, targets)
            grads = nn.backward(params, X[batch], nn.CrossEntropySpec(targets))
            params, state = nn.sgd_step(params, grads, state, lr,
                                        config.momentum, config.weight_decay)
            losses.append(loss)
        mean_loss = float(np.mean(losses))
        report.epochs.append(EpochRecord(
            epoch=epoch, lr=lr, loss_total=mean_loss, loss_guidance=0.0,
            loss_clean=mean_loss, test_accuracy=_test_accuracy(params, dataset),
        ))
    report.final_test_accuracy = _test_accuracy(params, dataset)
    report.checkpoint_fingerprints["model"] = nn.fingerprint(params)
    report.wall_time_sec = time.perf_counter() - t0
    return params, report


def train_teacher(dataset: Dataset, config: TrainConfig) -> tuple[nn.ModelParams, RunReport]:
    """Stage 1: plain cross-entropy over all training samples, clean + noisy."""
    train_idx = np.where(dataset.tags != TEST)[0]
    if train_idx.size == 0:
        raise ConfigurationError("teacher training needs a nonempty train set")
    params = _init_for(dataset, config)
    return _train_cross_entropy(dataset, train_idx, params, config,
                                config.teacher_lr_schedule, config.teacher_epochs,
                                stage="teacher")


def train_student(
    teacher: nn.ModelParams, dataset: Dataset, config: TrainConfig
) -> tuple[nn.ModelParams, RunReport]:
    """Stage 2: teacher-initialized student under the multi-task objective."""
    if teacher.layer_dims[0] != dataset.features.shape[1]:
        raise ShapeError(
            f"teacher input dim {teacher.layer_dims[0]} != dataset feature dim "
            f"{dataset.features.shape[1]}"
        )
    if teacher.num_classes != dataset.num_classes:
        raise ShapeError(
            f"teacher has {teacher.num_classes} outputs, dataset has "
            f"{dataset.num_classes} classes"
        )
    if dataset.indices(CLEAN_TRAIN).size == 0:
        raise ConfigurationError(
            "student training needs a clean subset; for noisy-only training "
            "use run_baseline('noisy_only', ...)"
        )
    if dataset.indices(NOISY_TRAIN).size == 0:
        raise ConfigurationError("student training needs a noisy subset")

    t0 = time.perf_counter()
    teacher_fp = nn.fingerprint(teacher)
    cache = guidance.compute_teacher_soft_targets(teacher, dataset, config.temperature)
    student = teacher.copy()
    state = nn.OptState.zeros(student)
    report = RunReport(stage="student", config=config.to_dict())
    X, y, C = dataset.features, dataset.labels, dataset.num_classes
    for epoch in range(config.student_epochs):
        lr = lr_at(config.student_lr_schedule, epoch)
        totals, guids, cleans = [], [], []
        for noisy_idx, clean_idx in mixed_batch_iterator(
            dataset, config.batch_size, config.seed, epoch
        ):
            l_total, l_g, l_c = guidance.student_batch_loss(
                student, X[noisy_idx], y[noisy_idx], noisy_idx, cache,
                X[clean_idx], y[clean_idx],
                alpha=config.alpha, beta=config.beta, temperature=config.temperature,
            )
            g = guidance.guidance_targets(cache, noisy_idx, y[noisy_idx], config.beta, C)
            spec = nn.GuidanceTotalSpec(
                noisy_targets=g,
                clean_batch=X[clean_idx],
                clean_targets=nn.one_hot(y[clean_idx], C),
                alpha=config.alpha,
                temperature=config.temperature,
            )
            grads = nn.backward(student, X[noisy_idx], spec)
            student, state = nn.sgd_step(student, grads, state, lr,
                                         config.momentum, config.weight_decay)
            totals.append(l_total)
            guids.append(l_g)
            cleans.append(l_c)
        report.epochs.append(EpochRecord(
            epoch=epoch, lr=lr,
            loss_total=float(np.mean(totals)),
            loss_guidance=float(np.mean(guids)),
            loss_clean=float(np.mean(cleans)),
            test_accuracy=_test_accuracy(student, dataset),
        ))
    report.final_test_accuracy = _test_accuracy(student, dataset)
    report.checkpoint_fingerprints["teacher"] = teacher_fp
    report.checkpoint_fingerprints["student"] = nn.fingerprint(student)
    report.wall_time_sec = time.perf_counter() - t0
    return student, report


def finetune_clean(
    model: nn.ModelParams, dataset: Dataset, config: TrainConfig
) -> tuple[nn.ModelParams, RunReport]:
    """Cross-entropy pass over the clean subset only, at a reduced LR."""
    clean_idx = dataset.indices(CLEAN_TRAIN)
    if clean_idx.size == 0:
        raise ConfigurationError("fine-tuning needs a nonempty clean subset")
    params, report = _train_cross_entropy(
        dataset, clean_idx, model.copy(), config,
        config.effective_finetune_schedule(), config.finetune_epochs,
        stage="finetune",
    )
    return params, report


def _baseline_models(
    variant: str, dataset: Dataset, config: TrainConfig
) -> tuple[dict[str, nn.ModelParams], RunReport]:
    if variant == "noisy_only":
        params, report = _train_cross_entropy(
            dataset, dataset.indices(NOISY_TRAIN), _init_for(dataset, config),
            config, config.teacher_lr_schedule, config.teacher_epochs, stage="teacher",
        )
        models = {"model": params}
    elif variant == "clean_only":
        params, report = _train_cross_entropy(
            dataset, dataset.indices(CLEAN_TRAIN), _init_for(dataset, config),
            config, config.teacher_lr_schedule, config.teacher_epochs, stage="teacher",
        )
        models = {"model": params}
    elif variant == "mixed":
        params, report = train_teacher(dataset, config)
        models = {"model": params}
    elif variant in ("guidance", "guidance_finetuned"):
        teacher, teacher_report = train_teacher(dataset, config)
        student, report = train_student(teacher, dataset, config)
        models = {"teacher": teacher, "student": student}
        report.wall_time_sec += teacher_report.wall_time_sec
        if variant == "guidance_finetuned":
            student_fp = report.checkpoint_fingerprints["student"]
            wall = report.wall_time_sec
            finetuned, report = finetune_clean(student, dataset, config)
            models["finetuned"] = finetuned
            report.checkpoint_fingerprints["teacher"] = nn.fingerprint(teacher)
            report.checkpoint_fingerprints["student"] = student_fp
            report.checkpoint_fingerprints["finetuned"] = report.checkpoint_fingerprints.pop("model")
            report.wall_time_sec += wall
    else:
        raise ParameterError(
            f"unknown baseline variant {variant!r}; expected one of {BASELINE_VARIANTS}"
        )
    report.variant = variant
    return models, report


def run_baseline(variant: str, dataset: Dataset, config: TrainConfig) -> RunReport:
    """Run one comparison variant; reports differ only in their variant field."""
    _, report = _baseline_models(variant, dataset, config)
    return report
