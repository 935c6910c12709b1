"""Data models for multi-task distillation experiments."""

from typing import Literal, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

TaskKind = Literal["classification", "regression"]
MetricName = Literal["accuracy", "matthews", "spearman"]
TeacherMode = Literal["none", "single_teachers", "multi_teacher"]
AnnealMode = Literal["on", "fixed", "off"]


class TaskSpec(BaseModel):
    """A task as the model and the metrics see it."""

    task_id: str
    kind: TaskKind
    num_classes: int = Field(2, description="K for classification, 1 for regression")
    metric: MetricName = "accuracy"
    train_size: int = Field(0, ge=0)
    label_min: float = Field(0.0, description="Regression normalization: min training label")
    label_max: float = Field(1.0, description="Regression normalization: max training label")

    @model_validator(mode="after")
    def _check_kind(self) -> "TaskSpec":
        if self.kind == "classification" and self.num_classes < 2:
            raise ValueError(f"classification task {self.task_id} needs K >= 2, got {self.num_classes}")
        if self.kind == "regression":
            if self.num_classes != 1:
                raise ValueError(f"regression task {self.task_id} must have num_classes=1")
            if self.metric != "spearman":
                raise ValueError(f"regression task {self.task_id} is scored with spearman")
        if self.kind == "classification" and self.metric == "spearman":
            raise ValueError(f"classification task {self.task_id} cannot use spearman")
        if self.metric == "matthews" and self.num_classes != 2:
            raise ValueError(f"task {self.task_id}: matthews needs a binary task, got K={self.num_classes}")
        if self.label_max < self.label_min:
            raise ValueError("label_max must be >= label_min")
        return self

    @property
    def output_width(self) -> int:
        return self.num_classes if self.kind == "classification" else 1

    def normalize(self, y: np.ndarray) -> np.ndarray:
        """Map raw regression labels into [0, 1] with the stored constants."""
        span = self.label_max - self.label_min
        if span == 0.0:
            return np.full_like(np.asarray(y, dtype=np.float64), 0.5)
        return np.clip((np.asarray(y, dtype=np.float64) - self.label_min) / span, 0.0, 1.0)

    def denormalize(self, p: np.ndarray) -> np.ndarray:
        return np.asarray(p, dtype=np.float64) * (self.label_max - self.label_min) + self.label_min


class Dataset(BaseModel):
    """Train and dev splits of one task.

    ``train_draws`` / ``dev_draws`` record which generator draws produced each
    row, so disjointness of the splits can be checked after the fact.
    """

    model_config = ConfigDict(arbitrary_types_allowed=True)

    spec: TaskSpec
    train_x: np.ndarray
    train_y: np.ndarray
    dev_x: np.ndarray
    dev_y: np.ndarray
    train_draws: Optional[np.ndarray] = None
    dev_draws: Optional[np.ndarray] = None

    @model_validator(mode="after")
    def _check_arrays(self) -> "Dataset":
        for name in ("train_x", "dev_x"):
            arr = getattr(self, name)
            if arr.ndim != 2:
                raise ValueError(f"{self.spec.task_id}: {name} must be 2-D, got shape {arr.shape}")
        if len(self.train_x) == 0:
            raise ValueError(f"{self.spec.task_id}: empty train split")
        if self.train_x.shape[1] != self.dev_x.shape[1] and len(self.dev_x):
            raise ValueError(f"{self.spec.task_id}: train and dev feature widths differ")
        if len(self.train_x) != len(self.train_y) or len(self.dev_x) != len(self.dev_y):
            raise ValueError(f"{self.spec.task_id}: features and labels have different lengths")
        for labels in (self.train_y, self.dev_y):
            if not len(labels):
                continue
            if self.spec.kind == "classification":
                if labels.min() < 0 or labels.max() >= self.spec.num_classes:
                    raise ValueError(f"{self.spec.task_id}: class index outside [0, {self.spec.num_classes})")
            elif labels.min() < 0.0 or labels.max() > 1.0:
                raise ValueError(f"{self.spec.task_id}: regression labels outside [0, 1]")
        return self

    @property
    def task_id(self) -> str:
        return self.spec.task_id

    @property
    def input_width(self) -> int:
        return int(self.train_x.shape[1])


class TrunkConfig(BaseModel):
    input_width: int = Field(32, ge=1)
    hidden_width: int = Field(64, ge=1)
    hidden_layers: int = Field(2, ge=1)


class OptimConfig(BaseModel):
    """Adam constants plus the layerwise decay law base_lr * alpha**d."""

    base_lr: float = Field(1e-4, gt=0.0)
    layer_decay: float = Field(0.9, gt=0.0, le=1.0, description="alpha")
    beta1: float = Field(0.9, ge=0.0, lt=1.0)
    beta2: float = Field(0.999, ge=0.0, lt=1.0)
    eps: float = Field(1e-8, gt=0.0)


class TrainConfig(BaseModel):
    optim: OptimConfig = Field(default_factory=OptimConfig)
    batch_size: int = Field(32, ge=1)
    epochs: int = Field(6, ge=0)
    sampling_exponent: float = Field(0.75, ge=0.0)
    anneal_granularity: Literal["step", "epoch"] = "step"


class SyntheticTaskConfig(BaseModel):
    """Requested shape of one synthetic task."""

    task_id: str
    kind: TaskKind = "classification"
    metric: MetricName = "accuracy"
    train_size: int = Field(..., ge=1)
    dev_size: int = Field(1000, ge=0)
    noise: float = Field(0.1, ge=0.0, lt=0.5)
    related_to: Optional[str] = Field(None, description="Task whose head direction this one perturbs")


class SuiteConfig(BaseModel):
    tasks: list[SyntheticTaskConfig]
    input_width: int = Field(32, ge=1)
    latent_width: int = Field(8, ge=1)
    perturbation: float = Field(0.2, ge=0.0, description="Relatedness perturbation scale")
    calibration_size: int = Field(20000, ge=100)

    @field_validator("tasks")
    @classmethod
    def _unique_ids(cls, tasks: list[SyntheticTaskConfig]) -> list[SyntheticTaskConfig]:
        ids = [t.task_id for t in tasks]
        if len(set(ids)) != len(ids):
            raise ValueError(f"duplicate task ids in suite: {ids}")
        if not tasks:
            raise ValueError("suite needs at least one task")
        known = set()
        for t in tasks:
            if t.related_to is not None and t.related_to not in known:
                raise ValueError(f"{t.task_id} is related to {t.related_to}, which must be declared earlier")
            known.add(t.task_id)
        return tasks


class SyntheticTaskSpec(BaseModel):
    """Everything needed to regenerate the labels of a synthetic task."""

    task_id: str
    kind: TaskKind
    metric: MetricName
    train_size: int
    dev_size: int
    noise: float
    related_to: Optional[str] = None
    direction: list[float]
    threshold: float = 0.0
    projection_min: float = 0.0
    projection_max: float = 1.0
    generator_seed: int


class TaskScore(BaseModel):
    task_id: str
    metric: MetricName
    value: float

    @model_validator(mode="after")
    def _check_range(self) -> "TaskScore":
        low = 0.0 if self.metric == "accuracy" else -1.0
        if not (low - 1e-12 <= self.value <= 1.0 + 1e-12):
            raise ValueError(f"{self.metric} score {self.value} out of range")
        return self


class TrainingLog(BaseModel):
    """What a training run reports besides its checkpoint."""

    steps: int = 0
    step_losses: list[float] = Field(default_factory=list)
    epoch_losses: list[float] = Field(default_factory=list)
    dev_scores: list[float] = Field(default_factory=list)
    first_lambda: Optional[float] = None
    last_lambda: Optional[float] = None
    layer_decay: Optional[float] = None


class MethodSpec(BaseModel):
    """One row of the method grid."""

    name: str
    recipe: Literal["single", "multi", "single_to_single", "multi_to_multi", "single_to_multi", "chained"]
    teacher_mode: TeacherMode = "none"
    anneal: AnnealMode = "off"
    fixed_lambda: Optional[float] = Field(None, ge=0.0, le=1.0)
    tasks: Optional[list[str]] = Field(None, description="Task subset; None means the whole suite")
    finetune: bool = False
    layer_decay: Optional[float] = Field(None, gt=0.0, le=1.0, description="Override student alpha")
    sampling_exponent: Optional[float] = Field(None, ge=0.0, description="Override student exponent")

    @model_validator(mode="after")
    def _check_consistency(self) -> "MethodSpec":
        expected = {
            "single": "none",
            "multi": "none",
            "single_to_single": "single_teachers",
            "multi_to_multi": "multi_teacher",
            "single_to_multi": "single_teachers",
            "chained": "single_teachers",
        }[self.recipe]
        if self.teacher_mode != expected:
            raise ValueError(f"{self.name}: recipe {self.recipe} needs teacher mode {expected}")
        if self.teacher_mode == "none" and self.anneal != "off":
            raise ValueError(f"{self.name}: annealing without teachers")
        if self.teacher_mode != "none" and self.anneal == "off":
            raise ValueError(f"{self.name}: teachers given but annealing is off")
        if (self.anneal == "fixed") != (self.fixed_lambda is not None):
            raise ValueError(f"{self.name}: fixed_lambda goes with anneal='fixed' only")
        if self.finetune and self.recipe not in ("multi", "single_to_multi"):
            raise ValueError(f"{self.name}: fine-tuning applies to multi-task recipes")
        return self


class TrialResult(BaseModel):
    """One (method, seed) cell of a run matrix. Scores are on the 0-100 scale."""

    method: str
    seed: int
    status: Literal["ok", "failed"] = "ok"
    scores: dict[str, float] = Field(default_factory=dict)
    average: Optional[float] = None
    wall_clock_s: float = 0.0
    config_digest: str = ""
    teachers: dict[str, str] = Field(default_factory=dict)
    reason: str = ""

    def identity(self) -> tuple:
        """Everything except wall-clock time, which is the one non-deterministic column."""
        return (
            self.method,
            self.seed,
            self.status,
            tuple(sorted(self.scores.items())),
            self.average,
            self.config_digest,
            tuple(sorted(self.teachers.items())),
            self.reason,
        )


class MatrixSpec(BaseModel):
    methods: list[MethodSpec]
    seeds: list[int]
    teacher_provenance: Literal["fresh", "shared"] = "fresh"

    @model_validator(mode="after")
    def _check_cells(self) -> "MatrixSpec":
        if not self.methods or not self.seeds:
            raise ValueError("a run matrix needs at least one method and one seed")
        names = [m.name for m in self.methods]
        if len(set(names)) != len(names):
            raise ValueError(f"duplicate method names: {names}")
        if len(set(self.seeds)) != len(self.seeds):
            raise ValueError(f"duplicate seeds: {self.seeds}")
        return self
