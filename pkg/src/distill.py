"""Training targets and losses: supervised, distillation and teacher-annealed mixing."""

from __future__ import annotations

import logging
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, NamedTuple, Optional, Sequence

import numpy as np
from pydantic import BaseModel, Field

from .errors import ShapeError, TeacherAssignmentError
from .models import Dataset, TaskKind, TeacherMode
from .network import MultiTaskModel
from .tensor import Tape, Tensor, as_tensor, cross_entropy_soft, squared_error, total

logger = logging.getLogger(__name__)


class Example(NamedTuple):
    """One training example drawn for a batch; ``index`` is its row in the train split."""

    task_id: str
    index: int
    x: np.ndarray
    y: float


class AnnealSchedule(BaseModel):
    total_steps: int = Field(..., ge=1)


def lambda_at(step: int, schedule: AnnealSchedule) -> float:
    """Linear teacher-annealing law: 0 at the first step, 1 at the last."""
    if not 0 <= step < schedule.total_steps:
        raise ValueError(f"step {step} outside [0, {schedule.total_steps})")
    if schedule.total_steps == 1:
        return 1.0
    return step / (schedule.total_steps - 1)


@dataclass
class TeacherAssignment:
    """Frozen teacher per task.

    ``multi_teacher`` maps every task to the same model. A ``cache`` holds
    precomputed teacher outputs per task, indexed by train row.
    """

    mode: TeacherMode = "none"
    teachers: dict[str, MultiTaskModel] = field(default_factory=dict)
    cache: dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def none(cls) -> "TeacherAssignment":
        return cls()

    @classmethod
    def single(cls, teachers: Mapping[str, MultiTaskModel]) -> "TeacherAssignment":
        for task_id, model in teachers.items():
            if task_id not in model.task_specs:
                raise TeacherAssignmentError(f"teacher for {task_id} has no head for it ({model.task_ids})")
        return cls(mode="single_teachers", teachers=dict(teachers))

    @classmethod
    def multi(cls, teacher: MultiTaskModel, task_ids: Optional[Iterable[str]] = None) -> "TeacherAssignment":
        ids = list(task_ids) if task_ids is not None else teacher.task_ids
        missing = [t for t in ids if t not in teacher.task_specs]
        if missing:
            raise TeacherAssignmentError(f"multi-task teacher has no heads for {missing}")
        return cls(mode="multi_teacher", teachers={t: teacher for t in ids})

    def teacher_for(self, task_id: str) -> MultiTaskModel:
        try:
            return self.teachers[task_id]
        except KeyError:
            raise TeacherAssignmentError(f"no teacher assigned for task {task_id!r} in mode {self.mode}") from None

    def validate(self, student: MultiTaskModel, task_ids: Iterable[str]) -> None:
        """Reject missing teachers and teachers whose shapes differ from the student's."""
        if self.mode == "none":
            return
        student_shapes = student.shapes()
        for task_id in task_ids:
            teacher = self.teacher_for(task_id)
            teacher_shapes = teacher.shapes()
            for name in student.trunk_names() + [f"head.{task_id}.weight"]:
                if teacher_shapes.get(name) != student_shapes[name]:
                    raise TeacherAssignmentError(
                        f"teacher for {task_id}: {name} has shape {teacher_shapes.get(name)}, "
                        f"student has {student_shapes[name]}"
                    )

    def predict(self, task_id: str, x: np.ndarray, indices: Optional[Sequence[int]] = None) -> np.ndarray:
        """Teacher outputs for rows of ``x``, from the cache when it covers the rows."""
        cached = self.cache.get(task_id)
        if cached is not None and indices is not None:
            return cached[np.asarray(indices, dtype=np.int64)]
        return self.teacher_for(task_id).predict(x, task_id)

    def build_cache(self, datasets: Mapping[str, Dataset], task_ids: Iterable[str], cache_dir: Optional[Path] = None,
                    digests: Optional[Mapping[str, str]] = None) -> None:
        """Precompute teacher outputs for every train row.

        With ``cache_dir`` and teacher ``digests`` the outputs are also stored
        as ``<digest>-<task>.npy`` and reused on later runs.
        """
        if self.mode == "none":
            return
        for task_id in task_ids:
            path = None
            if cache_dir is not None and digests is not None and task_id in digests:
                path = Path(cache_dir) / f"{digests[task_id][:16]}-{task_id}.npy"
                if path.exists():
                    self.cache[task_id] = np.load(path)
                    continue
            outputs = self.teacher_for(task_id).predict(datasets[task_id].train_x, task_id)
            self.cache[task_id] = outputs
            if path is not None:
                path.parent.mkdir(parents=True, exist_ok=True)
                # one temp file per writer; concurrent cells may share a teacher
                fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.stem}.", suffix=".tmp.npy")
                os.close(fd)
                np.save(tmp, outputs)
                os.replace(tmp, path)


def one_hot(label: int, num_classes: int) -> np.ndarray:
    if not 0 <= int(label) < num_classes:
        raise ValueError(f"class index {label} outside [0, {num_classes})")
    vec = np.zeros(num_classes)
    vec[int(label)] = 1.0
    return vec


def mixed_target(lam: float, gold, teacher, kind: TaskKind):
    """
    Convex combination ``lam * gold + (1 - lam) * teacher``.

    Args:
        lam: Gold weight in [0, 1]
        gold: One-hot rows for classification, normalized labels for regression
        teacher: Teacher predictions, same shape as ``gold``
        kind: Task kind

    Returns:
        Mixed target, elementwise per row

    Raises:
        ValueError: ``lam`` outside [0, 1]
        ShapeError: Shapes differ, or a classification target is a scalar
    """
    if not 0.0 <= lam <= 1.0:
        raise ValueError(f"lambda {lam} outside [0, 1]")
    gold = np.asarray(gold, dtype=np.float64)
    teacher = np.asarray(teacher, dtype=np.float64)
    if gold.shape != teacher.shape:
        raise ShapeError(f"gold {gold.shape} and teacher {teacher.shape} predictions differ in shape")
    if kind == "classification" and gold.ndim == 0:
        raise ShapeError("classification targets must be distributions")
    return lam * gold + (1.0 - lam) * teacher


def example_loss(target, prediction, kind: TaskKind) -> Tensor:
    """Cross-entropy against a soft target for classification, squared error for regression."""
    prediction = as_tensor(prediction)
    target = np.asarray(target, dtype=np.float64)
    if kind == "classification":
        if prediction.value.ndim == 0 or prediction.shape[-1] < 2:
            raise ShapeError(f"classification loss needs a class distribution, got shape {prediction.shape}")
        return cross_entropy_soft(target, prediction)
    if kind == "regression":
        if prediction.value.size != target.size:
            raise ShapeError(f"regression target {target.shape} vs prediction {prediction.shape}")
        return squared_error(target.reshape(prediction.shape), prediction)
    raise ValueError(f"unknown task kind {kind!r}")


def gold_targets(student: MultiTaskModel, task_id: str, labels: np.ndarray) -> np.ndarray:
    """One-hot rows for classification, normalized (m, 1) labels for regression."""
    spec = student.spec(task_id)
    labels = np.asarray(labels)
    if spec.kind == "classification":
        targets = np.zeros((len(labels), spec.num_classes))
        for row, y in enumerate(labels):
            targets[row] = one_hot(int(y), spec.num_classes)
        return targets
    return spec.normalize(labels.astype(np.float64)).reshape(-1, 1)


def _group(batch: Sequence[Example]) -> dict[str, list[Example]]:
    groups: dict[str, list[Example]] = {}
    for example in batch:
        groups.setdefault(example.task_id, []).append(example)
    return groups


def batch_loss(
    student: MultiTaskModel,
    teachers: TeacherAssignment,
    batch: Sequence[Example],
    lam: float,
    tape: Optional[Tape] = None,
) -> Tensor:
    """
    Summed loss over a mixed-task batch.

    Examples are grouped by task so the shared trunk runs once per task
    present. Teachers run untracked; in mode ``none`` the target is the gold
    label whatever ``lam`` is.

    Args:
        student: Model being trained; its parameters are recorded on ``tape``
        teachers: Frozen teacher assignment
        batch: Examples from any mix of tasks
        lam: Gold weight of the mixed target
        tape: Tape to record on; a fresh one when omitted

    Returns:
        Scalar Tensor, the sum of per-example losses
    """
    tape = tape if tape is not None else Tape()
    bound = student.bind(tape)
    terms = []
    for task_id, examples in _group(batch).items():
        spec = student.spec(task_id)
        x = np.stack([e.x for e in examples])
        target = gold_targets(student, task_id, np.array([e.y for e in examples]))
        if teachers.mode != "none":
            teacher_out = teachers.predict(task_id, x, [e.index for e in examples])
            if spec.kind == "regression":
                teacher_out = np.asarray(teacher_out).reshape(-1, 1)
            target = mixed_target(lam, target, teacher_out, spec.kind)
        prediction = student.head(bound, student.represent(bound, x), task_id)
        terms.append(example_loss(target, prediction, spec.kind))
    return total(terms, tape)


def batch_from_dataset(dataset: Dataset, indices: Iterable[int]) -> list[Example]:
    """Examples of one task by train row."""
    return [
        Example(dataset.task_id, int(i), dataset.train_x[int(i)], dataset.train_y[int(i)].item())
        for i in indices
    ]
