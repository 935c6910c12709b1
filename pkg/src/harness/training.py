"""Training loops for single-task models, multi-task students and fine-tuning."""

import logging
import math
from dataclasses import dataclass
from typing import Collection, Mapping, Optional, Sequence

from ..distill import AnnealSchedule, TeacherAssignment, batch_loss, batch_from_dataset, lambda_at
from ..errors import DivergenceError, TeacherAssignmentError, UnknownTaskError
from ..metrics import average_score, evaluate_model
from ..models import AnnealMode, Dataset, TrainConfig, TrainingLog, TrunkConfig
from ..network import Checkpoint, MultiTaskModel, head_weight, init_model
from ..optim import Adam
from ..sampling import TaskSampler, derive_seed, total_steps
from ..tensor import Tape, backward

logger = logging.getLogger(__name__)


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    log: TrainingLog

    @property
    def model(self) -> MultiTaskModel:
        return self.checkpoint.model


def epoch_boundaries(sizes: Sequence[int], batch_size: int, epochs: int) -> list[int]:
    """Step index at which each epoch ends: ``ceil((e + 1) * sum(sizes) / batch_size)``."""
    total = sum(int(s) for s in sizes)
    return [math.ceil((e + 1) * total / batch_size) for e in range(epochs)]


def _lambda(anneal: AnnealMode, fixed_lambda: Optional[float], step: int, epoch: int,
            steps: int, epochs: int, granularity: str) -> float:
    if anneal == "fixed":
        return float(fixed_lambda)
    if anneal == "off":
        return 1.0
    if granularity == "epoch":
        return lambda_at(epoch, AnnealSchedule(total_steps=epochs))
    return lambda_at(step, AnnealSchedule(total_steps=steps))


def train_loss(model: MultiTaskModel, datasets: Mapping[str, Dataset], task_ids: Sequence[str]) -> float:
    """Mean supervised loss per train example over ``task_ids``."""
    losses, count = 0.0, 0
    none = TeacherAssignment.none()
    for task_id in task_ids:
        dataset = datasets[task_id]
        batch = batch_from_dataset(dataset, range(len(dataset.train_x)))
        losses += float(batch_loss(model, none, batch, 1.0, Tape()))
        count += len(batch)
    return losses / count


def _require_tasks(datasets: Mapping[str, Dataset], task_ids: Sequence[str]) -> None:
    unknown = [t for t in task_ids if t not in datasets]
    if unknown:
        raise UnknownTaskError(f"unknown tasks {unknown}; suite has {sorted(datasets)}")


def _fit(
    model: MultiTaskModel,
    datasets: Mapping[str, Dataset],
    task_ids: Sequence[str],
    config: TrainConfig,
    teachers: TeacherAssignment,
    anneal: AnnealMode,
    fixed_lambda: Optional[float],
    seed: int,
    trainable: Optional[Collection[str]] = None,
    label: str = "train",
) -> TrainingLog:
    """Run the optimizer loop in place on ``model`` and return its log."""
    _require_tasks(datasets, task_ids)
    sizes = [len(datasets[t].train_x) for t in task_ids]
    steps = total_steps(sizes, config.batch_size, config.epochs)
    log = TrainingLog(layer_decay=config.optim.layer_decay)
    if steps == 0:
        logger.info(f"[{label}] zero epochs, returning the initial model")
        return log

    boundaries = epoch_boundaries(sizes, config.batch_size, config.epochs)
    sampler = TaskSampler(task_ids, sizes, config.sampling_exponent, derive_seed(seed, "batches"))
    optimizer = Adam(config.optim, model.depths())
    frozen = None if trainable is None else {name for name in model.params if name not in trainable}

    epoch, epoch_loss, epoch_examples = 0, 0.0, 0
    for step in range(steps):
        lam = _lambda(anneal, fixed_lambda, step, epoch, steps, config.epochs, config.anneal_granularity)
        if step == 0:
            log.first_lambda = lam
        log.last_lambda = lam

        tape = Tape()
        batch = sampler.sample_batch(datasets, config.batch_size)
        loss = batch_loss(model, teachers, batch, lam, tape)
        value = float(loss)
        if not math.isfinite(value):
            raise DivergenceError(f"[{label}] non-finite loss {value} at step {step}")
        grads = backward(loss, tape)
        model.params = optimizer.step(model.params, grads, step + 1, frozen)

        log.step_losses.append(value)
        epoch_loss += value
        epoch_examples += len(batch)
        # tiny splits can close several epochs on one step
        while epoch < config.epochs and step + 1 >= boundaries[epoch]:
            mean_loss = epoch_loss / max(epoch_examples, 1)
            dev = average_score(evaluate_model(model, datasets, task_ids))
            log.epoch_losses.append(mean_loss)
            log.dev_scores.append(dev)
            logger.info(
                f"[{label}] epoch {epoch + 1}/{config.epochs}: train loss {mean_loss:.4f}, dev {dev:.1f}, lambda {lam:.3f}"
            )
            epoch, epoch_loss, epoch_examples = epoch + 1, 0.0, 0
    log.steps = steps
    logger.debug(f"[{label}] lambda first={log.first_lambda} last={log.last_lambda}")
    return log


def train_single(
    task_id: str,
    datasets: Mapping[str, Dataset],
    trunk: TrunkConfig,
    config: TrainConfig,
    seed: int,
    config_digest: str = "",
) -> TrainResult:
    """One-head model trained on gold labels only."""
    _require_tasks(datasets, [task_id])
    spec = datasets[task_id].spec
    model = init_model(trunk, [spec], derive_seed(seed, "init", task_id))
    log = _fit(model, datasets, [task_id], config, TeacherAssignment.none(), "off", None,
               derive_seed(seed, "single", task_id), label=f"single {task_id}")
    return TrainResult(Checkpoint(model, config_digest, seed), log)


def train_teacher(
    task_id: str,
    datasets: Mapping[str, Dataset],
    trunk: TrunkConfig,
    configs: Sequence[TrainConfig],
    seed: int,
    config_digest: str = "",
) -> TrainResult:
    """Train one single-task model per layer-decay candidate and keep the best on dev.

    Candidates share the seed, so they differ only in alpha; ties keep the
    earlier candidate.
    """
    if not configs:
        raise ValueError("train_teacher needs at least one candidate config")
    best: Optional[TrainResult] = None
    best_score = -math.inf
    for config in configs:
        result = train_single(task_id, datasets, trunk, config, seed, config_digest)
        score = evaluate_model(result.model, datasets, [task_id])[task_id]
        logger.info(f"Teacher {task_id} seed {seed}: alpha={config.optim.layer_decay} dev {score:.1f}")
        if score > best_score:
            best, best_score = result, score
    return best


def train_multi(
    task_ids: Sequence[str],
    datasets: Mapping[str, Dataset],
    trunk: TrunkConfig,
    config: TrainConfig,
    teachers: TeacherAssignment,
    anneal: AnnealMode,
    seed: int,
    fixed_lambda: Optional[float] = None,
    config_digest: str = "",
    label: str = "multi",
) -> TrainResult:
    """Multi-task student trained on sampled mixed batches.

    Teachers are checked against the student before the first step. With
    ``anneal="on"`` lambda follows the linear schedule, with ``"fixed"`` it
    stays at ``fixed_lambda``; without teachers the target is always gold.
    """
    if not task_ids:
        raise ValueError("train_multi needs at least one task")
    if anneal == "fixed" and fixed_lambda is None:
        raise ValueError("anneal='fixed' needs fixed_lambda")
    _require_tasks(datasets, task_ids)
    specs = [datasets[t].spec for t in task_ids]
    model = init_model(trunk, specs, derive_seed(seed, "init"))
    if teachers.mode != "none":
        missing = [t for t in task_ids if t not in teachers.teachers]
        if missing:
            raise TeacherAssignmentError(f"no teacher for tasks {missing}")
        teachers.validate(model, task_ids)
    log = _fit(model, datasets, task_ids, config, teachers, anneal, fixed_lambda, seed, label=label)
    return TrainResult(Checkpoint(model, config_digest, seed), log)


def finetune_single(
    checkpoint: Checkpoint,
    task_id: str,
    datasets: Mapping[str, Dataset],
    config: TrainConfig,
    seed: int,
) -> TrainResult:
    """Continue supervised training of one task from a multi-task checkpoint.

    Only the trunk and the task's own head move; every other head is carried
    through unchanged.
    """
    model = checkpoint.model.copy()
    model.spec(task_id)
    trainable = set(model.trunk_names()) | {head_weight(task_id)}
    log = _fit(model, datasets, [task_id], config, TeacherAssignment.none(), "off", None,
               derive_seed(seed, "finetune", task_id), trainable=trainable, label=f"finetune {task_id}")
    return TrainResult(Checkpoint(model, checkpoint.config_digest, checkpoint.seed), log)

