"""Per-task evaluation metrics and cross-task score averaging."""

from __future__ import annotations

import logging
import statistics
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy.stats import spearmanr
from sklearn.metrics import accuracy_score, matthews_corrcoef

from .errors import ShapeError, UnknownTaskError
from .models import Dataset, TaskScore
from .network import forward

logger = logging.getLogger(__name__)


def _check_lengths(pred: np.ndarray, gold: np.ndarray, minimum: int = 1) -> None:
    if len(pred) != len(gold):
        raise ShapeError(f"prediction length {len(pred)} != gold length {len(gold)}")
    if len(pred) < minimum:
        raise ValueError(f"need at least {minimum} predictions, got {len(pred)}")


def predicted_classes(probabilities: np.ndarray) -> np.ndarray:
    """Argmax per row; ties go to the lowest class index."""
    return np.argmax(np.asarray(probabilities), axis=1)


def accuracy(pred: Sequence[int], gold: Sequence[int]) -> float:
    pred, gold = np.asarray(pred), np.asarray(gold)
    _check_lengths(pred, gold)
    return float(accuracy_score(gold, pred))


def matthews_corr(pred: Sequence[int], gold: Sequence[int]) -> float:
    """
    Binary Matthews correlation.

    Args:
        pred: Predicted 0/1 labels
        gold: Gold 0/1 labels

    Returns:
        MCC in [-1, 1]; 0 when any confusion-matrix margin is empty
    """
    pred, gold = np.asarray(pred), np.asarray(gold)
    _check_lengths(pred, gold)
    if not (np.isin(pred, (0, 1)).all() and np.isin(gold, (0, 1)).all()):
        raise ValueError("matthews_corr needs binary 0/1 labels")
    tp = int(np.sum((pred == 1) & (gold == 1)))
    tn = int(np.sum((pred == 0) & (gold == 0)))
    fp = int(np.sum((pred == 1) & (gold == 0)))
    fn = int(np.sum((pred == 0) & (gold == 1)))
    if (tp + fp) * (tp + fn) * (tn + fp) * (tn + fn) == 0:
        return 0.0
    return float(matthews_corrcoef(gold, pred))


def spearman_corr(pred: Sequence[float], gold: Sequence[float]) -> float:
    """Pearson correlation of average ranks; 0 when either side is constant."""
    pred, gold = np.asarray(pred, dtype=np.float64), np.asarray(gold, dtype=np.float64)
    _check_lengths(pred, gold, minimum=2)
    if np.all(pred == pred[0]) or np.all(gold == gold[0]):
        return 0.0
    return float(spearmanr(pred, gold)[0])


def average_score(scores: Mapping[str, float] | Iterable[float]) -> float:
    """Unweighted mean over tasks."""
    values = list(scores.values()) if isinstance(scores, Mapping) else list(scores)
    if not values:
        raise ValueError("average_score needs at least one task score")
    return statistics.fmean(values)


def score_task(model, dataset: Dataset) -> TaskScore:
    """
    Dev-split score of one task under its configured metric.

    Args:
        model: Model with a head for ``dataset.task_id``
        dataset: Task data; only the dev split is read

    Returns:
        TaskScore on the raw metric scale (not x100)
    """
    spec = model.spec(dataset.task_id)
    if len(dataset.dev_x) == 0:
        raise ValueError(f"{dataset.task_id}: no dev examples to score")
    outputs = forward(model, dataset.dev_x, dataset.task_id)
    if spec.metric == "spearman":
        value = spearman_corr(spec.denormalize(outputs), dataset.dev_y)
    else:
        classes = predicted_classes(outputs)
        gold = dataset.dev_y.astype(np.int64)
        value = accuracy(classes, gold) if spec.metric == "accuracy" else matthews_corr(classes, gold)
    return TaskScore(task_id=dataset.task_id, metric=spec.metric, value=value)


def evaluate_model(model, datasets: Mapping[str, Dataset], task_ids: Iterable[str]) -> dict[str, float]:
    """Dev scores on the 0-100 report scale, keyed by task."""
    task_ids = list(task_ids)
    unknown = [t for t in task_ids if t not in datasets]
    if unknown:
        raise UnknownTaskError(f"no dev data for tasks {unknown}")
    return {task_id: 100.0 * score_task(model, datasets[task_id]).value for task_id in task_ids}
