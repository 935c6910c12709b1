"""Task-weighted example sampling with reproducible seeded streams."""

import logging
import math
import zlib
from typing import Mapping, Sequence

import numpy as np

from .distill import Example
from .models import Dataset

logger = logging.getLogger(__name__)


def derive_seed(seed: int, *labels: str) -> int:
    """A child seed for one role of a trial (``"init"``, ``"batches"``, a task id, ...).

    Children of the same seed are independent streams; the mapping is stable
    across processes so parallel and serial runs draw identical numbers.
    """
    words = [int(seed) & 0xFFFFFFFF, (int(seed) >> 32) & 0xFFFFFFFF]
    words += [zlib.crc32(label.encode("utf-8")) for label in labels]
    return int(np.random.SeedSequence(words).generate_state(2, dtype=np.uint64)[0] >> np.uint64(1))


def task_weights(sizes: Sequence[int], exponent: float = 0.75) -> np.ndarray:
    """Probability of drawing each task: ``size**e / sum(size**e)``."""
    if len(sizes) == 0:
        raise ValueError("task_weights needs at least one task")
    if exponent < 0:
        raise ValueError(f"sampling exponent must be >= 0, got {exponent}")
    sizes = np.asarray(sizes, dtype=np.float64)
    if np.any(sizes < 1):
        raise ValueError(f"every task needs at least one example, got sizes {sizes.tolist()}")
    scaled = sizes**exponent
    return scaled / scaled.sum()


def total_steps(sizes: Sequence[int], batch_size: int, epochs: int) -> int:
    """``ceil(epochs * sum(sizes) / batch_size)``: optimizer steps of a run."""
    if batch_size < 1:
        raise ValueError(f"batch size must be positive, got {batch_size}")
    return math.ceil(epochs * sum(int(s) for s in sizes) / batch_size)


class TaskSampler:
    """Draws each batch slot independently: a task by weight, then a uniform train row.

    The stream is a Philox counter-based generator keyed by ``seed``.
    """

    def __init__(self, task_ids: Sequence[str], sizes: Sequence[int], exponent: float = 0.75, seed: int = 0):
        if len(task_ids) != len(sizes):
            raise ValueError("task_ids and sizes differ in length")
        self.task_ids = list(task_ids)
        self.sizes = [int(s) for s in sizes]
        self.exponent = exponent
        self.weights = task_weights(self.sizes, exponent)
        self._rng = np.random.Generator(np.random.Philox(seed))

    @classmethod
    def for_datasets(cls, datasets: Mapping[str, Dataset], task_ids: Sequence[str], exponent: float, seed: int):
        return cls(task_ids, [len(datasets[t].train_x) for t in task_ids], exponent, seed)

    def draw_tasks(self, n: int) -> np.ndarray:
        """Task indices for ``n`` slots."""
        return self._rng.choice(len(self.task_ids), size=n, p=self.weights)

    def sample_batch(self, datasets: Mapping[str, Dataset], batch_size: int) -> list[Example]:
        if batch_size < 1:
            raise ValueError(f"batch size must be positive, got {batch_size}")
        slots = self.draw_tasks(batch_size)
        batch = []
        for slot in slots:
            task_id = self.task_ids[slot]
            dataset = datasets[task_id]
            row = int(self._rng.integers(self.sizes[slot]))
            batch.append(Example(task_id, row, dataset.train_x[row], dataset.train_y[row].item()))
        return batch


def sample_batch(sampler: TaskSampler, datasets: Mapping[str, Dataset], batch_size: int) -> list[Example]:
    return sampler.sample_batch(datasets, batch_size)
