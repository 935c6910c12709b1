"""Synthetic multi-task suites with controllable relatedness and size asymmetry.

Every task reads the same latent map ``g(x) = tanh(x @ A + b)`` and labels
examples by projecting ``g(x)`` onto a task direction. Independent tasks get
directions that are uncorrelated on a calibration sample; a related task
perturbs the direction of the task it is tied to.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import UnknownTaskError
from .models import Dataset, SuiteConfig, SyntheticTaskSpec, TaskSpec
from .sampling import derive_seed

logger = logging.getLogger(__name__)


def _rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(seed))


class LatentGenerator:
    """Fixed random affine map followed by tanh, determined by its seed."""

    def __init__(self, input_width: int, latent_width: int, seed: int):
        rng = _rng(seed)
        self.input_width = input_width
        self.latent_width = latent_width
        self.seed = seed
        self.weight = rng.standard_normal((input_width, latent_width)) / np.sqrt(input_width)
        self.bias = 0.1 * rng.standard_normal(latent_width)

    @classmethod
    def for_suite(cls, config: SuiteConfig, seed: int) -> "LatentGenerator":
        return cls(config.input_width, config.latent_width, derive_seed(seed, "latent"))

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return np.tanh(np.asarray(x, dtype=np.float64) @ self.weight + self.bias)


def _sigma_normalize(v: np.ndarray, cov: np.ndarray) -> np.ndarray:
    return v / np.sqrt(v @ cov @ v)


@dataclass
class Suite:
    """A generated suite: datasets plus what is needed to relabel fresh inputs."""

    config: SuiteConfig
    seed: int
    generator: LatentGenerator
    specs: dict[str, SyntheticTaskSpec]
    datasets: dict[str, Dataset] = field(default_factory=dict)

    @property
    def task_ids(self) -> list[str]:
        return list(self.specs)

    def _spec(self, task_id: str) -> SyntheticTaskSpec:
        try:
            return self.specs[task_id]
        except KeyError:
            raise UnknownTaskError(f"task {task_id!r} not in suite {self.task_ids}") from None

    def projection(self, task_id: str, x: np.ndarray) -> np.ndarray:
        return self.generator(x) @ np.asarray(self._spec(task_id).direction)

    def labels(self, task_id: str, x: np.ndarray, rng: Optional[np.random.Generator] = None) -> np.ndarray:
        """Labels of ``x``; noiseless unless ``rng`` is given to draw the flips."""
        spec = self._spec(task_id)
        return label_projection(spec, self.projection(task_id, x), rng)

    def sample_inputs(self, n: int, seed: int) -> np.ndarray:
        """Fresh standard-normal inputs, independent of every split."""
        return _rng(derive_seed(seed, "fresh-inputs")).standard_normal((n, self.config.input_width))


def label_projection(
    spec: SyntheticTaskSpec, projection: np.ndarray, rng: Optional[np.random.Generator] = None
) -> np.ndarray:
    if spec.kind == "regression":
        span = spec.projection_max - spec.projection_min
        if span <= 0.0:
            return np.full(len(projection), 0.5)
        return np.clip((projection - spec.projection_min) / span, 0.0, 1.0)
    labels = (projection > spec.threshold).astype(np.int64)
    if rng is not None and spec.noise > 0.0:
        flips = rng.random(len(labels)) < spec.noise
        labels = np.where(flips, 1 - labels, labels)
    return labels


def _directions(config: SuiteConfig, seed: int, cov: np.ndarray) -> dict[str, np.ndarray]:
    directions: dict[str, np.ndarray] = {}
    independent: list[np.ndarray] = []
    for task in config.tasks:
        raw = _rng(derive_seed(seed, "direction", task.task_id)).standard_normal(config.latent_width)
        if task.related_to is not None:
            noise = _sigma_normalize(raw, cov)
            directions[task.task_id] = _sigma_normalize(directions[task.related_to] + config.perturbation * noise, cov)
            continue
        v = raw
        if len(independent) < config.latent_width:
            for u in independent:
                v = v - (u @ cov @ v) * u
        else:
            logger.warning(f"{task.task_id}: more independent tasks than latent dimensions, direction not orthogonalized")
        v = _sigma_normalize(v, cov)
        independent.append(v)
        directions[task.task_id] = v
    return directions


def gen_suite(config: SuiteConfig, seed: int) -> Suite:
    """Generate every task of ``config``; identical seeds give identical suites.

    Train rows are draws ``0 .. train_size - 1`` of the task's input stream and
    dev rows the draws after them, so the splits never share an input.
    """
    generator = LatentGenerator.for_suite(config, seed)
    calibration = generator(
        _rng(derive_seed(seed, "calibration")).standard_normal((config.calibration_size, config.input_width))
    )
    cov = np.cov(calibration, rowvar=False).reshape(config.latent_width, config.latent_width)
    directions = _directions(config, seed, cov)

    suite = Suite(config=config, seed=seed, generator=generator, specs={})
    for task in config.tasks:
        projection = calibration @ directions[task.task_id]
        task_seed = derive_seed(seed, "task", task.task_id)
        spec = SyntheticTaskSpec(
            task_id=task.task_id,
            kind=task.kind,
            metric=task.metric,
            train_size=task.train_size,
            dev_size=task.dev_size,
            noise=task.noise if task.kind == "classification" else 0.0,
            related_to=task.related_to,
            direction=directions[task.task_id].tolist(),
            threshold=float(np.median(projection)),
            projection_min=float(projection.min()),
            projection_max=float(projection.max()),
            generator_seed=task_seed,
        )
        suite.specs[task.task_id] = spec
        suite.datasets[task.task_id] = _draw_dataset(spec, generator, config.input_width)
        logger.info(f"Generated {task.task_id}: {task.train_size} train / {task.dev_size} dev ({task.kind})")
    return suite


def _draw_dataset(spec: SyntheticTaskSpec, generator: LatentGenerator, input_width: int) -> Dataset:
    rng = _rng(spec.generator_seed)
    n = spec.train_size + spec.dev_size
    x = rng.standard_normal((n, input_width))
    y = label_projection(spec, generator(x) @ np.asarray(spec.direction), rng)
    draws = np.arange(n, dtype=np.int64)
    train_y, dev_y = y[: spec.train_size], y[spec.train_size :]

    if spec.kind == "regression":
        task_spec = TaskSpec(
            task_id=spec.task_id,
            kind="regression",
            num_classes=1,
            metric="spearman",
            train_size=spec.train_size,
            label_min=float(train_y.min()),
            label_max=float(train_y.max()),
        )
    else:
        task_spec = TaskSpec(
            task_id=spec.task_id, kind="classification", num_classes=2, metric=spec.metric, train_size=spec.train_size
        )
    return Dataset(
        spec=task_spec,
        train_x=x[: spec.train_size],
        train_y=train_y,
        dev_x=x[spec.train_size :],
        dev_y=dev_y,
        train_draws=draws[: spec.train_size],
        dev_draws=draws[spec.train_size :],
    )
