"""Method registry, named studies and the recipes that turn a method into dev scores."""

import logging
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Optional, Sequence

from ..config import Settings
from ..distill import TeacherAssignment
from ..errors import UnknownMethodError
from ..metrics import evaluate_model
from ..models import Dataset, MethodSpec, TrainConfig
from ..network import Checkpoint, MultiTaskModel, file_digest, load_checkpoint, save_checkpoint
from ..sampling import derive_seed
from .training import finetune_single, train_multi, train_teacher

logger = logging.getLogger(__name__)

SUBSET_PATTERN = re.compile(r"^Single->Multi\[(.+)\]$")

_TEACHERS_ON = {"teacher_mode": "single_teachers", "anneal": "on"}

REGISTRY: dict[str, MethodSpec] = {
    m.name: m
    for m in [
        MethodSpec(name="Single", recipe="single"),
        MethodSpec(name="Multi", recipe="multi"),
        MethodSpec(name="Single->Single", recipe="single_to_single", **_TEACHERS_ON),
        MethodSpec(name="Multi->Multi", recipe="multi_to_multi", teacher_mode="multi_teacher", anneal="on"),
        MethodSpec(name="Single->Multi", recipe="single_to_multi", **_TEACHERS_ON),
        MethodSpec(name="Single->Multi->Single->Multi", recipe="chained", **_TEACHERS_ON),
        MethodSpec(name="Multi+FT", recipe="multi", finetune=True),
        MethodSpec(name="Single->Multi+FT", recipe="single_to_multi", finetune=True, **_TEACHERS_ON),
        MethodSpec(name="Single->Multi/no-layerwise-lr", recipe="single_to_multi", layer_decay=1.0, **_TEACHERS_ON),
        MethodSpec(name="Single->Multi/no-task-sampling", recipe="single_to_multi", sampling_exponent=1.0,
                   **_TEACHERS_ON),
        MethodSpec(name="Single->Multi/lambda=0", recipe="single_to_multi", teacher_mode="single_teachers",
                   anneal="fixed", fixed_lambda=0.0),
        MethodSpec(name="Single->Multi/lambda=0.5", recipe="single_to_multi", teacher_mode="single_teachers",
                   anneal="fixed", fixed_lambda=0.5),
        MethodSpec(name="Single->Multi/lambda=1", recipe="single_to_multi", teacher_mode="single_teachers",
                   anneal="fixed", fixed_lambda=1.0),
    ]
}

STUDIES = {
    "main": ["Single", "Multi", "Single->Single", "Multi->Multi", "Single->Multi"],
    "finetune": ["Single", "Multi", "Multi+FT", "Single->Multi", "Single->Multi+FT", "Single->Multi->Single->Multi"],
    "ablation": [
        "Multi",
        "Single->Multi",
        "Single->Multi/no-layerwise-lr",
        "Single->Multi/no-task-sampling",
        "Single->Multi/lambda=0",
        "Single->Multi/lambda=0.5",
        "Single->Multi/lambda=1",
    ],
}


def subset_name(task_ids: Sequence[str]) -> str:
    return f"Single->Multi[{'+'.join(task_ids)}]"


def get_method(name: str, task_ids: Sequence[str]) -> MethodSpec:
    """Look up a registered method or parse a ``Single->Multi[A+B]`` task subset."""
    if name in REGISTRY:
        return REGISTRY[name]
    match = SUBSET_PATTERN.match(name)
    if match is None:
        raise UnknownMethodError(f"unknown method {name!r}; known: {sorted(REGISTRY)}")
    subset = match.group(1).split("+")
    unknown = [t for t in subset if t not in task_ids]
    if unknown or len(set(subset)) != len(subset):
        raise UnknownMethodError(f"{name}: bad task subset (suite has {list(task_ids)})")
    recipe = "single_to_single" if len(subset) == 1 else "single_to_multi"
    return MethodSpec(name=name, recipe=recipe, tasks=subset, **_TEACHERS_ON)


def task_subset_study(task_ids: Sequence[str], related: Mapping[str, Optional[str]]) -> list[str]:
    """Which tasks help the small related task: alone, with its partner, with the rest, with all."""
    focus = next((t for t in task_ids if related.get(t)), task_ids[0])
    partner = related.get(focus)
    others = [t for t in task_ids if t not in (focus, partner)]
    names = ["Single", subset_name([focus])]
    if partner:
        names.append(subset_name([focus, partner]))
    if others:
        names.append(subset_name([focus] + others))
    names.append("Single->Multi")
    return names


def study_methods(study: str, task_ids: Sequence[str], related: Mapping[str, Optional[str]]) -> list[MethodSpec]:
    if study == "tasks":
        names = task_subset_study(task_ids, related)
    elif study == "all":
        names = []
        for group in list(STUDIES.values()) + [task_subset_study(task_ids, related)]:
            names += [n for n in group if n not in names]
    elif study in STUDIES:
        names = STUDIES[study]
    else:
        raise UnknownMethodError(f"unknown study {study!r}; known: {sorted(STUDIES) + ['tasks', 'all']}")
    return [get_method(name, task_ids) for name in names]


def needs_single_teachers(method: MethodSpec) -> bool:
    return method.recipe in ("single", "single_to_single", "single_to_multi", "chained")


class TeacherStore:
    """Teacher checkpoints on disk, shared by every cell that uses the same teacher seed.

    Files live under ``<root>/<teacher seed>/`` and are named by role, tasks
    and config digest; loaded teachers are memoized per process.
    """

    def __init__(self, root: str | Path, settings: Settings, datasets: Mapping[str, Dataset]):
        self.root = Path(root)
        self.settings = settings
        self.datasets = datasets
        self.digest = settings.digest()
        self._loaded: dict[Path, tuple[MultiTaskModel, str]] = {}

    def teacher_seed(self, seed: int) -> int:
        return seed if self.settings.TEACHER_PROVENANCE == "fresh" else self.settings.SHARED_TEACHER_SEED

    def single_path(self, task_id: str, seed: int) -> Path:
        return self.root / str(seed) / f"single-{task_id}-{self.digest}.ckpt"

    def multi_path(self, task_ids: Sequence[str], seed: int) -> Path:
        return self.root / str(seed) / f"multi-{'+'.join(task_ids)}-{self.digest}.ckpt"

    def _get(self, path: Path, task_ids: Sequence[str], train) -> tuple[MultiTaskModel, str]:
        if path in self._loaded:
            return self._loaded[path]
        if path.exists():
            model = load_checkpoint(path, expected_tasks=task_ids).model
            sha = file_digest(path)
            logger.info(f"Loaded teacher {path.name} ({sha[:12]})")
        else:
            checkpoint = train()
            sha = save_checkpoint(checkpoint, path)
            model = checkpoint.model
            logger.info(f"Saved teacher {path.name} ({sha[:12]})")
        self._loaded[path] = (model, sha)
        return model, sha

    def single(self, task_id: str, seed: int) -> tuple[MultiTaskModel, str]:
        """Single-task model for ``task_id`` at exactly ``seed`` (alpha picked on dev)."""
        s = self.settings
        configs = [s.train_config("teacher", layer_decay=a) for a in s.teacher_alphas()]
        return self._get(
            self.single_path(task_id, seed),
            [task_id],
            lambda: train_teacher(task_id, self.datasets, s.trunk_config(), configs, seed, self.digest).checkpoint,
        )

    def multi(self, task_ids: Sequence[str], seed: int) -> tuple[MultiTaskModel, str]:
        """Multi-task model over ``task_ids`` trained on gold labels at exactly ``seed``."""
        s = self.settings
        return self._get(
            self.multi_path(task_ids, seed),
            list(task_ids),
            lambda: train_multi(
                list(task_ids), self.datasets, s.trunk_config(), s.train_config("student"),
                TeacherAssignment.none(), "off", seed, config_digest=self.digest,
            ).checkpoint,
        )

    def save_stage(self, name: str, seed: int, checkpoint: Checkpoint) -> str:
        """Persist an intermediate chained-distillation model and return its content hash."""
        return save_checkpoint(checkpoint, self.root / "chained" / str(seed) / f"{name}-{self.digest}.ckpt")

    def cache_dir(self) -> Optional[Path]:
        return self.root / "predictions" if self.settings.TEACHER_CACHE else None


@dataclass
class MethodOutcome:
    scores: dict[str, float]
    teachers: dict[str, str] = field(default_factory=dict)
    checkpoints: dict[str, Checkpoint] = field(default_factory=dict)


def student_config(settings: Settings, method: MethodSpec) -> TrainConfig:
    config = settings.train_config("student")
    if method.layer_decay is not None:
        config = config.model_copy(update={"optim": config.optim.model_copy(update={"layer_decay": method.layer_decay})})
    if method.sampling_exponent is not None:
        config = config.model_copy(update={"sampling_exponent": method.sampling_exponent})
    return config


def _with_cache(assignment: TeacherAssignment, store: TeacherStore, datasets, task_ids, hashes) -> TeacherAssignment:
    if store.settings.TEACHER_CACHE:
        assignment.build_cache(datasets, task_ids, store.cache_dir(), hashes)
    return assignment


def _finetuned(
    result_checkpoint: Checkpoint, task_ids: Sequence[str], datasets, settings: Settings, seed: int
) -> MethodOutcome:
    config = settings.train_config("finetune")
    outcome = MethodOutcome(scores={})
    for task_id in task_ids:
        tuned = finetune_single(result_checkpoint, task_id, datasets, config, seed)
        outcome.scores[task_id] = evaluate_model(tuned.model, datasets, [task_id])[task_id]
        outcome.checkpoints[f"finetuned-{task_id}"] = tuned.checkpoint
    return outcome


def run_method(
    method: MethodSpec,
    seed: int,
    datasets: Mapping[str, Dataset],
    suite_task_ids: Sequence[str],
    settings: Settings,
    store: TeacherStore,
) -> MethodOutcome:
    """Train whatever ``method`` needs for one trial seed and score it on dev."""
    task_ids = list(method.tasks) if method.tasks else list(suite_task_ids)
    trunk = settings.trunk_config()
    digest = store.digest
    tseed = store.teacher_seed(seed)

    if method.recipe == "single":
        outcome = MethodOutcome(scores={})
        for task_id in task_ids:
            model, _ = store.single(task_id, seed)
            outcome.scores[task_id] = evaluate_model(model, datasets, [task_id])[task_id]
        return outcome

    if method.recipe == "multi":
        if method.finetune:
            model, _ = store.multi(task_ids, seed)
            return _finetuned(Checkpoint(model, digest, seed), task_ids, datasets, settings, seed)
        result = train_multi(task_ids, datasets, trunk, student_config(settings, method), TeacherAssignment.none(),
                             "off", seed, config_digest=digest)
        return MethodOutcome(evaluate_model(result.model, datasets, task_ids), {}, {"student": result.checkpoint})

    if method.recipe == "multi_to_multi":
        teacher, sha = store.multi(task_ids, tseed)
        assignment = _with_cache(TeacherAssignment.multi(teacher, task_ids), store, datasets, task_ids,
                                 {t: sha for t in task_ids})
        result = train_multi(task_ids, datasets, trunk, student_config(settings, method), assignment, method.anneal,
                             seed, method.fixed_lambda, digest)
        return MethodOutcome(evaluate_model(result.model, datasets, task_ids), {"multi": sha},
                             {"student": result.checkpoint})

    singles = {t: store.single(t, tseed) for t in task_ids}
    hashes = {t: sha for t, (_, sha) in singles.items()}

    if method.recipe == "single_to_single":
        outcome = MethodOutcome(scores={}, teachers=dict(hashes))
        for task_id in task_ids:
            assignment = _with_cache(TeacherAssignment.single({task_id: singles[task_id][0]}), store, datasets,
                                     [task_id], hashes)
            result = train_multi([task_id], datasets, trunk, settings.train_config("teacher"), assignment,
                                 method.anneal, derive_seed(seed, "born-again", task_id), method.fixed_lambda,
                                 digest, label=f"born-again {task_id}")
            outcome.scores[task_id] = evaluate_model(result.model, datasets, [task_id])[task_id]
            outcome.checkpoints[f"student-{task_id}"] = result.checkpoint
        return outcome

    assignment = _with_cache(TeacherAssignment.single({t: m for t, (m, _) in singles.items()}), store, datasets,
                             task_ids, hashes)
    result = train_multi(task_ids, datasets, trunk, student_config(settings, method), assignment, method.anneal, seed,
                         method.fixed_lambda, digest)

    if method.recipe == "single_to_multi":
        if method.finetune:
            outcome = _finetuned(result.checkpoint, task_ids, datasets, settings, seed)
            outcome.teachers = dict(hashes)
            return outcome
        return MethodOutcome(evaluate_model(result.model, datasets, task_ids), dict(hashes),
                             {"student": result.checkpoint})

    # chained: single teachers -> multi student -> single students -> multi student
    teachers = {f"s1:{t}": sha for t, sha in hashes.items()}
    teachers["s2:multi"] = store.save_stage("s2-multi", seed, result.checkpoint)
    stage3 = {}
    for task_id in task_ids:
        single = train_multi([task_id], datasets, trunk, settings.train_config("teacher"),
                             TeacherAssignment.multi(result.model, [task_id]), "on",
                             derive_seed(seed, "chain-single", task_id), config_digest=digest,
                             label=f"chain single {task_id}")
        stage3[task_id] = single.model
        teachers[f"s3:{task_id}"] = store.save_stage(f"s3-{task_id}", seed, single.checkpoint)
    final = train_multi(task_ids, datasets, trunk, student_config(settings, method), TeacherAssignment.single(stage3),
                        "on", derive_seed(seed, "chain-multi"), config_digest=digest, label="chain multi")
    return MethodOutcome(evaluate_model(final.model, datasets, task_ids), teachers, {"student": final.checkpoint})
