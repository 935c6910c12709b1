import numpy as np
import pytest

from src.distill import TeacherAssignment
from src.errors import DivergenceError, TeacherAssignmentError, UnknownTaskError
from src.harness import training
from src.harness.training import (
    epoch_boundaries,
    finetune_single,
    train_loss,
    train_multi,
    train_single,
    train_teacher,
)
from src.models import OptimConfig, TrainConfig, TrunkConfig
from src.tensor import Tensor

TASKS = ["BIG-A", "SMALL-A", "MED-B", "REG-C"]


@pytest.fixture
def small_trunk():
    return TrunkConfig(input_width=8, hidden_width=6, hidden_layers=1)


def config(epochs=1, lr=1e-2, alpha=0.9, batch_size=16, granularity="step"):
    return TrainConfig(
        optim=OptimConfig(base_lr=lr, layer_decay=alpha),
        batch_size=batch_size,
        epochs=epochs,
        anneal_granularity=granularity,
    )


def assert_same_params(a, b):
    assert list(a.params) == list(b.params)
    for name in a.params:
        np.testing.assert_array_equal(a.params[name], b.params[name])


def test_epoch_boundaries():
    assert epoch_boundaries([16, 81], 32, 3) == [4, 7, 10]
    assert epoch_boundaries([3], 32, 3) == [1, 1, 1]


def test_supervised_training_reduces_loss(tiny_suite, small_trunk):
    datasets = tiny_suite.datasets
    before = train_multi(TASKS, datasets, small_trunk, config(epochs=0), TeacherAssignment.none(), "off", seed=1)
    after = train_multi(TASKS, datasets, small_trunk, config(epochs=3), TeacherAssignment.none(), "off", seed=1)
    assert train_loss(after.model, datasets, TASKS) < train_loss(before.model, datasets, TASKS)
    assert len(after.log.epoch_losses) == 3
    assert len(after.log.dev_scores) == 3
    assert after.log.steps == len(after.log.step_losses)


def test_training_is_deterministic(tiny_suite, small_trunk):
    runs = [
        train_multi(TASKS, tiny_suite.datasets, small_trunk, config(), TeacherAssignment.none(), "off", seed=5)
        for _ in range(2)
    ]
    assert_same_params(runs[0].model, runs[1].model)
    assert runs[0].log.step_losses == runs[1].log.step_losses
    other = train_multi(TASKS, tiny_suite.datasets, small_trunk, config(), TeacherAssignment.none(), "off", seed=6)
    assert not np.array_equal(other.model.params["trunk.0.weight"], runs[0].model.params["trunk.0.weight"])


def test_zero_epochs_returns_initial_model(tiny_suite, small_trunk):
    a = train_single("MED-B", tiny_suite.datasets, small_trunk, config(epochs=0), seed=2)
    b = train_single("MED-B", tiny_suite.datasets, small_trunk, config(epochs=0), seed=2)
    assert a.log.steps == 0
    assert a.log.step_losses == []
    assert not a.model.params["head.MED-B.weight"].any()
    assert_same_params(a.model, b.model)


def test_gold_only_student_equals_lambda_one_student(tiny_suite, small_trunk):
    datasets = tiny_suite.datasets
    teachers = TeacherAssignment.single(
        {t: train_single(t, datasets, small_trunk, config(), seed=3).model for t in TASKS}
    )
    plain = train_multi(TASKS, datasets, small_trunk, config(), TeacherAssignment.none(), "off", seed=9)
    fixed = train_multi(TASKS, datasets, small_trunk, config(), teachers, "fixed", seed=9, fixed_lambda=1.0)
    assert_same_params(plain.model, fixed.model)
    assert plain.log.step_losses == fixed.log.step_losses


def test_annealing_runs_from_zero_to_one(tiny_suite, small_trunk):
    datasets = tiny_suite.datasets
    teacher = train_multi(TASKS, datasets, small_trunk, config(), TeacherAssignment.none(), "off", seed=0).model
    result = train_multi(TASKS, datasets, small_trunk, config(epochs=2), TeacherAssignment.multi(teacher), "on", seed=4)
    assert result.log.first_lambda == 0.0
    assert result.log.last_lambda == 1.0

    per_epoch = train_multi(
        TASKS, datasets, small_trunk, config(epochs=2, granularity="epoch"), TeacherAssignment.multi(teacher), "on", seed=4
    )
    assert per_epoch.log.first_lambda == 0.0
    assert per_epoch.log.last_lambda == 1.0


def test_pure_distillation_differs_from_gold(tiny_suite, small_trunk):
    datasets = tiny_suite.datasets
    teacher = train_multi(TASKS, datasets, small_trunk, config(), TeacherAssignment.none(), "off", seed=0).model
    gold = train_multi(TASKS, datasets, small_trunk, config(), TeacherAssignment.none(), "off", seed=4)
    distilled = train_multi(
        TASKS, datasets, small_trunk, config(), TeacherAssignment.multi(teacher), "fixed", seed=4, fixed_lambda=0.0
    )
    assert distilled.log.first_lambda == distilled.log.last_lambda == 0.0
    assert not np.array_equal(gold.model.params["trunk.0.weight"], distilled.model.params["trunk.0.weight"])


def test_missing_or_mismatched_teachers_fail_before_training(tiny_suite, small_trunk):
    datasets = tiny_suite.datasets
    teacher = train_single("BIG-A", datasets, small_trunk, config(epochs=0), seed=0).model
    with pytest.raises(TeacherAssignmentError):
        train_multi(TASKS, datasets, small_trunk, config(), TeacherAssignment.single({"BIG-A": teacher}), "on", seed=0)
    wide = train_single("BIG-A", datasets, TrunkConfig(input_width=8, hidden_width=5, hidden_layers=1),
                        config(epochs=0), seed=0).model
    with pytest.raises(TeacherAssignmentError):
        train_multi(["BIG-A"], datasets, small_trunk, config(), TeacherAssignment.single({"BIG-A": wide}), "on", seed=0)
    with pytest.raises(ValueError):
        train_multi(TASKS, datasets, small_trunk, config(), TeacherAssignment.multi(teacher, ["BIG-A"]), "fixed", seed=0)


def test_finetune_moves_only_trunk_and_own_head(tiny_suite, small_trunk):
    datasets = tiny_suite.datasets
    student = train_multi(TASKS, datasets, small_trunk, config(), TeacherAssignment.none(), "off", seed=1)
    tuned = finetune_single(student.checkpoint, "SMALL-A", datasets, config(epochs=2), seed=1)
    for task in ("BIG-A", "MED-B", "REG-C"):
        np.testing.assert_array_equal(
            tuned.model.params[f"head.{task}.weight"], student.model.params[f"head.{task}.weight"]
        )
    assert not np.array_equal(tuned.model.params["head.SMALL-A.weight"], student.model.params["head.SMALL-A.weight"])
    assert not np.array_equal(tuned.model.params["trunk.0.weight"], student.model.params["trunk.0.weight"])
    assert tuned.model.task_ids == student.model.task_ids

    unchanged = finetune_single(student.checkpoint, "SMALL-A", datasets, config(epochs=0), seed=1)
    assert_same_params(unchanged.model, student.model)

    with pytest.raises(UnknownTaskError):
        finetune_single(student.checkpoint, "NOPE", datasets, config(), seed=1)


def test_non_finite_loss_raises(tiny_suite, small_trunk, monkeypatch):
    monkeypatch.setattr(training, "batch_loss", lambda *args, **kwargs: Tensor(float("nan")))
    with pytest.raises(DivergenceError):
        train_single("MED-B", tiny_suite.datasets, small_trunk, config(), seed=0)


def test_teacher_picks_best_alpha(tiny_suite, small_trunk, monkeypatch):
    scores = {1.0: 60.0, 0.5: 75.0, 0.9: 75.0}

    def fake_evaluate(model, datasets, task_ids):
        return {task_ids[0]: scores[current["alpha"]]}

    current = {}
    real_train_single = training.train_single

    def tracking_train_single(task_id, datasets, trunk, config, seed, config_digest=""):
        current["alpha"] = config.optim.layer_decay
        return real_train_single(task_id, datasets, trunk, config, seed, config_digest)

    monkeypatch.setattr(training, "evaluate_model", fake_evaluate)
    monkeypatch.setattr(training, "train_single", tracking_train_single)
    configs = [config(epochs=0, alpha=a) for a in (1.0, 0.5, 0.9)]
    best = train_teacher("MED-B", tiny_suite.datasets, small_trunk, configs, seed=0)
    assert best.log.layer_decay == 0.5

    with pytest.raises(ValueError):
        train_teacher("MED-B", tiny_suite.datasets, small_trunk, [], seed=0)


def test_train_multi_needs_tasks(tiny_suite, small_trunk):
    with pytest.raises(ValueError):
        train_multi([], tiny_suite.datasets, small_trunk, config(), TeacherAssignment.none(), "off", seed=0)


def test_unknown_task_ids_are_rejected(tiny_suite, small_trunk):
    with pytest.raises(UnknownTaskError):
        train_single("NOPE", tiny_suite.datasets, small_trunk, config(), seed=0)
    with pytest.raises(UnknownTaskError):
        train_teacher("NOPE", tiny_suite.datasets, small_trunk, [config()], seed=0)
    with pytest.raises(UnknownTaskError):
        train_multi(["BIG-A", "NOPE"], tiny_suite.datasets, small_trunk, config(), TeacherAssignment.none(), "off", seed=0)
