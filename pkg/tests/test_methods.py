import pytest

from src.config import load_settings
from src.errors import UnknownMethodError
from src.harness.methods import (
    REGISTRY,
    STUDIES,
    TeacherStore,
    get_method,
    needs_single_teachers,
    run_method,
    student_config,
    study_methods,
    subset_name,
    task_subset_study,
)
from src.models import MethodSpec
from src.network import file_digest

TASKS = ["BIG-A", "SMALL-A", "MED-B", "REG-C"]
RELATED = {"BIG-A": None, "SMALL-A": "BIG-A", "MED-B": None, "REG-C": None}


def test_registry_covers_every_study():
    assert len(REGISTRY) == 13
    for names in STUDIES.values():
        assert all(name in REGISTRY for name in names)


def test_subset_methods_are_parsed():
    pair = get_method("Single->Multi[SMALL-A+BIG-A]", TASKS)
    assert pair.recipe == "single_to_multi"
    assert pair.tasks == ["SMALL-A", "BIG-A"]
    alone = get_method(subset_name(["SMALL-A"]), TASKS)
    assert alone.recipe == "single_to_single"
    assert alone.anneal == "on"


@pytest.mark.parametrize("name", ["Bogus", "Single->Multi[SMALL-A+NOPE]", "Single->Multi[BIG-A+BIG-A]"])
def test_unknown_methods(name):
    with pytest.raises(UnknownMethodError):
        get_method(name, TASKS)


def test_task_subset_study_centres_on_related_task():
    assert task_subset_study(TASKS, RELATED) == [
        "Single",
        "Single->Multi[SMALL-A]",
        "Single->Multi[SMALL-A+BIG-A]",
        "Single->Multi[SMALL-A+MED-B+REG-C]",
        "Single->Multi",
    ]


def test_named_studies():
    assert [m.name for m in study_methods("main", TASKS, RELATED)] == STUDIES["main"]
    everything = [m.name for m in study_methods("all", TASKS, RELATED)]
    assert len(everything) == len(set(everything))
    assert set(REGISTRY) <= set(everything)
    assert "Single->Multi[SMALL-A+BIG-A]" in everything
    with pytest.raises(UnknownMethodError):
        study_methods("nope", TASKS, RELATED)


def test_inconsistent_method_specs_rejected():
    with pytest.raises(ValueError):
        MethodSpec(name="x", recipe="multi", teacher_mode="single_teachers", anneal="on")
    with pytest.raises(ValueError):
        MethodSpec(name="x", recipe="single_to_multi", teacher_mode="single_teachers", anneal="off")
    with pytest.raises(ValueError):
        MethodSpec(name="x", recipe="single_to_multi", teacher_mode="single_teachers", anneal="on", fixed_lambda=0.5)
    with pytest.raises(ValueError):
        MethodSpec(name="x", recipe="single", finetune=True)


def test_student_config_overrides(tiny_settings):
    base = student_config(tiny_settings, REGISTRY["Single->Multi"])
    no_lw = student_config(tiny_settings, REGISTRY["Single->Multi/no-layerwise-lr"])
    no_ts = student_config(tiny_settings, REGISTRY["Single->Multi/no-task-sampling"])
    assert base.optim.layer_decay == tiny_settings.STUDENT_LAYER_DECAY
    assert no_lw.optim.layer_decay == 1.0
    assert no_lw.optim.base_lr == base.optim.base_lr
    assert no_ts.sampling_exponent == 1.0
    assert base.sampling_exponent == 0.75


def test_needs_single_teachers():
    assert needs_single_teachers(REGISTRY["Single->Multi"])
    assert needs_single_teachers(REGISTRY["Single"])
    assert not needs_single_teachers(REGISTRY["Multi->Multi"])
    assert not needs_single_teachers(REGISTRY["Multi"])


def test_teacher_seed_follows_provenance(tmp_path, tiny_suite):
    fresh = TeacherStore(tmp_path, load_settings(None, TEACHER_PROVENANCE="fresh"), tiny_suite.datasets)
    shared = TeacherStore(
        tmp_path, load_settings(None, TEACHER_PROVENANCE="shared", SHARED_TEACHER_SEED=42), tiny_suite.datasets
    )
    assert fresh.teacher_seed(7) == 7
    assert shared.teacher_seed(7) == 42


def test_teachers_are_trained_once_and_reloaded(tmp_path, tiny_settings, tiny_suite):
    store = TeacherStore(tmp_path, tiny_settings, tiny_suite.datasets)
    model, sha = store.single("MED-B", 3)
    path = store.single_path("MED-B", 3)
    assert path.exists()
    assert file_digest(path) == sha
    assert store.single("MED-B", 3)[0] is model

    reopened = TeacherStore(tmp_path, tiny_settings, tiny_suite.datasets)
    again, again_sha = reopened.single("MED-B", 3)
    assert again_sha == sha
    assert again.task_ids == ["MED-B"]


def test_subset_method_scores_only_its_tasks(tmp_path, tiny_settings, tiny_suite):
    store = TeacherStore(tmp_path, tiny_settings, tiny_suite.datasets)
    method = get_method("Single->Multi[SMALL-A+BIG-A]", tiny_suite.task_ids)
    outcome = run_method(method, 0, tiny_suite.datasets, tiny_suite.task_ids, tiny_settings, store)
    assert sorted(outcome.scores) == ["BIG-A", "SMALL-A"]
    assert sorted(outcome.teachers) == ["BIG-A", "SMALL-A"]
    assert outcome.checkpoints["student"].model.task_ids == ["SMALL-A", "BIG-A"]


def test_chained_method_records_every_stage(tmp_path, tiny_settings, tiny_suite):
    store = TeacherStore(tmp_path, tiny_settings, tiny_suite.datasets)
    method = MethodSpec(
        name="chain", recipe="chained", teacher_mode="single_teachers", anneal="on", tasks=["BIG-A", "MED-B"]
    )
    outcome = run_method(method, 1, tiny_suite.datasets, tiny_suite.task_ids, tiny_settings, store)
    assert sorted(outcome.teachers) == ["s1:BIG-A", "s1:MED-B", "s2:multi", "s3:BIG-A", "s3:MED-B"]
    assert len(list((tmp_path / "chained" / "1").glob("*.ckpt"))) == 3


def test_finetuned_multi_scores_every_task(tmp_path, tiny_settings, tiny_suite):
    store = TeacherStore(tmp_path, tiny_settings, tiny_suite.datasets)
    outcome = run_method(REGISTRY["Multi+FT"], 2, tiny_suite.datasets, tiny_suite.task_ids, tiny_settings, store)
    assert sorted(outcome.scores) == sorted(tiny_suite.task_ids)
    assert sorted(outcome.checkpoints) == sorted(f"finetuned-{t}" for t in tiny_suite.task_ids)


def test_teacher_prediction_cache_is_written(tmp_path, tiny_suite):
    settings = load_settings(
        None, INPUT_WIDTH=8, HIDDEN_WIDTH=6, HIDDEN_LAYERS=1, TEACHER_EPOCHS=1, STUDENT_EPOCHS=1, TEACHER_CACHE=True,
        TEACHER_BASE_LR=1e-2, STUDENT_BASE_LR=1e-2,
    )
    store = TeacherStore(tmp_path, settings, tiny_suite.datasets)
    run_method(get_method("Single->Multi[BIG-A+MED-B]", tiny_suite.task_ids), 0, tiny_suite.datasets,
               tiny_suite.task_ids, settings, store)
    assert len(list((tmp_path / "predictions").glob("*.npy"))) == 2
