import os

import numpy as np
import pytest

from src.config import load_settings
from src.models import SuiteConfig, SyntheticTaskConfig, TaskSpec, TrunkConfig
from src.network import init_model
from src.synthdata import gen_suite


def pytest_collection_modifyitems(config, items):
    if os.environ.get("BAM_RUN_SLOW") == "1":
        return
    skip_slow = pytest.mark.skip(reason="set BAM_RUN_SLOW=1 to run")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture(scope="session")
def tiny_suite_config():
    return SuiteConfig(
        tasks=[
            SyntheticTaskConfig(task_id="BIG-A", train_size=300, dev_size=120),
            SyntheticTaskConfig(task_id="SMALL-A", train_size=50, dev_size=120, related_to="BIG-A"),
            SyntheticTaskConfig(task_id="MED-B", metric="matthews", train_size=100, dev_size=120),
            SyntheticTaskConfig(task_id="REG-C", kind="regression", metric="spearman", train_size=100, dev_size=120,
                                noise=0.0),
        ],
        input_width=8,
        latent_width=4,
        calibration_size=2000,
    )


@pytest.fixture(scope="session")
def tiny_suite(tiny_suite_config):
    return gen_suite(tiny_suite_config, seed=7)


@pytest.fixture
def trunk():
    return TrunkConfig(input_width=8, hidden_width=6, hidden_layers=2)


@pytest.fixture
def task_specs():
    return [
        TaskSpec(task_id="cls3", kind="classification", num_classes=3, metric="accuracy"),
        TaskSpec(task_id="bin", kind="classification", num_classes=2, metric="matthews"),
        TaskSpec(task_id="reg", kind="regression", num_classes=1, metric="spearman"),
    ]


@pytest.fixture
def random_model(trunk, task_specs):
    """A model whose heads are nonzero, so every parameter influences the loss."""
    model = init_model(trunk, task_specs, seed=3)
    rng = np.random.default_rng(11)
    for name in model.params:
        if name.startswith("head.") or name.endswith(".bias"):
            model.params[name] = rng.normal(scale=0.5, size=model.params[name].shape)
    return model


@pytest.fixture
def tiny_settings(tmp_path):
    return load_settings(
        None,
        OUTPUT_DIR=str(tmp_path / "out"),
        DATA_DIR=str(tmp_path / "data"),
        INPUT_WIDTH=8,
        HIDDEN_WIDTH=6,
        HIDDEN_LAYERS=1,
        LATENT_WIDTH=4,
        BIG_A_SIZE=160,
        SMALL_A_SIZE=40,
        MED_B_SIZE=60,
        REG_C_SIZE=60,
        DEV_SIZE=50,
        TEACHER_BASE_LR=1e-2,
        TEACHER_EPOCHS=1,
        STUDENT_BASE_LR=1e-2,
        STUDENT_EPOCHS=1,
        FINETUNE_EPOCHS=1,
        BOOTSTRAP_RESAMPLES=1000,
    )
