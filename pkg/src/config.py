"""Central configuration management using environment variables or a flat config file."""

import hashlib
import json
from pathlib import Path
from typing import Literal, Optional

from dotenv import dotenv_values
from pydantic import BaseModel, Field
from pydantic_settings import BaseSettings, SettingsConfigDict

from .models import (
    OptimConfig,
    SuiteConfig,
    SyntheticTaskConfig,
    TrainConfig,
    TrunkConfig,
)

Role = Literal["teacher", "student", "finetune"]

# Settings that never change what a training run computes.
_NON_TRAINING_KEYS = {
    "OUTPUT_DIR",
    "DATA_DIR",
    "PARALLEL",
    "NUM_SEEDS",
    "STUDY",
    "TEACHER_CACHE",
    "BOOTSTRAP_RESAMPLES",
    "SIGNIFICANCE_ALPHA",
    "SIGNIFICANCE_TEST",
    "BACKEND_HOST",
    "BACKEND_PORT",
    "SEED",
}


class Settings(BaseSettings):
    """Application settings loaded from environment variables or a ``KEY=VALUE`` file."""

    model_config = SettingsConfigDict(
        env_file=".env",
        env_file_encoding="utf-8",
        case_sensitive=True,
        extra="ignore",
    )

    # Paths
    OUTPUT_DIR: str = Field(default="results", description="Directory for checkpoints, results and reports")
    DATA_DIR: str = Field(default="data", description="Directory holding the synthetic suite files")
    SEED: int = Field(default=0, description="Seed for single runs and for report resampling")

    # Trunk shape
    INPUT_WIDTH: int = Field(default=32, description="Feature width of every example")
    HIDDEN_WIDTH: int = Field(default=64, description="Width of each trunk layer")
    HIDDEN_LAYERS: int = Field(default=2, description="Number of tanh trunk layers")

    # Synthetic suite
    SUITE_SEED: int = Field(default=1234, description="Generator seed of the synthetic suite")
    LATENT_WIDTH: int = Field(default=8, description="Width of the shared latent map")
    BIG_A_SIZE: int = Field(default=20000, description="Train size of BIG-A")
    SMALL_A_SIZE: int = Field(default=500, description="Train size of SMALL-A (related to BIG-A)")
    MED_B_SIZE: int = Field(default=2000, description="Train size of MED-B (independent)")
    REG_C_SIZE: int = Field(default=2000, description="Train size of REG-C (regression)")
    DEV_SIZE: int = Field(default=1000, description="Dev size of every task")
    LABEL_NOISE: float = Field(default=0.1, description="Label flip rate of classification tasks")
    RELATED_PERTURBATION: float = Field(default=0.2, description="How far SMALL-A's head strays from BIG-A's")

    # Teacher (single-task) recipe
    TEACHER_BASE_LR: float = Field(default=1e-4, description="Single-task base learning rate")
    TEACHER_BATCH_SIZE: int = Field(default=32, description="Single-task batch size")
    TEACHER_EPOCHS: int = Field(default=3, description="Single-task epochs")
    TEACHER_ALPHAS: str = Field(default="1.0,0.9", description="Layerwise decay candidates picked on dev")

    # Student (multi-task) recipe
    STUDENT_BASE_LR: float = Field(default=1e-4, description="Multi-task base learning rate")
    STUDENT_LAYER_DECAY: float = Field(default=0.9, description="Multi-task layerwise decay alpha")
    STUDENT_BATCH_SIZE: int = Field(default=32, description="Multi-task batch size (128 in the full recipe)")
    STUDENT_EPOCHS: int = Field(default=6, description="Multi-task epochs")
    SAMPLING_EXPONENT: float = Field(default=0.75, description="Task sampling exponent e in |D|^e")
    ANNEAL_GRANULARITY: Literal["step", "epoch"] = Field(
        default="step", description="Advance lambda per optimizer step or per epoch"
    )

    # Fine-tuning
    FINETUNE_LR_SCALE: float = Field(default=0.1, description="Fine-tune lr = teacher lr * scale")
    FINETUNE_EPOCHS: int = Field(default=3, description="Single-task fine-tuning epochs")

    # Run matrix
    STUDY: str = Field(default="main", description="Named method grid: main, finetune, ablation, tasks, all")
    NUM_SEEDS: int = Field(default=20, description="Trials per method")
    PARALLEL: int = Field(default=1, description="Worker processes for matrix cells")
    TEACHER_PROVENANCE: Literal["fresh", "shared"] = Field(
        default="fresh", description="Train teachers per trial seed or share one set"
    )
    SHARED_TEACHER_SEED: int = Field(default=0, description="Teacher seed in shared provenance mode")
    TEACHER_CACHE: bool = Field(default=False, description="Persist per-example teacher predictions")

    # Statistics
    BOOTSTRAP_RESAMPLES: int = Field(default=10000, description="Bootstrap resamples per test")
    SIGNIFICANCE_ALPHA: float = Field(default=0.05, description="Family-wise alpha for Holm correction")
    SIGNIFICANCE_TEST: Literal["bootstrap", "mannwhitney"] = Field(
        default="bootstrap", description="Test used by the significance report"
    )

    # Results API
    BACKEND_PORT: int = Field(default=8000, description="Results API port")
    BACKEND_HOST: str = Field(default="0.0.0.0", description="Results API host")

    def get_output_dir(self) -> Path:
        return Path(self.OUTPUT_DIR)

    def get_data_dir(self) -> Path:
        return Path(self.DATA_DIR)

    def teacher_alphas(self) -> list[float]:
        alphas = [float(a) for a in self.TEACHER_ALPHAS.split(",") if a.strip()]
        if not alphas:
            raise ValueError("TEACHER_ALPHAS must list at least one value")
        return alphas

    def trunk_config(self) -> TrunkConfig:
        return TrunkConfig(
            input_width=self.INPUT_WIDTH,
            hidden_width=self.HIDDEN_WIDTH,
            hidden_layers=self.HIDDEN_LAYERS,
        )

    def train_config(self, role: Role, layer_decay: Optional[float] = None) -> TrainConfig:
        """Build the recipe of one training role.

        Teachers and fine-tuning use the single-task recipe; ``layer_decay``
        picks among the teacher alpha candidates.
        """
        if role == "student":
            return TrainConfig(
                optim=OptimConfig(base_lr=self.STUDENT_BASE_LR, layer_decay=self.STUDENT_LAYER_DECAY),
                batch_size=self.STUDENT_BATCH_SIZE,
                epochs=self.STUDENT_EPOCHS,
                sampling_exponent=self.SAMPLING_EXPONENT,
                anneal_granularity=self.ANNEAL_GRANULARITY,
            )
        alpha = layer_decay if layer_decay is not None else self.teacher_alphas()[0]
        if role == "teacher":
            return TrainConfig(
                optim=OptimConfig(base_lr=self.TEACHER_BASE_LR, layer_decay=alpha),
                batch_size=self.TEACHER_BATCH_SIZE,
                epochs=self.TEACHER_EPOCHS,
                sampling_exponent=self.SAMPLING_EXPONENT,
                anneal_granularity=self.ANNEAL_GRANULARITY,
            )
        return TrainConfig(
            optim=OptimConfig(base_lr=self.TEACHER_BASE_LR * self.FINETUNE_LR_SCALE, layer_decay=alpha),
            batch_size=self.TEACHER_BATCH_SIZE,
            epochs=self.FINETUNE_EPOCHS,
            sampling_exponent=self.SAMPLING_EXPONENT,
            anneal_granularity=self.ANNEAL_GRANULARITY,
        )

    def suite_config(self) -> SuiteConfig:
        """The default four-task suite: a related large/small pair, an unrelated task, a regression task."""
        return SuiteConfig(
            tasks=[
                SyntheticTaskConfig(
                    task_id="BIG-A", train_size=self.BIG_A_SIZE, dev_size=self.DEV_SIZE, noise=self.LABEL_NOISE
                ),
                SyntheticTaskConfig(
                    task_id="SMALL-A",
                    train_size=self.SMALL_A_SIZE,
                    dev_size=self.DEV_SIZE,
                    noise=self.LABEL_NOISE,
                    related_to="BIG-A",
                ),
                SyntheticTaskConfig(
                    task_id="MED-B",
                    metric="matthews",
                    train_size=self.MED_B_SIZE,
                    dev_size=self.DEV_SIZE,
                    noise=self.LABEL_NOISE,
                ),
                SyntheticTaskConfig(
                    task_id="REG-C",
                    kind="regression",
                    metric="spearman",
                    train_size=self.REG_C_SIZE,
                    dev_size=self.DEV_SIZE,
                    noise=0.0,
                ),
            ],
            input_width=self.INPUT_WIDTH,
            latent_width=self.LATENT_WIDTH,
            perturbation=self.RELATED_PERTURBATION,
        )

    def digest(self) -> str:
        """Digest of every setting that influences what training computes."""
        relevant = {k: v for k, v in self.model_dump().items() if k not in _NON_TRAINING_KEYS}
        return config_digest(relevant)


def config_digest(obj: BaseModel | dict) -> str:
    """First 16 hex chars of the SHA-256 of a canonical JSON dump."""
    payload = obj.model_dump(mode="json") if isinstance(obj, BaseModel) else obj
    text = json.dumps(payload, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(text.encode("utf-8")).hexdigest()[:16]


def load_settings(path: str | Path | None = None, **overrides) -> Settings:
    """Read a flat ``KEY=VALUE`` file (dotenv syntax) into validated settings.

    Keys in the file win over the environment; ``overrides`` win over both.
    """
    values: dict = {}
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise FileNotFoundError(f"config file not found: {path}")
        values = {k: v for k, v in dotenv_values(path).items() if v is not None}
        unknown = sorted(set(values) - set(Settings.model_fields))
        if unknown:
            raise ValueError(f"{path}: unknown config keys {unknown}")
    values.update({k: v for k, v in overrides.items() if v is not None})
    return Settings(**values)


# Global settings instance
settings = Settings()
