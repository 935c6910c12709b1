"""Dataset file I/O for synthetic suites.

A task is stored as a directory with three files:

    spec.json   task metadata (TaskSpec plus the generator's SyntheticTaskSpec)
    train.tsv   one example per line: draw index, features..., label
    dev.tsv     same layout as train.tsv

Both TSV files start with a ``#`` header line naming the columns. Floats are
written with ``repr`` so a write/read round trip is lossless.
"""

import json
import logging
from pathlib import Path
from typing import Optional

import numpy as np
from pydantic import ValidationError

from .errors import DatasetFormatError
from .models import Dataset, SuiteConfig, SyntheticTaskSpec, TaskSpec
from .synthdata import LatentGenerator, Suite

logger = logging.getLogger(__name__)

SPEC_FILE = "spec.json"
SUITE_FILE = "suite.json"


def _header(width: int) -> str:
    return "\t".join(["# draw"] + [f"x{i}" for i in range(width)] + ["label"])


def _format_label(value, kind: str) -> str:
    return str(int(value)) if kind == "classification" else repr(float(value))


def _write_split(path: Path, x: np.ndarray, y: np.ndarray, draws: Optional[np.ndarray], kind: str, width: int):
    draws = draws if draws is not None else np.arange(len(x))
    with open(path, "w", encoding="utf-8") as f:
        f.write(_header(width) + "\n")
        for draw, row, label in zip(draws, x, y):
            fields = [str(int(draw))] + [repr(float(v)) for v in row] + [_format_label(label, kind)]
            f.write("\t".join(fields) + "\n")


def _read_split(path: Path, width: int, kind: str) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    if not path.exists():
        raise DatasetFormatError(path, None, "missing split file")
    draws, rows, labels = [], [], []
    expected = width + 2
    with open(path, "r", encoding="utf-8") as f:
        for line_no, line in enumerate(f, start=1):
            line = line.rstrip("\n")
            if not line.strip() or line.startswith("#"):
                continue
            fields = line.split("\t")
            if len(fields) != expected:
                raise DatasetFormatError(path, line_no, f"expected {expected} columns, got {len(fields)}")
            try:
                draws.append(int(fields[0]))
                rows.append([float(v) for v in fields[1:-1]])
                labels.append(int(fields[-1]) if kind == "classification" else float(fields[-1]))
            except ValueError as e:
                raise DatasetFormatError(path, line_no, f"unparseable value ({e})") from None
    x = np.asarray(rows, dtype=np.float64).reshape(len(rows), width)
    y = np.asarray(labels, dtype=np.int64 if kind == "classification" else np.float64)
    return x, y, np.asarray(draws, dtype=np.int64)


def write_dataset(dataset: Dataset, path: str | Path, synthetic: Optional[SyntheticTaskSpec] = None) -> Path:
    """Write one task's splits and metadata under the directory ``path``."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    meta = {
        "task": dataset.spec.model_dump(mode="json"),
        "input_width": dataset.input_width,
        "dev_size": len(dataset.dev_x),
        "synthetic": synthetic.model_dump(mode="json") if synthetic is not None else None,
    }
    with open(path / SPEC_FILE, "w", encoding="utf-8") as f:
        json.dump(meta, f, indent=2)
    kind = dataset.spec.kind
    _write_split(path / "train.tsv", dataset.train_x, dataset.train_y, dataset.train_draws, kind, dataset.input_width)
    _write_split(path / "dev.tsv", dataset.dev_x, dataset.dev_y, dataset.dev_draws, kind, dataset.input_width)
    logger.info(f"Wrote {dataset.task_id} to {path}")
    return path


def read_dataset(path: str | Path) -> Dataset:
    """Read a task directory written by ``write_dataset``."""
    dataset, _ = read_dataset_with_spec(path)
    return dataset


def read_dataset_with_spec(path: str | Path) -> tuple[Dataset, Optional[SyntheticTaskSpec]]:
    path = Path(path)
    spec_path = path / SPEC_FILE
    if not spec_path.exists():
        raise DatasetFormatError(spec_path, None, "missing spec file")
    try:
        with open(spec_path, "r", encoding="utf-8") as f:
            meta = json.load(f)
        task = TaskSpec.model_validate(meta["task"])
        width = int(meta["input_width"])
        synthetic = SyntheticTaskSpec.model_validate(meta["synthetic"]) if meta.get("synthetic") else None
    except (json.JSONDecodeError, KeyError, TypeError, ValidationError) as e:
        raise DatasetFormatError(spec_path, None, f"bad spec file ({e})") from None

    train_x, train_y, train_draws = _read_split(path / "train.tsv", width, task.kind)
    if len(train_x) == 0:
        raise DatasetFormatError(path / "train.tsv", None, "empty train split")
    dev_x, dev_y, dev_draws = _read_split(path / "dev.tsv", width, task.kind)
    try:
        dataset = Dataset(
            spec=task,
            train_x=train_x,
            train_y=train_y,
            dev_x=dev_x,
            dev_y=dev_y,
            train_draws=train_draws,
            dev_draws=dev_draws,
        )
    except ValidationError as e:
        raise DatasetFormatError(path, None, str(e)) from None
    return dataset, synthetic


def write_suite(suite: Suite, out_dir: str | Path) -> Path:
    """Write every task of ``suite`` plus ``suite.json`` (config and seed)."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for task_id in suite.task_ids:
        write_dataset(suite.datasets[task_id], out_dir / task_id, suite.specs[task_id])
    with open(out_dir / SUITE_FILE, "w", encoding="utf-8") as f:
        json.dump({"seed": suite.seed, "config": suite.config.model_dump(mode="json")}, f, indent=2)
    logger.info(f"Wrote suite of {len(suite.task_ids)} tasks to {out_dir}")
    return out_dir


def read_suite(data_dir: str | Path) -> Suite:
    data_dir = Path(data_dir)
    suite_path = data_dir / SUITE_FILE
    if not suite_path.exists():
        raise DatasetFormatError(suite_path, None, "missing suite file")
    with open(suite_path, "r", encoding="utf-8") as f:
        meta = json.load(f)
    config = SuiteConfig.model_validate(meta["config"])
    seed = int(meta["seed"])

    generator = LatentGenerator.for_suite(config, seed)
    suite = Suite(config=config, seed=seed, generator=generator, specs={})
    for task in config.tasks:
        dataset, synthetic = read_dataset_with_spec(data_dir / task.task_id)
        if synthetic is None:
            raise DatasetFormatError(data_dir / task.task_id / SPEC_FILE, None, "no generator metadata")
        suite.datasets[task.task_id] = dataset
        suite.specs[task.task_id] = synthetic
    return suite
