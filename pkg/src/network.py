"""Shared-trunk multi-task model family and its checkpoint file format."""

from __future__ import annotations

import hashlib
import json
import logging
import os
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from .errors import CheckpointError, ShapeError, TaskMismatchError, UnknownTaskError
from .models import TaskSpec, TrunkConfig
from .tensor import Tape, Tensor, add_bias, matmul, sigmoid, softmax_rows, tanh

logger = logging.getLogger(__name__)

MAGIC = b"BAMCKPT\x00"
FORMAT_VERSION = 1
_DIGEST_BYTES = 32
_PREAMBLE = struct.Struct("<IQ")  # format version, header length


def trunk_weight(i: int) -> str:
    return f"trunk.{i}.weight"


def trunk_bias(i: int) -> str:
    return f"trunk.{i}.bias"


def head_weight(task_id: str) -> str:
    return f"head.{task_id}.weight"


class MultiTaskModel:
    """A tanh trunk shared by every task plus one linear head per task.

    Trunk layer ``i`` (0 nearest the input) sits at depth ``hidden_layers - i``;
    heads sit at depth 0, the layer closest to the output.
    """

    def __init__(self, trunk: TrunkConfig, task_specs: Sequence[TaskSpec], params: Mapping[str, np.ndarray]):
        self.trunk = trunk
        self.task_specs: dict[str, TaskSpec] = {}
        for spec in task_specs:
            if spec.task_id in self.task_specs:
                raise ValueError(f"duplicate task id {spec.task_id!r}")
            self.task_specs[spec.task_id] = spec
        if not self.task_specs:
            raise ValueError("a model needs at least one task")
        self.params: dict[str, np.ndarray] = {name: np.asarray(v, dtype=np.float64) for name, v in params.items()}
        expected = self.expected_shapes()
        if set(expected) != set(self.params):
            raise ShapeError(f"parameter names {sorted(self.params)} do not match {sorted(expected)}")
        for name, shape in expected.items():
            if self.params[name].shape != shape:
                raise ShapeError(f"{name}: expected shape {shape}, got {self.params[name].shape}")

    @property
    def task_ids(self) -> list[str]:
        return list(self.task_specs)

    def spec(self, task_id: str) -> TaskSpec:
        try:
            return self.task_specs[task_id]
        except KeyError:
            raise UnknownTaskError(f"task {task_id!r} is not registered (have {self.task_ids})") from None

    def expected_shapes(self) -> dict[str, tuple[int, ...]]:
        shapes: dict[str, tuple[int, ...]] = {}
        fan_in = self.trunk.input_width
        for i in range(self.trunk.hidden_layers):
            shapes[trunk_weight(i)] = (fan_in, self.trunk.hidden_width)
            shapes[trunk_bias(i)] = (self.trunk.hidden_width,)
            fan_in = self.trunk.hidden_width
        for task_id, spec in self.task_specs.items():
            shapes[head_weight(task_id)] = (self.trunk.hidden_width, spec.output_width)
        return shapes

    def shapes(self) -> dict[str, tuple[int, ...]]:
        return {name: value.shape for name, value in self.params.items()}

    def depths(self) -> dict[str, int]:
        depths = {}
        for name in self.params:
            if name.startswith("head."):
                depths[name] = 0
            else:
                layer = int(name.split(".")[1])
                depths[name] = self.trunk.hidden_layers - layer
        return depths

    def trunk_names(self) -> list[str]:
        return [name for name in self.params if name.startswith("trunk.")]

    def copy(self) -> "MultiTaskModel":
        return MultiTaskModel(self.trunk, list(self.task_specs.values()), {k: v.copy() for k, v in self.params.items()})

    def bind(self, tape: Optional[Tape] = None) -> dict[str, Tensor]:
        """Parameters as tensors: tracked on ``tape``, or constants when no tape is given."""
        if tape is None:
            return {name: Tensor(value) for name, value in self.params.items()}
        return {name: tape.parameter(name, value) for name, value in self.params.items()}

    def represent(self, bound: Mapping[str, Tensor], x) -> Tensor:
        """Trunk output c for a batch of rows."""
        h = x if isinstance(x, Tensor) else Tensor(x)
        for i in range(self.trunk.hidden_layers):
            h = tanh(add_bias(matmul(h, bound[trunk_weight(i)]), bound[trunk_bias(i)]))
        return h

    def head(self, bound: Mapping[str, Tensor], c: Tensor, task_id: str) -> Tensor:
        """softmax(Wc) rows for classification, an (m, 1) column of sigmoid(w.c) for regression."""
        spec = self.spec(task_id)
        z = matmul(c, bound[head_weight(task_id)])
        return softmax_rows(z) if spec.kind == "classification" else sigmoid(z)

    def predict(self, x, task_id: str) -> np.ndarray:
        """Untracked batch forward: (m, K) probabilities or (m,) scalars in (0, 1)."""
        spec = self.spec(task_id)
        x = self._check_input(x, batch=True)
        bound = self.bind()
        out = self.head(bound, self.represent(bound, x), task_id).value
        return out if spec.kind == "classification" else out[:, 0]

    def _check_input(self, x, batch: bool) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if batch and x.ndim == 1:
            x = x[None, :]
        if x.ndim != 2 or x.shape[1] != self.trunk.input_width:
            raise ShapeError(f"input of shape {x.shape} does not have width {self.trunk.input_width}")
        return x


def init_model(trunk: TrunkConfig, task_specs: Sequence[TaskSpec], seed: int) -> MultiTaskModel:
    """Glorot-uniform trunk, zero biases, zero heads; deterministic in ``seed``."""
    ids = [spec.task_id for spec in task_specs]
    if len(set(ids)) != len(ids):
        raise ValueError(f"duplicate task id in {ids}")
    if not ids:
        raise ValueError("a model needs at least one task")
    rng = np.random.Generator(np.random.Philox(seed))
    params: dict[str, np.ndarray] = {}
    fan_in = trunk.input_width
    for i in range(trunk.hidden_layers):
        bound = np.sqrt(6.0 / (fan_in + trunk.hidden_width))
        params[trunk_weight(i)] = rng.uniform(-bound, bound, size=(fan_in, trunk.hidden_width))
        params[trunk_bias(i)] = np.zeros(trunk.hidden_width)
        fan_in = trunk.hidden_width
    for spec in task_specs:
        params[head_weight(spec.task_id)] = np.zeros((trunk.hidden_width, spec.output_width))
    return MultiTaskModel(trunk, task_specs, params)


def forward(model: MultiTaskModel, x, task_id: str):
    """Prediction for one example (probability vector or float) or a batch of rows."""
    x = np.asarray(x, dtype=np.float64)
    out = model.predict(x, task_id)
    return out[0] if x.ndim == 1 else out


@dataclass
class Checkpoint:
    model: MultiTaskModel
    config_digest: str = ""
    seed: int = 0


def _encode(checkpoint: Checkpoint) -> bytes:
    model = checkpoint.model
    header = {
        "trunk": model.trunk.model_dump(),
        "tasks": [spec.model_dump() for spec in model.task_specs.values()],
        "params": [{"name": name, "shape": list(value.shape)} for name, value in model.params.items()],
        "config_digest": checkpoint.config_digest,
        "seed": checkpoint.seed,
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    body = bytearray(MAGIC)
    body += _PREAMBLE.pack(FORMAT_VERSION, len(header_bytes))
    body += header_bytes
    for value in model.params.values():
        body += np.ascontiguousarray(value, dtype="<f8").tobytes()
    body += hashlib.sha256(body).digest()
    return bytes(body)


def save_checkpoint(checkpoint: Checkpoint, path: str | Path) -> str:
    """Write atomically; returns the SHA-256 of the file contents."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    blob = _encode(checkpoint)
    tmp = path.with_name(f".{path.name}.{os.getpid()}.tmp")
    tmp.write_bytes(blob)
    os.replace(tmp, path)
    logger.debug(f"Saved checkpoint with tasks {checkpoint.model.task_ids} to {path}")
    return hashlib.sha256(blob).hexdigest()


def load_checkpoint(path: str | Path, expected_tasks: Optional[Iterable[str]] = None) -> Checkpoint:
    """
    Read and validate a checkpoint: magic, whole-file checksum, version, then task list.

    Args:
        path: Checkpoint file
        expected_tasks: Task ids the caller needs, in any order

    Returns:
        Checkpoint with the model, config digest and seed it was saved with

    Raises:
        CheckpointError: Bad magic, checksum, version or trailing bytes
        TaskMismatchError: The stored tasks differ from ``expected_tasks``
    """
    path = Path(path)
    blob = path.read_bytes()
    if not blob.startswith(MAGIC):
        raise CheckpointError(f"{path}: not a checkpoint (bad magic bytes)")
    if len(blob) < len(MAGIC) + _PREAMBLE.size + _DIGEST_BYTES:
        raise CheckpointError(f"{path}: checksum mismatch (file truncated)")
    body, digest = blob[:-_DIGEST_BYTES], blob[-_DIGEST_BYTES:]
    if hashlib.sha256(body).digest() != digest:
        raise CheckpointError(f"{path}: checksum mismatch")
    version, header_len = _PREAMBLE.unpack_from(body, len(MAGIC))
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unknown format version {version} (expected {FORMAT_VERSION})")
    offset = len(MAGIC) + _PREAMBLE.size
    header = json.loads(body[offset : offset + header_len].decode("utf-8"))
    offset += header_len

    params = {}
    for entry in header["params"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        values = np.frombuffer(body, dtype="<f8", count=count, offset=offset)
        params[entry["name"]] = values.astype(np.float64).reshape(shape)
        offset += count * 8
    if offset != len(body):
        raise CheckpointError(f"{path}: {len(body) - offset} trailing bytes after parameters")

    model = MultiTaskModel(
        TrunkConfig(**header["trunk"]),
        [TaskSpec(**t) for t in header["tasks"]],
        params,
    )
    if expected_tasks is not None:
        expected = list(expected_tasks)
        if sorted(expected) != sorted(model.task_ids):
            raise TaskMismatchError(f"{path}: checkpoint has tasks {model.task_ids}, run expects {expected}")
    return Checkpoint(model=model, config_digest=header.get("config_digest", ""), seed=int(header.get("seed", 0)))


def file_digest(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()
