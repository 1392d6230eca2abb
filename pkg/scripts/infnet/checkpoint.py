"""Versioned binary checkpoints.

Layout (little-endian)::

    b"INFNETCK" | u32 version
    3 x (u32 length | JSON)          schema, train config, trainer state
    u32 tensor count
    per tensor: u16 name length | name | u8 ndim | u32 x ndim shape | f8 x size
    32-byte sha256 of everything above

Tensor names are prefixed ``param/``, ``best/`` (best-so-far parameters) or
``opt/<slot>/`` (optimizer moments).
"""
from __future__ import annotations

import hashlib
import json
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

import numpy as np

from .config import TrainConfig
from .errors import CheckpointCorruptError, CheckpointShapeError, CheckpointVersionError, StorageError
from .types import FeatureSchema

logger = logging.getLogger(__name__)

MAGIC = b"INFNETCK"
FORMAT_VERSION = 1
_DIGEST = 32


@dataclass
class Checkpoint:
    schema: FeatureSchema
    config: TrainConfig
    params: Dict[str, np.ndarray]
    best_params: Dict[str, np.ndarray] = field(default_factory=dict)
    optimizer_state: Dict[str, np.ndarray] = field(default_factory=dict)
    optimizer_step: int = 0
    step: int = 0
    epoch: int = 0
    best_metric: Optional[float] = None
    bad_evals: int = 0
    history: List[Dict[str, Any]] = field(default_factory=list)
    version: int = FORMAT_VERSION

    def state_block(self) -> Dict[str, Any]:
        return {
            "step": self.step,
            "epoch": self.epoch,
            "best_metric": self.best_metric,
            "bad_evals": self.bad_evals,
            "optimizer_step": self.optimizer_step,
            "history": self.history,
        }

    def tensors(self) -> List[Tuple[str, np.ndarray]]:
        out = [(f"param/{k}", v) for k, v in self.params.items()]
        out += [(f"best/{k}", v) for k, v in self.best_params.items()]
        out += [(f"opt/{k}", v) for k, v in self.optimizer_state.items()]
        return out


def _json_block(obj: Any) -> bytes:
    raw = json.dumps(obj, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return struct.pack("<I", len(raw)) + raw


def encode_checkpoint(ckpt: Checkpoint) -> bytes:
    parts = [MAGIC, struct.pack("<I", ckpt.version)]
    parts.append(_json_block(ckpt.schema.to_dict()))
    parts.append(_json_block(ckpt.config.to_dict()))
    parts.append(_json_block(ckpt.state_block()))
    tensors = ckpt.tensors()
    parts.append(struct.pack("<I", len(tensors)))
    for name, arr in tensors:
        arr = np.ascontiguousarray(arr, dtype="<f8")
        encoded = name.encode("utf-8")
        parts.append(struct.pack("<H", len(encoded)) + encoded)
        parts.append(struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(arr.tobytes(order="C"))
    body = b"".join(parts)
    return body + hashlib.sha256(body).digest()


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointCorruptError("checkpoint ends early (truncated file)")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str) -> Tuple:
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def json(self) -> Any:
        (n,) = self.unpack("<I")
        try:
            return json.loads(self.take(n).decode("utf-8"))
        except (UnicodeDecodeError, ValueError) as exc:
            raise CheckpointCorruptError(f"unreadable metadata block: {exc}") from exc


def decode_checkpoint(data: bytes) -> Checkpoint:
    if len(data) < len(MAGIC) + 4 + _DIGEST:
        raise CheckpointCorruptError(f"checkpoint is only {len(data)} bytes")
    if not data.startswith(MAGIC):
        raise CheckpointCorruptError("not an INFNet checkpoint (bad magic bytes)")
    body, digest = data[:-_DIGEST], data[-_DIGEST:]
    if hashlib.sha256(body).digest() != digest:
        raise CheckpointCorruptError("checksum mismatch (truncated or modified file)")
    # the checksum covers the version field
    (version,) = struct.unpack("<I", data[len(MAGIC):len(MAGIC) + 4])
    if version != FORMAT_VERSION:
        raise CheckpointVersionError(f"checkpoint format version {version}, this build reads {FORMAT_VERSION}")

    r = _Reader(body)
    r.take(len(MAGIC) + 4)
    try:
        schema = FeatureSchema.from_dict(r.json())
        config = TrainConfig.from_dict(r.json())
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointCorruptError(f"bad schema/config block: {exc}") from exc
    state = r.json()
    (count,) = r.unpack("<I")
    params: Dict[str, np.ndarray] = {}
    best: Dict[str, np.ndarray] = {}
    opt: Dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = r.unpack("<H")
        name = r.take(name_len).decode("utf-8", errors="strict")
        (ndim,) = r.unpack("<B")
        shape = r.unpack(f"<{ndim}I") if ndim else ()
        size = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(r.take(8 * size), dtype="<f8").astype(np.float64).reshape(shape)
        prefix, _, key = name.partition("/")
        target = {"param": params, "best": best, "opt": opt}.get(prefix)
        if target is None:
            raise CheckpointCorruptError(f"unknown tensor section {name!r}")
        target[key] = arr
    if r.pos != len(body):
        raise CheckpointCorruptError(f"{len(body) - r.pos} trailing bytes after the last tensor")
    return Checkpoint(
        schema=schema,
        config=config,
        params=params,
        best_params=best,
        optimizer_state=opt,
        optimizer_step=int(state.get("optimizer_step", 0)),
        step=int(state.get("step", 0)),
        epoch=int(state.get("epoch", 0)),
        best_metric=state.get("best_metric"),
        bad_evals=int(state.get("bad_evals", 0)),
        history=list(state.get("history", [])),
        version=version,
    )


def validate_shapes(ckpt: Checkpoint) -> None:
    """Every stored tensor matches the model the embedded schema and config describe."""
    from .model import INFNetModel

    expected = INFNetModel(ckpt.schema, ckpt.config).store.shapes()

    def check(section: str, tensors: Dict[str, np.ndarray], required: bool) -> None:
        if required and set(tensors) != set(expected):
            missing = sorted(set(expected) - set(tensors))[:5]
            extra = sorted(set(tensors) - set(expected))[:5]
            raise CheckpointShapeError(f"{section}: missing {missing}, unexpected {extra}")
        for k, arr in tensors.items():
            if k not in expected:
                raise CheckpointShapeError(f"{section}: unexpected tensor {k!r}")
            if arr.shape != expected[k]:
                raise CheckpointShapeError(f"{section}/{k}: stored {arr.shape}, schema implies {expected[k]}")

    check("param", ckpt.params, True)
    if ckpt.best_params:
        check("best", ckpt.best_params, True)
    check("opt", {k.partition("/")[2]: v for k, v in ckpt.optimizer_state.items()}, False)


def save_checkpoint(path: Path, ckpt: Checkpoint) -> None:
    """Write atomically: a sibling ``.tmp`` file replaced into place."""
    path = Path(path)
    data = encode_checkpoint(ckpt)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_suffix(path.suffix + ".tmp")
        with tmp.open("wb") as f:
            f.write(data)
        tmp.replace(path)
    except OSError as exc:
        raise StorageError(f"cannot write checkpoint {path}: {exc}") from exc
    logger.debug("saved checkpoint %s (%d bytes, step %d)", path, len(data), ckpt.step)


def load_checkpoint(path: Path) -> Checkpoint:
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise StorageError(f"cannot read checkpoint {path}: {exc}") from exc
    try:
        ckpt = decode_checkpoint(data)
    except (struct.error, UnicodeDecodeError) as exc:
        raise CheckpointCorruptError(f"{path}: {exc}") from exc
    validate_shapes(ckpt)
    return ckpt
