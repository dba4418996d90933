"""
Binary checkpoint files.

Layout (all integers little-endian):

    b"LMCK"  u32 version
    u32 n    config text (UTF-8, n bytes)
    u64      training step
    tensor table: model weights
    u64      optimizer step
    tensor table: first moments
    tensor table: second moments
    u32 n    RNG state (JSON, n bytes)

A tensor table is u32 count followed by entries of
u16 name length, name, u8 dtype tag (0 = f32, 1 = f64), u32 rank, u32 dims,
then the payload.
"""

import json
import os
from pathlib import Path
import struct
from typing import Dict, Tuple, Union

import numpy as np

from src.models.models import Checkpoint, OptimizerState
from src.utils.error_handling import (
    CheckpointError, CheckpointMagicError, CheckpointTruncatedError,
    CheckpointVersionError, with_checkpoint_retry
)
from src.utils.logging_config import get_logger, log_operation

logger = get_logger(__name__)

MAGIC = b"LMCK"
VERSION = 1

DTYPE_TAGS = {np.dtype('<f4'): 0, np.dtype('<f8'): 1}
TAG_DTYPES = {tag: dtype for dtype, tag in DTYPE_TAGS.items()}

PathLike = Union[str, Path]


def _pack_table(tensors: Dict[str, np.ndarray]) -> bytes:
    chunks = [struct.pack("<I", len(tensors))]
    for name in sorted(tensors):
        array = np.asarray(tensors[name])
        dtype = array.dtype.newbyteorder('<')
        if dtype not in DTYPE_TAGS:
            raise CheckpointError(f"{name}: unsupported dtype {array.dtype}")
        encoded = name.encode('utf-8')
        chunks.append(struct.pack("<H", len(encoded)))
        chunks.append(encoded)
        chunks.append(struct.pack("<BI", DTYPE_TAGS[dtype], array.ndim))
        chunks.append(struct.pack(f"<{array.ndim}I", *array.shape))
        chunks.append(np.ascontiguousarray(array, dtype=dtype).tobytes())
    return b"".join(chunks)


def encode_checkpoint(ckpt: Checkpoint) -> bytes:
    config = ckpt.config_text.encode('utf-8')
    rng = json.dumps(ckpt.rng_state, sort_keys=True).encode('utf-8')
    return b"".join([
        MAGIC,
        struct.pack("<I", ckpt.version),
        struct.pack("<I", len(config)), config,
        struct.pack("<Q", ckpt.step),
        _pack_table(ckpt.tensors),
        struct.pack("<Q", ckpt.optimizer.step),
        _pack_table(ckpt.optimizer.m),
        _pack_table(ckpt.optimizer.v),
        struct.pack("<I", len(rng)), rng,
    ])


class _Reader:
    """Cursor over checkpoint bytes; short reads raise CheckpointTruncatedError."""

    def __init__(self, raw: bytes, label: str):
        self.raw = raw
        self.label = label
        self.offset = 0

    def take(self, n: int) -> bytes:
        if self.offset + n > len(self.raw):
            raise CheckpointTruncatedError(
                f"{self.label}: truncated at byte {self.offset} (needed {n} more)"
            )
        chunk = self.raw[self.offset:self.offset + n]
        self.offset += n
        return chunk

    def unpack(self, fmt: str) -> Tuple:
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def table(self) -> Dict[str, np.ndarray]:
        (count,) = self.unpack("<I")
        tensors = {}
        for _ in range(count):
            (name_len,) = self.unpack("<H")
            name = self.take(name_len).decode('utf-8')
            tag, rank = self.unpack("<BI")
            if tag not in TAG_DTYPES:
                raise CheckpointError(f"{self.label}: {name} has unknown dtype tag {tag}")
            dims = self.unpack(f"<{rank}I")
            dtype = TAG_DTYPES[tag]
            size = int(np.prod(dims, dtype=np.int64)) * dtype.itemsize
            tensors[name] = np.frombuffer(self.take(size), dtype=dtype).reshape(dims).astype(dtype.newbyteorder('='))
        return tensors


def decode_checkpoint(raw: bytes, label: str = "<bytes>") -> Checkpoint:
    if raw[:len(MAGIC)] != MAGIC:
        raise CheckpointMagicError(f"{label}: bad magic {raw[:len(MAGIC)]!r}, expected {MAGIC!r}")
    reader = _Reader(raw, label)
    reader.take(len(MAGIC))
    (version,) = reader.unpack("<I")
    if version != VERSION:
        raise CheckpointVersionError(f"{label}: format version {version}, this build reads {VERSION}")

    (config_len,) = reader.unpack("<I")
    config_text = reader.take(config_len).decode('utf-8')
    (step,) = reader.unpack("<Q")
    tensors = reader.table()
    (opt_step,) = reader.unpack("<Q")
    m = reader.table()
    v = reader.table()
    (rng_len,) = reader.unpack("<I")
    try:
        rng_state = json.loads(reader.take(rng_len).decode('utf-8'))
    except ValueError as e:
        raise CheckpointError(f"{label}: unreadable RNG state ({e})")
    if reader.offset != len(raw):
        raise CheckpointError(f"{label}: {len(raw) - reader.offset} trailing bytes")

    return Checkpoint(version=version, config_text=config_text, tensors=tensors,
                      optimizer=OptimizerState(m=m, v=v, step=opt_step),
                      rng_state=rng_state, step=step)


@log_operation("checkpoint_save")
@with_checkpoint_retry
def save_checkpoint(path: PathLike, ckpt: Checkpoint) -> Path:
    """Write atomically: a temporary sibling is renamed over the target."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, 'wb') as handle:
        handle.write(encode_checkpoint(ckpt))
        handle.flush()
        os.fsync(handle.fileno())
    os.replace(tmp, path)
    logger.info(f"💾 Checkpoint step {ckpt.step} → {path}")
    return path


@log_operation("checkpoint_load")
def load_checkpoint(path: PathLike) -> Checkpoint:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as e:
        raise CheckpointError(f"cannot read checkpoint {path}: {e}")
    return decode_checkpoint(raw, str(path))
