"""The ``CRSP`` tensor container and the immutable :class:`Model`.

Byte layout (all integers little-endian)::

    offset 0    4 bytes   magic b"CRSP"
    offset 4    u32       format version (1)
    offset 8    u64       metadata length M in bytes
    offset 16   M bytes   UTF-8 JSON metadata
    offset 16+M           tensor payloads, row-major, concatenated

The metadata is canonical JSON (sorted keys, no whitespace). Its ``tensors``
entry maps each tensor name to ``{"shape", "dtype", "offset"}`` where
``offset`` is relative to the start of the payload section. Payloads are laid
out in sorted-name order with no padding, so a file produced by
:func:`write_container` is reproduced byte-for-byte by read-then-write.
"""

from __future__ import annotations

import hashlib
import json
import math
import struct
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from types import MappingProxyType
from typing import Any, Mapping

import numpy as np

from ..errors import (
    CorruptHeaderError,
    NonFiniteValueError,
    ShapeMismatchError,
    TensorInventoryError,
)
from .config import DTYPES, ModelConfig, tensor_shapes

MAGIC = b"CRSP"
VERSION = 1
_HEADER = struct.Struct("<4sIQ")
_DTYPE_NAMES = {np.dtype(v): k for k, v in DTYPES.items()}


def _canonical_json(obj: Any) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False, allow_nan=False).encode("utf-8")


def encode_container(metadata: Mapping[str, Any], tensors: Mapping[str, np.ndarray]) -> bytes:
    table = {}
    payload = []
    offset = 0
    for name in sorted(tensors):
        arr = np.asarray(tensors[name])
        dtype = np.dtype(arr.dtype).newbyteorder("<")
        if dtype not in _DTYPE_NAMES:
            raise TypeError(f"tensor {name!r} has unsupported dtype {arr.dtype}")
        raw = np.ascontiguousarray(arr, dtype=dtype).tobytes(order="C")
        table[name] = {"shape": list(arr.shape), "dtype": _DTYPE_NAMES[dtype], "offset": offset}
        payload.append(raw)
        offset += len(raw)
    meta = _canonical_json({**metadata, "tensors": table})
    return _HEADER.pack(MAGIC, VERSION, len(meta)) + meta + b"".join(payload)


def decode_container(data: bytes) -> tuple[dict[str, Any], dict[str, np.ndarray]]:
    if len(data) < _HEADER.size:
        raise CorruptHeaderError("file shorter than the fixed header")
    magic, version, meta_len = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise CorruptHeaderError(f"bad magic {magic!r}")
    if version != VERSION:
        raise CorruptHeaderError(f"unsupported version {version}")
    start = _HEADER.size + meta_len
    if start > len(data):
        raise CorruptHeaderError("metadata length exceeds file size")
    try:
        metadata = json.loads(data[_HEADER.size : start].decode("utf-8"))
        table = metadata.pop("tensors")
    except (UnicodeDecodeError, json.JSONDecodeError, KeyError, AttributeError) as exc:
        raise CorruptHeaderError(f"unreadable metadata: {exc}") from exc

    payload = memoryview(data)[start:]
    tensors: dict[str, np.ndarray] = {}
    expected_offset = 0
    for name in sorted(table):
        entry = table[name]
        try:
            dtype = np.dtype(DTYPES[entry["dtype"]])
            shape = tuple(int(s) for s in entry["shape"])
            offset = int(entry["offset"])
        except (KeyError, TypeError, ValueError) as exc:
            raise CorruptHeaderError(f"bad tensor table entry for {name!r}") from exc
        nbytes = math.prod(shape) * dtype.itemsize
        if offset != expected_offset:
            raise CorruptHeaderError(f"tensor {name!r} is not contiguous (offset {offset}, expected {expected_offset})")
        if offset + nbytes > len(payload):
            raise ShapeMismatchError(
                f"tensor {name!r} declares shape {shape} ({nbytes} bytes) but only "
                f"{max(len(payload) - offset, 0)} bytes remain"
            )
        tensors[name] = np.frombuffer(payload[offset : offset + nbytes], dtype=dtype).reshape(shape).copy()
        expected_offset = offset + nbytes
    if expected_offset != len(payload):
        raise ShapeMismatchError(f"{len(payload) - expected_offset} trailing bytes after the last tensor")
    return metadata, tensors


def write_container(path: str | Path, metadata: Mapping[str, Any], tensors: Mapping[str, np.ndarray]) -> None:
    Path(path).write_bytes(encode_container(metadata, tensors))


def read_container(path: str | Path) -> tuple[dict[str, Any], dict[str, np.ndarray]]:
    return decode_container(Path(path).read_bytes())


@dataclass(frozen=True, eq=False)
class Model:
    """Immutable parameter set for the encoder-decoder transformer.

    ``lineage`` is the fingerprint of the checkpoint this model was derived
    from by masking; prune masks are matched against :attr:`mask_fingerprint`
    so that masks compose on already-masked models.
    """

    config: ModelConfig
    tensors: Mapping[str, np.ndarray]
    lineage: str | None = field(default=None)

    def __post_init__(self) -> None:
        expected = tensor_shapes(self.config)
        names = set(self.tensors)
        if names != set(expected):
            missing = sorted(set(expected) - names)
            extra = sorted(names - set(expected))
            raise TensorInventoryError(f"tensor inventory mismatch: missing={missing} extra={extra}")
        dtype = np.dtype(DTYPES[self.config.dtype])
        frozen = {}
        for name in sorted(expected):
            arr = np.asarray(self.tensors[name])
            if arr.shape != expected[name]:
                raise ShapeMismatchError(f"{name}: shape {arr.shape} does not match config {expected[name]}")
            if not np.all(np.isfinite(arr)):
                raise NonFiniteValueError(f"{name} contains non-finite values")
            arr = np.array(arr, dtype=dtype, copy=True)
            arr.setflags(write=False)
            frozen[name] = arr
        object.__setattr__(self, "tensors", MappingProxyType(frozen))

    def to_bytes(self, *, include_lineage: bool = True) -> bytes:
        meta: dict[str, Any] = {"config": self.config.to_dict()}
        if include_lineage and self.lineage:
            meta["lineage"] = self.lineage
        return encode_container(meta, self.tensors)

    @cached_property
    def fingerprint(self) -> str:
        """Content hash of the parameters and config."""
        return hashlib.sha256(self.to_bytes(include_lineage=False)).hexdigest()

    @property
    def mask_fingerprint(self) -> str:
        return self.lineage or self.fingerprint

    def replace(self, updates: Mapping[str, np.ndarray], *, config: ModelConfig | None = None,
                keep_lineage: bool = True) -> Model:
        tensors = {**self.tensors, **updates}
        cfg = config or self.config
        lineage = self.mask_fingerprint if keep_lineage else None
        if cfg != self.config:
            tensors = {k: v for k, v in tensors.items() if k in tensor_shapes(cfg)}
        return Model(cfg, tensors, lineage)

    @cached_property
    def torch_params(self) -> dict:
        import torch

        return {name: torch.from_numpy(arr.copy()) for name, arr in self.tensors.items()}


def save_checkpoint(model: Model, path: str | Path) -> None:
    Path(path).write_bytes(model.to_bytes())


def load_checkpoint(path: str | Path) -> Model:
    return model_from_bytes(Path(path).read_bytes())


def model_from_bytes(data: bytes) -> Model:
    metadata, tensors = decode_container(data)
    try:
        config = ModelConfig.from_dict(metadata["config"])
    except (KeyError, TypeError, AttributeError) as exc:
        raise CorruptHeaderError(f"missing or malformed config: {exc}") from exc
    expected = tensor_shapes(config)
    for name, arr in tensors.items():
        if name in expected and arr.shape != expected[name]:
            raise ShapeMismatchError(f"{name}: stored shape {arr.shape} does not match config {expected[name]}")
        if name in expected and arr.dtype != np.dtype(DTYPES[config.dtype]):
            raise ShapeMismatchError(f"{name}: stored dtype {arr.dtype} does not match config {config.dtype}")
    return Model(config, tensors, metadata.get("lineage"))


def init_random_model(config: ModelConfig, seed: int, scale: float = 1.0) -> Model:
    """Seeded Gaussian initialisation (fan-in scaled); used for test fixtures."""
    rng = np.random.default_rng(seed)
    tensors = {}
    for name, shape in tensor_shapes(config).items():
        if name.endswith("norm"):
            tensors[name] = 1.0 + 0.1 * rng.standard_normal(shape)
        elif name.endswith(".bias"):
            tensors[name] = 0.1 * scale * rng.standard_normal(shape)
        elif name.startswith("embed."):
            tensors[name] = rng.standard_normal(shape)
        else:
            tensors[name] = scale * rng.standard_normal(shape) / np.sqrt(shape[0])
    return Model(config, tensors)
