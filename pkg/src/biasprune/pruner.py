"""Structured pruning of bias neurons and the portable prune-mask file.

Pruning a neuron zeroes the column of its producing weight matrix and the
matching bias entry, so the neuron's activation is identically zero while all
tensor shapes stay fixed. ``ffn.in`` channels can additionally be removed
physically (``compact``).
"""

from __future__ import annotations

import json
import math
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np

from .errors import (
    AddressError,
    BoundsError,
    DuplicateNeuronError,
    MaskValidationError,
    NonDescendingScoresError,
    StaleMaskError,
    UnsupportedCompactionError,
)
from .runtime.checkpoint import Model
from .runtime.config import NeuronId

MASK_VERSION = 1
DEFAULT_N = 50
PROVENANCE_KEYS = ("dataset", "instruction_ids", "sample_ids", "seed", "trials")


@dataclass(frozen=True)
class PruneMask:
    neurons: tuple[tuple[NeuronId, float], ...]
    model_fingerprint: str
    provenance: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        object.__setattr__(self, "neurons", tuple((nid, float(s)) for nid, s in self.neurons))
        prov = {key: None for key in PROVENANCE_KEYS}
        prov.update(self.provenance)
        # canonical JSON form so that save/load round-trips compare equal
        object.__setattr__(self, "provenance", json.loads(json.dumps(prov, sort_keys=True)))
        if not self.model_fingerprint:
            raise MaskValidationError("model_fingerprint must be non-empty")
        ids = [nid for nid, _ in self.neurons]
        if len(set(ids)) != len(ids):
            dupes = sorted({str(i) for i in ids if ids.count(i) > 1})
            raise DuplicateNeuronError(f"duplicate neurons in mask: {dupes}")
        scores = [s for _, s in self.neurons]
        if not all(math.isfinite(s) for s in scores):
            raise MaskValidationError("mask scores must be finite")
        if any(b > a for a, b in zip(scores, scores[1:])):
            raise NonDescendingScoresError("mask scores must be in descending order")

    @property
    def n(self) -> int:
        return len(self.neurons)

    @property
    def ids(self) -> list[NeuronId]:
        return [nid for nid, _ in self.neurons]

    def to_json(self) -> dict[str, Any]:
        return {
            "version": MASK_VERSION,
            "model_fingerprint": self.model_fingerprint,
            "n": self.n,
            "provenance": dict(self.provenance),
            "neurons": [{**nid.to_dict(), "score": s} for nid, s in self.neurons],
        }

    @classmethod
    def from_json(cls, data: Any) -> PruneMask:
        if not isinstance(data, dict):
            raise MaskValidationError("mask file must hold a JSON object")
        missing = {"version", "model_fingerprint", "n", "provenance", "neurons"} - set(data)
        if missing:
            raise MaskValidationError(f"mask file lacks fields {sorted(missing)}")
        if data["version"] != MASK_VERSION:
            raise MaskValidationError(f"unsupported mask version {data['version']!r}")
        if not isinstance(data["neurons"], list) or not isinstance(data["provenance"], dict):
            raise MaskValidationError("neurons must be a list and provenance an object")
        try:
            neurons = tuple(
                (NeuronId(e["stack"], int(e["layer_index"]), e["sublayer"], int(e["channel"])), float(e["score"]))
                for e in data["neurons"]
            )
        except (KeyError, TypeError, ValueError, AddressError) as exc:
            raise MaskValidationError(f"malformed neuron record: {exc}") from exc
        if data["n"] != len(neurons):
            raise MaskValidationError(f"n={data['n']} but {len(neurons)} neurons listed")
        return cls(neurons, data["model_fingerprint"], data["provenance"])


def select_top_n(
    ranking: Sequence[tuple[NeuronId, float]],
    n: int,
    model_fingerprint: str,
    provenance: Mapping[str, Any] | None = None,
) -> PruneMask:
    if not 1 <= n <= len(ranking):
        raise BoundsError(f"n={n} outside [1, {len(ranking)}]")
    return PruneMask(tuple(ranking[:n]), model_fingerprint, dict(provenance or {}))


def _check_mask(model: Model, mask: PruneMask) -> None:
    if mask.model_fingerprint != model.mask_fingerprint:
        raise StaleMaskError(
            f"mask was built for {mask.model_fingerprint[:12]}..., model is {model.mask_fingerprint[:12]}..."
        )
    for nid in mask.ids:
        nid.check(model.config)


def apply_mask(model: Model, mask: PruneMask) -> Model:
    """Zero each masked neuron's weight column and bias entry; returns a new model."""
    _check_mask(model, mask)
    updates: dict[str, np.ndarray] = {}
    for nid in mask.ids:
        prefix = nid.hook.path
        for suffix in ("weight", "bias"):
            name = f"{prefix}.{suffix}"
            if name not in updates:
                updates[name] = np.array(model.tensors[name])
        updates[f"{prefix}.weight"][:, nid.channel] = 0.0
        updates[f"{prefix}.bias"][nid.channel] = 0.0
    return model.replace(updates)


def compact(model: Model, mask: PruneMask) -> Model:
    """Physically drop masked ffn.in channels (and the matching ffn.out rows)."""
    _check_mask(model, mask)
    offenders = [nid for nid in mask.ids if nid.sublayer != "ffn.in"]
    if offenders:
        raise UnsupportedCompactionError(offenders)
    by_layer: dict[tuple[str, int], set[int]] = defaultdict(set)
    for nid in mask.ids:
        by_layer[(nid.stack, nid.layer_index)].add(nid.channel)
    if not by_layer:
        return model
    config = model.config
    updates = {}
    for (stack, layer), drop in sorted(by_layer.items()):
        width = config.ffn_width(stack, layer)
        keep = np.array([c for c in range(width) if c not in drop], dtype=np.intp)
        if keep.size == 0:
            raise BoundsError(f"cannot remove every ffn channel of {stack}.{layer}")
        prefix = f"{stack}.{layer}.ffn"
        updates[f"{prefix}.in.weight"] = model.tensors[f"{prefix}.in.weight"][:, keep]
        updates[f"{prefix}.in.bias"] = model.tensors[f"{prefix}.in.bias"][keep]
        updates[f"{prefix}.out.weight"] = model.tensors[f"{prefix}.out.weight"][keep, :]
        config = config.with_ffn_width(stack, layer, int(keep.size))
    return model.replace(updates, config=config, keep_lineage=False)


def save_mask(mask: PruneMask, path: str | Path) -> None:
    Path(path).write_text(json.dumps(mask.to_json(), indent=1, sort_keys=True) + "\n", encoding="utf-8")


def load_mask(path: str | Path) -> PruneMask:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise MaskValidationError(f"{path}: not valid JSON: {exc}") from exc
    return PruneMask.from_json(data)
