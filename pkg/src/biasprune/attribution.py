"""Gradient-times-activation neuron attribution."""

from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path
from typing import Mapping

import numpy as np

from .runtime.checkpoint import read_container, write_container
from .runtime.config import HookPoint
from .runtime.scoring import ActivationTape, GradientMap, check_congruent

LABEL_KINDS = ("golden", "biased")


@dataclass(frozen=True)
class TokenAttribution:
    """Per-position scores at every hook point, each [positions x channels] float64."""

    scores: Mapping[HookPoint, np.ndarray]
    label_kind: str
    instance_id: str = ""

    def __post_init__(self) -> None:
        if self.label_kind not in LABEL_KINDS:
            raise ValueError(f"label_kind must be one of {LABEL_KINDS}")

    def __getitem__(self, point: HookPoint) -> np.ndarray:
        return self.scores[point]


def neuron_attribution(
    tape: ActivationTape,
    grads: GradientMap,
    *,
    label_kind: str = "golden",
    instance_id: str = "",
) -> TokenAttribution:
    """score = activation * d P(label) / d activation, elementwise at every hook point."""
    check_congruent(tape.activations, grads.grads)
    scores = {
        pt: np.multiply(tape.activations[pt], grads.grads[pt], dtype=np.float64)
        for pt in tape.activations
    }
    return TokenAttribution(scores, label_kind, instance_id)


def clamp_nonnegative(attr: TokenAttribution) -> TokenAttribution:
    return replace(attr, scores={pt: np.maximum(s, 0.0) for pt, s in attr.scores.items()})


def dump_attribution(attr: TokenAttribution, path: str | Path) -> None:
    """Write per-position scores in the CRSP container (debugging aid)."""
    meta = {"kind": "token_attribution", "label_kind": attr.label_kind, "instance_id": attr.instance_id}
    write_container(path, meta, {pt.path: s for pt, s in attr.scores.items()})


def load_attribution(path: str | Path) -> TokenAttribution:
    meta, tensors = read_container(path)
    scores = {HookPoint.parse(name): arr for name, arr in tensors.items()}
    return TokenAttribution(scores, meta["label_kind"], meta.get("instance_id", ""))
