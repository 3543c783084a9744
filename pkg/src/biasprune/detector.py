"""Bias-neuron detection.

Per instance: pick the best wrong answer as the biased label, attribute both
the biased and the golden label, subtract the clamped golden attribution from
the biased one, and take the max over positions. Instance maps are then
averaged over the sample and neurons ranked across all layers jointly.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterator, Mapping, Sequence

import numpy as np

from .attribution import TokenAttribution, clamp_nonnegative, neuron_attribution
from .data import Dataset, Instance, InstructionSet, render
from .errors import BiasPruneError, CongruenceError, DegenerateClassSetError, EvaluationError, LabelKindError
from .runtime.checkpoint import Model
from .runtime.config import HookPoint, NeuronId
from .runtime.scoring import backward_to_activations, check_congruent, forward_with_activations, score_labels

GRANULARITIES = ("instance", "dataset")


@dataclass(frozen=True)
class BiasScoreMap:
    """One scalar per neuron; ``scores[hook][channel]``."""

    scores: Mapping[HookPoint, np.ndarray]
    granularity: str
    provenance: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.granularity not in GRANULARITIES:
            raise ValueError(f"granularity must be one of {GRANULARITIES}")
        for pt, arr in self.scores.items():
            if arr.ndim != 1 or not np.all(np.isfinite(arr)):
                raise ValueError(f"{pt.path}: scores must be a finite 1-D array")

    def __getitem__(self, neuron: NeuronId) -> float:
        return float(self.scores[neuron.hook][neuron.channel])

    def items(self) -> Iterator[tuple[NeuronId, float]]:
        for pt in sorted(self.scores):
            for ch, value in enumerate(self.scores[pt]):
                yield NeuronId(pt.stack, pt.layer_index, pt.sublayer, ch), float(value)

    def __len__(self) -> int:
        return sum(len(a) for a in self.scores.values())

    def to_json(self) -> dict[str, Any]:
        return {
            "granularity": self.granularity,
            "provenance": dict(self.provenance),
            "neurons": [{**nid.to_dict(), "score": s} for nid, s in self.items()],
        }


def save_score_map(score_map: BiasScoreMap, path: str | Path) -> None:
    Path(path).write_text(json.dumps(score_map.to_json(), indent=1, sort_keys=True) + "\n", encoding="utf-8")


def identify_biased_label(scores: Sequence[float], gold_index: int) -> int:
    """Highest-scoring class other than the gold one; ties go to the lowest index."""
    if len(scores) < 2:
        raise DegenerateClassSetError("need at least two classes to pick a biased label")
    if not 0 <= gold_index < len(scores):
        raise IndexError(f"gold_index {gold_index} out of range")
    best = None
    for i, s in enumerate(scores):
        if i != gold_index and (best is None or s > scores[best]):
            best = i
    return best


def bias_attribution(attr_biased: TokenAttribution, attr_golden: TokenAttribution) -> TokenAttribution:
    """A(biased) - max(A(golden), 0). Pass the raw golden attribution."""
    if attr_biased.label_kind != "biased" or attr_golden.label_kind != "golden":
        raise LabelKindError(
            f"expected (biased, golden) attributions, got ({attr_biased.label_kind}, {attr_golden.label_kind})"
        )
    if attr_biased.instance_id != attr_golden.instance_id:
        raise LabelKindError("attributions come from different instances")
    check_congruent(attr_biased.scores, attr_golden.scores)
    clamped = clamp_nonnegative(attr_golden)
    scores = {pt: attr_biased.scores[pt] - clamped.scores[pt] for pt in attr_biased.scores}
    return TokenAttribution(scores, "biased", attr_biased.instance_id)


def aggregate_tokens(per_token: TokenAttribution) -> BiasScoreMap:
    scores = {pt: s.max(axis=0) for pt, s in per_token.scores.items()}
    return BiasScoreMap(scores, "instance", {"instance_id": per_token.instance_id})


def aggregate_instances(maps: Sequence[BiasScoreMap], **provenance: Any) -> BiasScoreMap:
    """Mean over instance maps, summed in instance-id order so the result does
    not depend on the order of ``maps``."""
    if not maps:
        raise ValueError("need at least one instance map")
    points = set(maps[0].scores)
    for m in maps:
        if m.granularity != "instance":
            raise ValueError("aggregate_instances expects instance-level maps")
        if set(m.scores) != points or any(m.scores[pt].shape != maps[0].scores[pt].shape for pt in points):
            raise CongruenceError("instance maps cover different neurons")
    ordered = sorted(maps, key=lambda m: str(m.provenance.get("instance_id", "")))
    n = len(ordered)
    scores = {pt: np.stack([m.scores[pt] for m in ordered]).sum(axis=0) / n for pt in sorted(points)}
    prov = {"sample_ids": [str(m.provenance.get("instance_id", "")) for m in ordered], **provenance}
    return BiasScoreMap(scores, "dataset", prov)


def rank_neurons(score_map: BiasScoreMap) -> list[tuple[NeuronId, float]]:
    """Descending by score across all layers; ties in NeuronId order."""
    if score_map.granularity != "dataset":
        raise ValueError("rank_neurons expects a dataset-level map")
    return sorted(score_map.items(), key=lambda item: (-item[1], item[0]))


@dataclass
class InstanceDetection:
    """Intermediate results for one instance, kept for inspection and tests."""

    instance: Instance
    class_scores: list[float]
    biased_index: int
    golden: TokenAttribution
    biased: TokenAttribution
    bias: TokenAttribution
    score_map: BiasScoreMap


def detect_instance(model: Model, instance: Instance, instruction: str) -> InstanceDetection:
    prompt = render(instruction, instance)
    try:
        class_scores = score_labels(model, prompt, "", instance.choices)
        b_idx = identify_biased_label(class_scores, instance.gold_index)
        attrs = {}
        for kind, label in (("golden", instance.gold), ("biased", instance.choices[b_idx])):
            tape = forward_with_activations(model, prompt, "", label)
            attrs[kind] = neuron_attribution(tape, backward_to_activations(tape), label_kind=kind, instance_id=instance.id)
    except BiasPruneError as exc:
        raise EvaluationError(instance.id, exc) from exc
    bias = bias_attribution(attrs["biased"], attrs["golden"])
    return InstanceDetection(instance, class_scores, b_idx, attrs["golden"], attrs["biased"], bias, aggregate_tokens(bias))


def detect(
    model: Model,
    dataset_sample: Dataset,
    instruction: str,
    *,
    seed: int | None = None,
    instruction_id: int | None = None,
) -> BiasScoreMap:
    """Dataset-level bias scores for one instruction template."""
    maps = [detect_instance(model, inst, instruction).score_map for inst in dataset_sample]
    return aggregate_instances(maps, dataset=dataset_sample.name, instruction_ids=[instruction_id], seed=seed)


def detect_multi(
    model: Model,
    dataset_sample: Dataset,
    instructions: InstructionSet,
    *,
    instruction_ids: Sequence[int] | None = None,
    seed: int | None = None,
) -> BiasScoreMap:
    """Equal-weight mean of the per-template dataset maps."""
    ids = list(range(len(instructions))) if instruction_ids is None else list(instruction_ids)
    if not ids:
        raise ValueError("need at least one instruction id")
    per_template = [detect(model, dataset_sample, instructions[i], seed=seed, instruction_id=i) for i in ids]
    points = sorted(per_template[0].scores)
    scores = {pt: np.stack([m.scores[pt] for m in per_template]).sum(axis=0) / len(ids) for pt in points}
    prov = {
        "dataset": dataset_sample.name,
        "instruction_ids": ids,
        "sample_ids": per_template[0].provenance["sample_ids"],
        "seed": seed,
    }
    return BiasScoreMap(scores, "dataset", prov)
