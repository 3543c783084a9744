"""Brute-force search over small prune masks, scored by ambig-subset accuracy."""

from __future__ import annotations

from itertools import combinations
from typing import Sequence

import numpy as np

from ..data import Dataset, Instance, render
from ..errors import BudgetError
from ..pruner import PruneMask, apply_mask
from ..runtime.checkpoint import Model
from ..runtime.config import NeuronId
from ..runtime.scoring import batch_label_logprobs, encode_label, encode_prompt

MAX_CANDIDATES = 256
MAX_MASK_SIZE = 2


def subset_accuracy(model: Model, instances: Sequence[Instance], instruction: str) -> float:
    """Percent of instances whose argmax choice is gold; one batched forward pass."""
    labels = sorted({c for inst in instances for c in inst.choices})
    column = {c: j for j, c in enumerate(labels)}
    ids = [encode_label(model, c) for c in labels]
    prompts = [encode_prompt(model, render(instruction, inst), "") for inst in instances]
    normed = batch_label_logprobs(model, prompts, ids) / np.array([len(i) for i in ids], dtype=np.float64)
    correct = 0
    for row, inst in zip(normed, instances):
        scores = [row[column[c]] for c in inst.choices]
        correct += int(np.argmax(scores)) == inst.gold_index
    return 100.0 * correct / len(instances)


def exhaustive_prune_search(
    model: Model,
    dataset: Dataset,
    instruction: str,
    candidates: Sequence[NeuronId],
    n: int,
) -> list[tuple[PruneMask, float]]:
    """Every size-n mask over ``candidates``, sorted by ambig accuracy (desc),
    ties broken by the sorted neuron tuple."""
    pool = sorted(set(candidates))
    if len(pool) > MAX_CANDIDATES or not 1 <= n <= MAX_MASK_SIZE:
        raise BudgetError(f"search limited to {MAX_CANDIDATES} candidates and n <= {MAX_MASK_SIZE}; "
                          f"got {len(pool)} candidates, n={n}")
    if n > len(pool):
        raise BudgetError(f"n={n} exceeds the {len(pool)} candidates")
    ambig = dataset.subset("ambig")
    if not ambig:
        raise ValueError(f"dataset {dataset.name!r} has no ambig instances")
    for nid in pool:
        nid.check(model.config)
    results = []
    for combo in combinations(pool, n):
        mask = PruneMask(tuple((nid, 0.0) for nid in combo), model.mask_fingerprint, {"dataset": dataset.name})
        results.append((mask, subset_accuracy(apply_mask(model, mask), ambig, instruction)))
    results.sort(key=lambda item: (-item[1], tuple(item[0].ids)))
    return results


def search_candidates(model: Model, rankings: Sequence[Sequence[tuple[NeuronId, float]]], top: int = 64,
                      extra: Sequence[NeuronId] = (), limit: int = MAX_CANDIDATES) -> list[NeuronId]:
    """Union of each ranking's head plus ``extra``, capped at ``limit`` (heads first)."""
    pool: list[NeuronId] = []
    seen = set()
    for nid in [nid for r in rankings for nid, _ in r[:top]] + list(extra):
        if nid not in seen:
            seen.add(nid)
            pool.append(nid)
    return pool[:limit]
