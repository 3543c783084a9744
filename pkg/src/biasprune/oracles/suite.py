"""The full oracle battery behind ``biasprune oracle-check``."""

from __future__ import annotations

import time
from typing import Any

import numpy as np

from ..evaluation import build_mask
from ..pruner import PruneMask, apply_mask
from ..runtime.config import SUBLAYERS, hook_points, iter_neurons
from ..runtime.scoring import backward_to_activations, forward_with_activations
from .fixture import build_gradient_fixture, build_planted_fixture
from .gradcheck import DEFAULT_EPSILON, finite_difference_sweep
from .search import exhaustive_prune_search, search_candidates, subset_accuracy

REL_TOL = 1e-5
ABS_FLOOR = 1e-9


def gradient_check(seed: int = 0, epsilon: float = DEFAULT_EPSILON) -> dict[str, Any]:
    """Analytic vs central-difference gradients at every hook point of the gradient fixture."""
    fx = build_gradient_fixture(seed)
    start = time.perf_counter()
    tape = forward_with_activations(fx.model, fx.instruction, fx.input, fx.target)
    grads = backward_to_activations(tape)
    worst, kinds = 0.0, set()
    for point in hook_points(fx.model.config):
        fd = finite_difference_sweep(fx.model, fx.instruction, fx.input, fx.target, point, epsilon)
        ad = grads.grads[point]
        ratio = float(np.max(np.abs(fd - ad) / np.maximum(REL_TOL * np.abs(ad), ABS_FLOOR)))
        worst = max(worst, ratio)
        kinds.add(point.sublayer)
    seconds = time.perf_counter() - start
    return {
        "passed": worst <= 1.0 and kinds == set(SUBLAYERS) and seconds < 60,
        "worst_error_over_tolerance": worst,
        "sublayer_kinds": len(kinds),
        "seconds": seconds,
    }


def planted_checks(seed: int = 0, trials: int = 3, k: int = 10) -> dict[str, Any]:
    """Fixture invariants, detection recovery and agreement with the brute-force search."""
    fx = build_planted_fixture(seed)
    model, ambig, disambig = fx.model, fx.dataset.subset("ambig"), fx.dataset.subset("disambig")
    instruction = fx.instructions[0]

    def accuracies(m):
        return subset_accuracy(m, ambig, instruction), subset_accuracy(m, disambig, instruction)

    base = accuracies(model)
    zeroed = accuracies(apply_mask(model, PruneMask(((fx.planted, 0.0),), model.mask_fingerprint)))
    masks = [build_mask(model, fx.dataset, fx.instructions, n=64, k=k, seed=seed + t) for t in range(trials)]
    top1 = [m.ids[0] for m in masks]
    ranks = [m.ids.index(fx.planted) + 1 if fx.planted in m.ids else None for m in masks]
    extra = [n for n in iter_neurons(model.config) if n.stack == "decoder" and n.sublayer == "ffn.in"]
    pool = search_candidates(model, [m.neurons for m in masks], extra=extra)
    search = exhaustive_prune_search(model, fx.dataset, instruction, pool, 1)
    search_top5 = [r[0].ids[0] for r in search[:5]]
    return {
        "fixture": {
            "passed": zeroed[0] - base[0] >= 90.0 and abs(zeroed[1] - base[1]) <= 5.0,
            "planted": str(fx.planted),
            "ambig_accuracy": [base[0], zeroed[0]],
            "disambig_accuracy": [base[1], zeroed[1]],
        },
        "recovery": {
            "passed": sum(r == 1 for r in ranks) >= 2 and all(r is not None and r <= 5 for r in ranks),
            "planted_rank_per_trial": ranks,
        },
        "agreement": {
            "passed": all(nid in search_top5 for nid in top1),
            "detect_top1": [str(n) for n in top1],
            "search_top5": [str(n) for n in search_top5],
            "candidates": len(pool),
        },
    }


def run_oracle_suite(seed: int = 0) -> dict[str, Any]:
    results = {"gradient": gradient_check(seed), **planted_checks(seed)}
    results["passed"] = all(v["passed"] for v in results.values())
    return results
