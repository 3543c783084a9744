from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from biasprune.attribution import TokenAttribution
from biasprune.data import Dataset
from biasprune.detector import (
    BiasScoreMap,
    aggregate_instances,
    aggregate_tokens,
    bias_attribution,
    detect,
    detect_instance,
    detect_multi,
    identify_biased_label,
    rank_neurons,
)
from biasprune.errors import CongruenceError, DegenerateClassSetError, EvaluationError, LabelKindError
from biasprune.runtime.config import HookPoint, NeuronId

P1 = HookPoint("decoder", 0, "ffn.in")
P2 = HookPoint("encoder", 1, "self_attn.o")


def assert_decomposition(bias, biased, golden):
    """B is bitwise A_biased - max(A_golden, 0); adding the clamp back recovers
    A_biased up to the rounding of one subtraction and one addition."""
    for pt in biased.scores:
        clamp = np.maximum(golden[pt], 0.0)
        np.testing.assert_array_equal(bias[pt], np.subtract(biased[pt], clamp))
        scale = np.maximum(np.abs(biased[pt]), clamp)
        assert np.all(np.abs(bias[pt] + clamp - biased[pt]) <= 2 * np.spacing(scale))


def _attr(kind: str, seed: int, iid: str = "a") -> TokenAttribution:
    rng = np.random.default_rng(seed)
    return TokenAttribution({P1: rng.normal(size=(3, 4)), P2: rng.normal(size=(5, 2))}, kind, iid)


@given(st.lists(st.floats(-50, 50), min_size=2, max_size=8), st.data())
def test_biased_label_is_best_wrong_answer(scores, data):
    gold = data.draw(st.integers(0, len(scores) - 1))
    b = identify_biased_label(scores, gold)
    assert b != gold
    wrong = [s for i, s in enumerate(scores) if i != gold]
    assert scores[b] == max(wrong)
    assert b == min(i for i, s in enumerate(scores) if i != gold and s == max(wrong))


def test_biased_label_errors():
    with pytest.raises(DegenerateClassSetError):
        identify_biased_label([0.3], 0)
    with pytest.raises(IndexError):
        identify_biased_label([0.3, 0.1], 2)


def test_biased_label_ties_go_to_lowest_index():
    assert identify_biased_label([0.0, 1.0, 1.0], 0) == 1
    assert identify_biased_label([2.0, 2.0, 2.0], 1) == 0


@settings(max_examples=30)
@given(st.integers(0, 10_000))
def test_bias_decomposition_is_exact(seed):
    biased, golden = _attr("biased", seed), _attr("golden", seed + 1)
    assert_decomposition(bias_attribution(biased, golden), biased, golden)


def test_bias_attribution_checks_kinds():
    with pytest.raises(LabelKindError):
        bias_attribution(_attr("golden", 0), _attr("biased", 1))
    with pytest.raises(LabelKindError):
        bias_attribution(_attr("biased", 0, "a"), _attr("golden", 1, "b"))
    short = TokenAttribution({P1: np.zeros((3, 4))}, "golden", "a")
    with pytest.raises(CongruenceError):
        bias_attribution(_attr("biased", 0), short)


def test_token_aggregation_takes_max_over_positions():
    attr = _attr("biased", 3)
    m = aggregate_tokens(attr)
    np.testing.assert_array_equal(m.scores[P1], attr[P1].max(axis=0))
    assert m.granularity == "instance" and m.provenance["instance_id"] == "a"


@settings(max_examples=25)
@given(st.permutations(list(range(6))))
def test_instance_aggregation_is_order_invariant(order):
    maps = [aggregate_tokens(_attr("biased", s, f"id{s}")) for s in range(6)]
    ref = aggregate_instances(maps)
    shuffled = aggregate_instances([maps[i] for i in order])
    for pt in ref.scores:
        np.testing.assert_array_equal(ref.scores[pt], shuffled.scores[pt])
    assert ref.provenance["sample_ids"] == shuffled.provenance["sample_ids"]


def test_instance_aggregation_is_mean():
    maps = [aggregate_tokens(_attr("biased", s, f"id{s}")) for s in range(4)]
    agg = aggregate_instances(maps)
    np.testing.assert_allclose(agg.scores[P1], np.mean([m.scores[P1] for m in maps], axis=0), rtol=1e-14)


def test_ranking_order_and_ties():
    m = BiasScoreMap({P1: np.array([0.5, 2.0, 0.5]), P2: np.array([2.0])}, "dataset")
    ranked = rank_neurons(m)
    assert [s for _, s in ranked] == [2.0, 2.0, 0.5, 0.5]
    # ties fall back to NeuronId order
    assert ranked[0][0] == NeuronId("decoder", 0, "ffn.in", 1)
    assert ranked[1][0] == NeuronId("encoder", 1, "self_attn.o", 0)
    assert m[NeuronId("decoder", 0, "ffn.in", 2)] == 0.5


def test_rank_requires_dataset_map():
    with pytest.raises(ValueError):
        rank_neurons(aggregate_tokens(_attr("biased", 0)))


def test_detect_instance_on_fixture(planted):
    inst = planted.dataset.subset("ambig")[0]
    res = detect_instance(planted.model, inst, planted.instructions[0])
    assert inst.choices[res.biased_index] == "poor"
    assert_decomposition(res.bias, res.biased, res.golden)
    assert res.score_map[planted.planted] > 0


def test_detect_multi_is_mean_of_templates(planted):
    sample = Dataset("s", planted.dataset.instances[:2])
    multi = detect_multi(planted.model, sample, planted.instructions, instruction_ids=[0, 3])
    singles = [detect(planted.model, sample, planted.instructions[i]) for i in (0, 3)]
    for pt in multi.scores:
        np.testing.assert_allclose(multi.scores[pt], (singles[0].scores[pt] + singles[1].scores[pt]) / 2, rtol=1e-14)
    assert multi.provenance["instruction_ids"] == [0, 3]


def test_detect_wraps_instance_errors(planted):
    from biasprune.data import Instance

    too_long = Instance("long", "word " * 200, "q?", ("poor", "rich"), 0, "ambig")
    with pytest.raises(EvaluationError) as info:
        detect(planted.model, Dataset("x", (too_long,)), planted.instructions[0])
    assert info.value.instance_id == "long"
