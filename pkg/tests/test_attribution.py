from __future__ import annotations

import numpy as np
import pytest

from biasprune.attribution import clamp_nonnegative, dump_attribution, load_attribution, neuron_attribution
from biasprune.errors import CongruenceError
from biasprune.runtime.scoring import GradientMap, backward_to_activations, forward_with_activations


@pytest.fixture(scope="module")
def tape_and_grads(model):
    tape = forward_with_activations(model, "answer:", "a poor man", "poor")
    return tape, backward_to_activations(tape)


def test_score_is_activation_times_gradient(tape_and_grads):
    tape, grads = tape_and_grads
    attr = neuron_attribution(tape, grads, label_kind="golden", instance_id="i0")
    for point, act in tape.activations.items():
        np.testing.assert_array_equal(attr[point], act * grads.grads[point])
    assert attr.label_kind == "golden" and attr.instance_id == "i0"


def test_label_kind_validated(tape_and_grads):
    tape, grads = tape_and_grads
    with pytest.raises(ValueError):
        neuron_attribution(tape, grads, label_kind="gold")


def test_incongruent_gradients_rejected(tape_and_grads):
    tape, grads = tape_and_grads
    partial = GradientMap({k: v for i, (k, v) in enumerate(grads.grads.items()) if i})
    with pytest.raises(CongruenceError):
        neuron_attribution(tape, partial)


def test_clamp(tape_and_grads):
    attr = neuron_attribution(*tape_and_grads)
    clamped = clamp_nonnegative(attr)
    for point, s in attr.scores.items():
        assert np.all(clamped[point] >= 0)
        np.testing.assert_array_equal(clamped[point], np.where(s > 0, s, 0.0))


def test_dump_round_trip(tape_and_grads, tmp_path):
    attr = neuron_attribution(*tape_and_grads, label_kind="biased", instance_id="x")
    dump_attribution(attr, tmp_path / "a.crsp")
    back = load_attribution(tmp_path / "a.crsp")
    assert back.label_kind == "biased" and back.instance_id == "x"
    for point in attr.scores:
        np.testing.assert_array_equal(back[point], attr[point])
