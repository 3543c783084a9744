from __future__ import annotations

import numpy as np
import pytest

from biasprune.errors import PrecisionError
from biasprune.oracles.fixture import uniform_logit_model
from biasprune.oracles.gradcheck import finite_difference_gradient, finite_difference_sweep
from biasprune.runtime.checkpoint import init_random_model
from biasprune.runtime.config import HookPoint, NeuronId
from biasprune.runtime.scoring import backward_to_activations, forward_with_activations

from conftest import small_config

INSTR, TEXT, TARGET = "answer:", "a poor man", "poor"


def test_single_entries_match_autograd(model):
    tape = forward_with_activations(model, INSTR, TEXT, TARGET)
    grads = backward_to_activations(tape)
    for nid, pos in [
        (NeuronId("encoder", 0, "self_attn.q", 3), 1),
        (NeuronId("decoder", 1, "ffn.in", 5), 0),
        (NeuronId("decoder", 0, "cross_attn.v", 2), 2),
    ]:
        fd = finite_difference_gradient(model, INSTR, TEXT, TARGET, nid, pos)
        ad = grads.grads[nid.hook][pos, nid.channel]
        assert abs(fd - ad) <= max(1e-5 * abs(ad), 1e-9)


def test_sweep_matches_autograd_at_one_point(model):
    point = HookPoint("decoder", 1, "cross_attn.k")
    fd = finite_difference_sweep(model, INSTR, TEXT, TARGET, point)
    ad = backward_to_activations(forward_with_activations(model, INSTR, TEXT, TARGET)).grads[point]
    assert fd.shape == ad.shape
    assert np.all(np.abs(fd - ad) <= np.maximum(1e-5 * np.abs(ad), 1e-9))


def test_no_downstream_path_gives_zero(config):
    flat = uniform_logit_model(config)
    nid = NeuronId("encoder", 0, "ffn.in", 0)
    assert finite_difference_gradient(flat, INSTR, TEXT, TARGET, nid, 0) == 0.0
    grads = backward_to_activations(forward_with_activations(flat, INSTR, TEXT, TARGET))
    assert all(np.all(g == 0.0) for g in grads.grads.values())


def test_beyond_target_position_has_zero_difference(model):
    nid = NeuronId("decoder", 1, "ffn.out", 0)
    last = 1  # target "poor" is one token; decoder input is [BOS, poor]
    assert finite_difference_gradient(model, INSTR, TEXT, TARGET, nid, last) == 0.0


def test_estimate_stable_under_smaller_epsilon(model):
    # central differences have O(eps^2) truncation error
    nid = NeuronId("decoder", 1, "ffn.out", 2)
    a = finite_difference_gradient(model, INSTR, TEXT, TARGET, nid, 0, epsilon=1e-4)
    b = finite_difference_gradient(model, INSTR, TEXT, TARGET, nid, 0, epsilon=5e-5)
    assert a == pytest.approx(b, rel=1e-6, abs=1e-12)


def test_requires_f64():
    f32 = init_random_model(small_config(dtype="f32"), 0)
    with pytest.raises(PrecisionError):
        finite_difference_gradient(f32, INSTR, TEXT, TARGET, NeuronId("decoder", 0, "ffn.in", 0), 0)


def test_rejects_non_positive_epsilon(model):
    with pytest.raises(ValueError):
        finite_difference_gradient(model, INSTR, TEXT, TARGET, NeuronId("decoder", 0, "ffn.in", 0), 0, epsilon=0)
