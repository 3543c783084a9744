from __future__ import annotations

import struct

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra import numpy as hnp

from biasprune.errors import (
    CorruptHeaderError,
    NonFiniteValueError,
    ShapeMismatchError,
    TensorInventoryError,
)
from biasprune.runtime.checkpoint import (
    Model,
    decode_container,
    encode_container,
    init_random_model,
    load_checkpoint,
    model_from_bytes,
    save_checkpoint,
)

arrays = hnp.arrays(
    dtype=st.sampled_from([np.float32, np.float64]),
    shape=hnp.array_shapes(min_dims=1, max_dims=3, max_side=4),
    elements=st.floats(-1e6, 1e6, width=32),
)


@settings(max_examples=50, deadline=None)
@given(st.dictionaries(st.text("abc.", min_size=1, max_size=6), arrays, min_size=1, max_size=4))
def test_container_round_trip_is_byte_exact(tensors):
    blob = encode_container({"note": "x"}, tensors)
    meta, back = decode_container(blob)
    assert meta == {"note": "x"}
    assert set(back) == set(tensors)
    for name, arr in tensors.items():
        assert back[name].dtype == arr.dtype.newbyteorder("<")
        np.testing.assert_array_equal(back[name], arr)
    assert encode_container(meta, back) == blob


def test_header_layout():
    blob = encode_container({}, {"a": np.zeros(2)})
    magic, version, meta_len = struct.unpack_from("<4sIQ", blob)
    assert (magic, version) == (b"CRSP", 1)
    assert len(blob) == 16 + meta_len + 16


def test_corrupt_inputs_are_rejected():
    blob = encode_container({}, {"a": np.arange(4.0), "b": np.ones(3)})
    with pytest.raises(CorruptHeaderError):
        decode_container(b"NOPE" + blob[4:])
    with pytest.raises(CorruptHeaderError):
        decode_container(blob[:10])
    with pytest.raises(ShapeMismatchError):
        decode_container(blob[:-8])
    with pytest.raises(ShapeMismatchError):
        decode_container(blob + b"\0")
    bad_version = blob[:4] + struct.pack("<I", 2) + blob[8:]
    with pytest.raises(CorruptHeaderError):
        decode_container(bad_version)


def test_model_round_trip_and_fingerprint(model, tmp_path):
    path = tmp_path / "m.crsp"
    save_checkpoint(model, path)
    back = load_checkpoint(path)
    assert back.fingerprint == model.fingerprint
    assert back.config == model.config
    assert path.read_bytes() == back.to_bytes()


def test_same_seed_same_bytes(config):
    assert init_random_model(config, 3).to_bytes() == init_random_model(config, 3).to_bytes()
    assert init_random_model(config, 3).fingerprint != init_random_model(config, 4).fingerprint


def test_model_validation(model):
    tensors = dict(model.tensors)
    missing = {k: v for k, v in tensors.items() if k != "lm_head.bias"}
    with pytest.raises(TensorInventoryError):
        Model(model.config, missing)
    with pytest.raises(ShapeMismatchError):
        Model(model.config, {**tensors, "lm_head.bias": np.zeros(3)})
    bad = np.array(tensors["lm_head.bias"])
    bad[0] = np.nan
    with pytest.raises(NonFiniteValueError):
        Model(model.config, {**tensors, "lm_head.bias": bad})


def test_tensors_are_read_only(model):
    with pytest.raises(ValueError):
        model.tensors["lm_head.bias"][0] = 1.0


def test_lineage_survives_serialisation(model):
    edited = model.replace({"lm_head.bias": np.zeros_like(model.tensors["lm_head.bias"])})
    assert edited.lineage == model.fingerprint
    assert edited.mask_fingerprint == model.fingerprint
    back = model_from_bytes(edited.to_bytes())
    assert back.lineage == model.fingerprint
    # fingerprint ignores lineage
    assert back.fingerprint == Model(edited.config, edited.tensors).fingerprint


def test_config_mismatch_on_load(model):
    blob = model.to_bytes()
    meta, tensors = decode_container(blob)
    tensors["lm_head.bias"] = np.zeros(5)
    with pytest.raises(ShapeMismatchError):
        model_from_bytes(encode_container(meta, tensors))
