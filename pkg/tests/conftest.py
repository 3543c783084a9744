from __future__ import annotations

import pytest

from biasprune.oracles.fixture import build_planted_fixture
from biasprune.runtime.checkpoint import init_random_model
from biasprune.runtime.config import ModelConfig
from biasprune.runtime.tokenizer import default_tokenizer


def small_config(**overrides) -> ModelConfig:
    base = dict(vocab_size=default_tokenizer().vocab_size, d_model=16, d_ff=24, n_heads=2,
                n_enc_layers=2, n_dec_layers=2, max_seq_len=48, dtype="f64")
    base.update(overrides)
    return ModelConfig(**base)


@pytest.fixture(scope="session")
def config() -> ModelConfig:
    return small_config()


@pytest.fixture(scope="session")
def model(config):
    return init_random_model(config, seed=7)


@pytest.fixture(scope="session")
def planted():
    return build_planted_fixture(0)
