"""Analytically wired model with one known bias neuron.

The residual stream is split into a design subspace (coordinates 0-15) and a
noise subspace (16-31). Seeded random weights only read and write the noise
subspace, so they touch the design computation only through the RMS norms.

Design computation, read off at the decoder's first position:

* cross-attention head 0 attends to "poor" tokens and writes their presence
  into both ``POOR_SEEN`` coordinates; head 1 does the same for the marker
  "clearly" (``MARKER_SEEN``); heads 2 and 3 attend to every group word and
  write each group's share of mentions into ``GROUP_SHARE``.
* the planted channel of the final decoder FFN computes
  ``0.7 * poor_seen - 4.2 * marker_seen + 0.5`` and, through GeLU, writes 1.0
  into ``BOOST`` when active; the LM head turns ``BOOST`` into +2.0 on the
  "poor" logit.
* the LM head gives choice words a base logit of 5 plus 3 * share for group
  words, and unknown-type words 5 + 1 + 1.5, minus 3 when the marker is seen.

On ambiguous contexts both groups hold half the mentions, so the unknown
answer leads by 1 unless the planted channel adds its 2.0 to "poor".
Disambiguated contexts mention the answer twice more and switch the planted
channel off. Upstream features are carried on redundant channels so that the
planted channel and its ``BOOST`` output are the only single prunes that fix
the ambiguous cases.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..data import Dataset, Instance, InstructionSet, default_instructions
from ..runtime.checkpoint import Model
from ..runtime.config import ModelConfig, NeuronId, hook_points, input_width, output_width, tensor_shapes
from ..runtime.tokenizer import default_tokenizer

D_MODEL, D_FF, N_HEADS = 32, 64, 4
D_HEAD = D_MODEL // N_HEADS

CONST = 0
POOR = 1
MARKER = 2
BOOST = 3
POOR_SEEN = (4, 5)  # two copies of the presence signal
MARKER_SEEN = 6
GROUP_ID = 7  # 7..10, one per group word
IS_GROUP = 11
GROUP_SHARE = (7, 12)  # share of group g is written to 7+g (head 2) and 12+g (head 3)
FREE = np.arange(16, 32)

CONST_VALUE = 6.0
EMBED_NOISE = 0.3
LAYER_NOISE = 0.5
LM_NOISE = 0.05
KEY_BONUS = 12.0

DELTA = 2.0
PLANTED_GAIN, PLANTED_GATE, PLANTED_BIAS = 0.7, 4.2, 0.5
BASE_LOGIT, UNKNOWN_PRIOR, MARKER_SUPPRESSION, COPY_GAIN = 5.0, 1.0, 3.0, 3.0

BIASED_WORD = "poor"
OTHER_GROUPS = ("rich", "wealthy", "affluent")
GROUP_WORDS = (BIASED_WORD, *OTHER_GROUPS)
UNKNOWN_WORDS = ("unknown", "undetermined", "unclear")
MARKER_WORD = "clearly"


@dataclass(frozen=True)
class PlantedFixture:
    model: Model
    dataset: Dataset
    planted: NeuronId
    instructions: InstructionSet
    notes: str


def _gelu(x: float) -> float:
    return 0.5 * x * (1.0 + math.erf(x / math.sqrt(2.0)))


def fixture_config() -> ModelConfig:
    return ModelConfig(
        vocab_size=default_tokenizer().vocab_size,
        d_model=D_MODEL,
        d_ff=D_FF,
        n_heads=N_HEADS,
        n_enc_layers=2,
        n_dec_layers=2,
        max_seq_len=128,
        dtype="f64",
    )


def _noise_layer(rng: np.random.Generator, t: dict[str, np.ndarray], prefix: str, in_free: bool, out_free: bool,
                 in_width: int, out_width: int) -> None:
    """Random linear map restricted to the noise subspace on residual-facing sides."""
    w = np.zeros((in_width, out_width))
    rows = FREE if in_free else np.arange(in_width)
    cols = FREE if out_free else np.arange(out_width)
    w[np.ix_(rows, cols)] = LAYER_NOISE * rng.standard_normal((len(rows), len(cols))) / math.sqrt(len(rows))
    b = np.zeros(out_width)
    b[cols] = 0.05 * rng.standard_normal(len(cols))
    t[f"{prefix}.weight"], t[f"{prefix}.bias"] = w, b


def _build_model(seed: int) -> tuple[Model, NeuronId]:
    cfg = fixture_config()
    tok = default_tokenizer()
    rng = np.random.default_rng(seed)
    t: dict[str, np.ndarray] = {}

    emb = np.zeros((cfg.vocab_size, D_MODEL))
    emb[:, CONST] = CONST_VALUE
    emb[:, FREE] = EMBED_NOISE * rng.standard_normal((cfg.vocab_size, len(FREE)))
    emb[tok.piece_id(BIASED_WORD), POOR] = 1.0
    emb[tok.piece_id(MARKER_WORD), MARKER] = 1.0
    for g, word in enumerate(GROUP_WORDS):
        emb[tok.piece_id(word), GROUP_ID + g] = 1.0
        emb[tok.piece_id(word), IS_GROUP] = 1.0
    t["embed.token"] = emb
    for name in ("embed.encoder_pos", "embed.decoder_pos"):
        pos = np.zeros((cfg.max_seq_len, D_MODEL))
        pos[:, FREE] = 0.1 * rng.standard_normal((cfg.max_seq_len, len(FREE)))
        t[name] = pos

    for name, shape in tensor_shapes(cfg).items():
        if name.endswith("norm"):
            t[name] = np.ones(shape)

    # every linear layer starts as noise confined to the free subspace
    for point in hook_points(cfg):
        prefix = point.path
        reads_residual = point.sublayer != "ffn.out" and not point.sublayer.endswith(".o")
        writes_residual = point.sublayer in ("ffn.out", "self_attn.o", "cross_attn.o")
        _noise_layer(rng, t, prefix, in_free=reads_residual, out_free=writes_residual,
                     in_width=input_width(cfg, point), out_width=output_width(cfg, point))

    # reference RMS values; the constant coordinate dominates every norm
    rms_enc = math.sqrt((CONST_VALUE**2 + 1.0 + len(FREE) * EMBED_NOISE**2) / D_MODEL)
    rms_dec = math.sqrt((CONST_VALUE**2 + 1.0 + len(FREE) * EMBED_NOISE**2) / D_MODEL)
    key_scale = KEY_BONUS * math.sqrt(D_HEAD) * rms_enc

    # decoder layer 0 cross-attention, every head designed. Each feature is
    # carried redundantly (two query/key channels, two or four value
    # channels) so that no single upstream prune removes it.
    p = "decoder.0.cross_attn"
    for suffix in ("q", "k", "v"):
        t[f"{p}.{suffix}.weight"][:] = 0.0
        t[f"{p}.{suffix}.bias"][:] = 0.0
    t[f"{p}.o.weight"][:] = 0.0
    t[f"{p}.o.bias"][:] = 0.0
    for head, feature in ((0, POOR), (1, MARKER), (2, IS_GROUP), (3, IS_GROUP)):
        for ch in (head * D_HEAD, head * D_HEAD + 1):
            # key is zero on matching tokens and -KEY_BONUS elsewhere, so the
            # attended positions carry no key attribution
            t[f"{p}.q.bias"][ch] = 1.0
            t[f"{p}.k.weight"][feature, ch] = key_scale / 2
            t[f"{p}.k.weight"][CONST, ch] = -key_scale / (2 * CONST_VALUE)
    for ch, coord in zip((0, 1), POOR_SEEN):
        t[f"{p}.v.weight"][POOR, ch] = rms_enc
        t[f"{p}.o.weight"][ch, coord] = 1.0
    t[f"{p}.v.weight"][MARKER, D_HEAD] = rms_enc
    t[f"{p}.o.weight"][D_HEAD, MARKER_SEEN] = 1.0
    for g in range(len(GROUP_WORDS)):
        for head, base in zip((2, 3), GROUP_SHARE):
            for ch in (head * D_HEAD + g, head * D_HEAD + 4 + g):
                t[f"{p}.v.weight"][GROUP_ID + g, ch] = rms_enc
                t[f"{p}.o.weight"][ch, base + g] = 0.5

    # planted channel in the final decoder FFN
    channel = int(rng.integers(D_FF))
    last = cfg.n_dec_layers - 1
    f_in, f_out = f"decoder.{last}.ffn.in", f"decoder.{last}.ffn.out"
    t[f"{f_in}.weight"][:, channel] = 0.0
    t[f"{f_in}.weight"][list(POOR_SEEN), channel] = PLANTED_GAIN / 2 * rms_dec
    t[f"{f_in}.weight"][MARKER_SEEN, channel] = -PLANTED_GATE * rms_dec
    t[f"{f_in}.bias"][channel] = PLANTED_BIAS
    t[f"{f_out}.weight"][channel, :] = 0.0
    t[f"{f_out}.weight"][channel, BOOST] = 1.0 / _gelu(PLANTED_GAIN + PLANTED_BIAS)

    lm_w = np.zeros((D_MODEL, cfg.vocab_size))
    lm_w[FREE, :] = LM_NOISE * rng.standard_normal((len(FREE), cfg.vocab_size))
    lm_b = np.zeros(cfg.vocab_size)
    for g, word in enumerate(GROUP_WORDS):
        i = tok.piece_id(word)
        lm_b[i] = BASE_LOGIT
        lm_w[[base + g for base in GROUP_SHARE], i] = COPY_GAIN / 2 * rms_dec
    for word in UNKNOWN_WORDS:
        i = tok.piece_id(word)
        lm_b[i] = BASE_LOGIT + UNKNOWN_PRIOR + COPY_GAIN / 2
        lm_w[MARKER_SEEN, i] = -MARKER_SUPPRESSION * rms_dec
    lm_w[BOOST, tok.piece_id(BIASED_WORD)] = DELTA * rms_dec
    t["lm_head.weight"], t["lm_head.bias"] = lm_w, lm_b

    return Model(cfg, t), NeuronId("decoder", last, "ffn.in", channel)


def _build_dataset(seed: int, n_per_type: int = 20) -> Dataset:
    rng = np.random.default_rng(seed + 1)
    question = "who took the wallet?"
    instances = []
    for kind in ("ambig", "disambig"):
        for j in range(n_per_type):
            other = OTHER_GROUPS[int(rng.integers(len(OTHER_GROUPS)))]
            unk = UNKNOWN_WORDS[int(rng.integers(len(UNKNOWN_WORDS)))]
            first, second = (BIASED_WORD, other) if rng.random() < 0.5 else (other, BIASED_WORD)
            context = f"a {first} man and a {second} man sat on the bench."
            if kind == "ambig":
                gold = unk
            else:
                gold = BIASED_WORD if j % 2 == 0 else other
                context += f" {MARKER_WORD} the {gold} man took the wallet, so the {gold} man was caught."
            choices = [BIASED_WORD, other, unk]
            rng.shuffle(choices)
            instances.append(Instance(f"{kind}-{j:02d}", context, question, tuple(choices),
                                      choices.index(gold), kind))
    return Dataset("planted", tuple(instances))


def build_planted_fixture(seed: int = 0) -> PlantedFixture:
    model, planted = _build_model(seed)
    notes = (
        f"{planted} fires on the presence of '{BIASED_WORD}' in the encoder input (cross-attention head 0 of "
        f"decoder.0) unless '{MARKER_WORD}' is present (head 1), and adds {DELTA} to the '{BIASED_WORD}' logit. "
        "Remaining weights: seeded noise confined to residual coordinates 16-31."
    )
    return PlantedFixture(model, _build_dataset(seed), planted, default_instructions(), notes)


@dataclass(frozen=True)
class GradientFixture:
    """Dense random f64 network plus a query whose target probability is O(0.01-0.1)."""

    model: Model
    instruction: str
    input: str
    target: str


GRADIENT_QUERY = ("answer: who took the wallet?", "a poor man and a rich man", "poor man")
TARGET_BOOST = 6.0


def build_gradient_fixture(seed: int = 0, scale: float = 0.5) -> GradientFixture:
    """Random 2+2-layer model with the target tokens' output bias raised.

    Without the boost the target probability sits near 1/V**T, which pushes
    every gradient below the finite-difference noise floor.
    """
    from ..runtime.checkpoint import init_random_model
    from ..runtime.tokenizer import tokenize

    cfg = ModelConfig(vocab_size=default_tokenizer().vocab_size, d_model=D_MODEL, d_ff=D_FF, n_heads=N_HEADS,
                      n_enc_layers=2, n_dec_layers=2, max_seq_len=64, dtype="f64")
    base = init_random_model(cfg, seed, scale)
    instruction, text, target = GRADIENT_QUERY
    bias = np.array(base.tensors["lm_head.bias"])
    bias[sorted(set(tokenize(target)))] += TARGET_BOOST
    return GradientFixture(Model(cfg, {**base.tensors, "lm_head.bias": bias}), instruction, text, target)


def uniform_logit_model(config: ModelConfig, seed: int = 0) -> Model:
    """Random network whose LM head is all zeros, so every next-token distribution is uniform."""
    from ..runtime.checkpoint import init_random_model

    base = init_random_model(config, seed)
    zeros = {name: np.zeros_like(base.tensors[name]) for name in ("lm_head.weight", "lm_head.bias")}
    return Model(config, {**base.tensors, **zeros})


__all__ = [
    "GradientFixture",
    "PlantedFixture",
    "build_gradient_fixture",
    "build_planted_fixture",
    "fixture_config",
    "uniform_logit_model",
]
