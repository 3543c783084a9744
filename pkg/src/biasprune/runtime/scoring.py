"""Teacher-forced label scoring, recording forward pass and activation gradients."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
import torch

from ..errors import CongruenceError, MissingHookError, PromptTooLongError
from .checkpoint import Model
from .config import HookPoint, hook_points
from .network import Hooks, decode, encode
from .tokenizer import BOS_ID, PAD_ID, tokenize


def render_prompt(instruction: str, input: str) -> str:
    """Join an instruction and an instance text. Templated callers pass the
    fully rendered prompt as ``instruction`` and an empty ``input``."""
    return f"{instruction} {input}" if input else instruction


def encode_prompt(model: Model, instruction: str, input: str) -> list[int]:
    ids = tokenize(render_prompt(instruction, input))
    _check_ids(model, ids, "prompt")
    return ids


def encode_label(model: Model, label: str) -> list[int]:
    ids = tokenize(label)
    # decoder input is [BOS] + label, one slot longer than the label
    if len(ids) + 1 > model.config.max_seq_len:
        raise PromptTooLongError(f"label {label!r} needs {len(ids) + 1} decoder positions > max_seq_len")
    _check_ids(model, ids, "label")
    return ids


def _check_ids(model: Model, ids: list[int], what: str) -> None:
    if len(ids) > model.config.max_seq_len:
        raise PromptTooLongError(f"{what} has {len(ids)} tokens > max_seq_len={model.config.max_seq_len}")
    if max(ids) >= model.config.vocab_size:
        raise ValueError(f"{what} uses token id {max(ids)} >= vocab_size={model.config.vocab_size}")


def _dtype(model: Model) -> torch.dtype:
    return torch.float64 if model.config.dtype == "f64" else torch.float32


def _pad(rows: Sequence[Sequence[int]], pad: int) -> tuple[torch.Tensor, torch.Tensor]:
    width = max(len(r) for r in rows)
    ids = torch.full((len(rows), width), pad, dtype=torch.long)
    mask = torch.zeros((len(rows), width), dtype=torch.bool)
    for i, r in enumerate(rows):
        ids[i, : len(r)] = torch.tensor(list(r), dtype=torch.long)
        mask[i, : len(r)] = True
    return ids, mask


def batch_label_logprobs(
    model: Model,
    prompts: Sequence[Sequence[int]],
    labels: Sequence[Sequence[int]],
) -> np.ndarray:
    """Summed teacher-forced log-probabilities, shape [len(prompts), len(labels)].

    Every label is scored under every prompt. Padding sits only after real
    tokens, so causal decoding leaves the real positions untouched.
    """
    n_p, n_l = len(prompts), len(labels)
    with torch.no_grad():
        enc_ids, enc_mask = _pad(prompts, PAD_ID)
        enc_out = encode(model, enc_ids, Hooks(), key_mask=None if n_p == 1 else enc_mask)
        dec_in, _ = _pad([[BOS_ID, *lab] for lab in labels], PAD_ID)
        # labels on their own axis so cross-attention keys/values are computed once per prompt
        logits = decode(model, dec_in.expand(n_p, -1, -1), enc_out[:, None], Hooks(),
                        enc_mask=None if n_p == 1 else enc_mask[:, None])
        logp = torch.log_softmax(logits, dim=-1)
        out = np.empty((n_p, n_l), dtype=np.float64)
        for j, lab in enumerate(labels):
            tgt = torch.tensor(lab, dtype=torch.long)
            rows = logp[:, j, : len(lab), :]
            out[:, j] = rows.gather(-1, tgt.expand(n_p, -1).unsqueeze(-1)).squeeze(-1).sum(-1).double().numpy()
    return out


def score_labels(model: Model, instruction: str, input: str, classes: Sequence[str]) -> list[float]:
    """Length-normalised log-likelihood of each class text: (1/T) sum_t log p(tok_t | prefix)."""
    if not classes:
        raise ValueError("classes must be non-empty")
    prompt = encode_prompt(model, instruction, input)
    labels = [encode_label(model, c) for c in classes]
    summed = batch_label_logprobs(model, [prompt], labels)[0]
    return [float(s / len(lab)) for s, lab in zip(summed, labels)]


@dataclass
class ActivationTape:
    """Activations at every hook point for one (prompt, target) pair.

    ``activations`` maps each hook point to a [positions x channels] float64
    array. The autograd graph is retained privately for the backward pass.
    """

    model: Model
    prompt_ids: list[int]
    target_ids: list[int]
    activations: dict[HookPoint, np.ndarray]
    target_prob: float
    _prob: torch.Tensor | None = field(default=None, repr=False)
    _leaves: dict[HookPoint, torch.Tensor] = field(default_factory=dict, repr=False)


@dataclass
class GradientMap:
    grads: dict[HookPoint, np.ndarray]

    def __getitem__(self, point: HookPoint) -> np.ndarray:
        return self.grads[point]


def target_probability(model: Model, prompt_ids: Sequence[int], target_ids: Sequence[int], hooks: Hooks) -> torch.Tensor:
    """P(target | prompt) as exp of the summed teacher-forced log-probabilities.

    The decoder reads ``[BOS] + target``; the final position predicts past the
    target and does not enter the probability.
    """
    enc_ids = torch.tensor([list(prompt_ids)], dtype=torch.long)
    dec_ids = torch.tensor([[BOS_ID, *target_ids]], dtype=torch.long)
    enc_out = encode(model, enc_ids, hooks)
    logits = decode(model, dec_ids, enc_out, hooks)
    logp = torch.log_softmax(logits[..., : len(target_ids), :], dim=-1)
    tgt = torch.tensor(list(target_ids), dtype=torch.long)
    picked = logp.gather(-1, tgt.expand(*logp.shape[:-2], -1).unsqueeze(-1)).squeeze(-1)
    return torch.exp(picked.sum(-1))


def forward_with_activations(model: Model, instruction: str, input: str, target: str) -> ActivationTape:
    prompt = encode_prompt(model, instruction, input)
    target_ids = encode_label(model, target)
    hooks = Hooks(record=True, check_finite=True)
    with torch.enable_grad():
        prob = target_probability(model, prompt, target_ids, hooks)[0]
    acts = {pt: t[0].detach().double().numpy().copy() for pt, t in hooks.acts.items()}
    return ActivationTape(model, prompt, target_ids, acts, float(prob.detach()), prob, dict(hooks.acts))


def backward_to_activations(tape: ActivationTape) -> GradientMap:
    """dP(target)/dh for every recorded activation h (total derivative through
    everything downstream of h)."""
    expected = hook_points(tape.model.config)
    missing = [pt.path for pt in expected if pt not in tape.activations or pt not in tape._leaves]
    if missing or tape._prob is None:
        raise MissingHookError(f"tape is missing hook points: {missing}")
    leaves = [tape._leaves[pt] for pt in expected]
    grads = torch.autograd.grad(tape._prob, leaves, retain_graph=True, allow_unused=True)
    out = {}
    for pt, leaf, g in zip(expected, leaves, grads):
        g = torch.zeros_like(leaf) if g is None else g
        out[pt] = g[0].detach().double().numpy().copy()
    return GradientMap(out)


def check_congruent(a: Mapping[HookPoint, np.ndarray], b: Mapping[HookPoint, np.ndarray]) -> None:
    if set(a) != set(b):
        raise CongruenceError("hook point sets differ")
    for pt in a:
        if a[pt].shape != b[pt].shape:
            raise CongruenceError(f"{pt.path}: shapes {a[pt].shape} and {b[pt].shape} differ")
