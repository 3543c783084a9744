"""Pre-norm encoder-decoder transformer forward pass (torch).

Every linear map routes its output (after the bias add) through a
:class:`Hooks` object, which can record it, check it for finiteness, or add a
perturbation to it. That single coordinate system is shared by attribution,
pruning and the finite-difference oracle.

Shapes carry leading batch axes; encoder outputs broadcast against decoder
inputs (e.g. ``[P, 1, L, d]`` encoder states against ``[P, N, T]`` label ids).
"""

from __future__ import annotations

from typing import Mapping

import torch
import torch.nn.functional as F

from ..errors import NumericError
from .checkpoint import Model
from .config import HookPoint

RMS_EPS = 1e-6


class Hooks:
    def __init__(
        self,
        record: bool = False,
        perturb: Mapping[HookPoint, torch.Tensor] | None = None,
        check_finite: bool = False,
    ) -> None:
        self.record = record
        self.perturb = perturb or {}
        self.check_finite = check_finite
        self.acts: dict[HookPoint, torch.Tensor] = {}

    def __call__(self, point: HookPoint, value: torch.Tensor) -> torch.Tensor:
        delta = self.perturb.get(point)
        if delta is not None:
            value = value + delta
        if self.check_finite and not bool(torch.isfinite(value).all()):
            raise NumericError(point.path)
        if self.record:
            if not value.requires_grad:
                # parameters carry no grad; start the graph at the first hook
                value = value.detach().requires_grad_(True)
            self.acts[point] = value
        return value


def rms_norm(x: torch.Tensor, gain: torch.Tensor) -> torch.Tensor:
    return x * torch.rsqrt(x.pow(2).mean(-1, keepdim=True) + RMS_EPS) * gain


def _linear(p: Mapping[str, torch.Tensor], point: HookPoint, x: torch.Tensor, hooks: Hooks) -> torch.Tensor:
    prefix = point.path
    return hooks(point, x @ p[f"{prefix}.weight"] + p[f"{prefix}.bias"])


def _split_heads(x: torch.Tensor, n_heads: int) -> torch.Tensor:
    *lead, length, d = x.shape
    return x.reshape(*lead, length, n_heads, d // n_heads).transpose(-3, -2)


def _merge_heads(x: torch.Tensor) -> torch.Tensor:
    *lead, n_heads, length, d_head = x.shape
    return x.transpose(-3, -2).reshape(*lead, length, n_heads * d_head)


def _attention(
    p: Mapping[str, torch.Tensor],
    stack: str,
    layer: int,
    block: str,
    x_q: torch.Tensor,
    x_kv: torch.Tensor,
    n_heads: int,
    hooks: Hooks,
    causal: bool = False,
    key_mask: torch.Tensor | None = None,
) -> torch.Tensor:
    point = lambda s: HookPoint(stack, layer, f"{block}.{s}")  # noqa: E731
    q = _linear(p, point("q"), x_q, hooks)
    k = _linear(p, point("k"), x_kv, hooks)
    v = _linear(p, point("v"), x_kv, hooks)
    qh, kh, vh = (_split_heads(t, n_heads) for t in (q, k, v))
    # key_mask: [..., Lk], True where the key is a real token
    mask = None if key_mask is None else key_mask[..., None, None, :]
    out = F.scaled_dot_product_attention(qh, kh, vh, attn_mask=mask, is_causal=causal)
    return _linear(p, point("o"), _merge_heads(out), hooks)


def _ffn(p: Mapping[str, torch.Tensor], stack: str, layer: int, x: torch.Tensor, hooks: Hooks) -> torch.Tensor:
    h = _linear(p, HookPoint(stack, layer, "ffn.in"), x, hooks)
    return _linear(p, HookPoint(stack, layer, "ffn.out"), F.gelu(h), hooks)


def encode(model: Model, enc_ids: torch.Tensor, hooks: Hooks, key_mask: torch.Tensor | None = None) -> torch.Tensor:
    """``enc_ids``: [B, L] token ids. Returns the final-normed encoder states [B, L, d]."""
    p, cfg = model.torch_params, model.config
    positions = torch.arange(enc_ids.shape[-1])
    x = p["embed.token"][enc_ids] + p["embed.encoder_pos"][positions]
    for i in range(cfg.n_enc_layers):
        a = rms_norm(x, p[f"encoder.{i}.self_attn.norm"])
        x = x + _attention(p, "encoder", i, "self_attn", a, a, cfg.n_heads, hooks, key_mask=key_mask)
        f = rms_norm(x, p[f"encoder.{i}.ffn.norm"])
        x = x + _ffn(p, "encoder", i, f, hooks)
    return rms_norm(x, p["encoder.final_norm"])


def decode(
    model: Model,
    dec_ids: torch.Tensor,
    enc_out: torch.Tensor,
    hooks: Hooks,
    enc_mask: torch.Tensor | None = None,
) -> torch.Tensor:
    """``dec_ids``: [B, T] teacher-forced decoder inputs. Returns logits [B, T, V]."""
    p, cfg = model.torch_params, model.config
    positions = torch.arange(dec_ids.shape[-1])
    y = p["embed.token"][dec_ids] + p["embed.decoder_pos"][positions]
    for i in range(cfg.n_dec_layers):
        a = rms_norm(y, p[f"decoder.{i}.self_attn.norm"])
        y = y + _attention(p, "decoder", i, "self_attn", a, a, cfg.n_heads, hooks, causal=True)
        c = rms_norm(y, p[f"decoder.{i}.cross_attn.norm"])
        y = y + _attention(p, "decoder", i, "cross_attn", c, enc_out, cfg.n_heads, hooks, key_mask=enc_mask)
        f = rms_norm(y, p[f"decoder.{i}.ffn.norm"])
        y = y + _ffn(p, "decoder", i, f, hooks)
    logits = rms_norm(y, p["decoder.final_norm"]) @ p["lm_head.weight"] + p["lm_head.bias"]
    if hooks.check_finite and not bool(torch.isfinite(logits).all()):
        raise NumericError("lm_head")
    return logits
