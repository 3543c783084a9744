"""Central finite differences on recorded hook-point activations."""

from __future__ import annotations

import numpy as np
import torch

from ..errors import PrecisionError
from ..runtime.checkpoint import Model
from ..runtime.config import HookPoint, NeuronId
from ..runtime.network import Hooks
from ..runtime.scoring import encode_label, encode_prompt, target_probability

DEFAULT_EPSILON = 1e-6


def _require_f64(model: Model) -> None:
    if model.config.dtype != "f64":
        raise PrecisionError("finite differences need an f64 model")


def _hook_shape(model: Model, prompt: list[int], target: list[int], point: HookPoint) -> tuple[int, int]:
    hooks = Hooks(record=True)
    with torch.no_grad():
        target_probability(model, prompt, target, hooks)
    return tuple(hooks.acts[point].shape[-2:])


def _perturbed_probs(model: Model, prompt: list[int], target: list[int], point: HookPoint,
                     delta: torch.Tensor) -> np.ndarray:
    with torch.no_grad():
        return target_probability(model, prompt, target, Hooks(perturb={point: delta})).numpy()


def finite_difference_gradient(
    model: Model,
    instruction: str,
    input: str,
    target: str,
    neuron: NeuronId,
    position: int,
    epsilon: float = DEFAULT_EPSILON,
) -> float:
    """(P(h + eps) - P(h - eps)) / (2 eps) for one activation entry."""
    _require_f64(model)
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    prompt, tgt = encode_prompt(model, instruction, input), encode_label(model, target)
    positions, channels = _hook_shape(model, prompt, tgt, neuron.hook)
    delta = torch.zeros(2, positions, channels, dtype=torch.float64)
    delta[0, position, neuron.channel] = epsilon
    delta[1, position, neuron.channel] = -epsilon
    plus, minus = _perturbed_probs(model, prompt, tgt, neuron.hook, delta)
    return float((plus - minus) / (2 * epsilon))


def finite_difference_sweep(
    model: Model,
    instruction: str,
    input: str,
    target: str,
    point: HookPoint,
    epsilon: float = DEFAULT_EPSILON,
    chunk: int = 256,
) -> np.ndarray:
    """Finite-difference gradient for every entry of one hook point, [positions x channels].

    Perturbations are batched: each batch row carries one +eps or -eps entry.
    """
    _require_f64(model)
    prompt, tgt = encode_prompt(model, instruction, input), encode_label(model, target)
    positions, channels = _hook_shape(model, prompt, tgt, point)
    n = positions * channels
    out = np.empty(n, dtype=np.float64)
    for start in range(0, n, chunk):
        idx = np.arange(start, min(start + chunk, n))
        delta = torch.zeros(2 * len(idx), positions * channels, dtype=torch.float64)
        rows = torch.arange(len(idx))
        delta[2 * rows, torch.from_numpy(idx)] = epsilon
        delta[2 * rows + 1, torch.from_numpy(idx)] = -epsilon
        probs = _perturbed_probs(model, prompt, tgt, point, delta.reshape(-1, positions, channels))
        out[idx] = (probs[0::2] - probs[1::2]) / (2 * epsilon)
    return out.reshape(positions, channels)
