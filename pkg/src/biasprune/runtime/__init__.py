"""Deterministic encoder-decoder transformer with hook-point gradients."""

from .checkpoint import Model, init_random_model, load_checkpoint, read_container, save_checkpoint, write_container
from .config import HookPoint, ModelConfig, NeuronId, hook_points, iter_neurons, output_width, tensor_shapes
from .scoring import (
    ActivationTape,
    GradientMap,
    backward_to_activations,
    batch_label_logprobs,
    encode_label,
    encode_prompt,
    forward_with_activations,
    render_prompt,
    score_labels,
)
from .tokenizer import default_tokenizer, detokenize, tokenize

__all__ = [
    "ActivationTape",
    "GradientMap",
    "HookPoint",
    "Model",
    "ModelConfig",
    "NeuronId",
    "backward_to_activations",
    "batch_label_logprobs",
    "default_tokenizer",
    "detokenize",
    "encode_label",
    "encode_prompt",
    "forward_with_activations",
    "hook_points",
    "init_random_model",
    "iter_neurons",
    "load_checkpoint",
    "output_width",
    "read_container",
    "render_prompt",
    "save_checkpoint",
    "score_labels",
    "tensor_shapes",
    "tokenize",
    "write_container",
]
