"""Bias-neuron detection and pruning for encoder-decoder transformers."""

__version__ = "0.1.0"
