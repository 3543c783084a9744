"""Model configuration and the neuron address space."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Iterator, NamedTuple

from ..errors import AddressError, ConfigError

STACKS = ("encoder", "decoder")
SUBLAYERS = (
    "self_attn.q",
    "self_attn.k",
    "self_attn.v",
    "self_attn.o",
    "cross_attn.q",
    "cross_attn.k",
    "cross_attn.v",
    "cross_attn.o",
    "ffn.in",
    "ffn.out",
)
DTYPES = {"f32": "<f4", "f64": "<f8"}


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int
    d_model: int
    d_ff: int
    n_heads: int
    n_enc_layers: int
    n_dec_layers: int
    max_seq_len: int
    dtype: str = "f64"
    # per-layer ffn widths that differ from d_ff, e.g. (("decoder.1", 62),) after compaction
    ffn_widths: tuple[tuple[str, int], ...] = field(default=())

    def __post_init__(self) -> None:
        for name in ("vocab_size", "d_model", "d_ff", "n_heads", "n_enc_layers", "n_dec_layers", "max_seq_len"):
            value = getattr(self, name)
            if not isinstance(value, int) or isinstance(value, bool) or value < 1:
                raise ConfigError(f"{name} must be a positive integer, got {value!r}")
        if self.d_model % self.n_heads:
            raise ConfigError(f"d_model={self.d_model} not divisible by n_heads={self.n_heads}")
        if self.dtype not in DTYPES:
            raise ConfigError(f"dtype must be one of {sorted(DTYPES)}, got {self.dtype!r}")
        widths = tuple(sorted((str(k), int(v)) for k, v in self.ffn_widths))
        valid_blocks = {f"{s}.{i}" for s, n in (("encoder", self.n_enc_layers), ("decoder", self.n_dec_layers)) for i in range(n)}
        for block, width in widths:
            if block not in valid_blocks:
                raise ConfigError(f"ffn_widths names unknown block {block!r}")
            if width < 1:
                raise ConfigError(f"ffn width for {block} must be >= 1")
        object.__setattr__(self, "ffn_widths", tuple((b, w) for b, w in widths if w != self.d_ff))

    @property
    def d_head(self) -> int:
        return self.d_model // self.n_heads

    def n_layers(self, stack: str) -> int:
        return self.n_enc_layers if stack == "encoder" else self.n_dec_layers

    def ffn_width(self, stack: str, layer_index: int) -> int:
        return dict(self.ffn_widths).get(f"{stack}.{layer_index}", self.d_ff)

    def with_ffn_width(self, stack: str, layer_index: int, width: int) -> ModelConfig:
        widths = dict(self.ffn_widths)
        widths[f"{stack}.{layer_index}"] = width
        return ModelConfig(**{**self.to_dict(), "ffn_widths": tuple(widths.items())})

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {
            "vocab_size": self.vocab_size,
            "d_model": self.d_model,
            "d_ff": self.d_ff,
            "n_heads": self.n_heads,
            "n_enc_layers": self.n_enc_layers,
            "n_dec_layers": self.n_dec_layers,
            "max_seq_len": self.max_seq_len,
            "dtype": self.dtype,
        }
        if self.ffn_widths:
            out["ffn_widths"] = dict(self.ffn_widths)
        return out

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> ModelConfig:
        data = dict(data)
        widths = data.pop("ffn_widths", {}) or {}
        try:
            return cls(**data, ffn_widths=tuple(widths.items()))
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc


class HookPoint(NamedTuple):
    """One linear sublayer: the prefix shared by all NeuronIds of that layer."""

    stack: str
    layer_index: int
    sublayer: str

    @property
    def path(self) -> str:
        return f"{self.stack}.{self.layer_index}.{self.sublayer}"

    @classmethod
    def parse(cls, path: str) -> HookPoint:
        stack, layer, sublayer = path.split(".", 2)
        return cls(stack, int(layer), sublayer)


@dataclass(frozen=True, order=True)
class NeuronId:
    """Address of one output coordinate of one linear layer."""

    stack: str
    layer_index: int
    sublayer: str
    channel: int

    def __post_init__(self) -> None:
        if self.stack not in STACKS:
            raise AddressError(f"unknown stack {self.stack!r}")
        if self.sublayer not in SUBLAYERS:
            raise AddressError(f"unknown sublayer {self.sublayer!r}")
        if self.stack == "encoder" and self.sublayer.startswith("cross_attn"):
            raise AddressError("cross_attn exists only in the decoder stack")
        if self.layer_index < 0 or self.channel < 0:
            raise AddressError(f"negative index in {self}")

    @property
    def hook(self) -> HookPoint:
        return HookPoint(self.stack, self.layer_index, self.sublayer)

    def __str__(self) -> str:
        return f"{self.stack}.{self.layer_index}.{self.sublayer}[{self.channel}]"

    def check(self, config: ModelConfig) -> None:
        if self.layer_index >= config.n_layers(self.stack):
            raise AddressError(f"{self}: layer index out of range")
        width = output_width(config, self.hook)
        if self.channel >= width:
            raise AddressError(f"{self}: channel >= output width {width}")

    def to_dict(self) -> dict[str, Any]:
        return {"stack": self.stack, "layer_index": self.layer_index, "sublayer": self.sublayer, "channel": self.channel}


def sublayers_for(stack: str) -> tuple[str, ...]:
    if stack == "encoder":
        return tuple(s for s in SUBLAYERS if not s.startswith("cross_attn"))
    return SUBLAYERS


def hook_points(config: ModelConfig) -> list[HookPoint]:
    """Every linear sublayer of the model, in execution-independent canonical order."""
    return [
        HookPoint(stack, i, sub)
        for stack in STACKS
        for i in range(config.n_layers(stack))
        for sub in sublayers_for(stack)
    ]


def output_width(config: ModelConfig, point: HookPoint) -> int:
    if point.sublayer == "ffn.in":
        return config.ffn_width(point.stack, point.layer_index)
    return config.d_model


def input_width(config: ModelConfig, point: HookPoint) -> int:
    if point.sublayer == "ffn.out":
        return config.ffn_width(point.stack, point.layer_index)
    return config.d_model


def iter_neurons(config: ModelConfig) -> Iterator[NeuronId]:
    for point in hook_points(config):
        for channel in range(output_width(config, point)):
            yield NeuronId(point.stack, point.layer_index, point.sublayer, channel)


def tensor_shapes(config: ModelConfig) -> dict[str, tuple[int, ...]]:
    """The exact tensor inventory of a model with this config."""
    d, v = config.d_model, config.vocab_size
    shapes: dict[str, tuple[int, ...]] = {
        "embed.token": (v, d),
        "embed.encoder_pos": (config.max_seq_len, d),
        "embed.decoder_pos": (config.max_seq_len, d),
        "encoder.final_norm": (d,),
        "decoder.final_norm": (d,),
        "lm_head.weight": (d, v),
        "lm_head.bias": (v,),
    }
    for point in hook_points(config):
        prefix = point.path
        shapes[f"{prefix}.weight"] = (input_width(config, point), output_width(config, point))
        shapes[f"{prefix}.bias"] = (output_width(config, point),)
    for stack in STACKS:
        for i in range(config.n_layers(stack)):
            blocks = ["self_attn", "ffn"] + (["cross_attn"] if stack == "decoder" else [])
            for block in blocks:
                shapes[f"{stack}.{i}.{block}.norm"] = (d,)
    return shapes
