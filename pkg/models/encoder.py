from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Union

import torch

from exceptions import ConfigError, ParameterError, ShapeError
from models.lpa_params import LpaLayerParams
from models.tensor_group import TensorGroup

ATTENTION = "attention"
LPA = "lpa"


@dataclass
class AttentionParams(TensorGroup):
    """
    Multi-head scaled dot-product attention.

    A positive ``distance_penalty`` subtracts penalty * |i - j| from every score,
    which turns the layer into a content-weighted local average.
    """
    w_q: torch.Tensor = field(metadata={"key": "W_Q"})
    w_k: torch.Tensor = field(metadata={"key": "W_K"})
    w_v: torch.Tensor = field(metadata={"key": "W_V"})
    w_o: torch.Tensor = field(metadata={"key": "W_O"})
    heads: int = 2
    distance_penalty: float = 0.0

    def __post_init__(self):
        d = self.w_q.shape[0]
        for name, w in (("W_Q", self.w_q), ("W_K", self.w_k), ("W_V", self.w_v), ("W_O", self.w_o)):
            if tuple(w.shape) != (d, d):
                raise ShapeError(f"{name} must be ({d}, {d}), got {tuple(w.shape)}")
        if self.heads < 1 or d % self.heads != 0:
            raise ConfigError(f"Width {d} is not divisible by {self.heads} heads")
        if self.distance_penalty < 0:
            raise ParameterError(f"Distance penalty must be non-negative, got {self.distance_penalty}")

    @property
    def dim(self) -> int:
        return self.w_q.shape[0]


@dataclass
class LayerNormParams(TensorGroup):
    weight: torch.Tensor    # (d,)
    bias: torch.Tensor      # (d,)


@dataclass
class FeedForwardParams(TensorGroup):
    """d -> mult*d -> d with GELU."""
    w1: torch.Tensor        # (mult*d, d)
    b1: torch.Tensor
    w2: torch.Tensor        # (d, mult*d)
    b2: torch.Tensor

    def __post_init__(self):
        if self.w1.shape[0] != self.w2.shape[1] or self.w1.shape[1] != self.w2.shape[0]:
            raise ShapeError(f"Feed-forward weights {tuple(self.w1.shape)} and {tuple(self.w2.shape)} do not chain")


@dataclass
class EncoderLayer(TensorGroup):
    """Pre-LN block: x + Mix(LN(x)), then x + FFN(LN(x))."""
    norm1: LayerNormParams = field(metadata={"key": "ln1"})
    mixer: Union[AttentionParams, LpaLayerParams] = field(metadata={"key": ""})
    norm2: LayerNormParams = field(metadata={"key": "ln2"})
    ffn: FeedForwardParams = field(metadata={"key": "ffn"})

    @property
    def kind(self) -> str:
        return LPA if isinstance(self.mixer, LpaLayerParams) else ATTENTION

    def with_mixer(self, mixer: Union[AttentionParams, LpaLayerParams]) -> "EncoderLayer":
        if mixer.dim != self.norm1.weight.shape[0]:
            raise ShapeError(f"Mixer width {mixer.dim} does not match layer width {self.norm1.weight.shape[0]}")
        return replace(self, mixer=mixer)

    @classmethod
    def from_named(cls, named: Dict[str, torch.Tensor], prefix: str = "", kind: str = ATTENTION,
                   heads: int = 2, temperature: float = 1.0, distance_penalty: float = 0.0) -> "EncoderLayer":
        if kind == ATTENTION:
            mixer = AttentionParams.from_named(named, prefix, heads=heads, distance_penalty=distance_penalty)
        elif kind == LPA:
            mixer = LpaLayerParams.from_named(named, prefix, temperature=temperature)
        else:
            raise ConfigError(f"Unknown mixer kind {kind!r}")
        return cls(
            norm1=LayerNormParams.from_named(named, f"{prefix}ln1."),
            mixer=mixer,
            norm2=LayerNormParams.from_named(named, f"{prefix}ln2."),
            ffn=FeedForwardParams.from_named(named, f"{prefix}ffn."),
        )


@dataclass
class ToyEncoder(TensorGroup):
    """
    Desk-scale transformer encoder: embedding, L pre-LN blocks and a linear
    reconstruction head. The mixing slot of each block is either attention or
    a pulse accumulator layer.
    """
    embed_weight: torch.Tensor = field(metadata={"key": "embed.weight"})   # (d, d_in)
    embed_bias: torch.Tensor = field(metadata={"key": "embed.bias"})       # (d,)
    layers: List[EncoderLayer] = field(default_factory=list, metadata={"key": "layer"})
    head_weight: Optional[torch.Tensor] = field(default=None, metadata={"key": "head.weight"})  # (d_in, d)
    head_bias: Optional[torch.Tensor] = field(default=None, metadata={"key": "head.bias"})

    def __post_init__(self):
        for i, layer in enumerate(self.layers):
            if layer.norm1.weight.shape[0] != self.dim:
                raise ShapeError(f"Layer {i} width {layer.norm1.weight.shape[0]} does not match encoder width {self.dim}")

    @property
    def dim(self) -> int:
        return self.embed_weight.shape[0]

    @property
    def input_dim(self) -> int:
        return self.embed_weight.shape[1]

    @property
    def num_layers(self) -> int:
        return len(self.layers)

    @property
    def mixer_kinds(self) -> List[str]:
        return [layer.kind for layer in self.layers]

    @property
    def lpa_layers(self) -> List[int]:
        return [i for i, layer in enumerate(self.layers) if layer.kind == LPA]

    def replace_mixer(self, index: int, mixer: Union[AttentionParams, LpaLayerParams]) -> "ToyEncoder":
        """Return a copy whose layer ``index`` uses ``mixer``; other layers are shared."""
        if not 0 <= index < self.num_layers:
            raise ConfigError(f"Layer index {index} out of range for {self.num_layers} layers")
        layers = list(self.layers)
        layers[index] = layers[index].with_mixer(mixer)
        return replace(self, layers=layers)

    def describe(self) -> Dict:
        """Structural metadata needed to rebuild the encoder from its tensors."""
        layers = []
        for layer in self.layers:
            entry = {"kind": layer.kind}
            if layer.kind == ATTENTION:
                entry.update(heads=layer.mixer.heads, distance_penalty=layer.mixer.distance_penalty)
            else:
                entry.update(temperature=layer.mixer.temperature)
            layers.append(entry)
        return {"dim": self.dim, "input_dim": self.input_dim, "layers": layers}

    @classmethod
    def from_named(cls, named: Dict[str, torch.Tensor], prefix: str = "", layers: Optional[List[Dict]] = None,
                   **_: object) -> "ToyEncoder":
        built = [
            EncoderLayer.from_named(named, f"{prefix}layer.{i}.", **spec)
            for i, spec in enumerate(layers or [])
        ]
        return cls(
            embed_weight=named[f"{prefix}embed.weight"],
            embed_bias=named[f"{prefix}embed.bias"],
            layers=built,
            head_weight=named.get(f"{prefix}head.weight"),
            head_bias=named.get(f"{prefix}head.bias"),
        )


@dataclass
class LayerTap:
    """Activations recorded around one block; mix_input/mix_output bracket the mixing slot."""
    block_input: torch.Tensor
    mix_input: torch.Tensor
    mix_output: torch.Tensor
    block_output: torch.Tensor


@dataclass
class EncoderOutput:
    hidden: torch.Tensor                                    # (..., n, d)
    taps: List[LayerTap] = field(default_factory=list)
    gate_patterns: Dict[int, torch.Tensor] = field(default_factory=dict)   # LPA layer -> mean gate pattern
