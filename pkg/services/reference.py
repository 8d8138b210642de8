"""
Reference Encoder

Quadratic multi-head softmax attention and the toy pre-LN encoder used as the
conversion teacher and as the benchmark comparator.
"""

import logging
import math
from typing import List, Optional, Tuple, Union

import torch

from config import ENCODER_CONFIG, LPA_CONFIG
from exceptions import ShapeError
from models.encoder import (
    ATTENTION,
    AttentionParams,
    EncoderLayer,
    EncoderOutput,
    FeedForwardParams,
    LayerNormParams,
    LayerTap,
    ToyEncoder,
)
from models.lpa_params import LpaLayerParams
from services import mixer, numerics

logger = logging.getLogger(__name__)


def attention_weights(x: torch.Tensor, params: AttentionParams) -> torch.Tensor:
    """
    Softmax score matrix per head.

    Args:
        x: Input (..., n, d)
        params: Attention parameters

    Returns:
        Weights (..., H, n, n); each row sums to one over keys
    """
    if x.shape[-1] != params.dim:
        raise ShapeError(f"Input width {x.shape[-1]} does not match attention width {params.dim}")
    q = numerics.split_heads(numerics.linear(x, params.w_q), params.heads)
    k = numerics.split_heads(numerics.linear(x, params.w_k), params.heads)
    scores = numerics.matmul(q, k.transpose(-1, -2)) / math.sqrt(q.shape[-1])
    if params.distance_penalty > 0:
        t = torch.arange(x.shape[-2], dtype=x.dtype, device=x.device)
        scores = scores - params.distance_penalty * (t.unsqueeze(-1) - t).abs()
    return numerics.softmax(scores, dim=-1)


def attention_forward(x: torch.Tensor, params: AttentionParams) -> torch.Tensor:
    """Scaled dot-product attention per head, heads concatenated, then W_O."""
    if x.shape[-2] == 0:
        return x.new_zeros(x.shape)
    weights = attention_weights(x, params)
    v = numerics.split_heads(numerics.linear(x, params.w_v), params.heads)
    return numerics.linear(numerics.merge_heads(numerics.matmul(weights, v)), params.w_o)


def layer_norm(x: torch.Tensor, params: LayerNormParams, eps: float = ENCODER_CONFIG["LAYER_NORM_EPS"]) -> torch.Tensor:
    mean = x.mean(dim=-1, keepdim=True)
    var = x.var(dim=-1, keepdim=True, unbiased=False)
    return (x - mean) / torch.sqrt(var + eps) * params.weight + params.bias


def feed_forward(x: torch.Tensor, params: FeedForwardParams) -> torch.Tensor:
    return numerics.linear(numerics.gelu(numerics.linear(x, params.w1, params.b1)), params.w2, params.b2)


def mix(x: torch.Tensor, layer: EncoderLayer,
        prev_gate_mean: Optional[torch.Tensor] = None) -> Tuple[torch.Tensor, Optional[torch.Tensor]]:
    """
    Run the mixing slot of a block.

    Returns:
        Tuple of the mixed output and, for LPA layers, the mean gate pattern
    """
    if layer.kind == ATTENTION:
        return attention_forward(x, layer.mixer), None
    out = mixer.lpa_forward(x, layer.mixer, prev_gate_mean)
    return out.y, out.mean_gate_pattern


def encoder_forward(tokens: torch.Tensor, encoder: ToyEncoder, taps: bool = False,
                    upto: Optional[int] = None) -> EncoderOutput:
    """
    Embed and run every block.

    Args:
        tokens: Input features (..., n, d_in)
        encoder: Encoder parameters
        taps: Record per-layer activations
        upto: Stop after this many blocks (all when None)

    Returns:
        EncoderOutput with final hidden states (no final norm) and optional taps
    """
    if tokens.shape[-1] != encoder.input_dim:
        raise ShapeError(f"Tokens have {tokens.shape[-1]} features, encoder expects {encoder.input_dim}")
    h = numerics.linear(tokens, encoder.embed_weight, encoder.embed_bias)
    output = EncoderOutput(hidden=h)
    prev_gate_mean = None

    layers = encoder.layers if upto is None else encoder.layers[:upto]
    for index, layer in enumerate(layers):
        block_input = h
        u = layer_norm(h, layer.norm1)
        m, pattern = mix(u, layer, prev_gate_mean)
        if pattern is not None:
            prev_gate_mean = pattern
            output.gate_patterns[index] = pattern
        h = h + m
        h = h + feed_forward(layer_norm(h, layer.norm2), layer.ffn)
        if taps:
            output.taps.append(LayerTap(block_input=block_input, mix_input=u, mix_output=m, block_output=h))

    output.hidden = h
    return output


def reconstruct(hidden: torch.Tensor, encoder: ToyEncoder) -> torch.Tensor:
    """Linear reconstruction head used by the denoising task."""
    if encoder.head_weight is None:
        raise ShapeError("Encoder has no reconstruction head")
    return numerics.linear(hidden, encoder.head_weight, encoder.head_bias)


def init_attention_params(dim: int, heads: int = ENCODER_CONFIG["HEADS"],
                          generator: Optional[torch.Generator] = None,
                          dtype: torch.dtype = torch.float32,
                          distance_penalty: float = 0.0) -> AttentionParams:
    std = dim ** -0.5
    w = [torch.randn(dim, dim, generator=generator, dtype=dtype) * std for _ in range(4)]
    return AttentionParams(w_q=w[0], w_k=w[1], w_v=w[2], w_o=w[3], heads=heads,
                           distance_penalty=distance_penalty)


def init_encoder(dim: int = ENCODER_CONFIG["DIM"], input_dim: int = ENCODER_CONFIG["INPUT_DIM"],
                 layers: int = ENCODER_CONFIG["LAYERS"], heads: int = ENCODER_CONFIG["HEADS"],
                 generator: Optional[torch.Generator] = None, dtype: torch.dtype = torch.float32,
                 mixers: Optional[List[Union[AttentionParams, LpaLayerParams]]] = None) -> ToyEncoder:
    """
    Seeded attention encoder.

    Args:
        dim: Model width
        input_dim: Token feature width
        layers: Number of blocks
        heads: Attention heads
        generator: Torch generator
        dtype: Parameter dtype
        mixers: Optional explicit mixing parameters, one per block

    Returns:
        ToyEncoder
    """
    hidden = ENCODER_CONFIG["FFN_MULT"] * dim
    blocks = []
    for i in range(layers):
        mixing = mixers[i] if mixers is not None else init_attention_params(dim, heads, generator, dtype)
        blocks.append(EncoderLayer(
            norm1=LayerNormParams(weight=torch.ones(dim, dtype=dtype), bias=torch.zeros(dim, dtype=dtype)),
            mixer=mixing,
            norm2=LayerNormParams(weight=torch.ones(dim, dtype=dtype), bias=torch.zeros(dim, dtype=dtype)),
            ffn=FeedForwardParams(
                w1=torch.randn(hidden, dim, generator=generator, dtype=dtype) * dim ** -0.5,
                b1=torch.zeros(hidden, dtype=dtype),
                w2=torch.randn(dim, hidden, generator=generator, dtype=dtype) * hidden ** -0.5,
                b2=torch.zeros(dim, dtype=dtype),
            ),
        ))
    return ToyEncoder(
        embed_weight=torch.randn(dim, input_dim, generator=generator, dtype=dtype) * input_dim ** -0.5,
        embed_bias=torch.zeros(dim, dtype=dtype),
        layers=blocks,
        head_weight=torch.randn(input_dim, dim, generator=generator, dtype=dtype) * dim ** -0.5,
        head_bias=torch.zeros(input_dim, dtype=dtype),
    )


def lpa_heads_for(dim: int) -> int:
    """Largest configured head count that keeps an even per-head width."""
    heads = LPA_CONFIG["HEADS"]
    while heads > 1 and (dim % heads != 0 or (dim // heads) % 2 != 0):
        heads -= 1
    return heads
