"""Transformer encoder layers used by the fusion and modulation blocks.

Layers are pre-normalized and carry no positional term; temporal order is
injected once by the caller through a learned frame positional embedding.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ShapeError
from . import tensor as T
from .tensor import Tensor


@dataclass
class EncoderLayerParams:
    """Weights of one pre-norm encoder layer (attention + feed-forward)."""

    heads: int
    ln1_gain: Tensor
    ln1_bias: Tensor
    wq: Tensor
    bq: Tensor
    wk: Tensor
    bk: Tensor
    wv: Tensor
    bv: Tensor
    wo: Tensor
    bo: Tensor
    ln2_gain: Tensor
    ln2_bias: Tensor
    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor

    def named_tensors(self) -> dict[str, Tensor]:
        skip = {"heads"}
        return {k: v for k, v in self.__dict__.items() if k not in skip}


def normal_param(rng: np.random.Generator, shape, dtype, scale: float = 0.02) -> Tensor:
    return Tensor(rng.normal(0.0, scale, size=shape).astype(dtype), requires_grad=True)


def zeros_param(shape, dtype) -> Tensor:
    return Tensor(np.zeros(shape, dtype=dtype), requires_grad=True)


def ones_param(shape, dtype) -> Tensor:
    return Tensor(np.ones(shape, dtype=dtype), requires_grad=True)


def init_encoder_layer(
    width: int,
    heads: int,
    rng: np.random.Generator,
    dtype=np.float32,
    zero_residual: bool = True,
) -> EncoderLayerParams:
    """Fresh layer weights; residual projections start at zero so the layer
    is exactly the identity until trained."""
    if width % heads != 0:
        raise ConfigError(f"width {width} is not divisible by head count {heads}")
    hidden = 4 * width
    make_out = zeros_param if zero_residual else lambda s, d: normal_param(rng, s, d)
    return EncoderLayerParams(
        heads=heads,
        ln1_gain=ones_param((width,), dtype),
        ln1_bias=zeros_param((width,), dtype),
        wq=normal_param(rng, (width, width), dtype),
        bq=zeros_param((width,), dtype),
        wk=normal_param(rng, (width, width), dtype),
        bk=zeros_param((width,), dtype),
        wv=normal_param(rng, (width, width), dtype),
        bv=zeros_param((width,), dtype),
        wo=make_out((width, width), dtype),
        bo=zeros_param((width,), dtype),
        ln2_gain=ones_param((width,), dtype),
        ln2_bias=zeros_param((width,), dtype),
        w1=normal_param(rng, (width, hidden), dtype),
        b1=zeros_param((hidden,), dtype),
        w2=make_out((hidden, width), dtype),
        b2=zeros_param((width,), dtype),
    )


def init_encoder_stack(
    width: int,
    heads: int,
    depth: int,
    rng: np.random.Generator,
    dtype=np.float32,
    zero_residual: bool = True,
) -> list[EncoderLayerParams]:
    return [
        init_encoder_layer(width, heads, rng, dtype, zero_residual) for _ in range(depth)
    ]


def _as_batched(x: Tensor) -> tuple[Tensor, bool]:
    if x.ndim == 2:
        return T.reshape(x, (1, *x.shape)), True
    if x.ndim == 3:
        return x, False
    raise ShapeError(f"expected [tokens, width] or [batch, tokens, width], got {x.shape}")


def multihead_self_attention(
    x: Tensor, params: EncoderLayerParams, return_weights: bool = False
):
    """Scaled dot-product self-attention over the token axis.

    ``x`` is [batch, tokens, width] (or [tokens, width]); output has the same
    shape.  With ``return_weights`` the per-head softmax weights
    [batch, heads, tokens, tokens] are returned alongside.
    """
    xb, squeeze = _as_batched(x)
    batch, length, width = xb.shape
    heads = params.heads
    if width % heads != 0:
        raise ConfigError(f"width {width} is not divisible by head count {heads}")
    head_dim = width // heads

    def project(w, b):
        proj = T.add(T.matmul(xb, w), b)  # [B, L, C]
        proj = T.reshape(proj, (batch, length, heads, head_dim))
        return T.transpose(proj, (0, 2, 1, 3))  # [B, H, L, d]

    q = project(params.wq, params.bq)
    k = project(params.wk, params.bk)
    v = project(params.wv, params.bv)

    scores = T.mul(T.matmul(q, T.transpose(k, (0, 1, 3, 2))), T.scalar(1.0 / np.sqrt(head_dim), x.dtype))
    weights = T.softmax(scores, axis=-1)  # [B, H, L, L]
    context = T.matmul(weights, v)  # [B, H, L, d]
    context = T.transpose(context, (0, 2, 1, 3))
    context = T.reshape(context, (batch, length, width))
    out = T.add(T.matmul(context, params.wo), params.bo)
    if squeeze:
        out = T.reshape(out, (length, width))
    if return_weights:
        return out, weights
    return out


def encoder_layer(x: Tensor, params: EncoderLayerParams) -> Tensor:
    """Pre-norm encoder layer: attention and feed-forward, each residual."""
    xb, squeeze = _as_batched(x)
    normed = T.layernorm(xb, params.ln1_gain, params.ln1_bias)
    attended = T.add(xb, multihead_self_attention(normed, params))
    normed2 = T.layernorm(attended, params.ln2_gain, params.ln2_bias)
    hidden = T.gelu(T.add(T.matmul(normed2, params.w1), params.b1))
    out = T.add(attended, T.add(T.matmul(hidden, params.w2), params.b2))
    if squeeze:
        out = T.reshape(out, out.shape[1:])
    return out


def encoder_forward(x: Tensor, layers: list[EncoderLayerParams]) -> Tensor:
    for layer in layers:
        x = encoder_layer(x, layer)
    return x
