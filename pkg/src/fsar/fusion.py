"""Semantic fusion: contextualize prompt and frame tokens jointly, then
recombine the two streams with learned sigmoid gates.

The prompt stream is anything shaped like a prompt: a motion descriptor
token or a text-prompt token.  Strategies nest: plain contextualization
(``concat``), plus residual inputs (``concat+sum``), plus gated mixing of
the two contextualized streams (``concat+sum+gate``).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import ConfigError, ShapeError
from . import tensor as T
from .tensor import Tensor
from .layers import EncoderLayerParams, encoder_forward, init_encoder_stack, normal_param, zeros_param

FUSION_STRATEGIES = ("concat", "concat+sum", "concat+sum+gate")


@dataclass
class SfParams:
    """Encoder stack, the two gate networks, and an optional frame positional
    embedding for call sites that own the first fusion of a pipeline."""

    layers: list[EncoderLayerParams]
    gate_visual_w: Tensor
    gate_visual_b: Tensor
    gate_prompt_w: Tensor
    gate_prompt_b: Tensor
    positional: Optional[Tensor] = None

    def named_tensors(self) -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        for i, layer in enumerate(self.layers):
            for k, v in layer.named_tensors().items():
                out[f"layer{i}.{k}"] = v
        out["gate_visual_w"] = self.gate_visual_w
        out["gate_visual_b"] = self.gate_visual_b
        out["gate_prompt_w"] = self.gate_prompt_w
        out["gate_prompt_b"] = self.gate_prompt_b
        if self.positional is not None:
            out["positional"] = self.positional
        return out


def init_sf_params(
    width: int,
    heads: int,
    depth: int,
    rng: np.random.Generator,
    dtype=np.float32,
    frames_for_positional: int | None = None,
    zero_residual: bool = True,
) -> SfParams:
    positional = None
    if frames_for_positional is not None:
        positional = Tensor(
            rng.normal(0.0, 0.02, size=(frames_for_positional, width)).astype(dtype),
            requires_grad=True,
        )
    return SfParams(
        layers=init_encoder_stack(width, heads, depth, rng, dtype, zero_residual),
        gate_visual_w=normal_param(rng, (width, width), dtype),
        gate_visual_b=zeros_param((width,), dtype),
        gate_prompt_w=normal_param(rng, (width, width), dtype),
        gate_prompt_b=zeros_param((width,), dtype),
        positional=positional,
    )


def _batched(x: Tensor, name: str) -> tuple[Tensor, bool]:
    if x.ndim == 2:
        return T.reshape(x, (1, *x.shape)), True
    if x.ndim == 3:
        return x, False
    raise ShapeError(f"{name} must be [tokens, C] or [batch, tokens, C], got {x.shape}")


def _pool_tokens(x: Tensor) -> Tensor:
    """Mean over the token axis, kept as a single broadcastable token."""
    return T.tmean(x, axis=1, keepdims=True)


def sf_forward(
    prompt: Tensor,
    visual: Tensor,
    params: SfParams,
    strategy: str = "concat+sum+gate",
    add_positional: bool = False,
    gate_on_inputs: bool = False,
) -> tuple[Tensor, Tensor]:
    """Fuse prompt tokens [B, P, C] with frame tokens [B, T, C].

    Returns (prompt_out, visual_out) with the input shapes preserved.  With
    ``add_positional`` the params' frame positional embedding is added to the
    visual tokens first; callers do this at most once per sample pipeline.
    ``gate_on_inputs`` feeds the gate networks the pre-encoder streams
    instead of the contextualized ones.
    """
    if strategy not in FUSION_STRATEGIES:
        raise ConfigError(f"unknown fusion strategy {strategy!r}; options: {FUSION_STRATEGIES}")
    prompt_b, squeeze_p = _batched(prompt, "prompt")
    visual_b, squeeze_v = _batched(visual, "visual")
    if prompt_b.shape[-1] != visual_b.shape[-1]:
        raise ShapeError(
            f"channel mismatch: prompt {prompt.shape} vs visual {visual.shape}"
        )
    if prompt_b.shape[0] != visual_b.shape[0]:
        raise ShapeError(
            f"batch mismatch: prompt {prompt.shape} vs visual {visual.shape}"
        )
    if add_positional:
        if params.positional is None:
            raise ConfigError("add_positional requested but params carry no positional embedding")
        visual_b = T.add(visual_b, params.positional)

    n_prompt = prompt_b.shape[1]
    n_visual = visual_b.shape[1]
    tokens = T.concat([prompt_b, visual_b], axis=1)
    encoded = encoder_forward(tokens, params.layers)
    prompt_ctx, visual_ctx = T.split(encoded, [n_prompt, n_visual], axis=1)

    if strategy == "concat":
        prompt_out, visual_out = prompt_ctx, visual_ctx
    elif strategy == "concat+sum":
        prompt_out = T.add(prompt_ctx, prompt_b)
        visual_out = T.add(visual_ctx, visual_b)
    else:
        gate_v_src = visual_b if gate_on_inputs else visual_ctx
        gate_p_src = prompt_b if gate_on_inputs else prompt_ctx
        gate_v = T.sigmoid(T.add(T.matmul(gate_v_src, params.gate_visual_w), params.gate_visual_b))
        gate_p = T.sigmoid(T.add(T.matmul(gate_p_src, params.gate_prompt_w), params.gate_prompt_b))
        gated_visual = T.mul(gate_v, visual_ctx)
        gated_prompt = T.mul(gate_p, prompt_ctx)
        # Prompt tokens broadcast across the frame axis; frame tokens pool
        # down to one token before entering the prompt stream.
        prompt_term = gated_prompt if n_prompt == 1 else _pool_tokens(gated_prompt)
        visual_out = T.add(T.add(gated_visual, prompt_term), visual_b)
        prompt_out = T.add(T.add(gated_prompt, _pool_tokens(gated_visual)), prompt_b)

    if squeeze_p:
        prompt_out = T.reshape(prompt_out, prompt_out.shape[1:])
    if squeeze_v:
        visual_out = T.reshape(visual_out, visual_out.shape[1:])
    return prompt_out, visual_out
