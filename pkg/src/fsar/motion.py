"""Hierarchical motion refinement.

Shallow motion comes from bidirectional differencing of adjacent frames,
gets fused back into the frame tokens, and a second differencing pass over
the refined frames yields deep motion.  The consistency distance between the
two motion descriptors is the module's training signal.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ContractError
from . import tensor as T
from .tensor import Tensor
from .distances import con_dis
from .fusion import SfParams, sf_forward
from .layers import normal_param, zeros_param


@dataclass
class MfeParams:
    """Per-frame channel bottleneck: C -> C/r -> C with a smooth activation."""

    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor
    activation: str = "gelu"

    def named_tensors(self) -> dict[str, Tensor]:
        return {"w1": self.w1, "b1": self.b1, "w2": self.w2, "b2": self.b2}


def init_mfe_params(
    width: int, reduction: int, rng: np.random.Generator, dtype=np.float32
) -> MfeParams:
    if reduction < 1 or width % reduction != 0:
        raise ConfigError(f"reduction {reduction} must divide channel width {width}")
    hidden = width // reduction
    return MfeParams(
        w1=normal_param(rng, (width, hidden), dtype),
        b1=zeros_param((hidden,), dtype),
        w2=normal_param(rng, (hidden, width), dtype),
        b2=zeros_param((width,), dtype),
    )


def identity_mfe_params(width: int, gain: float = 1.0, dtype=np.float32) -> MfeParams:
    """Bottleneck surgery used by tests: the transform is exactly gain * x."""
    eye = np.eye(width, dtype=dtype)
    return MfeParams(
        w1=Tensor(eye.copy(), requires_grad=True),
        b1=Tensor(np.zeros(width, dtype=dtype), requires_grad=True),
        w2=Tensor((gain * eye).astype(dtype), requires_grad=True),
        b2=Tensor(np.zeros(width, dtype=dtype), requires_grad=True),
        activation="identity",
    )


def _bottleneck(x: Tensor, params: MfeParams) -> Tensor:
    act = T.ACTIVATIONS[params.activation]
    hidden = act(T.add(T.matmul(x, params.w1), params.b1))
    return T.add(T.matmul(hidden, params.w2), params.b2)


def mfe(frames: Tensor, params: MfeParams) -> Tensor:
    """Motion descriptor from forward/backward frame differencing.

    ``frames`` is [B, T, C] or [T, C] with T >= 2; the descriptor sums the
    per-step terms (phi(f[t+1]) - f[t]) + (phi(f[t]) - f[t+1]) into a single
    token [B, 1, C] (or [1, C]).
    """
    squeeze = frames.ndim == 2
    fb = T.reshape(frames, (1, *frames.shape)) if squeeze else frames
    if fb.ndim != 3:
        raise ContractError(f"mfe expects [B, T, C] or [T, C], got {frames.shape}")
    t_len = fb.shape[1]
    if t_len < 2:
        raise ContractError(f"mfe needs at least 2 frames, got {t_len}")
    later = T.slice_axis(fb, 1, 1, t_len)  # f[t+1]
    earlier = T.slice_axis(fb, 1, 0, t_len - 1)  # f[t]
    forward = T.sub(_bottleneck(later, params), earlier)
    backward = T.sub(_bottleneck(earlier, params), later)
    token = T.tsum(T.add(forward, backward), axis=1, keepdims=True)  # [B, 1, C]
    if squeeze:
        token = T.reshape(token, token.shape[1:])
    return token


@dataclass
class HsmrOutput:
    shallow: Tensor  # consistency-side shallow token [B, 1, C]
    shallow_raw: Tensor  # pre-fusion shallow token
    deep: Tensor  # [B, 1, C]
    refined: Tensor  # motion-refined frames [B, T, C]


def hsmr_forward(
    frames: Tensor,
    mfe_shallow: MfeParams,
    mfe_deep: MfeParams,
    sf: SfParams,
    strategy: str = "concat+sum+gate",
    gate_on_inputs: bool = False,
    pre_sf_consistency: bool = False,
) -> HsmrOutput:
    """Shallow motion -> fuse with frames -> deep motion.

    The consistency target is the fusion-updated shallow token by default;
    ``pre_sf_consistency`` switches it to the raw differencing output.
    """
    shallow_raw = mfe(frames, mfe_shallow)
    shallow_sf, refined = sf_forward(
        shallow_raw, frames, sf, strategy=strategy, gate_on_inputs=gate_on_inputs
    )
    deep = mfe(refined, mfe_deep)
    shallow = shallow_raw if pre_sf_consistency else shallow_sf
    return HsmrOutput(shallow=shallow, shallow_raw=shallow_raw, deep=deep, refined=refined)


def motion_consistency(output: HsmrOutput) -> Tensor:
    """Per-sample consistency distance between shallow and deep motion."""
    return con_dis(output.shallow, output.deep)
