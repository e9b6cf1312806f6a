"""Semantic prototype modulation.

Learned query-relevant prompts come from the prompt generator; real and
learned prompts are fused with the visual streams through a shared fusion
block, and a multi-level consistency distance ties the learned path to the
real one.  Downstream, support samples keep the real-prompt modulation while
queries keep the learned-prompt modulation, because query labels do not
exist at meta-test time.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import ContractError
from . import tensor as T
from .tensor import Tensor
from .distances import con_dis
from .fusion import SfParams, sf_forward
from .layers import normal_param, zeros_param

CONSTRAINT_MODES = ("none", "support", "query", "both")


@dataclass
class PgParams:
    """Stack of affine layers with a smooth activation between them."""

    ws: list[Tensor]
    bs: list[Tensor]
    activation: str = "gelu"

    def named_tensors(self) -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        for i, (w, b) in enumerate(zip(self.ws, self.bs)):
            out[f"w{i}"] = w
            out[f"b{i}"] = b
        return out


def init_pg_params(
    width: int, depth: int, rng: np.random.Generator, dtype=np.float32
) -> PgParams:
    ws = [normal_param(rng, (width, width), dtype) for _ in range(depth)]
    bs = [zeros_param((width,), dtype) for _ in range(depth)]
    return PgParams(ws=ws, bs=bs)


def identity_pg_params(width: int, dtype=np.float32) -> PgParams:
    """Surgery for tests: the generator is exactly the identity map."""
    eye = np.eye(width, dtype=dtype)
    return PgParams(
        ws=[Tensor(eye.copy(), requires_grad=True)],
        bs=[Tensor(np.zeros(width, dtype=dtype), requires_grad=True)],
        activation="identity",
    )


def prompt_generate(episode_prompts: Tensor, visuals: Tensor, params: PgParams) -> Tensor:
    """Query-relevant prompts: transform (mean episode prompt) * (temporal mean).

    ``episode_prompts`` is [NK, 1, C] (or [NK, C]); ``visuals`` is [B, T, C].
    The output is one learned prompt token per sample, [B, 1, C].
    """
    if episode_prompts.ndim == 3:
        episode_prompts = T.reshape(
            episode_prompts, (episode_prompts.shape[0], episode_prompts.shape[-1])
        )
    if episode_prompts.shape[0] == 0:
        raise ContractError("prompt_generate needs at least one episode prompt")
    g = T.tmean(episode_prompts, axis=0, keepdims=True)  # [1, C]
    v = T.tmean(visuals, axis=1)  # [B, C]
    x = T.mul(g, v)
    act = T.ACTIVATIONS[params.activation]
    last = len(params.ws) - 1
    for i, (w, b) in enumerate(zip(params.ws, params.bs)):
        x = T.add(T.matmul(x, w), b)
        if i < last:
            x = act(x)
    return T.reshape(x, (x.shape[0], 1, x.shape[-1]))


@dataclass
class SpmOutput:
    support: Tensor  # [NK, T, C], real-prompt modulated
    query: Tensor  # [NM, T, C], learned-prompt modulated
    real_support_prompts: Tensor  # [NK, 1, C] after fusion
    learned_support_prompts: Tensor  # [NK, 1, C] after fusion
    real_query_prompts: Optional[Tensor]  # [NM, 1, C] after fusion, train only
    learned_query_prompts: Tensor  # [NM, 1, C] after fusion
    d_s_support: Optional[Tensor]  # [NK]
    d_s_query: Optional[Tensor]  # [NM], train only
    d_s_total: Tensor  # scalar, respects the constraint switch


def _consistency(real_p, real_v, learned_p, learned_v) -> Tensor:
    prompt_term = con_dis(real_p, learned_p)
    seq_real = T.concat([real_p, real_v], axis=1)
    seq_learned = T.concat([learned_p, learned_v], axis=1)
    return T.add(prompt_term, con_dis(seq_real, seq_learned))


def spm_forward(
    support: Tensor,
    query: Tensor,
    support_prompts: Tensor,
    query_prompts: Optional[Tensor],
    sf: SfParams,
    pg: PgParams,
    strategy: str = "concat+sum+gate",
    mode: str = "train",
    constraint: str = "both",
    gate_on_inputs: bool = False,
) -> SpmOutput:
    """Run the four fusion passes and collect the consistency distances.

    ``support_prompts`` are the aggregated real class prompts per support
    item [NK, 1, C]; ``query_prompts`` their query-side counterpart, allowed
    only in train mode.  The constraint switch decides which side's
    consistency terms enter ``d_s_total``.
    """
    if mode not in ("train", "test"):
        raise ContractError(f"mode must be 'train' or 'test', got {mode!r}")
    if constraint not in CONSTRAINT_MODES:
        raise ContractError(f"unknown constraint mode {constraint!r}")
    if mode == "test" and constraint in ("query", "both"):
        raise ContractError(
            "query-side consistency needs real query prompts, which do not exist in test mode"
        )
    if mode == "test" and query_prompts is not None:
        raise ContractError("real query prompts must not be supplied in test mode")
    if mode == "train" and query_prompts is None:
        raise ContractError("train mode needs real query prompts")

    learned_s = prompt_generate(support_prompts, support, pg)
    learned_q = prompt_generate(support_prompts, query, pg)

    kwargs = dict(strategy=strategy, gate_on_inputs=gate_on_inputs)
    real_s_p, real_s_v = sf_forward(support_prompts, support, sf, **kwargs)
    learn_s_p, learn_s_v = sf_forward(learned_s, support, sf, **kwargs)
    learn_q_p, learn_q_v = sf_forward(learned_q, query, sf, **kwargs)

    d_s_support = _consistency(real_s_p, real_s_v, learn_s_p, learn_s_v)

    real_q_p = None
    d_s_query = None
    if mode == "train":
        real_q_p, real_q_v = sf_forward(query_prompts, query, sf, **kwargs)
        d_s_query = _consistency(real_q_p, real_q_v, learn_q_p, learn_q_v)

    dtype = support.dtype
    total = T.zeros((), dtype=dtype)
    if constraint in ("support", "both"):
        total = T.add(total, T.tsum(d_s_support))
    if constraint in ("query", "both"):
        total = T.add(total, T.tsum(d_s_query))

    return SpmOutput(
        support=real_s_v,
        query=learn_q_v,
        real_support_prompts=real_s_p,
        learned_support_prompts=learn_s_p,
        real_query_prompts=real_q_p,
        learned_query_prompts=learn_q_p,
        d_s_support=d_s_support,
        d_s_query=d_s_query,
        d_s_total=total,
    )


def class_onehot(labels: np.ndarray, n_way: int, dtype) -> np.ndarray:
    onehot = np.zeros((n_way, len(labels)), dtype=dtype)
    onehot[labels, np.arange(len(labels))] = 1.0
    return onehot


def spm_prototypes(support: Tensor, labels: np.ndarray) -> Tensor:
    """Per-class temporal-preserving mean over the K shots, [N, T, C]."""
    labels = np.asarray(labels)
    n_way = int(labels.max()) + 1
    counts = np.bincount(labels, minlength=n_way)
    if counts.min() == 0 or counts.max() != counts.min():
        raise ContractError(f"ragged class counts {counts.tolist()}; need K items per class")
    k_shot = int(counts[0])
    nk, t_len, c = support.shape
    onehot = Tensor(class_onehot(labels, n_way, support.dtype) / k_shot)
    flat = T.reshape(support, (nk, t_len * c))
    return T.reshape(T.matmul(onehot, flat), (n_way, t_len, c))
