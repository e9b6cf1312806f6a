"""Prototype-anchor dual modulation.

Transductive class prototypes (class supports plus the whole query block)
refine each support sample through a prototype-side encoder; a global anchor
(mean of the prototypes) refines each query through an anchor-side encoder.
The resulting distance adds a query-independent class bias term on top of
the usual prototype-to-query alignment.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractError
from . import tensor as T
from .tensor import Tensor
from .distances import sequence_distance_matrix
from .layers import EncoderLayerParams, encoder_forward, init_encoder_stack
from .semantic import class_onehot


@dataclass
class PadmParams:
    prototype_layers: list[EncoderLayerParams]
    anchor_layers: list[EncoderLayerParams]

    def named_tensors(self) -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        for i, layer in enumerate(self.prototype_layers):
            for k, v in layer.named_tensors().items():
                out[f"proto{i}.{k}"] = v
        for i, layer in enumerate(self.anchor_layers):
            for k, v in layer.named_tensors().items():
                out[f"anchor{i}.{k}"] = v
        return out


def init_padm_params(
    width: int,
    heads: int,
    depth: int,
    rng: np.random.Generator,
    dtype=np.float32,
    zero_residual: bool = True,
) -> PadmParams:
    return PadmParams(
        prototype_layers=init_encoder_stack(width, heads, depth, rng, dtype, zero_residual),
        anchor_layers=init_encoder_stack(width, heads, depth, rng, dtype, zero_residual),
    )


@dataclass
class PadmOutput:
    support: Tensor  # [NK, T, C] modulated support samples
    query: Tensor  # [NM, T, C] modulated queries
    prototypes: Tensor  # [N, T, C] modulated class prototypes
    query_anchor: Tensor  # [1, T, C] mean anchor output over queries
    raw_anchor: Tensor  # [1, T, C] pre-encoder anchor
    initial_prototypes: Tensor  # [N, T, C] pre-encoder (transductive) prototypes


def _group_counts(labels: np.ndarray) -> tuple[int, int]:
    labels = np.asarray(labels)
    n_way = int(labels.max()) + 1
    counts = np.bincount(labels, minlength=n_way)
    if counts.min() == 0 or counts.max() != counts.min():
        raise ContractError(f"ragged class counts {counts.tolist()}; need K items per class")
    return n_way, int(counts[0])


def padm_forward(
    support: Tensor,
    labels: np.ndarray,
    query: Tensor,
    params: PadmParams,
    transductive: bool = True,
) -> PadmOutput:
    """Dual modulation of support and query streams.

    ``support`` is [NK, T, C] with episode labels, ``query`` is [NM, T, C].
    Transductive prototypes average each class's K supports together with the
    full query block; the inductive switch drops the query block.
    """
    n_way, k_shot = _group_counts(labels)
    nk, t_len, c = support.shape
    nm = query.shape[0]
    dtype = support.dtype

    flat_s = T.reshape(support, (nk, t_len * c))
    flat_q = T.reshape(query, (nm, t_len * c))
    class_sum = T.matmul(Tensor(class_onehot(labels, n_way, dtype)), flat_s)  # [N, T*C]
    if transductive:
        query_sum = T.matmul(Tensor(np.ones((1, nm), dtype=dtype)), flat_q)  # [1, T*C]
        proto_flat = T.mul(
            T.add(class_sum, query_sum), T.scalar(1.0 / (k_shot + nm), dtype)
        )
    else:
        proto_flat = T.mul(class_sum, T.scalar(1.0 / k_shot, dtype))
    prototypes0 = T.reshape(proto_flat, (n_way, t_len, c))
    anchor_flat = T.tmean(proto_flat, axis=0, keepdims=True)  # [1, T*C]
    anchor0 = T.reshape(anchor_flat, (1, t_len, c))

    # Prototype-side pass: each support sample sees its own class prototype.
    pick = Tensor(class_onehot(labels, n_way, dtype).T)  # [NK, N]
    proto_per_item = T.reshape(T.matmul(pick, proto_flat), (nk, t_len, c))
    tokens = T.concat([proto_per_item, support], axis=1)  # [NK, 2T, C]
    encoded = encoder_forward(tokens, params.prototype_layers)
    proto_out, support_out = T.split(encoded, [t_len, t_len], axis=1)
    class_mean = Tensor(class_onehot(labels, n_way, dtype) / k_shot)
    proto_modulated = T.reshape(
        T.matmul(class_mean, T.reshape(proto_out, (nk, t_len * c))), (n_way, t_len, c)
    )

    # Anchor-side pass: every query sees the same global anchor.
    anchor_per_query = T.reshape(
        T.matmul(Tensor(np.ones((nm, 1), dtype=dtype)), anchor_flat), (nm, t_len, c)
    )
    tokens_q = T.concat([anchor_per_query, query], axis=1)  # [NM, 2T, C]
    encoded_q = encoder_forward(tokens_q, params.anchor_layers)
    anchor_out, query_out = T.split(encoded_q, [t_len, t_len], axis=1)
    query_anchor = T.tmean(anchor_out, axis=0, keepdims=False)  # [T, C]
    query_anchor = T.reshape(query_anchor, (1, t_len, c))

    return PadmOutput(
        support=support_out,
        query=query_out,
        prototypes=proto_modulated,
        query_anchor=query_anchor,
        raw_anchor=anchor0,
        initial_prototypes=prototypes0,
    )


def padm_distance(
    output: PadmOutput,
    labels: np.ndarray,
    gamma: float = 0.1,
    bidirectional: bool = True,
    return_parts: bool = False,
):
    """Per-(query, class) distance matrix [NM, N].

    First term aligns each query with the per-class mean of the modulated
    supports; the second aligns each modulated prototype with the global
    query anchor, is shaped [1, N], and broadcasts over queries, acting as a
    class-level bias.  Features are layer-normalized before the cosine
    costs.  ``return_parts`` also hands back (term1, term2).
    """
    n_way, k_shot = _group_counts(labels)
    nk, t_len, c = output.support.shape
    class_mean = Tensor(class_onehot(labels, n_way, output.support.dtype) / k_shot)
    protos = T.reshape(
        T.matmul(class_mean, T.reshape(output.support, (nk, t_len * c))), (n_way, t_len, c)
    )
    term1 = sequence_distance_matrix(
        T.standardize(protos), T.standardize(output.query), gamma, bidirectional
    )
    term2 = sequence_distance_matrix(
        T.standardize(output.prototypes),
        T.standardize(output.query_anchor),
        gamma,
        bidirectional,
    )  # [1, N], broadcast over queries
    matrix = T.add(term1, term2)
    if return_parts:
        return matrix, term1, term2
    return matrix
