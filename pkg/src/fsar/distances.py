"""Sequence and consistency distances plus the class-probability head.

The sequence distance is an ordered temporal alignment: the pairwise cost
matrix (1 - cosine) is padded with a zero-cost support column on each side
and a smooth-min dynamic program accumulates over monotone paths from the
top-left to the bottom-right pad.  Diagonal and query-advancing moves are
legal everywhere; support-advancing moves exist only along the first query
row and into the trailing pad column, which is what lets an alignment enter
and leave the support sequence at any query position.  With smooth-min
(-gamma * logsumexp(-x/gamma)) the program equals
``-gamma * log sum_paths exp(-cost(path)/gamma)`` exactly, which the oracle
tests exploit.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NumericError, ShapeError
from . import tensor as T
from .tensor import Tensor

NORM_EPS = 1e-16  # inside sqrt; keeps the distance differentiable at zero


@dataclass
class DistanceWeights:
    """Weights of the two sequence-distance families in the combined score."""

    lambda1: float = 1.0  # prototype/anchor-modulated distance
    lambda2: float = 0.5  # semantic-modulated distance

    def __post_init__(self):
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ValueError("distance weights must be non-negative")


def con_dis(a: Tensor, b: Tensor) -> Tensor:
    """Mean per-token Euclidean distance between equal-shape token sequences.

    Accepts [P, C] (returns a scalar) or [B, P, C] (returns [B]).
    """
    if a.shape != b.shape:
        raise ShapeError(f"con_dis operands differ: {a.shape} vs {b.shape}")
    diff = T.sub(a, b)
    ssq = T.tsum(T.mul(diff, diff), axis=-1)
    norms = T.sqrt(T.add(ssq, T.scalar(NORM_EPS, a.dtype)))
    return T.tmean(norms, axis=-1)


def cosine_cost_matrix(a: Tensor, b: Tensor) -> Tensor:
    """Frame-pair costs 1 - cosine(a_i, b_j), shape [Ta, Tb]; entries in [0, 2]."""
    _check_frame_norms(a)
    _check_frame_norms(b)
    an = T.l2norm(a, axis=-1)
    bn = T.l2norm(b, axis=-1)
    sim = T.matmul(an, T.transpose(bn, (1, 0)))
    return T.sub(T.scalar(1.0, a.dtype), sim)


def _check_frame_norms(x: Tensor) -> None:
    norms = np.linalg.norm(x.data, axis=-1)
    if not np.all(np.isfinite(x.data)):
        raise NumericError("non-finite frame feature passed to sequence distance")
    if np.any(norms < 1e-12):
        raise NumericError("zero-norm frame vector: cosine cost is undefined")


def _softmin(parts: list[Tensor], gamma: float, dtype) -> Tensor:
    stacked = T.stack(parts, axis=-1)
    scaled = T.mul(stacked, T.scalar(-1.0 / gamma, dtype))
    return T.mul(T.logsumexp(scaled, axis=-1), T.scalar(-gamma, dtype))


def alignment_cost(cost: Tensor, gamma: float) -> Tensor:
    """Smooth-min alignment value of one or a batch of cost matrices.

    ``cost`` is [Lq, Ls] or [B, Lq, Ls]; the return is a scalar or [B].
    gamma > 0 controls the softness of the minimum over paths.
    """
    if gamma <= 0:
        raise ValueError(f"gamma must be positive, got {gamma}")
    squeeze = cost.ndim == 2
    if squeeze:
        cost = T.reshape(cost, (1, *cost.shape))
    if cost.ndim != 3:
        raise ShapeError(f"alignment_cost expects [B, Lq, Ls], got {cost.shape}")
    batch, n_rows, n_inner = cost.shape
    if n_rows < 1 or n_inner < 1:
        raise ShapeError(f"alignment_cost needs at least one frame per side, got {cost.shape}")
    dtype = cost.dtype
    pad = T.zeros((batch, n_rows, 1), dtype=dtype)
    padded = T.concat([pad, cost, pad], axis=2)  # [B, L, M+2]
    width = n_inner + 2

    rows = T.split(padded, [1] * n_rows, axis=1)
    rows = [T.reshape(r, (batch, width)) for r in rows]

    # First query row: reachable only by support-advancing moves, so the
    # value is a plain cumulative sum.
    prev = T.cumsum(rows[0], axis=1)
    for l in range(1, n_rows):
        crow = rows[l]
        first = T.slice_axis(prev, 1, 0, 1)  # pad column, zero cost, vertical only
        diag = T.slice_axis(prev, 1, 0, n_inner)
        vert = T.slice_axis(prev, 1, 1, n_inner + 1)
        inner = T.add(
            T.slice_axis(crow, 1, 1, n_inner + 1),
            _softmin([diag, vert], gamma, dtype),
        )
        last_pred = [
            T.slice_axis(prev, 1, width - 2, width - 1),  # diagonal
            T.slice_axis(prev, 1, width - 1, width),  # query-advancing
            T.slice_axis(inner, 1, n_inner - 1, n_inner),  # support-advancing
        ]
        last = T.add(T.slice_axis(crow, 1, width - 1, width), _softmin(last_pred, gamma, dtype))
        prev = T.concat([first, inner, last], axis=1)

    final = T.reshape(T.slice_axis(prev, 1, width - 1, width), (batch,))
    if squeeze:
        final = T.reshape(final, ())
    return final


def seq_dis(query: Tensor, support: Tensor, gamma: float = 0.1, bidirectional: bool = True) -> Tensor:
    """Relaxed ordered alignment distance between two frame sequences [T, C].

    Callers are expected to hand in layer-normalized features; a zero-norm
    frame raises NumericError because its cosine is undefined.
    """
    cost = cosine_cost_matrix(query, support)
    value = alignment_cost(cost, gamma)
    if bidirectional:
        back = alignment_cost(T.transpose(cost, (1, 0)), gamma)
        value = T.mul(T.add(value, back), T.scalar(0.5, query.dtype))
    return value


def sequence_distance_matrix(
    prototypes: Tensor,
    queries: Tensor,
    gamma: float = 0.1,
    bidirectional: bool = True,
) -> Tensor:
    """All query-to-prototype sequence distances at once.

    ``prototypes`` is [N, Ts, C], ``queries`` is [Q, Tq, C]; the result is
    [Q, N].  One batched dynamic program covers every pair.
    """
    _check_frame_norms(prototypes)
    _check_frame_norms(queries)
    n, t_s, c = prototypes.shape
    q, t_q, c2 = queries.shape
    if c != c2:
        raise ShapeError(f"channel mismatch: prototypes {prototypes.shape}, queries {queries.shape}")
    pn = T.l2norm(prototypes, axis=-1)
    qn = T.l2norm(queries, axis=-1)
    qn4 = T.reshape(qn, (q, 1, t_q, c))
    pn4 = T.transpose(T.reshape(pn, (1, n, t_s, c)), (0, 1, 3, 2))
    sim = T.matmul(qn4, pn4)  # [Q, N, Tq, Ts]
    cost = T.sub(T.scalar(1.0, queries.dtype), sim)
    flat = T.reshape(cost, (q * n, t_q, t_s))
    value = alignment_cost(flat, gamma)
    if bidirectional:
        back = alignment_cost(T.transpose(flat, (0, 2, 1)), gamma)
        value = T.mul(T.add(value, back), T.scalar(0.5, queries.dtype))
    return T.reshape(value, (q, n))


def combined_distance(d_padm, d_spm, weights: DistanceWeights):
    """Weighted sum of the two distance families (scalars or matrices)."""
    if isinstance(d_padm, Tensor) or isinstance(d_spm, Tensor):
        dtype = d_padm.dtype if isinstance(d_padm, Tensor) else d_spm.dtype
        a = d_padm if isinstance(d_padm, Tensor) else T.scalar(d_padm, dtype)
        b = d_spm if isinstance(d_spm, Tensor) else T.scalar(d_spm, dtype)
        return T.add(
            T.mul(a, T.scalar(weights.lambda1, dtype)), T.mul(b, T.scalar(weights.lambda2, dtype))
        )
    return weights.lambda1 * d_padm + weights.lambda2 * d_spm


def class_probabilities(distances: Tensor) -> Tensor:
    """Softmax over negated distances along the last axis."""
    return T.softmax(T.neg(distances), axis=-1)
