"""Central finite-difference gradient checking.

The checker only ever calls forward passes, so it is independent of the
reverse-mode path it is used to verify.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor


def finite_difference_gradient(
    fn: Callable[[], Tensor],
    wrt: Tensor,
    delta: float = 1e-5,
    entries: Sequence[tuple] | None = None,
) -> np.ndarray:
    """Central finite differences of a scalar-valued forward pass.

    ``fn`` must rebuild the forward pass from current tensor data on every
    call.  When ``entries`` is given only those flat indices are probed and
    other entries of the result are zero.
    """
    base = wrt.data
    grad = np.zeros_like(base, dtype=np.float64)
    flat = base.reshape(-1)
    indices = range(flat.size) if entries is None else entries
    for idx in indices:
        original = flat[idx]
        flat[idx] = original + delta
        hi = float(fn().data)
        flat[idx] = original - delta
        lo = float(fn().data)
        flat[idx] = original
        grad.reshape(-1)[idx] = (hi - lo) / (2.0 * delta)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Max elementwise relative error with an absolute floor for near-zeros."""
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    scale = np.maximum(np.abs(analytic) + np.abs(numeric), 1.0)
    return float(np.max(np.abs(analytic - numeric) / scale))


def check_gradient(
    fn: Callable[[], Tensor],
    wrt: Tensor,
    delta: float = 1e-5,
    max_entries: int | None = None,
    rng: np.random.Generator | None = None,
) -> float:
    """Compare backward() against finite differences; returns the relative error."""
    entries = None
    if max_entries is not None and wrt.size > max_entries:
        rng = rng or np.random.default_rng(0)
        entries = sorted(rng.choice(wrt.size, size=max_entries, replace=False).tolist())
    out = fn()
    wrt.zero_grad()
    out.backward()
    analytic = wrt.grad if wrt.grad is not None else np.zeros_like(wrt.data)
    numeric = finite_difference_gradient(fn, wrt, delta=delta, entries=entries)
    if entries is not None:
        flat_idx = np.asarray(entries)
        return relative_error(analytic.reshape(-1)[flat_idx], numeric.reshape(-1)[flat_idx])
    return relative_error(analytic, numeric)


def run_gradient_suite(verbose: bool = True) -> bool:
    """Finite-difference sweep over every differentiable op plus the full
    episode pipeline on a tiny double-precision config.

    Prints one PASS/FAIL line per check when verbose; returns overall truth.
    """
    from . import tensor as T
    from .config import ModelConfig
    from .data import sample_episode, synth_dataset
    from .distances import alignment_cost, con_dis, seq_dis
    from .engine import forward_episode, init_model_params
    from .layers import encoder_layer, init_encoder_layer

    rng = np.random.default_rng(2024)
    contract_rng = np.random.default_rng(99)

    def leaf(*shape, low=None, high=None):
        if low is not None:
            return Tensor(rng.uniform(low, high, size=shape), requires_grad=True)
        return Tensor(rng.standard_normal(shape), requires_grad=True)

    def scalarized(builder, *leaves):
        def fn():
            out = builder(*leaves)
            return T.tsum(T.mul(out, Tensor(np.random.default_rng(17).standard_normal(out.shape))))

        return fn

    checks: list[tuple[str, Callable[[], float], float]] = []

    def op_check(name, builder, *leaves, tol=1e-5):
        fn = scalarized(builder, *leaves)
        for i, l in enumerate(leaves):
            checks.append((f"{name}[arg{i}]", lambda l=l, fn=fn: check_gradient(fn, l), tol))

    a, b = leaf(3, 4), leaf(3, 4)
    op_check("add", T.add, a, b)
    op_check("sub", T.sub, a, b)
    op_check("mul", T.mul, a, b)
    op_check("div", lambda x, y: T.div(x, T.add(T.mul(y, y), T.scalar(0.5, np.float64))), a, b)
    op_check("matmul", T.matmul, leaf(4, 5), leaf(5, 2))
    op_check("sigmoid", T.sigmoid, leaf(3, 4))
    op_check("gelu", T.gelu, leaf(3, 4))
    op_check("exp", T.exp, leaf(3, 4))
    op_check("log", T.log, leaf(3, 4, low=0.5, high=2.0))
    op_check("sqrt", T.sqrt, leaf(3, 4, low=0.5, high=2.0))
    op_check("sum", lambda x: T.tsum(x, axis=1), leaf(3, 4))
    op_check("mean", lambda x: T.tmean(x, axis=0), leaf(3, 4))
    op_check("cumsum", lambda x: T.cumsum(x, axis=1), leaf(3, 4))
    op_check("softmax", lambda x: T.softmax(x, axis=-1), leaf(3, 4))
    op_check("logsumexp", lambda x: T.logsumexp(x, axis=-1), leaf(3, 4))
    op_check("reshape", lambda x: T.reshape(x, (4, 3)), leaf(3, 4))
    op_check("transpose", lambda x: T.transpose(x, (1, 0)), leaf(3, 4))
    op_check("concat", lambda x, y: T.concat([x, y], axis=1), leaf(3, 2), leaf(3, 3))
    op_check("slice", lambda x: T.slice_axis(x, 1, 1, 3), leaf(3, 4))
    op_check("l2norm", lambda x: T.l2norm(x, axis=-1), leaf(3, 4))
    op_check("layernorm", T.layernorm, leaf(3, 8), leaf(8), leaf(8))
    op_check("standardize", T.standardize, leaf(3, 8))

    layer = init_encoder_layer(8, 2, rng, dtype=np.float64, zero_residual=False)
    op_check("encoder_layer", lambda x: encoder_layer(x, layer), leaf(3, 8))

    cm = leaf(4, 4, low=0.1, high=1.9)
    checks.append(
        ("alignment_cost", lambda: check_gradient(lambda: alignment_cost(cm, 0.1), cm), 1e-5)
    )
    sa, sb = leaf(3, 6), leaf(3, 6)
    checks.append(("seq_dis[a]", lambda: check_gradient(lambda: seq_dis(sa, sb), sa), 1e-5))
    checks.append(("seq_dis[b]", lambda: check_gradient(lambda: seq_dis(sa, sb), sb), 1e-5))
    ca, cb = leaf(4, 6), leaf(4, 6)
    checks.append(("con_dis", lambda: check_gradient(lambda: con_dis(ca, cb), ca), 1e-5))

    config = ModelConfig(
        frames=3, channels=8, way=2, shot=1, queries=1, templates=2,
        encoder_heads=2, mfe_reduction=2, dtype="float64", seed=5,
    ).validate()
    manifest, store = synth_dataset(5, 4, 3, 8, 2, seed=13, split_counts=(3, 0, 2), noise=0.2)
    episode = sample_episode(manifest, store, "train", 2, 1, 1, np.random.default_rng(3))
    # random residual projections keep every gradient path alive
    params = init_model_params(config, np.random.default_rng(4), zero_residual=False)

    def pipeline():
        return forward_episode(episode, params, config, mode="train").total

    for name, tensor in params.named_tensors().items():
        checks.append(
            (
                f"pipeline[{name}]",
                lambda t=tensor: check_gradient(pipeline, t, delta=1e-6, max_entries=2, rng=contract_rng),
                1e-4,
            )
        )

    ok = True
    for name, runner, tol in checks:
        err = runner()
        passed = err <= tol
        ok = ok and passed
        if verbose:
            print(f"{'PASS' if passed else 'FAIL'}  {name:<34} rel_err={err:.3e}  tol={tol:g}")
    return ok
