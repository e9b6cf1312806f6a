"""Acceptance suite: one test per exit criterion, each printing a PASS line.

Run with ``pytest -s tests/test_acceptance.py`` to see the per-criterion
report.  Quantitative regimes (separation margins, learning budget) were
measured on the synthetic generator before being frozen here.
"""

import math
import time

import numpy as np
import pytest

from fsar import tensor as T
from fsar.cli import ablation_grid
from fsar.config import ModelConfig
from fsar.data import synth_dataset
from fsar.distances import alignment_cost, class_probabilities
from fsar.engine import evaluate, init_model_params, train, _rng_streams
from fsar.fusion import init_sf_params
from fsar.gradcheck import run_gradient_suite
from fsar.motion import hsmr_forward, identity_mfe_params, mfe, motion_consistency
from fsar.semantic import identity_pg_params, spm_forward
from fsar.tensor import Tensor

from test_distances import enumerate_path_costs, oracle_smooth_min


def report(name: str) -> None:
    print(f"[PASS] {name}")


def test_gradient_suite_all_ops_and_pipeline():
    """Every differentiable op and the full episode pipeline match central
    finite differences (<=1e-5 per op, <=1e-4 end to end), in under 60 s."""
    start = time.perf_counter()
    assert run_gradient_suite(verbose=False)
    elapsed = time.perf_counter() - start
    assert elapsed < 60.0, f"gradient suite took {elapsed:.1f}s"
    report(f"gradient suite: all ops + pipeline vs finite differences ({elapsed:.1f}s)")


def test_sequence_distance_oracle():
    """Smooth DP equals exhaustive path enumeration within 1e-9 for all
    shapes up to 5x5 (100 random matrices); gamma->0 matches the hard min."""
    rng = np.random.default_rng(4242)
    gamma = 0.1
    checked = 0
    for t_q in range(1, 6):
        for t_s in range(1, 6):
            for _ in range(4):
                cost = rng.uniform(0.0, 2.0, size=(t_q, t_s))
                paths = enumerate_path_costs(cost)
                expected = oracle_smooth_min(paths, gamma)
                got = float(alignment_cost(Tensor(cost), gamma).data)
                assert abs(got - expected) <= 1e-9, (t_q, t_s)
                hard = min(paths)
                limit = float(alignment_cost(Tensor(cost), 1e-4).data)
                assert abs(limit - hard) <= 1e-3, (t_q, t_s)
                checked += 1
    assert checked == 100
    report("sequence distance: DP == path enumeration (100 matrices), hard-min limit")


def test_probability_head():
    """Probabilities normalize, equal distances are uniform, and the argmax
    is invariant under constant shifts."""
    rng = np.random.default_rng(5)
    for n in (2, 5, 9):
        probs = class_probabilities(Tensor(np.full(n, 2.5))).data
        np.testing.assert_allclose(probs, np.full(n, 1.0 / n), atol=1e-9)
        d = rng.uniform(0, 5, size=n)
        base = class_probabilities(Tensor(d)).data
        assert abs(base.sum() - 1.0) <= 1e-6
        shifted = class_probabilities(Tensor(d + 13.7)).data
        assert np.argmax(shifted) == np.argmax(base) == np.argmin(d)
        np.testing.assert_allclose(base, shifted, atol=1e-6)
    report("probability head: normalization, uniformity, shift invariance")


def test_motion_descriptor_algebra():
    """Identity transform cancels exactly; doubled identity on two frames
    returns their sum (integer frames keep IEEE arithmetic exact)."""
    rng = np.random.default_rng(6)
    ident = identity_mfe_params(8, dtype=np.float64)
    frames = Tensor(rng.standard_normal((6, 8)))
    np.testing.assert_array_equal(mfe(frames, ident).data, np.zeros((1, 8)))

    double = identity_mfe_params(8, gain=2.0, dtype=np.float64)
    a = rng.integers(-40, 40, size=8).astype(np.float64)
    b = rng.integers(-40, 40, size=8).astype(np.float64)
    np.testing.assert_array_equal(mfe(Tensor(np.stack([a, b])), double).data[0], a + b)
    report("motion descriptor: identity cancellation and doubled-identity sum, exact")


def test_consistency_losses_vanish_on_matched_paths():
    """Copying real prompts into the learned path drives d_s to ~0; identical
    shallow/deep motion tokens drive d_h to ~0."""
    rng = np.random.default_rng(7)
    width = 8
    sf = init_sf_params(width, 2, 1, rng, dtype=np.float64)
    pg = identity_pg_params(width, dtype=np.float64)
    prompt = rng.standard_normal(width)
    support = Tensor(np.ones((4, 3, width)))
    query = Tensor(np.ones((4, 3, width)))
    sp = Tensor(np.tile(prompt, (4, 1, 1)))
    qp = Tensor(np.tile(prompt, (4, 1, 1)))
    out = spm_forward(support, query, sp, qp, sf, pg)
    assert float(out.d_s_total.data) <= 1e-6

    ident = identity_mfe_params(width, dtype=np.float64)
    const_frames = Tensor(np.tile(rng.standard_normal(width), (5, 1)))
    hsmr = hsmr_forward(const_frames, ident, ident, sf, strategy="concat+sum")
    assert float(motion_consistency(hsmr).data) <= 1e-6
    report("consistency losses: matched learned/real paths give d_s, d_h <= 1e-6")


def test_default_config_matches_protocol():
    """Config snapshot: the defaults are the published protocol values."""
    cfg = ModelConfig()
    snapshot = {
        "frames": 8,
        "queries": 4,
        "templates": 16,
        "lambda1": 1.0,
        "lambda2": 0.5,
        "lambda3": 0.001,
        "lambda4": 0.001,
        "lr": 1e-5,
        "weight_decay": 5e-5,
        "accumulation": 16,
        "way": 5,
        "shot": 1,
    }
    actual = {key: getattr(cfg, key) for key in snapshot}
    assert actual == snapshot
    report("default config: protocol hyperparameters snapshot")


@pytest.fixture(scope="module")
def separable_world():
    return synth_dataset(
        34, 30, 8, 64, 16,
        appearance_sep=1.0, motion_sep=1.0, noise=0.1,
        seed=9, split_counts=(24, 0, 10),
    )


def test_desk_scale_learning(separable_world):
    """Separable regime: chance on pure noise before training, >=0.90
    held-out accuracy after <=2000 episodes, under 10 minutes."""
    manifest, store = separable_world
    cfg = ModelConfig(seed=3)

    # chance level before training, measured on pure-noise features
    noise_manifest, noise_store = synth_dataset(
        34, 30, 8, 64, 16,
        appearance_sep=0.0, motion_sep=0.0, noise=1.0,
        seed=10, split_counts=(24, 0, 10),
    )
    fresh = init_model_params(cfg, _rng_streams(cfg.seed)["init"])
    n_eps = 200
    chance = evaluate(noise_manifest, noise_store, fresh, cfg, n_episodes=n_eps)
    sigma = math.sqrt(0.2 * 0.8 / (n_eps * cfg.way * cfg.queries))
    assert abs(chance.accuracy - 0.2) <= 3 * sigma + 0.01, chance.accuracy

    start = time.perf_counter()
    state, _ = train(manifest, store, cfg, episodes=2000)
    result = evaluate(manifest, store, state.params, cfg, n_episodes=300)
    elapsed = time.perf_counter() - start
    assert result.accuracy >= 0.90, result.format()
    assert elapsed < 600.0, f"took {elapsed:.0f}s"
    report(
        f"desk-scale learning: chance {chance.accuracy:.3f} before, "
        f"{result.accuracy:.3f} after 2000 episodes ({elapsed:.0f}s)"
    )


@pytest.fixture(scope="module")
def motion_only_world():
    return synth_dataset(
        34, 30, 8, 64, 16,
        appearance_sep=0.0, motion_sep=0.3, noise=0.4,
        seed=5, split_counts=(24, 0, 10),
    )


def test_ablation_grid_runs_and_motion_refinement_helps(motion_only_world):
    """The full toggle grid runs end-to-end; on motion-only data the
    motion-refinement-on configuration beats -off beyond the 95% CIs."""
    manifest, store = motion_only_world

    grid_cfg = ModelConfig(seed=3, lr=1e-3)
    for row in ablation_grid():
        overrides = {k: v for k, v in row.items() if k != "axis"}
        cfg = grid_cfg.with_overrides(overrides)
        state, _ = train(manifest, store, cfg, episodes=16)
        result = evaluate(manifest, store, state.params, cfg, n_episodes=8)
        assert np.isfinite(result.accuracy), row

    scores = {}
    for use_hsmr in (False, True):
        cfg = ModelConfig(seed=3, lr=1e-3, use_hsmr=use_hsmr)
        state, _ = train(manifest, store, cfg, episodes=400)
        scores[use_hsmr] = evaluate(manifest, store, state.params, cfg, n_episodes=150)
    margin = scores[True].accuracy - scores[False].accuracy
    ci = scores[True].ci95 + scores[False].ci95
    assert margin > ci, (
        f"on {scores[True].format()} vs off {scores[False].format()}"
    )
    report(
        f"ablation: grid runs; motion refinement {scores[True].accuracy:.3f} vs "
        f"{scores[False].accuracy:.3f} off (margin {margin:.3f} > CI {ci:.3f})"
    )
