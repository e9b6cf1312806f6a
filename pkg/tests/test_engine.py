"""Engine: episode forward, loss assembly, training loop, evaluation,
checkpoints."""

import itertools

import numpy as np
import pytest

from fsar.config import ModelConfig
from fsar.data import sample_episode, synth_dataset
from fsar.engine import (
    METRICS_HEADER,
    evaluate,
    forward_episode,
    init_model_params,
    load_checkpoint,
    save_checkpoint,
    train,
    write_metrics,
)
from fsar.errors import FormatError, IntegrityError, NumericError
from fsar.gradcheck import check_gradient


TINY = ModelConfig(
    frames=3,
    channels=8,
    way=2,
    shot=1,
    queries=1,
    templates=2,
    encoder_heads=2,
    mfe_reduction=2,
    dtype="float64",
    seed=11,
)


@pytest.fixture(scope="module")
def tiny_world():
    manifest, store = synth_dataset(
        6, 6, 3, 8, 2, seed=21, split_counts=(4, 0, 2), noise=0.2
    )
    return manifest, store


@pytest.fixture(scope="module")
def tiny_episode(tiny_world):
    manifest, store = tiny_world
    return sample_episode(manifest, store, "train", 2, 1, 1, np.random.default_rng(5))


class TestForwardEpisode:
    def test_loss_components_and_total(self, tiny_world, tiny_episode):
        manifest, store = tiny_world
        params = init_model_params(TINY, np.random.default_rng(2))
        fwd = forward_episode(tiny_episode, params, TINY, mode="train")
        ce = float(fwd.loss_ce.data)
        lh = float(fwd.loss_h.data)
        ls = float(fwd.loss_s.data)
        total = float(fwd.total.data)
        assert ce >= 0 and lh >= 0 and ls >= 0
        np.testing.assert_allclose(total, ce + 0.001 * lh + 0.001 * ls, rtol=1e-9)

    def test_zero_aux_weights_reduce_to_ce(self, tiny_world, tiny_episode):
        cfg = TINY.with_overrides({"lambda3": 0.0, "lambda4": 0.0})
        params = init_model_params(cfg, np.random.default_rng(2))
        fwd = forward_episode(tiny_episode, params, cfg, mode="train")
        assert float(fwd.total.data) == float(fwd.loss_ce.data)

    def test_probabilities_are_distributions(self, tiny_world, tiny_episode):
        params = init_model_params(TINY, np.random.default_rng(2))
        fwd = forward_episode(tiny_episode, params, TINY, mode="test")
        probs = fwd.prediction.probabilities
        assert np.all(probs >= 0)
        np.testing.assert_allclose(probs.sum(axis=1), np.ones(len(probs)), atol=1e-6)
        np.testing.assert_array_equal(
            fwd.prediction.predicted, np.argmax(probs, axis=1)
        )
        # prediction carries the combined distances; argmin matches argmax prob
        assert fwd.prediction.distances.shape == probs.shape
        np.testing.assert_array_equal(
            np.argmin(fwd.prediction.distances, axis=1), fwd.prediction.predicted
        )

    def test_component_toggles_all_run(self, tiny_world, tiny_episode):
        for hsmr, spm, padm in itertools.product([False, True], repeat=3):
            cfg = TINY.with_overrides(
                {"use_hsmr": hsmr, "use_spm": spm, "use_padm": padm}
            )
            params = init_model_params(cfg, np.random.default_rng(2))
            fwd = forward_episode(tiny_episode, params, cfg, mode="train")
            assert np.isfinite(float(fwd.total.data)), (hsmr, spm, padm)
            if not hsmr:
                assert float(fwd.loss_h.data) == 0.0
            if not spm:
                assert float(fwd.loss_s.data) == 0.0

    def test_query_permutation_permutes_ce_contributions(self, tiny_world):
        manifest, store = tiny_world
        cfg = TINY.with_overrides({"queries": 2})
        episode = sample_episode(manifest, store, "train", 2, 1, 2, np.random.default_rng(7))
        params = init_model_params(cfg, np.random.default_rng(2))
        base = forward_episode(episode, params, cfg, mode="test")
        perm = np.random.default_rng(8).permutation(len(episode.query_labels))
        episode.query_frames = episode.query_frames[perm]
        episode.query_labels = episode.query_labels[perm]
        permuted = forward_episode(episode, params, cfg, mode="test")
        np.testing.assert_allclose(
            permuted.prediction.probabilities, base.prediction.probabilities[perm], atol=1e-9
        )
        np.testing.assert_allclose(
            float(permuted.loss_ce.data), float(base.loss_ce.data), rtol=1e-9
        )

    def test_nonfinite_loss_is_reported_with_component(self, tiny_world, tiny_episode):
        params = init_model_params(TINY, np.random.default_rng(2))
        params.pg.ws[0].data[0, 0] = np.nan
        with pytest.raises(NumericError, match=r"L_S|d_spm"):
            forward_episode(tiny_episode, params, TINY, mode="train")
        params2 = init_model_params(TINY, np.random.default_rng(2))
        params2.mfe_shallow.w1.data[0, 0] = np.inf
        with pytest.raises(NumericError, match="L_H"):
            forward_episode(tiny_episode, params2, TINY, mode="train")

    def test_full_pipeline_gradient_matches_fd(self, tiny_world, tiny_episode):
        """End-to-end check on the tiny double-precision config; random
        residual projections keep every gradient path alive."""
        params = init_model_params(TINY, np.random.default_rng(2), zero_residual=False)

        def fn():
            return forward_episode(tiny_episode, params, TINY, mode="train").total

        picker = np.random.default_rng(51)
        named = params.named_tensors()
        probe = [
            "frame_positional",
            "mfe_shallow.w1",
            "mfe_deep.w2",
            "sf_hsmr.layer0.wq",
            "sf_hsmr.gate_visual_w",
            "sf_spm.layer0.wv",
            "sf_spm.gate_prompt_w",
            "pg.w0",
            "padm.proto0.wk",
            "padm.anchor0.w1",
        ]
        for name in probe:
            err = check_gradient(fn, named[name], delta=1e-6, max_entries=3, rng=picker)
            assert err <= 1e-4, (name, err)


class TestTrainLoop:
    def test_zero_episodes_leaves_params_unchanged(self, tiny_world):
        manifest, store = tiny_world
        state, metrics = train(manifest, store, TINY, episodes=0)
        fresh = init_model_params(TINY, np.random.default_rng(0))
        # same seed stream -> same init; nothing was updated
        for (name, got), (_, expected) in zip(
            sorted(state.params.named_tensors().items()),
            sorted(init_and_named(TINY).items()),
        ):
            np.testing.assert_array_equal(got.data, expected.data)
        assert metrics == []

    def test_deterministic_loss_trajectory_in_double(self, tiny_world):
        manifest, store = tiny_world
        runs = []
        for _ in range(2):
            _, metrics = train(manifest, store, TINY, episodes=8)
            runs.append([m.total for m in metrics])
        assert runs[0] == runs[1]

    def test_optimizer_fires_every_accumulation_window(self, tiny_world):
        manifest, store = tiny_world
        cfg = TINY.with_overrides({"accumulation": 4})
        state, _ = train(manifest, store, cfg, episodes=10)
        assert state.optimizer.step == 2  # 10 // 4
        assert state.accumulation_count == 2  # trailing partial window

    def test_training_updates_parameters(self, tiny_world):
        manifest, store = tiny_world
        cfg = TINY.with_overrides({"accumulation": 2, "lr": 1e-3})
        state, _ = train(manifest, store, cfg, episodes=4)
        fresh = init_and_named(cfg)
        changed = any(
            not np.array_equal(t.data, fresh[name].data)
            for name, t in state.params.named_tensors().items()
        )
        assert changed

    def test_numeric_failures_skip_episodes(self, tiny_world, monkeypatch):
        manifest, store = tiny_world
        import fsar.engine as engine_mod

        original = engine_mod.forward_episode
        calls = {"n": 0}

        def flaky(episode, params, config, mode="train"):
            calls["n"] += 1
            if calls["n"] == 2:
                raise NumericError("synthetic failure")
            return original(episode, params, config, mode)

        monkeypatch.setattr(engine_mod, "forward_episode", flaky)
        state, metrics = train(manifest, store, TINY, episodes=3)
        assert len(metrics) == 2
        assert state.episode == 3

    def test_metrics_csv_layout(self, tiny_world, tmp_path):
        manifest, store = tiny_world
        _, metrics = train(manifest, store, TINY, episodes=3)
        path = tmp_path / "metrics.csv"
        write_metrics(metrics, path)
        lines = path.read_text().strip().splitlines()
        assert lines[0].split(",") == METRICS_HEADER
        assert len(lines) == 4


def init_and_named(cfg):
    from fsar.engine import _rng_streams

    params = init_model_params(cfg, _rng_streams(cfg.seed)["init"])
    return params.named_tensors()


class TestEvaluate:
    def test_single_episode_has_no_ci(self, tiny_world):
        manifest, store = tiny_world
        params = init_model_params(TINY, np.random.default_rng(2))
        result = evaluate(manifest, store, params, TINY, n_episodes=1)
        assert result.ci95 is None
        assert "NA" in result.format()

    def test_ci_shrinks_with_sqrt_episodes(self):
        manifest, store = synth_dataset(
            10, 10, 3, 8, 2, seed=31, split_counts=(5, 0, 5), noise=1.5,
            appearance_sep=0.3, motion_sep=0.0,
        )
        params = init_model_params(TINY, np.random.default_rng(2))
        small = evaluate(manifest, store, params, TINY, n_episodes=40)
        large = evaluate(manifest, store, params, TINY, n_episodes=160)
        ratio = large.ci95 / small.ci95
        assert 0.35 <= ratio <= 0.65  # ~0.5 expected from 1/sqrt(n)

    def test_thread_pool_matches_sequential(self, tiny_world, monkeypatch):
        manifest, store = tiny_world
        params = init_model_params(TINY, np.random.default_rng(2))
        seq = evaluate(manifest, store, params, TINY, n_episodes=6, threads=1)
        par = evaluate(manifest, store, params, TINY, n_episodes=6, threads=4)
        np.testing.assert_array_equal(seq.per_episode, par.per_episode)

    def test_env_var_caps_threads(self, tiny_world, monkeypatch):
        manifest, store = tiny_world
        params = init_model_params(TINY, np.random.default_rng(2))
        monkeypatch.setenv("FSAR_THREADS", "2")
        result = evaluate(manifest, store, params, TINY, n_episodes=4)
        assert result.per_episode.shape == (4,)

    def test_store_dimension_mismatch_is_config_error(self, tiny_world):
        from fsar.errors import ConfigError

        manifest, store = tiny_world
        wrong = TINY.with_overrides({"channels": 16, "encoder_heads": 2, "mfe_reduction": 2})
        params = init_model_params(wrong, np.random.default_rng(2))
        with pytest.raises(ConfigError, match="channels"):
            evaluate(manifest, store, params, wrong, n_episodes=1)


class TestCheckpoints:
    def test_roundtrip_preserves_params(self, tmp_path):
        params = init_model_params(TINY, np.random.default_rng(2))
        path = tmp_path / "model.fsc"
        save_checkpoint(params, TINY, path)
        restored = load_checkpoint(path, TINY)
        for (name, got), (_, expected) in zip(
            sorted(restored.named_tensors().items()), sorted(params.named_tensors().items())
        ):
            np.testing.assert_array_equal(got.data, expected.data)

    def test_config_hash_mismatch_rejected(self, tmp_path):
        params = init_model_params(TINY, np.random.default_rng(2))
        path = tmp_path / "model.fsc"
        save_checkpoint(params, TINY, path)
        other = TINY.with_overrides({"gamma": 0.2})
        with pytest.raises(IntegrityError, match="hash"):
            load_checkpoint(path, other)
        # explicit opt-out still loads
        load_checkpoint(path, other, strict_hash=False)

    def test_bad_magic_is_format_error(self, tmp_path):
        path = tmp_path / "model.fsc"
        path.write_bytes(b"NOPE" + b"\x00" * 16)
        with pytest.raises(FormatError):
            load_checkpoint(path, TINY)
