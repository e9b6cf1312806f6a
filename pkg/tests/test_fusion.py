"""Semantic fusion block: strategies, gates, shapes, gradients."""

import numpy as np
import pytest

from fsar import fusion as F
from fsar.errors import ConfigError, ShapeError
from fsar.fusion import init_sf_params, sf_forward
from fsar.gradcheck import check_gradient
from fsar.tensor import Tensor

from conftest import scalarize

TOL = 1e-5


def make_params(rng, width=8, heads=2, frames=None, zero_residual=True):
    return init_sf_params(
        width, heads, 1, rng, dtype=np.float64,
        frames_for_positional=frames, zero_residual=zero_residual,
    )


def force_gates(params, visual_value: float, prompt_value: float):
    """Drive both sigmoid gates to exactly 0.0 or 1.0."""
    logits = {1.0: 800.0, 0.0: -800.0}
    params.gate_visual_w.data[...] = 0.0
    params.gate_visual_b.data[...] = logits[visual_value]
    params.gate_prompt_w.data[...] = 0.0
    params.gate_prompt_b.data[...] = logits[prompt_value]


class TestStrategies:
    def test_concat_zero_residual_is_identity(self, rng):
        params = make_params(rng)
        prompt = Tensor(rng.standard_normal((1, 8)))
        visual = Tensor(rng.standard_normal((5, 8)))
        p_out, v_out = sf_forward(prompt, visual, params, strategy="concat")
        np.testing.assert_array_equal(p_out.data, prompt.data)
        np.testing.assert_array_equal(v_out.data, visual.data)

    def test_concat_with_positional_adds_embedding(self, rng):
        params = make_params(rng, frames=5)
        prompt = Tensor(rng.standard_normal((1, 8)))
        visual = Tensor(rng.standard_normal((5, 8)))
        _, v_out = sf_forward(prompt, visual, params, strategy="concat", add_positional=True)
        np.testing.assert_allclose(v_out.data, visual.data + params.positional.data, atol=1e-15)

    def test_positional_requested_without_embedding(self, rng):
        params = make_params(rng, frames=None)
        with pytest.raises(ConfigError):
            sf_forward(
                Tensor(np.zeros((1, 8))), Tensor(np.zeros((5, 8))), params, add_positional=True
            )

    def test_token_axis_is_prompt_plus_frames(self, rng, monkeypatch):
        params = make_params(rng)
        seen = {}
        original = F.encoder_forward

        def spy(tokens, layers):
            seen["tokens"] = tokens.shape
            return original(tokens, layers)

        monkeypatch.setattr(F, "encoder_forward", spy)
        sf_forward(
            Tensor(rng.standard_normal((1, 8))),
            Tensor(rng.standard_normal((8, 8))),
            params,
        )
        assert seen["tokens"] == (1, 9, 8)

    def test_shapes_preserved_for_every_strategy(self, rng):
        params = make_params(rng, zero_residual=False)
        prompt = Tensor(rng.standard_normal((3, 1, 8)))
        visual = Tensor(rng.standard_normal((3, 6, 8)))
        for strategy in F.FUSION_STRATEGIES:
            p_out, v_out = sf_forward(prompt, visual, params, strategy=strategy)
            assert p_out.shape == prompt.shape, strategy
            assert v_out.shape == visual.shape, strategy

    def test_unknown_strategy(self, rng):
        params = make_params(rng)
        with pytest.raises(ConfigError):
            sf_forward(Tensor(np.zeros((1, 8))), Tensor(np.zeros((4, 8))), params, strategy="sum")

    def test_channel_mismatch(self, rng):
        params = make_params(rng)
        with pytest.raises(ShapeError):
            sf_forward(Tensor(np.zeros((1, 4))), Tensor(np.zeros((4, 8))), params)


class TestGateMode:
    def test_gate_surgery_degenerates_to_sum_mode(self, rng):
        params = make_params(rng, zero_residual=False)
        force_gates(params, visual_value=1.0, prompt_value=0.0)
        prompt = Tensor(rng.standard_normal((1, 8)))
        visual = Tensor(rng.standard_normal((5, 8)))
        _, v_sum = sf_forward(prompt, visual, params, strategy="concat+sum")
        _, v_gate = sf_forward(prompt, visual, params, strategy="concat+sum+gate")
        np.testing.assert_array_equal(v_gate.data, v_sum.data)

    def test_gate_outputs_lie_in_unit_interval(self, rng):
        params = make_params(rng, zero_residual=False)
        from fsar import tensor as T

        x = Tensor(rng.standard_normal((4, 8)))
        gate = T.sigmoid(
            T.add(T.matmul(x, params.gate_visual_w), params.gate_visual_b)
        ).data
        assert np.all(gate > 0) and np.all(gate < 1)

    def test_gate_on_inputs_variant_differs(self, rng):
        params = make_params(rng, zero_residual=False)
        prompt = Tensor(rng.standard_normal((1, 8)))
        visual = Tensor(rng.standard_normal((5, 8)))
        _, v_post = sf_forward(prompt, visual, params, strategy="concat+sum+gate")
        _, v_pre = sf_forward(
            prompt, visual, params, strategy="concat+sum+gate", gate_on_inputs=True
        )
        assert not np.allclose(v_post.data, v_pre.data)

    def test_gate_parameter_gradients_match_fd(self, rng):
        params = make_params(rng, zero_residual=False)
        prompt = Tensor(rng.standard_normal((1, 8)), requires_grad=True)
        visual = Tensor(rng.standard_normal((4, 8)), requires_grad=True)

        def fn():
            p_out, v_out = sf_forward(prompt, visual, params, strategy="concat+sum+gate")
            contract = np.random.default_rng(31)
            return scalarize(v_out, contract) + scalarize(p_out, contract)

        picker = np.random.default_rng(32)
        for name in ("gate_visual_w", "gate_visual_b", "gate_prompt_w", "gate_prompt_b"):
            assert check_gradient(fn, getattr(params, name), max_entries=6, rng=picker) <= TOL
        assert check_gradient(fn, prompt) <= TOL
        assert check_gradient(fn, visual, max_entries=12, rng=picker) <= TOL


class TestEquivariance:
    def test_token_permutation_before_positional(self, rng):
        params = make_params(rng, zero_residual=False)
        prompt = Tensor(rng.standard_normal((1, 8)))
        visual = rng.standard_normal((6, 8))
        perm = rng.permutation(6)
        p_base, v_base = sf_forward(prompt, Tensor(visual), params, strategy="concat")
        p_perm, v_perm = sf_forward(prompt, Tensor(visual[perm]), params, strategy="concat")
        np.testing.assert_allclose(v_perm.data, v_base.data[perm], atol=1e-12)
        np.testing.assert_allclose(p_perm.data, p_base.data, atol=1e-12)
