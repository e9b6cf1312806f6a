"""Motion refinement: differencing algebra, fusion cascade, consistency."""

import numpy as np
import pytest

from fsar.data import synth_dataset
from fsar.distances import con_dis
from fsar.errors import ConfigError, ContractError
from fsar.fusion import init_sf_params
from fsar.gradcheck import check_gradient
from fsar.motion import (
    MfeParams,
    hsmr_forward,
    identity_mfe_params,
    init_mfe_params,
    mfe,
    motion_consistency,
)
from fsar.tensor import Tensor

TOL = 1e-5


class TestMfe:
    def test_identity_transform_cancels_exactly(self, rng):
        params = identity_mfe_params(6, dtype=np.float64)
        frames = Tensor(rng.standard_normal((5, 6)))
        token = mfe(frames, params)
        np.testing.assert_array_equal(token.data, np.zeros((1, 6)))

    def test_double_identity_two_frames_sums_inputs(self, rng):
        # integer-valued frames keep (2b - a) + (2a - b) = a + b exact in IEEE
        params = identity_mfe_params(6, gain=2.0, dtype=np.float64)
        a = rng.integers(-50, 50, size=6).astype(np.float64)
        b = rng.integers(-50, 50, size=6).astype(np.float64)
        token = mfe(Tensor(np.stack([a, b])), params)
        np.testing.assert_array_equal(token.data[0], a + b)

    def test_linear_transform_superposition(self, rng):
        width = 6
        params = MfeParams(
            w1=Tensor(rng.standard_normal((width, width))),
            b1=Tensor(np.zeros(width)),
            w2=Tensor(rng.standard_normal((width, width))),
            b2=Tensor(np.zeros(width)),
            activation="identity",
        )
        x = rng.standard_normal((4, width))
        y = rng.standard_normal((4, width))
        lhs = mfe(Tensor(x + y), params).data
        rhs = mfe(Tensor(x), params).data + mfe(Tensor(y), params).data
        np.testing.assert_allclose(lhs, rhs, atol=1e-10)

    def test_matches_per_step_loop_oracle(self, rng):
        width = 8
        params = init_mfe_params(width, 4, rng, np.float64)
        frames = rng.standard_normal((6, width))

        def phi(x):
            hidden = x @ params.w1.data + params.b1.data
            # gelu, tanh form, same as the library activation
            inner = np.sqrt(2 / np.pi) * (hidden + 0.044715 * hidden**3)
            hidden = 0.5 * hidden * (1 + np.tanh(inner))
            return hidden @ params.w2.data + params.b2.data

        expected = np.zeros(width)
        for t in range(5):
            expected += phi(frames[t + 1]) - frames[t]
            expected += phi(frames[t]) - frames[t + 1]
        got = mfe(Tensor(frames), params).data[0]
        np.testing.assert_allclose(got, expected, atol=1e-10)

    def test_needs_two_frames(self, rng):
        params = init_mfe_params(8, 4, rng)
        with pytest.raises(ContractError):
            mfe(Tensor(np.zeros((1, 8))), params)

    def test_reduction_must_divide(self, rng):
        with pytest.raises(ConfigError):
            init_mfe_params(8, 3, rng)

    def test_batched_matches_single(self, rng):
        params = init_mfe_params(8, 2, rng, np.float64)
        frames = rng.standard_normal((3, 5, 8))
        batched = mfe(Tensor(frames), params).data
        for b in range(3):
            single = mfe(Tensor(frames[b]), params).data
            np.testing.assert_allclose(batched[b], single, atol=1e-12)


class TestHsmr:
    def make_sf(self, rng, width=8):
        return init_sf_params(width, 2, 1, rng, dtype=np.float64)

    def test_output_shapes(self, rng):
        sf = self.make_sf(rng)
        m1 = init_mfe_params(8, 2, rng, np.float64)
        m2 = init_mfe_params(8, 2, rng, np.float64)
        out = hsmr_forward(Tensor(rng.standard_normal((3, 5, 8))), m1, m2, sf)
        assert out.shallow.shape == (3, 1, 8)
        assert out.deep.shape == (3, 1, 8)
        assert out.refined.shape == (3, 5, 8)

    def test_identity_cascade_gives_zero_motion(self, rng):
        """Identity bottleneck + identity-initialized fusion + constant frames."""
        sf = self.make_sf(rng)
        m = identity_mfe_params(8, dtype=np.float64)
        frames = Tensor(np.tile(rng.standard_normal(8), (4, 1)))
        out = hsmr_forward(frames, m, m, sf, strategy="concat+sum")
        np.testing.assert_array_equal(out.shallow.data, np.zeros((1, 8)))
        np.testing.assert_array_equal(out.deep.data, np.zeros((1, 8)))
        assert float(motion_consistency(out).data) <= 1e-6

    def test_consistency_is_condis_of_tokens(self, rng):
        sf = self.make_sf(rng)
        m1 = init_mfe_params(8, 2, rng, np.float64)
        m2 = init_mfe_params(8, 2, rng, np.float64)
        out = hsmr_forward(Tensor(rng.standard_normal((2, 5, 8))), m1, m2, sf)
        expected = con_dis(out.shallow, out.deep).data
        np.testing.assert_array_equal(motion_consistency(out).data, expected)

    def test_consistency_nonnegative_zero_iff_equal(self, rng):
        x = Tensor(rng.standard_normal((1, 8)))
        assert float(con_dis(x, x).data) <= 1e-6
        y = Tensor(x.data + 0.1)
        assert float(con_dis(x, y).data) > 0

    def test_pre_sf_consistency_switch(self, rng):
        sf = self.make_sf(rng)
        m1 = init_mfe_params(8, 2, rng, np.float64)
        m2 = init_mfe_params(8, 2, rng, np.float64)
        frames = Tensor(rng.standard_normal((2, 5, 8)))
        post = hsmr_forward(frames, m1, m2, sf, pre_sf_consistency=False)
        pre = hsmr_forward(frames, m1, m2, sf, pre_sf_consistency=True)
        np.testing.assert_array_equal(pre.shallow.data, pre.shallow_raw.data)
        assert not np.allclose(post.shallow.data, post.shallow_raw.data)

    def test_consistency_gradient_wrt_frames(self, rng):
        sf = self.make_sf(rng)
        m1 = init_mfe_params(8, 2, rng, np.float64)
        m2 = init_mfe_params(8, 2, rng, np.float64)
        frames = Tensor(rng.standard_normal((4, 8)), requires_grad=True)

        def fn():
            out = hsmr_forward(frames, m1, m2, sf)
            return motion_consistency(out)

        assert check_gradient(fn, frames) <= TOL

    def test_motion_tokens_separate_classes_on_motion_only_data(self):
        """Frozen separation statistic, measured on the generator up front."""
        manifest, store = synth_dataset(
            2, 30, 8, 64, 1,
            appearance_sep=0.0, motion_sep=1.0, noise=0.05,
            seed=7, split_counts=(2, 0, 0),
        )
        params = init_mfe_params(64, 4, np.random.default_rng(3), np.float64)
        tokens = {}
        for cid, vids in manifest.videos_by_class().items():
            tokens[cid] = np.stack(
                [
                    mfe(Tensor(store.frames[v.video_id].astype(np.float64)), params).data[0]
                    for v in vids
                ]
            )
        separation = np.linalg.norm(tokens[0].mean(0) - tokens[1].mean(0))
        within = np.mean(
            [
                np.sqrt(((tokens[c] - tokens[c].mean(0)) ** 2).sum(1).mean())
                for c in (0, 1)
            ]
        )
        assert separation > 5 * within
