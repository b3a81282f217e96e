"""Guidance algebra: norm scaling, mode formulas, and their identities.

evaluate_triple needs a trained estimator and is exercised in the model
tests.
"""

import numpy as np
import pytest

from singdiff.guidance import (
    MODE_DUAL_PITCH_ANCHORED,
    MODE_DUAL_TEXT_ANCHORED,
    MODE_NONE,
    MODE_SINGLE,
    GuidanceConfig,
    GuidanceError,
    ScoreTriple,
    guided_score,
    norm_scale,
)


def _random_triple(rng, shape=(8, 5)):
    return ScoreTriple(
        s_full=rng.normal(size=shape),
        s_pitch_only=rng.normal(size=shape),
        s_uncond=rng.normal(size=shape),
        s_text_only=rng.normal(size=shape),
    )


class TestConfig:
    def test_defaults(self):
        g = GuidanceConfig()
        assert g.mode == MODE_DUAL_PITCH_ANCHORED
        assert g.w1 == 0.2
        assert g.w2 == 0.02
        assert g.norm_based is True
        assert g.eps_norm == 1e-8

    def test_validation(self):
        with pytest.raises(GuidanceError):
            GuidanceConfig(mode="triple")
        with pytest.raises(GuidanceError):
            GuidanceConfig(w1=-0.1)
        with pytest.raises(GuidanceError):
            GuidanceConfig(w2=-1.0)
        with pytest.raises(GuidanceError):
            GuidanceConfig(eps_norm=0.0)


class TestNormScale:
    def test_direct_ratio(self):
        anchor = np.array([2.0, 0.0])
        delta = np.array([0.0, 1.0])
        assert norm_scale(anchor, delta) == 2.0

    def test_zero_delta_hits_floor(self):
        anchor = np.array([3.0, 4.0])
        alpha = norm_scale(anchor, np.zeros(2), eps_norm=1e-8)
        assert alpha == 5.0 / 1e-8
        assert np.isfinite(alpha)

    def test_rescaled_delta_matches_anchor_norm(self):
        rng = np.random.default_rng(0)
        for _ in range(100):
            anchor = rng.normal(size=(7, 3))
            delta = rng.normal(size=(7, 3))
            alpha = norm_scale(anchor, delta)
            assert np.linalg.norm(alpha * delta) == pytest.approx(
                np.linalg.norm(anchor), rel=1e-12
            )

    def test_shape_mismatch(self):
        with pytest.raises(GuidanceError):
            norm_scale(np.zeros((2, 2)), np.zeros((2, 3)))


class TestGuidedScore:
    def test_zero_weights_return_conditional_bitwise(self):
        rng = np.random.default_rng(1)
        triple = _random_triple(rng)
        for mode in (MODE_NONE, MODE_SINGLE, MODE_DUAL_PITCH_ANCHORED,
                     MODE_DUAL_TEXT_ANCHORED):
            g = GuidanceConfig(mode=mode, w1=0.0, w2=0.0)
            out = guided_score(triple, g)
            np.testing.assert_array_equal(out, triple.s_full)

    def test_mode_none_ignores_other_members(self):
        out = guided_score(ScoreTriple(s_full=np.array([1.0, -2.0])),
                           GuidanceConfig(mode=MODE_NONE))
        np.testing.assert_array_equal(out, [1.0, -2.0])

    def test_toy_dual_values(self):
        # Hand arithmetic: 2 + 0.2*(2-1) + 0.02*(1-0) = 2.22.
        triple = ScoreTriple(
            s_full=np.array([2.0, 0.0]),
            s_pitch_only=np.array([1.0, 0.0]),
            s_uncond=np.array([0.0, 0.0]),
        )
        g = GuidanceConfig(mode=MODE_DUAL_PITCH_ANCHORED, w1=0.2, w2=0.02,
                           norm_based=False)
        np.testing.assert_allclose(guided_score(triple, g), [2.22, 0.0], rtol=1e-15)

    def test_text_anchored_uses_text_member(self):
        triple = ScoreTriple(
            s_full=np.array([2.0]),
            s_text_only=np.array([0.5]),
            s_uncond=np.array([0.0]),
        )
        g = GuidanceConfig(mode=MODE_DUAL_TEXT_ANCHORED, w1=0.5, w2=1.0,
                           norm_based=False)
        # 2 + 0.5*(2-0.5) + 1.0*(0.5-0) = 3.25
        np.testing.assert_allclose(guided_score(triple, g), [3.25])

    def test_missing_members_raise(self):
        bare = ScoreTriple(s_full=np.zeros(3))
        with pytest.raises(GuidanceError):
            guided_score(bare, GuidanceConfig(mode=MODE_SINGLE, w1=0.1))
        with pytest.raises(GuidanceError):
            guided_score(bare, GuidanceConfig(mode=MODE_DUAL_PITCH_ANCHORED))
        no_text = ScoreTriple(s_full=np.zeros(3), s_pitch_only=np.zeros(3),
                              s_uncond=np.zeros(3))
        with pytest.raises(GuidanceError):
            guided_score(no_text, GuidanceConfig(mode=MODE_DUAL_TEXT_ANCHORED))

    def test_dual_equals_single_at_equal_weights(self):
        # The split deltas telescope, so equal weights collapse the dual
        # form onto the single form up to rounding. Rounding happens at
        # the scale of the operands, so measure ulp there; ulp of the
        # result alone is unbounded under cancellation.
        rng = np.random.default_rng(2)
        w = 0.37
        dual = GuidanceConfig(mode=MODE_DUAL_PITCH_ANCHORED, w1=w, w2=w,
                              norm_based=False)
        single = GuidanceConfig(mode=MODE_SINGLE, w1=w, norm_based=False)
        for _ in range(200):
            triple = _random_triple(rng)
            a = guided_score(triple, dual)
            b = guided_score(triple, single)
            scale = np.maximum(np.abs(a), np.abs(b))
            for member in (triple.s_full, triple.s_pitch_only, triple.s_uncond):
                scale = np.maximum(scale, np.abs(member))
            assert (np.abs(a - b) <= 4 * np.spacing(scale)).all()

    def test_telescoping_residual(self):
        rng = np.random.default_rng(3)
        for _ in range(200):
            triple = _random_triple(rng)
            lhs = (triple.s_full - triple.s_pitch_only) + (
                triple.s_pitch_only - triple.s_uncond
            )
            rhs = triple.s_full - triple.s_uncond
            assert np.abs(lhs - rhs).max() <= 1e-12

    def test_linear_in_weights(self):
        # With norm scaling off the output is affine in (w1, w2); check
        # superposition against the zero-weight baseline.
        rng = np.random.default_rng(4)
        triple = _random_triple(rng)

        def at(w1, w2):
            g = GuidanceConfig(mode=MODE_DUAL_PITCH_ANCHORED, w1=w1, w2=w2,
                               norm_based=False)
            return guided_score(triple, g)

        base = np.asarray(triple.s_full)
        combined = at(0.3, 0.7)
        parts = (at(0.3, 0.0) - base) + (at(0.0, 0.7) - base) + base
        np.testing.assert_allclose(combined, parts, rtol=1e-12, atol=1e-14)

    def test_norm_based_delta_norms(self):
        # Each weighted, rescaled delta must carry w * ||s_full||.
        rng = np.random.default_rng(5)
        triple = _random_triple(rng)
        w1, w2 = 0.2, 0.02
        g = GuidanceConfig(mode=MODE_DUAL_PITCH_ANCHORED, w1=w1, w2=w2,
                           norm_based=True)
        out = guided_score(triple, g)
        d1 = triple.s_full - triple.s_pitch_only
        d2 = triple.s_pitch_only - triple.s_uncond
        a1 = norm_scale(triple.s_full, d1)
        a2 = norm_scale(triple.s_pitch_only, d2)  # wrong anchor on purpose
        full_norm = np.linalg.norm(triple.s_full)
        assert np.linalg.norm(a1 * w1 * d1) == pytest.approx(w1 * full_norm, rel=1e-12)
        # The anchor is always s_full, not the intermediate condition.
        rebuilt = triple.s_full + a1 * w1 * d1 + norm_scale(triple.s_full, d2) * w2 * d2
        np.testing.assert_allclose(out, rebuilt, rtol=1e-12)
        assert not np.allclose(out, triple.s_full + a1 * w1 * d1 + a2 * w2 * d2)

    def test_single_mode_norm_based(self):
        rng = np.random.default_rng(6)
        triple = _random_triple(rng)
        g = GuidanceConfig(mode=MODE_SINGLE, w1=0.4, norm_based=True)
        out = guided_score(triple, g)
        delta = triple.s_full - triple.s_uncond
        guidance = out - triple.s_full
        assert np.linalg.norm(guidance) == pytest.approx(
            0.4 * np.linalg.norm(triple.s_full), rel=1e-12
        )
        np.testing.assert_allclose(
            guidance / np.linalg.norm(guidance), delta / np.linalg.norm(delta),
            rtol=1e-9,
        )
