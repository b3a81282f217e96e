import numpy as np
import pytest

from singdiff.audio import HOP, SAMPLE_RATE, mel_spectrogram
from singdiff.corpus import frame_f0, random_label, render_quantized
from singdiff.labels import expand_labels
from singdiff.metrics import (
    EvalReport,
    MetricError,
    SegmentEval,
    commonly_voiced,
    evaluate_pair,
    evaluate_segments,
    f0_rmse,
    mel_to_f0,
    semitone_accuracy,
)

SEMITONE = 2.0 ** (1.0 / 12.0)


def random_voiced_tracks(n=200, seed=0):
    rng = np.random.default_rng(seed)
    ref = rng.uniform(100.0, 800.0, size=n)
    gen = ref * 2.0 ** (rng.normal(0.0, 0.08, size=n))
    unvoiced = rng.random(n) < 0.2
    ref[unvoiced] = 0.0
    gen[rng.random(n) < 0.2] = 0.0
    return ref, gen


class TestF0Rmse:
    def test_identity_is_zero(self):
        track = np.array([220.0, 440.0, 0.0, 660.0])
        assert f0_rmse(track, track) == 0.0

    def test_one_semitone_everywhere(self):
        ref = np.full(50, 440.0)
        assert f0_rmse(ref, ref * SEMITONE) == pytest.approx(1.0 / 12.0, abs=1e-12)

    def test_documented_sharp_value(self):
        # 466.164 Hz is one semitone above A4 to six significant figures
        ref = np.full(10, 440.0)
        gen = np.full(10, 466.164)
        assert f0_rmse(ref, gen) == pytest.approx(1.0 / 12.0, abs=1e-6)

    def test_absent_without_common_voicing(self):
        ref = np.array([440.0, 440.0])
        gen = np.array([0.0, 0.0])
        assert f0_rmse(ref, gen) is None

    def test_only_common_frames_count(self):
        ref = np.array([440.0, 0.0, 440.0])
        gen = np.array([440.0, 880.0, 0.0])
        # only frame 0 is commonly voiced and it matches exactly
        assert f0_rmse(ref, gen) == 0.0

    def test_length_mismatch(self):
        with pytest.raises(MetricError):
            f0_rmse(np.zeros(3), np.zeros(4))

    def test_negative_rejected(self):
        with pytest.raises(MetricError):
            f0_rmse(np.array([-1.0]), np.array([440.0]))

    def test_swap_symmetry(self):
        ref, gen = random_voiced_tracks()
        assert f0_rmse(ref, gen) == pytest.approx(f0_rmse(gen, ref), rel=1e-12)


class TestSemitoneAccuracy:
    def test_identity(self):
        track = np.array([220.0, 440.0, 660.0])
        assert semitone_accuracy(track, track) == 1.0

    def test_exact_semitone_shift_scores_zero(self):
        ref = np.full(30, 300.0)
        assert semitone_accuracy(ref, ref * SEMITONE) == 0.0

    def test_forty_cents_sharp_scores_one(self):
        ref = np.full(30, 300.0)
        gen = ref * 2.0 ** (0.4 / 12.0)
        assert semitone_accuracy(ref, gen) == 1.0

    def test_hundred_cents_scores_zero(self):
        ref = np.full(30, 300.0)
        gen = ref * 2.0 ** (1.0 / 12.0)
        assert semitone_accuracy(ref, gen) == 0.0

    def test_absent_without_common_voicing(self):
        assert semitone_accuracy(np.array([0.0]), np.array([440.0])) is None

    def test_swap_symmetry(self):
        ref, gen = random_voiced_tracks(seed=3)
        assert semitone_accuracy(ref, gen) == semitone_accuracy(gen, ref)

    def test_global_scale_invariance(self):
        ref, gen = random_voiced_tracks(seed=4)
        for g in (0.25, 3.7):
            assert semitone_accuracy(ref * g, gen * g) == semitone_accuracy(ref, gen)


class TestCommonlyVoiced:
    def test_mask(self):
        ref = np.array([440.0, 0.0, 440.0, 0.0])
        gen = np.array([440.0, 440.0, 0.0, 0.0])
        assert commonly_voiced(ref, gen).tolist() == [True, False, False, False]


class TestReports:
    def test_pooled_aggregation(self):
        ref_a = np.full(10, 440.0)
        gen_a = ref_a * SEMITONE  # 1/12 octave off on 10 frames
        ref_b = np.full(30, 440.0)
        gen_b = ref_b.copy()  # perfect on 30 frames
        report = evaluate_segments([("a", ref_a, gen_a), ("b", ref_b, gen_b)])
        assert report.n_voiced == 40
        # pooled rmse: sqrt(10 * (1/12)^2 / 40)
        assert report.f0_rmse == pytest.approx(np.sqrt(10 / 40) / 12, rel=1e-12)
        assert report.s_acc == pytest.approx(30 / 40, rel=1e-12)
        assert len(report.segments) == 2
        assert report.segments[0].s_acc == 0.0
        assert report.segments[1].s_acc == 1.0

    def test_all_unvoiced_report(self):
        ref = np.zeros(5)
        gen = np.zeros(5)
        report = evaluate_segments([("a", ref, gen)])
        assert report.n_voiced == 0
        assert report.f0_rmse is None
        assert report.s_acc is None
        assert "absent" in report.to_kv()
        assert "absent" in report.format_text()

    def test_kv_and_text_content(self):
        ref = np.full(10, 440.0)
        report = evaluate_segments([("x", ref, ref)])
        kv = report.to_kv()
        assert "f0_rmse_unit = octaves" in kv
        assert "s_acc = 1.000000" in kv
        assert "n_voiced = 10" in kv
        text = report.format_text()
        assert "octaves" in text
        assert "x:" in text

    def test_invariant_enforcement(self):
        with pytest.raises(MetricError):
            EvalReport(segments=(), n_voiced=1, f0_rmse=None, s_acc=None)
        with pytest.raises(MetricError):
            EvalReport(segments=(), n_voiced=1, f0_rmse=0.1, s_acc=1.5)
        with pytest.raises(MetricError):
            EvalReport(segments=(), n_voiced=1, f0_rmse=-0.1, s_acc=0.5)

    def test_evaluate_pair_fields(self):
        ref = np.full(8, 440.0)
        seg = evaluate_pair("p", ref, ref)
        assert seg == SegmentEval(name="p", n_voiced=8, f0_rmse=0.0, s_acc=1.0)


class TestMelToF0:
    def test_recovers_rendered_pitch(self):
        rng = np.random.default_rng([100, 1])
        label = random_label(rng, speaker_id=int(rng.integers(0, 4)))
        mel = mel_spectrogram(render_quantized(label))
        fc = expand_labels(label, mel.shape[1], SAMPLE_RATE, HOP)
        ref = frame_f0(fc.pitch_ids)
        gen = mel_to_f0(mel)
        keep = ref > 0
        # analysis windows straddle pitch changes; skip edge frames
        for e in np.flatnonzero(np.diff(ref) != 0):
            keep[max(0, e - 3):e + 5] = False
        sel = keep & (gen > 0)
        assert sel.sum() >= 0.7 * keep.sum()
        semis = np.abs(12 * np.log2(gen[sel] / ref[sel]))
        assert np.mean(semis < 0.5) >= 0.95

    def test_silence_is_unvoiced(self):
        silent = np.full((80, 20), np.log(1e-5), dtype=np.float32)
        assert np.all(mel_to_f0(silent) == 0.0)

    def test_noise_rarely_voiced(self):
        noise = np.random.default_rng(1).normal(-5.5, 2.0, size=(80, 200))
        assert (mel_to_f0(noise) > 0).mean() < 0.6

    def test_shape_check(self):
        with pytest.raises(MetricError):
            mel_to_f0(np.zeros((40, 10)))

    def test_deterministic(self):
        mel = np.random.default_rng(2).normal(-4.0, 2.0, size=(80, 50))
        assert np.array_equal(mel_to_f0(mel), mel_to_f0(mel))
