"""Objective pitch evaluation.

F0 error is measured in octaves: the RMSE of log2(gen/ref) over frames
voiced in both tracks. The unit is a deliberate choice (a one-semitone
error everywhere scores 1/12 ~ 0.083) and is stated in every report, so
numbers are never compared across differently defined deployments.
Semitone accuracy is the fraction of commonly voiced frames whose error
rounds to zero semitones. Both are undefined without commonly voiced
frames and are then reported as absent rather than zero.

F0 tracks are 1-D arrays in Hz with 0.0 on unvoiced frames, the same
convention the waveform tracker produces. mel_to_f0 recovers a track
from a mel matrix alone by cosine-matching harmonic-comb templates on a
quarter-semitone grid, which keeps evaluation independent of any
waveform or label availability on the generated side.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .audio import F0_MAX, FMAX, MEL_FLOOR, N_FFT, N_MELS, SAMPLE_RATE, mel_filterbank

__all__ = [
    "MetricError",
    "SegmentEval",
    "EvalReport",
    "commonly_voiced",
    "f0_rmse",
    "semitone_accuracy",
    "mel_to_f0",
    "evaluate_pair",
    "evaluate_segments",
]

# Candidate grid for mel-based F0 recovery: quarter semitones spanning
# deep bass through the tracker's ceiling.
_GRID_LOW_MIDI = 36.0
_GRID_STEP = 0.25
_MATCH_THRESHOLD = 0.55
_ENERGY_FLOOR = np.log(MEL_FLOOR) + 3.0
_TEMPLATE_TILT = 0.7
_MAX_TEMPLATE_HARMONICS = 24


class MetricError(ValueError):
    """Malformed metric input."""


def _check_tracks(ref: np.ndarray, gen: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    ref = np.asarray(ref, dtype=np.float64)
    gen = np.asarray(gen, dtype=np.float64)
    if ref.ndim != 1 or gen.ndim != 1:
        raise MetricError("F0 tracks must be one-dimensional")
    if ref.shape != gen.shape:
        raise MetricError(f"track lengths differ: {ref.shape[0]} vs {gen.shape[0]}")
    if np.any(ref < 0) or np.any(gen < 0):
        raise MetricError("F0 tracks cannot contain negative frequencies")
    return ref, gen


def commonly_voiced(ref: np.ndarray, gen: np.ndarray) -> np.ndarray:
    ref, gen = _check_tracks(ref, gen)
    return (ref > 0) & (gen > 0)


def f0_rmse(ref: np.ndarray, gen: np.ndarray) -> float | None:
    """RMSE of log2(gen/ref) in octaves over commonly voiced frames."""
    ref, gen = _check_tracks(ref, gen)
    both = (ref > 0) & (gen > 0)
    if not both.any():
        return None
    err = np.log2(gen[both] / ref[both])
    return float(np.sqrt(np.mean(err**2)))


def semitone_accuracy(ref: np.ndarray, gen: np.ndarray) -> float | None:
    """Fraction of commonly voiced frames within half a semitone."""
    ref, gen = _check_tracks(ref, gen)
    both = (ref > 0) & (gen > 0)
    if not both.any():
        return None
    semis = 12.0 * np.log2(gen[both] / ref[both])
    return float(np.mean(np.rint(semis) == 0))


@dataclass(frozen=True)
class SegmentEval:
    """Per-segment metric values; None means no commonly voiced frames."""

    name: str
    n_voiced: int
    f0_rmse: float | None
    s_acc: float | None


@dataclass(frozen=True)
class EvalReport:
    """Aggregate metrics pooled over every commonly voiced frame.

    Pooling weights segments by their voiced frame counts instead of
    averaging per-segment values, so short segments cannot dominate.
    """

    segments: tuple[SegmentEval, ...]
    n_voiced: int
    f0_rmse: float | None
    s_acc: float | None

    def __post_init__(self):
        if self.s_acc is not None and not 0.0 <= self.s_acc <= 1.0:
            raise MetricError(f"s_acc out of range: {self.s_acc}")
        if self.f0_rmse is not None and self.f0_rmse < 0:
            raise MetricError(f"f0_rmse negative: {self.f0_rmse}")
        if (self.f0_rmse is None or self.s_acc is None) and self.n_voiced != 0:
            raise MetricError("metrics absent despite voiced frames")

    def to_kv(self) -> str:
        lines = [
            "f0_rmse_unit = octaves",
            f"n_segments = {len(self.segments)}",
            f"n_voiced = {self.n_voiced}",
            f"f0_rmse = {'absent' if self.f0_rmse is None else f'{self.f0_rmse:.6f}'}",
            f"s_acc = {'absent' if self.s_acc is None else f'{self.s_acc:.6f}'}",
        ]
        return "\n".join(lines) + "\n"

    def format_text(self) -> str:
        lines = [
            f"segments evaluated: {len(self.segments)}",
            f"commonly voiced frames: {self.n_voiced}",
        ]
        if self.n_voiced == 0:
            lines.append("no commonly voiced frames; pitch metrics are absent")
        else:
            lines.append(f"F0 RMSE: {self.f0_rmse:.4f} octaves")
            lines.append(f"semitone accuracy: {self.s_acc:.4f}")
        for seg in self.segments:
            if seg.n_voiced == 0:
                lines.append(f"  {seg.name}: absent (no commonly voiced frames)")
            else:
                lines.append(
                    f"  {seg.name}: f0_rmse={seg.f0_rmse:.4f} oct "
                    f"s_acc={seg.s_acc:.4f} n_voiced={seg.n_voiced}"
                )
        return "\n".join(lines) + "\n"


def evaluate_pair(name: str, ref: np.ndarray, gen: np.ndarray) -> SegmentEval:
    ref, gen = _check_tracks(ref, gen)
    n_voiced = int(commonly_voiced(ref, gen).sum())
    return SegmentEval(name=name, n_voiced=n_voiced,
                       f0_rmse=f0_rmse(ref, gen),
                       s_acc=semitone_accuracy(ref, gen))


def evaluate_segments(pairs: list[tuple[str, np.ndarray, np.ndarray]]) -> EvalReport:
    segments = []
    sq_sum = 0.0
    hit_sum = 0.0
    n_total = 0
    for name, ref, gen in pairs:
        seg = evaluate_pair(name, ref, gen)
        segments.append(seg)
        if seg.n_voiced:
            sq_sum += seg.f0_rmse**2 * seg.n_voiced
            hit_sum += seg.s_acc * seg.n_voiced
            n_total += seg.n_voiced
    if n_total == 0:
        return EvalReport(segments=tuple(segments), n_voiced=0,
                          f0_rmse=None, s_acc=None)
    return EvalReport(segments=tuple(segments), n_voiced=n_total,
                      f0_rmse=float(np.sqrt(sq_sum / n_total)),
                      s_acc=float(hit_sum / n_total))


@lru_cache(maxsize=1)
def _candidate_templates() -> tuple[np.ndarray, np.ndarray]:
    """Unit-norm mel templates of harmonic combs on the candidate grid."""
    fb = mel_filterbank()
    bin_hz = SAMPLE_RATE / N_FFT
    midis = np.arange(_GRID_LOW_MIDI, 96.0 + _GRID_STEP, _GRID_STEP)
    freqs = 440.0 * 2.0 ** ((midis - 69.0) / 12.0)
    freqs = freqs[freqs <= F0_MAX]
    templates = np.zeros((freqs.size, N_MELS))
    n_bins = fb.shape[1]
    for i, f0 in enumerate(freqs):
        spec = np.zeros(n_bins)
        k = 1
        while k <= _MAX_TEMPLATE_HARMONICS and k * f0 <= FMAX:
            pos = k * f0 / bin_hz
            lo = int(np.floor(pos))
            frac = pos - lo
            amp = k ** -_TEMPLATE_TILT
            if lo + 1 < n_bins:
                spec[lo] += amp * (1.0 - frac)
                spec[lo + 1] += amp * frac
            k += 1
        mel = fb @ spec
        norm = np.linalg.norm(mel)
        if norm > 0:
            templates[i] = mel / norm
    return freqs, templates


def mel_to_f0(mel: np.ndarray) -> np.ndarray:
    """Recover a per-frame F0 track from a log-mel matrix alone.

    Frames below the energy floor, or whose best harmonic-template match
    is weak, come back unvoiced. Resolution is a quarter semitone.
    """
    mel = np.asarray(mel, dtype=np.float64)
    if mel.ndim != 2 or mel.shape[0] != N_MELS:
        raise MetricError(f"expected ({N_MELS}, T) mel matrix, got {mel.shape}")
    freqs, templates = _candidate_templates()
    linear = np.exp(mel)
    norms = np.linalg.norm(linear, axis=0)
    scores = templates @ linear / np.maximum(norms, 1e-30)
    best = np.argmax(scores, axis=0)
    f0 = freqs[best]
    voiced = (mel.max(axis=0) > _ENERGY_FLOOR) & (
        scores[best, np.arange(mel.shape[1])] > _MATCH_THRESHOLD
    )
    return np.where(voiced, f0, 0.0)
