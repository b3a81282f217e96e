"""Deterministic synthetic singing corpus.

Items are rendered as additive harmonic stacks whose fundamental follows
the labeled pitch and whose per-harmonic gains follow a fixed spectral
envelope per phoneme, so pitch and text are both recoverable from the
audio alone. Every acquisition path quantizes the rendered samples to
16-bit PCM before any feature extraction: items that arrive as wav files
and items rendered on the fly are therefore statistically
indistinguishable, and whether an item carries labels can never be read
off its mel.
"""

from __future__ import annotations

from functools import lru_cache
from pathlib import Path

import numpy as np

from .audio import (
    FMAX,
    HOP,
    SAMPLE_RATE,
    Waveform,
    dequantize_pcm16,
    frame_count,
    quantize_pcm16,
    save_wav,
)
from .hangul import N_CODAS, N_NUCLEI, N_ONSETS, PhonemeTriple, compose_hangul
from .labels import (
    LABELING_FULL,
    LABELINGS,
    FrameConditions,
    Note,
    REST_PITCH_ID,
    ScoreLabel,
    UNKNOWN_PITCH_ID,
    expand_labels,
    format_label_file,
    strip_label,
)

__all__ = [
    "CorpusError",
    "A4_MIDI",
    "A4_HZ",
    "MAX_HARMONICS",
    "midi_to_hz",
    "frame_f0",
    "spectral_envelope",
    "label_sample_count",
    "label_frame_count",
    "render_waveform",
    "render_quantized",
    "render_reference_sine",
    "random_label",
    "FULL_JAMO_POOL",
    "make_corpus",
]


class CorpusError(ValueError):
    """Invalid corpus parameters or an unrenderable label."""


A4_MIDI = 69
A4_HZ = 440.0
MAX_HARMONICS = 24
# Fixed internal seed: phoneme timbres must be identical across corpora,
# otherwise a probe trained on one corpus is useless on another.
_ENVELOPE_SEED = 611503
_VOICED_RMS = 0.15


def midi_to_hz(pitch: float) -> float:
    return A4_HZ * 2.0 ** ((pitch - A4_MIDI) / 12.0)


def frame_f0(pitch_ids: np.ndarray) -> np.ndarray:
    """Per-frame F0 in Hz from pitch IDs, 0.0 on rest frames.

    Unknown pitch has no defined frequency; callers must mask it first.
    """
    pitch_ids = np.asarray(pitch_ids)
    if np.any(pitch_ids == UNKNOWN_PITCH_ID):
        raise CorpusError("cannot derive F0 from unknown pitch frames")
    f0 = np.where(pitch_ids == REST_PITCH_ID, 0.0, midi_to_hz(pitch_ids.astype(np.float64)))
    return f0


@lru_cache(maxsize=None)
def _envelope_params(phoneme_id: int) -> tuple[np.ndarray, np.ndarray, np.ndarray, float]:
    rng = np.random.default_rng(_ENVELOPE_SEED + phoneme_id)
    centers = rng.uniform(250.0, 6000.0, size=4)
    widths = rng.uniform(120.0, 700.0, size=4)
    gains = rng.uniform(0.05, 1.0, size=4)
    # per-phoneme rolloff makes timbres separable even where bumps overlap
    tilt = float(rng.uniform(0.4, 1.1))
    return centers, widths, gains, tilt


def spectral_envelope(phoneme_id: int, freqs_hz: np.ndarray) -> np.ndarray:
    """Gain of the phoneme's fixed formant-like envelope at each frequency."""
    centers, widths, gains, tilt = _envelope_params(int(phoneme_id))
    freqs_hz = np.asarray(freqs_hz, dtype=np.float64)
    env = np.full(freqs_hz.shape, 0.03)
    for c, w, g in zip(centers, widths, gains):
        env = env + g * np.exp(-0.5 * ((freqs_hz - c) / w) ** 2)
    return env * (np.maximum(freqs_hz, 100.0) / 100.0) ** -tilt


def _frame_parameters(fc: FrameConditions) -> tuple[np.ndarray, np.ndarray]:
    """Per-frame F0 and per-frame harmonic amplitudes (T, MAX_HARMONICS)."""
    f0 = frame_f0(fc.pitch_ids)
    t_frames = f0.shape[0]
    amps = np.zeros((t_frames, MAX_HARMONICS))
    k = np.arange(1, MAX_HARMONICS + 1, dtype=np.float64)
    for t in range(t_frames):
        if f0[t] <= 0.0:
            continue
        freqs = k * f0[t]
        gains = spectral_envelope(int(fc.phoneme_ids[t]), freqs)
        gains[freqs > FMAX] = 0.0
        rms = np.sqrt(np.sum(gains**2) / 2.0)
        amps[t] = gains * (_VOICED_RMS / max(rms, 1e-12))
    return f0, amps


def label_sample_count(label: ScoreLabel, sample_rate: int = SAMPLE_RATE,
                       hop: int = HOP) -> int:
    """Rendered length in samples: the score span plus one hop of tail."""
    if not label.notes:
        raise CorpusError("cannot size a label with no notes")
    duration = max(note.end_sec for note in label.notes)
    return int(np.ceil(duration * sample_rate)) + hop


def label_frame_count(label: ScoreLabel, sample_rate: int = SAMPLE_RATE,
                      hop: int = HOP) -> int:
    """Frame count a render (and therefore a sampler output) will have."""
    return frame_count(label_sample_count(label, sample_rate, hop), hop)


def render_waveform(label: ScoreLabel, sample_rate: int = SAMPLE_RATE, hop: int = HOP,
                    vibrato_cents: float = 0.0, vibrato_hz: float = 5.5) -> np.ndarray:
    """Render a fully labeled score to float samples in [-1, 1].

    The fundamental steps per frame (phase stays continuous across pitch
    changes), harmonic amplitudes are linearly interpolated between frame
    centers to avoid clicks, and rest frames are silent.
    """
    if label.labeling != LABELING_FULL:
        raise CorpusError(f"rendering needs a fully labeled score, got {label.labeling!r}")
    n_samples = label_sample_count(label, sample_rate, hop)
    total_frames = frame_count(n_samples, hop)
    fc = expand_labels(label, total_frames, sample_rate, hop)
    f0, amps = _frame_parameters(fc)

    idx = np.arange(n_samples)
    frame_of = np.minimum(idx // hop, total_frames - 1)
    f0_inst = f0[frame_of]
    if vibrato_cents:
        lfo = np.sin(2.0 * np.pi * vibrato_hz * idx / sample_rate)
        f0_inst = f0_inst * 2.0 ** (vibrato_cents * lfo / 1200.0)

    k = np.arange(1, MAX_HARMONICS + 1, dtype=np.float64)
    phase = np.cumsum(2.0 * np.pi * f0_inst / sample_rate)
    frame_centers = np.arange(total_frames) * hop
    out = np.zeros(n_samples)
    for j in range(MAX_HARMONICS):
        amp = np.interp(idx, frame_centers, amps[:, j])
        if not amp.any():
            continue
        out += amp * np.sin(k[j] * phase)
    peak = np.max(np.abs(out)) if out.size else 0.0
    if peak > 0.99:
        out *= 0.99 / peak
    return out


def render_quantized(label: ScoreLabel, sample_rate: int = SAMPLE_RATE,
                     hop: int = HOP) -> Waveform:
    """Render and pass through 16-bit quantization.

    This is the canonical acquisition path for items without audio on
    disk; it matches a wav write/read round trip bit for bit.
    """
    samples = render_waveform(label, sample_rate=sample_rate, hop=hop)
    return Waveform(samples=dequantize_pcm16(quantize_pcm16(samples)),
                    sample_rate=sample_rate)


def render_reference_sine(fc: FrameConditions, sample_rate: int = SAMPLE_RATE,
                          hop: int = HOP) -> Waveform:
    """Pure sine following the frame-level F0; for alignment self-checks.

    A pitch tracker run over this waveform should recover the labeled
    pitch on every interior voiced frame.
    """
    f0 = frame_f0(fc.pitch_ids)
    # Last valid sample count yielding exactly n_frames analysis frames.
    n_samples = fc.n_frames * hop - 1
    frame_of = np.minimum(np.arange(n_samples) // hop, fc.n_frames - 1)
    f0_inst = f0[frame_of]
    phase = np.cumsum(2.0 * np.pi * f0_inst / sample_rate)
    samples = np.where(f0_inst > 0.0, 0.4 * np.sin(phase), 0.0)
    return Waveform(samples=samples, sample_rate=sample_rate)


FULL_JAMO_POOL = (N_ONSETS, N_NUCLEI, N_CODAS)


def _random_syllable(rng: np.random.Generator, jamo_pool: tuple[int, int, int]) -> str:
    n_onsets, n_nuclei, n_codas = jamo_pool
    onset = int(rng.integers(0, n_onsets))
    nucleus = int(rng.integers(0, n_nuclei))
    coda = int(rng.integers(1, n_codas + 1)) if rng.random() < 0.5 else None
    return compose_hangul(PhonemeTriple(onset, nucleus, coda))


def random_label(rng: np.random.Generator, speaker_id: int,
                 n_notes_range: tuple[int, int] = (3, 6),
                 note_dur_range: tuple[float, float] = (0.18, 0.40),
                 pitch_range: tuple[int, int] = (55, 79),
                 rest_prob: float = 0.25,
                 jamo_pool: tuple[int, int, int] = FULL_JAMO_POOL) -> ScoreLabel:
    """Draw one fully labeled score: a pitch random walk over random syllables.

    jamo_pool caps how many onset/nucleus/coda indices the corpus uses.
    Small pools give a classifier probe far denser coverage of each
    phoneme-pitch combination at desk-scale corpus sizes.
    """
    if not all(1 <= p <= full for p, full in zip(jamo_pool, FULL_JAMO_POOL)):
        raise CorpusError(f"jamo_pool {jamo_pool} outside {FULL_JAMO_POOL}")
    n_notes = int(rng.integers(n_notes_range[0], n_notes_range[1] + 1))
    pitch = int(rng.integers(pitch_range[0], pitch_range[1] + 1))
    cursor = float(rng.uniform(0.05, 0.15))
    notes = []
    for i in range(n_notes):
        if i > 0:
            pitch = int(np.clip(pitch + rng.integers(-4, 5), *pitch_range))
            if rng.random() < rest_prob:
                cursor += float(rng.uniform(0.06, 0.20))
        dur = float(rng.uniform(*note_dur_range))
        start = round(cursor, 6)
        end = round(cursor + dur, 6)
        notes.append(Note(start_sec=start, end_sec=end, pitch=pitch,
                          syllable=_random_syllable(rng, jamo_pool)))
        cursor = end
    return ScoreLabel(notes=tuple(notes), speaker_id=speaker_id, labeling=LABELING_FULL)


def _labeling_assignments(n_items: int, fractions: dict[str, float],
                          rng: np.random.Generator) -> list[str]:
    # Largest-remainder rounding so the counts sum to exactly n_items.
    total = sum(fractions.values())
    if abs(total - 1.0) > 1e-9:
        raise CorpusError(f"labeling fractions sum to {total}, expected 1")
    for key in fractions:
        if key not in LABELINGS:
            raise CorpusError(f"unknown labeling {key!r}")
    keys = sorted(fractions)
    exact = {k: fractions[k] * n_items for k in keys}
    counts = {k: int(np.floor(exact[k])) for k in keys}
    short = n_items - sum(counts.values())
    by_remainder = sorted(keys, key=lambda k: exact[k] - counts[k], reverse=True)
    for k in by_remainder[:short]:
        counts[k] += 1
    pool = [k for k in keys for _ in range(counts[k])]
    rng.shuffle(pool)
    return pool


def make_corpus(out_dir: str | Path, n_items: int, seed: int = 0,
                fractions: dict[str, float] | None = None,
                n_speakers: int = 4,
                n_notes_range: tuple[int, int] = (3, 6),
                note_dur_range: tuple[float, float] = (0.18, 0.40),
                pitch_range: tuple[int, int] = (55, 79),
                jamo_pool: tuple[int, int, int] = FULL_JAMO_POOL) -> list[Path]:
    """Write a synthetic corpus of label files plus audio for masked items.

    Each item draws a fully labeled truth score; the label written to
    disk is the truth stripped to the item's assigned labeling. Items
    whose disk label is not fully labeled also get a wav rendered from
    the truth, since their labels alone can no longer drive the renderer.
    Fully labeled items ship without audio on purpose: downstream
    preparation renders them through the identical quantized path.
    Returns the written label file paths.
    """
    if n_items <= 0:
        raise CorpusError("n_items must be positive")
    if n_speakers <= 0:
        raise CorpusError("n_speakers must be positive")
    fractions = dict(fractions) if fractions else {LABELING_FULL: 1.0}
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    assign_rng = np.random.default_rng([seed, 0xA551])
    assignments = _labeling_assignments(n_items, fractions, assign_rng)
    written = []
    for i in range(n_items):
        rng = np.random.default_rng([seed, i])
        speaker = int(rng.integers(0, n_speakers))
        truth = random_label(rng, speaker, n_notes_range=n_notes_range,
                             note_dur_range=note_dur_range, pitch_range=pitch_range,
                             jamo_pool=jamo_pool)
        labeling = assignments[i]
        disk_label = truth if labeling == LABELING_FULL else strip_label(truth, labeling)
        stem = out_dir / f"item_{i:04d}"
        lab_path = stem.with_suffix(".lab")
        lab_path.write_text(format_label_file(disk_label), encoding="utf-8")
        if labeling != LABELING_FULL:
            save_wav(Waveform(samples=render_waveform(truth), sample_rate=SAMPLE_RATE),
                     stem.with_suffix(".wav"))
        written.append(lab_path)
    return written
