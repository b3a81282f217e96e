"""Waveform features: log-mel spectrograms, autocorrelation F0 tracking, mel IO.

The mel front-end is fixed at 22,050 Hz input, a 1,024-point STFT with a
256-sample hop and a Hann window, and 80 area-normalized triangular mel
filters spanning 0..8,000 Hz. Values are natural-log magnitudes floored at
1e-5. Mel matrices are float32 arrays of shape (80, T), frame-major along
columns, and round-trip bit-exactly through the binary format below.
"""

from __future__ import annotations

import struct
import wave
from dataclasses import dataclass
from pathlib import Path

import numpy as np

SAMPLE_RATE = 22050
N_FFT = 1024
HOP = 256
N_MELS = 80
FMIN = 0.0
FMAX = 8000.0
MEL_FLOOR = 1e-5

F0_MIN = 50.0
F0_MAX = 1100.0
VOICING_THRESHOLD = 0.3
RMS_GATE = 1e-4

MEL_MAGIC = b"MELS"


class AudioError(ValueError):
    """Precondition violation on waveform input."""


class MelFormatError(ValueError):
    """Malformed mel binary payload."""


@dataclass(frozen=True)
class Waveform:
    samples: np.ndarray
    sample_rate: int


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_center_freqs(n_mels: int = N_MELS, fmin: float = FMIN, fmax: float = FMAX) -> np.ndarray:
    """Center frequencies (Hz) of the triangular filters."""
    mels = np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_mels + 2)
    return mel_to_hz(mels)[1:-1]


def mel_filterbank(
    sample_rate: int = SAMPLE_RATE,
    n_fft: int = N_FFT,
    n_mels: int = N_MELS,
    fmin: float = FMIN,
    fmax: float = FMAX,
) -> np.ndarray:
    """Area-normalized triangular mel filterbank, shape (n_mels, n_fft//2 + 1)."""
    fft_freqs = np.linspace(0.0, sample_rate / 2.0, n_fft // 2 + 1)
    mels = np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_mels + 2)
    edges = mel_to_hz(mels)
    fb = np.zeros((n_mels, fft_freqs.size), dtype=np.float64)
    for k in range(n_mels):
        lo, mid, hi = edges[k], edges[k + 1], edges[k + 2]
        up = (fft_freqs - lo) / (mid - lo)
        down = (hi - fft_freqs) / (hi - mid)
        fb[k] = np.maximum(0.0, np.minimum(up, down)) * (2.0 / (hi - lo))
    return fb


def _hann(n: int) -> np.ndarray:
    # periodic Hann, standard for STFT analysis
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)


def frame_count(n_samples: int, hop: int = HOP) -> int:
    return n_samples // hop + 1


def _centered_frames(samples: np.ndarray, n_fft: int, hop: int) -> np.ndarray:
    """Frame a signal with reflect padding so frame i is centered at i*hop."""
    padded = np.pad(samples.astype(np.float64), n_fft // 2, mode="reflect")
    n_frames = frame_count(samples.size, hop)
    idx = np.arange(n_fft)[None, :] + hop * np.arange(n_frames)[:, None]
    return padded[idx]


def stft_magnitude(samples: np.ndarray, n_fft: int = N_FFT, hop: int = HOP) -> np.ndarray:
    """Magnitude STFT, shape (n_fft//2 + 1, T) with T = len // hop + 1."""
    frames = _centered_frames(samples, n_fft, hop) * _hann(n_fft)[None, :]
    return np.abs(np.fft.rfft(frames, axis=1)).T


def _check_waveform(w: Waveform, min_samples: int = 1) -> np.ndarray:
    samples = np.asarray(w.samples, dtype=np.float64).reshape(-1)
    if w.sample_rate != SAMPLE_RATE:
        raise AudioError(f"expected {SAMPLE_RATE} Hz input, got {w.sample_rate}")
    if samples.size < min_samples:
        raise AudioError(f"waveform too short: {samples.size} < {min_samples} samples")
    return samples


def mel_spectrogram(w: Waveform) -> np.ndarray:
    """Log-mel spectrogram of a 22,050 Hz waveform, float32 (80, T)."""
    samples = _check_waveform(w, min_samples=N_FFT)
    spec = stft_magnitude(samples)
    mel = mel_filterbank() @ spec
    return np.log(np.maximum(mel, MEL_FLOOR)).astype(np.float32)


def extract_f0(w: Waveform) -> np.ndarray:
    """Frame-synchronous F0 track (Hz, 0 = unvoiced), same hop as the mel frames.

    Normalized autocorrelation over lags covering 50..1100 Hz; a frame is
    unvoiced when its RMS is below 1e-4 or its autocorrelation peak is
    below 0.3. Among lags within 85% of the peak, the shortest local
    maximum wins, which suppresses octave-down errors on clean tones.
    """
    samples = _check_waveform(w, min_samples=1)
    win = N_FFT
    lag_min = int(np.ceil(w.sample_rate / F0_MAX))
    lag_max = int(np.floor(w.sample_rate / F0_MIN))
    if samples.size < win:
        samples = np.pad(samples, (0, win - samples.size))
    frames = _centered_frames(samples, win, HOP)
    n_frames = frames.shape[0]
    f0 = np.zeros(n_frames, dtype=np.float64)

    n_pad = 2 * win
    for i in range(n_frames):
        x = frames[i]
        rms = float(np.sqrt(np.mean(x * x)))
        if rms < RMS_GATE:
            continue
        spectrum = np.fft.rfft(x, n_pad)
        raw = np.fft.irfft(spectrum * np.conj(spectrum), n_pad)[: lag_max + 2]
        sq = np.concatenate(([0.0], np.cumsum(x * x)))
        lags = np.arange(lag_min, lag_max + 1)
        e_head = sq[win - lags]  # sum x[n]^2 over n < win - lag
        e_tail = sq[win] - sq[lags]  # sum x[n]^2 over n >= lag
        denom = np.sqrt(np.maximum(e_head * e_tail, 1e-30))
        r = raw[lag_min : lag_max + 1] / denom
        peak = float(r.max())
        if peak < VOICING_THRESHOLD:
            continue
        candidates = np.flatnonzero(
            (r >= 0.85 * peak)
            & (r >= np.roll(r, 1))
            & (r >= np.roll(r, -1))
        )
        candidates = candidates[(candidates > 0) & (candidates < r.size - 1)]
        j = int(candidates[0]) if candidates.size else int(np.argmax(r))
        lag = float(lags[j])
        if 0 < j < r.size - 1:
            denom2 = r[j - 1] - 2.0 * r[j] + r[j + 1]
            if abs(denom2) > 1e-12:
                lag += 0.5 * (r[j - 1] - r[j + 1]) / denom2
        f0[i] = float(np.clip(w.sample_rate / lag, F0_MIN, F0_MAX))
    return f0


def validate_mel(values: np.ndarray) -> np.ndarray:
    values = np.asarray(values)
    if values.ndim != 2 or values.shape[0] != N_MELS:
        raise MelFormatError(f"expected an (80, T) matrix, got shape {values.shape}")
    if not np.isfinite(values).all():
        raise MelFormatError("mel matrix contains non-finite values")
    return values.astype(np.float32, copy=False)


def mel_to_bytes(values: np.ndarray) -> bytes:
    values = validate_mel(values)
    header = MEL_MAGIC + struct.pack("<II", values.shape[0], values.shape[1])
    return header + values.astype("<f4").tobytes(order="C")


def mel_from_bytes(data: bytes) -> np.ndarray:
    if len(data) < 12 or data[:4] != MEL_MAGIC:
        raise MelFormatError("bad magic: not a mel binary")
    n_mels, n_frames = struct.unpack("<II", data[4:12])
    expected = 12 + 4 * n_mels * n_frames
    if n_mels != N_MELS:
        raise MelFormatError(f"expected {N_MELS} mel bins, got {n_mels}")
    if len(data) != expected:
        raise MelFormatError(f"payload size {len(data)} does not match header ({expected})")
    values = np.frombuffer(data[12:], dtype="<f4").reshape(n_mels, n_frames)
    return np.ascontiguousarray(values)


def save_mel(values: np.ndarray, path: str | Path) -> None:
    Path(path).write_bytes(mel_to_bytes(values))


def load_mel(path: str | Path) -> np.ndarray:
    return mel_from_bytes(Path(path).read_bytes())


def quantize_pcm16(samples: np.ndarray) -> np.ndarray:
    """Round float samples to int16 with a symmetric 32767 full scale.

    Rendered audio is quantized through here whether it is written to a
    wav file or consumed directly, so both paths see identical samples.
    """
    samples = np.asarray(samples, dtype=np.float64)
    return np.clip(np.rint(samples * 32767.0), -32767, 32767).astype(np.int16)


def dequantize_pcm16(ints: np.ndarray) -> np.ndarray:
    return np.asarray(ints, dtype=np.float64) / 32767.0


def save_wav(w: Waveform, path: str | Path) -> None:
    """Write a mono 16-bit PCM wav file."""
    samples = _check_waveform(w)
    ints = quantize_pcm16(samples)
    with wave.open(str(path), "wb") as f:
        f.setnchannels(1)
        f.setsampwidth(2)
        f.setframerate(w.sample_rate)
        f.writeframes(ints.astype("<i2").tobytes())


def load_wav(path: str | Path) -> Waveform:
    """Read a mono 16-bit PCM wav file back into float samples."""
    with wave.open(str(path), "rb") as f:
        if f.getnchannels() != 1:
            raise AudioError(f"{path}: expected mono, got {f.getnchannels()} channels")
        if f.getsampwidth() != 2:
            raise AudioError(f"{path}: expected 16-bit PCM, got width {f.getsampwidth()}")
        rate = f.getframerate()
        raw = f.readframes(f.getnframes())
    ints = np.frombuffer(raw, dtype="<i2")
    return Waveform(samples=dequantize_pcm16(ints), sample_rate=rate)
