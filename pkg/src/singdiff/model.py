"""Condition encoding, score estimation, training, and checkpoints.

The estimator is a single jointly trained network: masked condition
states are ordinary vocabulary tokens, so the same parameters serve the
conditional, partially conditioned, and unconditional evaluations that
guidance combines. All public entry points take and return numpy arrays;
torch stays an implementation detail behind them.
"""

from __future__ import annotations

import io
import struct
from dataclasses import dataclass, field, fields

import numpy as np
import torch
from torch import nn

from .diffusion import DEFAULT_T_MIN, NoiseSchedule, noise_stats
from .hangul import PHONEME_VOCAB_SIZE
from .labels import FrameConditions, PITCH_VOCAB_SIZE
from .nets import (
    ScoreUNet,
    TextEncoder,
    conv_receptive_radius,
    count_parameters,
    transformer_receptive_radius,
)

__all__ = [
    "N_MELS",
    "DEFAULT_N_SPEAKERS",
    "CHECKPOINT_MAGIC",
    "ModelError",
    "TrainingError",
    "CheckpointError",
    "ModelConfig",
    "ConditionEmbedding",
    "ModelParams",
    "Batch",
    "init_params",
    "encode_conditions",
    "estimate_score",
    "training_loss",
    "train_step",
    "receptive_field_frames",
    "param_count",
    "save_checkpoint",
    "load_checkpoint",
]

N_MELS = 80
# 12 singer slots plus 80 speech-dataset speaker slots.
DEFAULT_N_SPEAKERS = 92
CHECKPOINT_MAGIC = b"SVCK"
CHECKPOINT_VERSION = 1


class ModelError(ValueError):
    """Invalid model input (shape, vocabulary, or domain)."""


class TrainingError(RuntimeError):
    """Training produced a non-finite loss; message carries diagnostics."""


class CheckpointError(ValueError):
    """Malformed or incompatible checkpoint file."""


@dataclass(frozen=True)
class ModelConfig:
    """Desk-scale architecture sizes.

    attn_window = 0 means full self-attention in the text encoder; a
    positive value restricts each block to +-attn_window frames, which
    bounds the whole model's receptive field.
    """

    n_phonemes: int = PHONEME_VOCAB_SIZE
    n_pitches: int = PITCH_VOCAB_SIZE
    n_speakers: int = DEFAULT_N_SPEAKERS
    n_mels: int = N_MELS
    hidden: int = 128
    n_blocks: int = 4
    n_heads: int = 4
    ffn_mult: int = 4
    dropout: float = 0.1
    prenet_kernel: int = 5
    attn_window: int = 0
    text_dim: int = 64
    pitch_dim: int = 48
    speaker_dim: int = 16
    unet_widths: tuple[int, int, int] = (64, 128, 256)
    time_dim: int = 128

    def __post_init__(self):
        if self.hidden % self.n_heads != 0:
            raise ModelError("hidden size must divide evenly among heads")
        if len(self.unet_widths) != 3:
            raise ModelError("unet_widths must name three resolutions")
        if self.n_mels % 4 != 0:
            raise ModelError("n_mels must be divisible by 4 for two downsamples")

    @property
    def cond_dim(self) -> int:
        return self.text_dim + self.pitch_dim + self.speaker_dim

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            value = getattr(self, f.name)
            if isinstance(value, tuple):
                value = ",".join(str(v) for v in value)
            lines.append(f"{f.name} = {value}")
        return "\n".join(lines) + "\n"

    @staticmethod
    def from_text(text: str) -> "ModelConfig":
        kwargs = {}
        for line in text.splitlines():
            line = line.strip()
            if not line:
                continue
            key, _, value = line.partition("=")
            key = key.strip()
            value = value.strip()
            if key == "unet_widths":
                kwargs[key] = tuple(int(v) for v in value.split(","))
            elif key == "dropout":
                kwargs[key] = float(value)
            else:
                kwargs[key] = int(value)
        return ModelConfig(**kwargs)


@dataclass(frozen=True)
class ConditionEmbedding:
    """Per-frame condition features, laid out (cond_dim, T).

    Rows are text features, then pitch features, then the broadcast
    speaker feature.
    """

    features: np.ndarray

    @property
    def n_frames(self) -> int:
        return self.features.shape[1]


class _SingNet(nn.Module):
    """Container bundling the condition branches and the score U-Net."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.text_encoder = TextEncoder(
            vocab=cfg.n_phonemes,
            hidden=cfg.hidden,
            n_blocks=cfg.n_blocks,
            n_heads=cfg.n_heads,
            ffn_mult=cfg.ffn_mult,
            dropout=cfg.dropout,
            prenet_kernel=cfg.prenet_kernel,
            text_dim=cfg.text_dim,
            attn_window=cfg.attn_window,
        )
        self.pitch_embed = nn.Embedding(cfg.n_pitches, cfg.pitch_dim)
        self.speaker_embed = nn.Embedding(cfg.n_speakers, cfg.speaker_dim)
        self.cond_proj = nn.Linear(cfg.text_dim + cfg.pitch_dim + cfg.speaker_dim,
                                   cfg.n_mels)
        self.unet = ScoreUNet(cfg.unet_widths, cfg.time_dim)

    def encode(self, phoneme_ids, pitch_ids, speaker_ids):
        # (B, T) id tensors -> (B, T, cond_dim)
        text = self.text_encoder(phoneme_ids)
        pitch = self.pitch_embed(pitch_ids)
        speaker = self.speaker_embed(speaker_ids)[:, None, :].expand(
            -1, phoneme_ids.shape[1], -1
        )
        return torch.cat([text, pitch, speaker], dim=2)

    def score(self, x_t, cond, t):
        # x_t (B, n_mels, T), cond (B, T, cond_dim), t (B,) -> (B, n_mels, T)
        cond_img = self.cond_proj(cond).transpose(1, 2)
        h = torch.stack([x_t, cond_img], dim=1)
        h, pad = _pad_frames(h)
        out = self.unet(h, t)[:, 0]
        return out[:, :, : out.shape[2] - pad] if pad else out


def _pad_frames(x: torch.Tensor) -> tuple[torch.Tensor, int]:
    """Right-pad the frame axis of (B, C, F, T) to a multiple of 4."""
    t = x.shape[-1]
    pad = (-t) % 4
    if pad:
        x = nn.functional.pad(x, (0, pad))
    return x, pad


@dataclass
class ModelParams:
    """Trainable weights plus the provenance needed to reuse them safely.

    config_hash ties a checkpoint to the compatibility-relevant parts of
    the run configuration that produced it; loaders refuse mismatches.
    """

    config: ModelConfig
    net: _SingNet
    config_hash: str = ""
    step: int = 0
    optimizer: torch.optim.Adam | None = field(default=None, repr=False)


@dataclass(frozen=True)
class Batch:
    """Padded training batch.

    mels: (B, n_mels, T) float32; phoneme/pitch ids: (B, T) int64;
    speaker_ids: (B,) int64; frame_mask: (B, T) bool, True on real frames.
    """

    mels: np.ndarray
    phoneme_ids: np.ndarray
    pitch_ids: np.ndarray
    speaker_ids: np.ndarray
    frame_mask: np.ndarray

    def __post_init__(self):
        if self.mels.ndim != 3 or self.mels.shape[1] != N_MELS:
            raise ModelError(f"mels must be (B, {N_MELS}, T), got {self.mels.shape}")
        b, _, t = self.mels.shape
        for name in ("phoneme_ids", "pitch_ids", "frame_mask"):
            arr = getattr(self, name)
            if arr.shape != (b, t):
                raise ModelError(f"{name} shape {arr.shape} != ({b}, {t})")
        if self.speaker_ids.shape != (b,):
            raise ModelError("speaker_ids must be one id per item")
        if not self.frame_mask.any():
            raise ModelError("batch has no unmasked frames")


def init_params(config: ModelConfig | None = None, seed: int = 0,
                config_hash: str = "") -> ModelParams:
    """Fresh parameters, deterministic per seed; output conv starts at zero."""
    config = config or ModelConfig()
    torch.manual_seed(seed)
    net = _SingNet(config)
    net.eval()
    return ModelParams(config=config, net=net, config_hash=config_hash)


def _check_ids(fc: FrameConditions, cfg: ModelConfig) -> None:
    if fc.phoneme_ids.min() < 0 or fc.phoneme_ids.max() >= cfg.n_phonemes:
        raise ModelError("phoneme id outside vocabulary")
    if fc.pitch_ids.min() < 0 or fc.pitch_ids.max() >= cfg.n_pitches:
        raise ModelError("pitch id outside vocabulary")
    if not 0 <= fc.speaker_id < cfg.n_speakers:
        raise ModelError("speaker id outside vocabulary")


def encode_conditions(fc: FrameConditions, params: ModelParams) -> ConditionEmbedding:
    """Encode frame conditions into the (cond_dim, T) feature matrix."""
    cfg = params.config
    _check_ids(fc, cfg)
    net = params.net
    net.eval()
    with torch.no_grad():
        phon = torch.from_numpy(np.ascontiguousarray(fc.phoneme_ids))[None, :]
        pitch = torch.from_numpy(np.ascontiguousarray(fc.pitch_ids))[None, :]
        speaker = torch.tensor([fc.speaker_id])
        feats = net.encode(phon, pitch, speaker)[0].T.contiguous()
    return ConditionEmbedding(features=feats.numpy())


def estimate_score(x_t: np.ndarray, emb: ConditionEmbedding, t: float,
                   params: ModelParams,
                   sched: NoiseSchedule | None = None) -> np.ndarray:
    """Score estimate for one diffused mel at time t; deterministic.

    The network predicts the diffusion noise; the score is its negation
    scaled by the kernel's standard deviation at t. Keeping the network
    output at unit scale makes every timestep equally learnable, while
    the returned quantity is still the score the samplers integrate.
    """
    cfg = params.config
    sched = sched or NoiseSchedule()
    x_t = np.asarray(x_t)
    if x_t.ndim != 2 or x_t.shape[0] != cfg.n_mels:
        raise ModelError(f"expected ({cfg.n_mels}, T) input, got {x_t.shape}")
    if emb.features.shape != (cfg.cond_dim, x_t.shape[1]):
        raise ModelError(
            f"condition features {emb.features.shape} do not match "
            f"({cfg.cond_dim}, {x_t.shape[1]})"
        )
    if not 0.0 < t <= 1.0:
        raise ModelError(f"t must lie in (0, 1], got {t}")
    net = params.net
    net.eval()
    dtype = next(net.parameters()).dtype
    with torch.no_grad():
        x = torch.from_numpy(np.ascontiguousarray(x_t)).to(dtype)[None]
        cond = torch.from_numpy(np.ascontiguousarray(emb.features.T)).to(dtype)[None]
        t_vec = torch.tensor([t], dtype=dtype)
        eps_hat = net.score(x, cond, t_vec)[0]
    _, var = noise_stats(t, sched)
    return -eps_hat.numpy() / np.sqrt(var)


def training_loss(params: ModelParams, batch: Batch, rng_seed: int,
                  sched: NoiseSchedule | None = None,
                  t_min: float = DEFAULT_T_MIN) -> torch.Tensor:
    """Differentiable noise-regression loss for one batch.

    Draws t ~ U(t_min, 1) and the diffusion noise from the global torch
    RNG seeded with rng_seed, so two calls with equal arguments produce
    bit-identical losses and the loss stays a deterministic function of
    the parameters for finite-difference gradient checks. The per-time
    weight is the kernel variance, which turns the weighted score error
    into plain noise regression: an estimator stuck at zero scores one
    exactly unit of loss in expectation, at every t.
    """
    sched = sched or NoiseSchedule()
    net = params.net
    net.train()
    dtype = next(net.parameters()).dtype
    torch.manual_seed(rng_seed)

    mels = torch.from_numpy(np.ascontiguousarray(batch.mels)).to(dtype)
    phon = torch.from_numpy(np.ascontiguousarray(batch.phoneme_ids))
    pitch = torch.from_numpy(np.ascontiguousarray(batch.pitch_ids))
    speaker = torch.from_numpy(np.ascontiguousarray(batch.speaker_ids))
    mask = torch.from_numpy(np.ascontiguousarray(batch.frame_mask)).to(dtype)
    b = mels.shape[0]

    t = t_min + (1.0 - t_min) * torch.rand(b, dtype=dtype)
    mean_coef = torch.exp(-0.5 * sched.cumulative(t))
    var = 1.0 - mean_coef * mean_coef
    eps = torch.randn(mels.shape, dtype=dtype)
    x_t = mean_coef[:, None, None] * mels + torch.sqrt(var)[:, None, None] * eps

    cond = net.encode(phon, pitch, speaker)
    eps_hat = net.score(x_t, cond, t)
    # Network output is the noise estimate, so the variance-weighted score
    # error var * (s_hat - s_target)^2 reduces to plain noise regression.
    residual = eps_hat - eps
    weighted = residual.square() * mask[:, None, :]
    loss = weighted.sum() / (mask.sum() * mels.shape[1])
    net.eval()
    if not torch.isfinite(loss):
        raise TrainingError(
            "non-finite training loss: "
            f"batch={tuple(mels.shape)} t_range=({t.min():.4f},{t.max():.4f}) "
            f"mel_range=({mels.min():.3f},{mels.max():.3f}) seed={rng_seed}"
        )
    return loss


def train_step(params: ModelParams, batch: Batch, rng_seed: int,
               lr: float = 1e-4, sched: NoiseSchedule | None = None,
               t_min: float = DEFAULT_T_MIN) -> tuple[ModelParams, float]:
    """One Adam update on the batch; returns the updated params and loss.

    Parameters are updated in place; the returned object is the same
    ModelParams with its step count advanced. Optimizer state lives only
    in memory and restarts fresh per process, which keeps whole training
    runs reproducible from scratch.
    """
    if params.optimizer is None:
        params.optimizer = torch.optim.Adam(params.net.parameters(), lr=lr)
    loss = training_loss(params, batch, rng_seed, sched=sched, t_min=t_min)
    params.optimizer.zero_grad()
    loss.backward()
    params.optimizer.step()
    params.step += 1
    return params, float(loss.detach())


def receptive_field_frames(config: ModelConfig) -> int | None:
    """Upper bound on frames any input frame can influence; None if unbounded."""
    text = transformer_receptive_radius(config.n_blocks, config.prenet_kernel,
                                        config.attn_window)
    if text is None:
        return None
    return text + conv_receptive_radius(config.unet_widths)


def param_count(params: ModelParams) -> int:
    return count_parameters(params.net)


def save_checkpoint(params: ModelParams, path: str) -> None:
    """Write the documented binary checkpoint container.

    Layout: magic "SVCK", u32 version, u32 config-hash length + ascii
    hash, u64 step, u32 config-text length + utf-8 model config, u32
    tensor count, then per tensor a u32 name length + utf-8 name, u32
    ndim, ndim u64 dims, and f32 little-endian data. All integers little
    endian.
    """
    buf = io.BytesIO()
    buf.write(CHECKPOINT_MAGIC)
    buf.write(struct.pack("<I", CHECKPOINT_VERSION))
    hash_bytes = params.config_hash.encode("ascii")
    buf.write(struct.pack("<I", len(hash_bytes)))
    buf.write(hash_bytes)
    buf.write(struct.pack("<Q", params.step))
    cfg_bytes = params.config.to_text().encode("utf-8")
    buf.write(struct.pack("<I", len(cfg_bytes)))
    buf.write(cfg_bytes)
    state = params.net.state_dict()
    buf.write(struct.pack("<I", len(state)))
    for name, tensor in state.items():
        name_bytes = name.encode("utf-8")
        buf.write(struct.pack("<I", len(name_bytes)))
        buf.write(name_bytes)
        arr = tensor.detach().to(torch.float32).numpy()
        buf.write(struct.pack("<I", arr.ndim))
        for dim in arr.shape:
            buf.write(struct.pack("<Q", dim))
        buf.write(arr.astype("<f4").tobytes(order="C"))
    with open(path, "wb") as fh:
        fh.write(buf.getvalue())


def _read_exact(fh, n: int) -> bytes:
    data = fh.read(n)
    if len(data) != n:
        raise CheckpointError("truncated checkpoint file")
    return data


def load_checkpoint(path: str, expect_hash: str | None = None) -> ModelParams:
    """Read a checkpoint; refuses a config-hash mismatch when one is expected."""
    with open(path, "rb") as fh:
        if _read_exact(fh, 4) != CHECKPOINT_MAGIC:
            raise CheckpointError("bad checkpoint magic")
        (version,) = struct.unpack("<I", _read_exact(fh, 4))
        if version != CHECKPOINT_VERSION:
            raise CheckpointError(f"unsupported checkpoint version {version}")
        (hash_len,) = struct.unpack("<I", _read_exact(fh, 4))
        config_hash = _read_exact(fh, hash_len).decode("ascii")
        (step,) = struct.unpack("<Q", _read_exact(fh, 8))
        (cfg_len,) = struct.unpack("<I", _read_exact(fh, 4))
        config = ModelConfig.from_text(_read_exact(fh, cfg_len).decode("utf-8"))
        (n_tensors,) = struct.unpack("<I", _read_exact(fh, 4))
        state = {}
        for _ in range(n_tensors):
            (name_len,) = struct.unpack("<I", _read_exact(fh, 4))
            name = _read_exact(fh, name_len).decode("utf-8")
            (ndim,) = struct.unpack("<I", _read_exact(fh, 4))
            shape = tuple(
                struct.unpack("<Q", _read_exact(fh, 8))[0] for _ in range(ndim)
            )
            count = int(np.prod(shape)) if shape else 1
            data = np.frombuffer(_read_exact(fh, 4 * count), dtype="<f4")
            state[name] = torch.from_numpy(data.reshape(shape).copy())
        if fh.read(1):
            raise CheckpointError("trailing bytes after checkpoint payload")
    if expect_hash is not None and expect_hash != config_hash:
        raise CheckpointError(
            f"config hash mismatch: checkpoint {config_hash or '(empty)'} "
            f"vs expected {expect_hash}"
        )
    params = init_params(config, seed=0, config_hash=config_hash)
    try:
        params.net.load_state_dict(state, strict=True)
    except RuntimeError as exc:
        raise CheckpointError(f"checkpoint tensors do not match model: {exc}")
    params.step = step
    params.net.eval()
    return params
