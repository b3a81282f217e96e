"""Torch building blocks for the condition encoder and score estimator.

Everything here keeps two properties the rest of the system relies on:
smooth activations and normalizations (finite-difference gradient checks
need twice-differentiable losses, so no ReLU), and frame-local
normalization (statistics are taken over channels at each position, never
over time, so receptive fields stay bounded when attention is windowed).
"""

from __future__ import annotations

import torch
from torch import nn

__all__ = [
    "ChannelNorm",
    "ChannelNorm1d",
    "sinusoidal_embedding",
    "TimeTrunk",
    "ResBlock",
    "Downsample",
    "Upsample",
    "TransformerBlock",
    "TextEncoder",
    "ScoreUNet",
    "conv_receptive_radius",
    "transformer_receptive_radius",
    "count_parameters",
]


class ChannelNorm(nn.Module):
    """LayerNorm over the channel axis of (B, C, H, W), per position."""

    def __init__(self, channels: int, eps: float = 1e-5):
        super().__init__()
        self.eps = eps
        self.weight = nn.Parameter(torch.ones(channels))
        self.bias = nn.Parameter(torch.zeros(channels))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        mu = x.mean(dim=1, keepdim=True)
        var = x.var(dim=1, keepdim=True, unbiased=False)
        x = (x - mu) / torch.sqrt(var + self.eps)
        return x * self.weight[None, :, None, None] + self.bias[None, :, None, None]


class ChannelNorm1d(nn.Module):
    """LayerNorm over the channel axis of (B, C, T), per frame."""

    def __init__(self, channels: int, eps: float = 1e-5):
        super().__init__()
        self.eps = eps
        self.weight = nn.Parameter(torch.ones(channels))
        self.bias = nn.Parameter(torch.zeros(channels))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        mu = x.mean(dim=1, keepdim=True)
        var = x.var(dim=1, keepdim=True, unbiased=False)
        x = (x - mu) / torch.sqrt(var + self.eps)
        return x * self.weight[None, :, None] + self.bias[None, :, None]


def sinusoidal_embedding(t: torch.Tensor, dim: int, max_freq: float = 1000.0) -> torch.Tensor:
    """Sin/cos features of a continuous time in (0, 1]; t shape (B,) -> (B, dim)."""
    half = dim // 2
    exponents = torch.arange(half, dtype=t.dtype, device=t.device) / max(half - 1, 1)
    freqs = max_freq ** exponents
    angles = t[:, None] * freqs[None, :]
    return torch.cat([torch.sin(angles), torch.cos(angles)], dim=1)


class TimeTrunk(nn.Module):
    """Shared MLP over the sinusoidal time features."""

    def __init__(self, dim: int):
        super().__init__()
        self.dim = dim
        self.net = nn.Sequential(nn.Linear(dim, dim), nn.SiLU(), nn.Linear(dim, dim))

    def forward(self, t: torch.Tensor) -> torch.Tensor:
        return self.net(sinusoidal_embedding(t, self.dim))


class ResBlock(nn.Module):
    """Two 3x3 convs with a per-channel time bias between them, plus skip."""

    def __init__(self, channels: int, time_dim: int):
        super().__init__()
        self.norm1 = ChannelNorm(channels)
        self.conv1 = nn.Conv2d(channels, channels, 3, padding=1)
        self.time_proj = nn.Linear(time_dim, channels)
        self.norm2 = ChannelNorm(channels)
        self.conv2 = nn.Conv2d(channels, channels, 3, padding=1)
        self.act = nn.SiLU()

    def forward(self, x: torch.Tensor, temb: torch.Tensor) -> torch.Tensor:
        h = self.conv1(self.act(self.norm1(x)))
        h = h + self.time_proj(temb)[:, :, None, None]
        h = self.conv2(self.act(self.norm2(h)))
        return x + h


class Downsample(nn.Module):
    """Stride-2 3x3 conv halving both axes and changing width."""

    def __init__(self, in_ch: int, out_ch: int):
        super().__init__()
        self.conv = nn.Conv2d(in_ch, out_ch, 3, stride=2, padding=1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.conv(x)


class Upsample(nn.Module):
    """Nearest x2 followed by a 3x3 conv changing width."""

    def __init__(self, in_ch: int, out_ch: int):
        super().__init__()
        self.conv = nn.Conv2d(in_ch, out_ch, 3, padding=1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = nn.functional.interpolate(x, scale_factor=2.0, mode="nearest")
        return self.conv(x)


def _window_mask(n: int, window: int, dtype, device) -> torch.Tensor:
    """Additive attention mask banning positions farther than `window`."""
    idx = torch.arange(n, device=device)
    banned = (idx[:, None] - idx[None, :]).abs() > window
    mask = torch.zeros((n, n), dtype=dtype, device=device)
    return mask.masked_fill(banned, float("-inf"))


class TransformerBlock(nn.Module):
    """Pre-norm self-attention + feed-forward over (B, T, C)."""

    def __init__(self, hidden: int, n_heads: int, ffn_mult: int, dropout: float,
                 attn_window: int = 0):
        super().__init__()
        self.attn_window = attn_window
        self.norm1 = nn.LayerNorm(hidden)
        self.attn = nn.MultiheadAttention(hidden, n_heads, dropout=dropout,
                                          batch_first=True)
        self.norm2 = nn.LayerNorm(hidden)
        self.ffn = nn.Sequential(
            nn.Linear(hidden, ffn_mult * hidden),
            nn.SiLU(),
            nn.Dropout(dropout),
            nn.Linear(ffn_mult * hidden, hidden),
        )
        self.drop = nn.Dropout(dropout)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        h = self.norm1(x)
        mask = None
        if self.attn_window > 0:
            mask = _window_mask(x.shape[1], self.attn_window, x.dtype, x.device)
        attn_out, _ = self.attn(h, h, h, attn_mask=mask, need_weights=False)
        x = x + self.drop(attn_out)
        x = x + self.drop(self.ffn(self.norm2(x)))
        return x


class TextEncoder(nn.Module):
    """Phoneme IDs -> per-frame text features.

    Embedding, a two-layer convolutional pre-net with dropout, a stack of
    self-attention blocks, and a linear projection to the text feature
    width. Mask tokens are ordinary vocabulary entries.
    """

    def __init__(self, vocab: int, hidden: int, n_blocks: int, n_heads: int,
                 ffn_mult: int, dropout: float, prenet_kernel: int,
                 text_dim: int, attn_window: int = 0):
        super().__init__()
        pad = prenet_kernel // 2
        self.embed = nn.Embedding(vocab, hidden)
        self.prenet = nn.ModuleList([
            nn.Sequential(
                nn.Conv1d(hidden, hidden, prenet_kernel, padding=pad),
                ChannelNorm1d(hidden),
                nn.SiLU(),
                nn.Dropout(dropout),
            )
            for _ in range(2)
        ])
        self.blocks = nn.ModuleList([
            TransformerBlock(hidden, n_heads, ffn_mult, dropout, attn_window)
            for _ in range(n_blocks)
        ])
        self.proj = nn.Linear(hidden, text_dim)

    def forward(self, phoneme_ids: torch.Tensor) -> torch.Tensor:
        # phoneme_ids (B, T) -> features (B, T, text_dim)
        h = self.embed(phoneme_ids).transpose(1, 2)
        for layer in self.prenet:
            h = layer(h)
        h = h.transpose(1, 2)
        for block in self.blocks:
            h = block(h)
        return self.proj(h)


class ScoreUNet(nn.Module):
    """Three-resolution U-Net over (B, 2, n_mels, T) predicting a score map.

    Channel 0 carries the diffused mel, channel 1 the projected condition
    features. Time enters every residual block through a per-channel bias
    derived from the shared sinusoidal trunk. The output conv starts at
    zero so an untrained model predicts the zero score.
    """

    def __init__(self, widths: tuple[int, ...], time_dim: int):
        super().__init__()
        if len(widths) != 3:
            raise ValueError("expected exactly three resolution widths")
        w0, w1, w2 = widths
        self.time_trunk = TimeTrunk(time_dim)
        self.stem = nn.Conv2d(2, w0, 3, padding=1)
        self.enc0 = ResBlock(w0, time_dim)
        self.down1 = Downsample(w0, w1)
        self.enc1 = ResBlock(w1, time_dim)
        self.down2 = Downsample(w1, w2)
        self.mid = ResBlock(w2, time_dim)
        self.up1 = Upsample(w2, w1)
        self.fuse1 = nn.Conv2d(2 * w1, w1, 1)
        self.dec1 = ResBlock(w1, time_dim)
        self.up2 = Upsample(w1, w0)
        self.fuse0 = nn.Conv2d(2 * w0, w0, 1)
        self.dec0 = ResBlock(w0, time_dim)
        self.out_norm = ChannelNorm(w0)
        self.out_act = nn.SiLU()
        self.out_conv = nn.Conv2d(w0, 1, 3, padding=1)
        nn.init.zeros_(self.out_conv.weight)
        nn.init.zeros_(self.out_conv.bias)

    def forward(self, x: torch.Tensor, t: torch.Tensor) -> torch.Tensor:
        temb = self.time_trunk(t)
        h0 = self.enc0(self.stem(x), temb)
        h1 = self.enc1(self.down1(h0), temb)
        h2 = self.mid(self.down2(h1), temb)
        u1 = self.fuse1(torch.cat([self.up1(h2), h1], dim=1))
        u1 = self.dec1(u1, temb)
        u0 = self.fuse0(torch.cat([self.up2(u1), h0], dim=1))
        u0 = self.dec0(u0, temb)
        return self.out_conv(self.out_act(self.out_norm(u0)))


def conv_receptive_radius(widths: tuple[int, ...]) -> int:
    """Frame-axis receptive radius of ScoreUNet, counted conservatively.

    Mirrors the layer stack above: each 3x3 conv adds one frame of reach
    at its resolution's stride; nearest upsampling adds at most one coarse
    cell. Attention-free, so the bound is exact arithmetic over the convs.
    """
    radius = 1  # stem
    factor = 1
    radius += 2 * factor  # enc0
    for _ in widths[1:]:
        radius += 1 * factor  # downsample conv reaches +-1 at current stride
        factor *= 2
        radius += 2 * factor  # encoder/mid res block
    for _ in widths[1:]:
        radius += 1 * factor  # nearest upsample alignment slack
        factor //= 2
        radius += 1 * factor  # post-upsample conv
        radius += 2 * factor  # decoder res block
    radius += 1  # output conv
    return radius


def transformer_receptive_radius(n_blocks: int, prenet_kernel: int,
                                 attn_window: int) -> int | None:
    """Frame-axis receptive radius of TextEncoder; None when unbounded."""
    if attn_window <= 0:
        return None
    return 2 * (prenet_kernel // 2) + n_blocks * attn_window


def count_parameters(module: nn.Module) -> int:
    return sum(p.numel() for p in module.parameters())
