"""Conditional-fidelity probe.

A small convolutional frame classifier reads a mel matrix and predicts
the phoneme and pitch ID of every frame. Trained on ground-truth
renders, it turns "did the sampler actually realize the requested
labels" into a number: the mean of the two heads' frame accuracies
against the target conditions. The value is only meaningful relative to
other sampling modes evaluated with the same probe.

Silence is not a class the network learns: frames whose peak mel energy
falls below a fixed gate are declared silence/rest directly, and the
heads only ever classify content among sounding classes. That keeps the
probe honest on garbage input. A loud but structureless mel cannot score
as "correct silence"; it gets graded against sounding classes, where
inverse-frequency class balancing during training leaves no majority
class to fall back on, so accuracy settles near one over the number of
classes that appear in the training labels.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch
from torch import nn

from .labels import (FrameConditions, PITCH_VOCAB_SIZE, REST_PITCH_ID,
                     UNKNOWN_PITCH_ID)
from .hangul import PHONEME_VOCAB_SIZE, SILENCE_ID, UNKNOWN_PHONEME_ID
from .model import N_MELS

__all__ = [
    "ProbeError",
    "ProbeConfig",
    "ProbeParams",
    "active_classes",
    "train_probe",
    "probe_accuracy",
    "label_recovery",
]


class ProbeError(ValueError):
    """Malformed probe input or mismatched shapes."""


@dataclass(frozen=True)
class ProbeConfig:
    channels: int = 96
    kernel: int = 5
    n_layers: int = 3
    lr: float = 2e-3
    weight_decay: float = 1e-4
    # train-time gaussian jitter on mel inputs; the probe grades noisy
    # sampler outputs, so it must not key on razor-thin spectral detail
    input_noise: float = 0.3
    # frames with peak log-mel below this are silence/rest by decree;
    # voiced frames never peak under -1.6, and -2.0 also absorbs most of
    # the window bleed into silent gaps at note boundaries
    silence_gate: float = -2.0

    def __post_init__(self):
        if self.kernel % 2 != 1:
            raise ProbeError("probe kernel must be odd for same-length output")
        if self.n_layers < 1:
            raise ProbeError("probe needs at least one layer")


class _ProbeNet(nn.Module):
    def __init__(self, cfg: ProbeConfig):
        super().__init__()
        layers = []
        width = N_MELS
        for _ in range(cfg.n_layers):
            layers.append(nn.Conv1d(width, cfg.channels, cfg.kernel,
                                    padding=cfg.kernel // 2))
            layers.append(nn.SiLU())
            width = cfg.channels
        self.trunk = nn.Sequential(*layers)
        self.phoneme_head = nn.Conv1d(width, PHONEME_VOCAB_SIZE, 1)
        self.pitch_head = nn.Conv1d(width, PITCH_VOCAB_SIZE, 1)

    def forward(self, mels: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        h = self.trunk(mels)
        return self.phoneme_head(h), self.pitch_head(h)


@dataclass
class ProbeParams:
    config: ProbeConfig
    net: _ProbeNet = field(repr=False)


def _check_items(items: list[tuple[np.ndarray, FrameConditions]]) -> None:
    if not items:
        raise ProbeError("no probe training items")
    for mel, fc in items:
        if mel.ndim != 2 or mel.shape[0] != N_MELS:
            raise ProbeError(f"expected ({N_MELS}, T) mel, got {mel.shape}")
        if fc.n_frames != mel.shape[1]:
            raise ProbeError(
                f"conditions cover {fc.n_frames} frames, mel has {mel.shape[1]}")


def active_classes(items: list[tuple[np.ndarray, FrameConditions]]) -> tuple[set[int], set[int]]:
    """Distinct phoneme and pitch IDs appearing in the items' labels."""
    _check_items(items)
    phon: set[int] = set()
    pitch: set[int] = set()
    for _, fc in items:
        phon.update(int(v) for v in np.unique(fc.phoneme_ids))
        pitch.update(int(v) for v in np.unique(fc.pitch_ids))
    return phon, pitch


def _class_weights(counts: np.ndarray) -> torch.Tensor:
    # inverse frequency over observed classes; absent classes weigh nothing
    weights = np.zeros(counts.shape[0])
    seen = counts > 0
    weights[seen] = 1.0 / counts[seen]
    weights *= seen.sum() / max(weights.sum(), 1e-12)
    return torch.from_numpy(weights).float()


def train_probe(items: list[tuple[np.ndarray, FrameConditions]],
                config: ProbeConfig | None = None, seed: int = 0,
                n_steps: int = 300, batch_items: int = 8) -> ProbeParams:
    """Fit the probe on ground-truth (mel, conditions) pairs; deterministic."""
    _check_items(items)
    config = config or ProbeConfig()
    torch.manual_seed(seed)
    net = _ProbeNet(config)
    opt = torch.optim.Adam(net.parameters(), lr=config.lr,
                           weight_decay=config.weight_decay)

    # the heads learn sounding classes only; silence/rest frames go to
    # the energy gate, and frames the two disagree on train nothing
    def content_mask(mel: np.ndarray, fc: FrameConditions) -> np.ndarray:
        return ((mel.max(axis=0) >= config.silence_gate)
                & (fc.phoneme_ids != SILENCE_ID)
                & (fc.phoneme_ids != UNKNOWN_PHONEME_ID)
                & (fc.pitch_ids != REST_PITCH_ID)
                & (fc.pitch_ids != UNKNOWN_PITCH_ID))

    phon_counts = np.zeros(PHONEME_VOCAB_SIZE)
    pitch_counts = np.zeros(PITCH_VOCAB_SIZE)
    n_content = 0
    for mel, fc in items:
        keep = content_mask(mel, fc)
        np.add.at(phon_counts, fc.phoneme_ids[keep], 1)
        np.add.at(pitch_counts, fc.pitch_ids[keep], 1)
        n_content += int(keep.sum())
    if n_content == 0:
        raise ProbeError("no sounding frames above the silence gate to train on")
    phon_loss = nn.CrossEntropyLoss(weight=_class_weights(phon_counts))
    pitch_loss = nn.CrossEntropyLoss(weight=_class_weights(pitch_counts))

    rng = np.random.default_rng(seed)
    net.train()
    for _ in range(n_steps):
        picks = rng.integers(0, len(items), size=min(batch_items, len(items)))
        t_max = max(items[i][0].shape[1] for i in picks)
        mels = np.full((picks.size, N_MELS, t_max), np.log(1e-5), dtype=np.float32)
        phon = np.zeros((picks.size, t_max), dtype=np.int64)
        pitch = np.zeros((picks.size, t_max), dtype=np.int64)
        mask = np.zeros((picks.size, t_max), dtype=bool)
        for row, i in enumerate(picks):
            mel, fc = items[i]
            t = mel.shape[1]
            mels[row, :, :t] = mel
            phon[row, :t] = fc.phoneme_ids
            pitch[row, :t] = fc.pitch_ids
            mask[row, :t] = content_mask(mel, fc)
        inputs = torch.from_numpy(mels)
        if config.input_noise > 0:
            inputs = inputs + config.input_noise * torch.randn_like(inputs)
        logits_p, logits_m = net(inputs)
        keep = torch.from_numpy(mask.reshape(-1))
        if not bool(keep.any()):
            continue
        flat_p = logits_p.permute(0, 2, 1).reshape(-1, PHONEME_VOCAB_SIZE)[keep]
        flat_m = logits_m.permute(0, 2, 1).reshape(-1, PITCH_VOCAB_SIZE)[keep]
        target_p = torch.from_numpy(phon.reshape(-1))[keep]
        target_m = torch.from_numpy(pitch.reshape(-1))[keep]
        loss = phon_loss(flat_p, target_p) + pitch_loss(flat_m, target_m)
        opt.zero_grad()
        loss.backward()
        opt.step()
    net.eval()
    return ProbeParams(config=config, net=net)


def _predict(probe: ProbeParams, mel: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    mel = np.asarray(mel, dtype=np.float32)
    if mel.ndim != 2 or mel.shape[0] != N_MELS:
        raise ProbeError(f"expected ({N_MELS}, T) mel, got {mel.shape}")
    probe.net.eval()
    with torch.no_grad():
        logits_p, logits_m = probe.net(torch.from_numpy(mel)[None])
    # heads pick among sounding classes only; silence/rest come from the gate
    logits_p[0, [SILENCE_ID, UNKNOWN_PHONEME_ID]] = -torch.inf
    logits_m[0, [REST_PITCH_ID, UNKNOWN_PITCH_ID]] = -torch.inf
    pred_p = logits_p[0].argmax(dim=0).numpy()
    pred_m = logits_m[0].argmax(dim=0).numpy()
    silent = mel.max(axis=0) < probe.config.silence_gate
    pred_p[silent] = SILENCE_ID
    pred_m[silent] = REST_PITCH_ID
    return pred_p, pred_m


def label_recovery(gen_mel: np.ndarray, fc: FrameConditions,
                   probe: ProbeParams) -> float:
    """Mean of phoneme and pitch frame accuracies against the target labels."""
    pred_p, pred_m = _predict(probe, gen_mel)
    if fc.n_frames != pred_p.shape[0]:
        raise ProbeError(
            f"conditions cover {fc.n_frames} frames, mel has {pred_p.shape[0]}")
    acc_p = float(np.mean(pred_p == fc.phoneme_ids))
    acc_m = float(np.mean(pred_m == fc.pitch_ids))
    return 0.5 * (acc_p + acc_m)


def probe_accuracy(items: list[tuple[np.ndarray, FrameConditions]],
                   probe: ProbeParams) -> dict[str, float]:
    """Frame accuracies pooled over items; the probe's sanity gate."""
    _check_items(items)
    hits_p = hits_m = total = 0
    for mel, fc in items:
        pred_p, pred_m = _predict(probe, mel)
        hits_p += int(np.sum(pred_p == fc.phoneme_ids))
        hits_m += int(np.sum(pred_m == fc.pitch_ids))
        total += fc.n_frames
    return {
        "phoneme_acc": hits_p / total,
        "pitch_acc": hits_m / total,
        "mean_acc": 0.5 * (hits_p + hits_m) / total,
    }
