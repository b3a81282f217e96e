"""Prepared-dataset storage and batch assembly.

A prepared dataset directory holds one mel binary and one condition
JSON per item plus a manifest tying them together under the config hash
that produced them. Batches are assembled from loaded items with the
semi-supervision masking policy applied per draw: items with no labels
always train the unconditional score, labeled items are stochastically
masked so the one network also learns the partial-condition scores it
must estimate at sampling time.

Mels are stored as true log-mel matrices. The diffusion process runs in
an affine-rescaled state space (see AudioSection.mel_shift/mel_scale),
and the conversion happens here at batch time and in the sampler on the
way out, so artifacts on disk stay interpretable.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .audio import load_mel
from .config import AudioSection, TrainingSection
from .labels import (FrameConditions, LABELING_FULL, LABELING_NONE,
                     LABELING_PITCH_ONLY, LABELING_TEXT_ONLY, LABELINGS,
                     UNKNOWN_PITCH_ID, mask_conditions)
from .hangul import UNKNOWN_PHONEME_ID
from .model import Batch

__all__ = [
    "DatasetError",
    "MANIFEST_NAME",
    "ManifestItem",
    "Manifest",
    "format_manifest",
    "parse_manifest",
    "write_manifest",
    "read_manifest",
    "save_conditions",
    "load_conditions",
    "DataItem",
    "load_items",
    "normalize_mel",
    "denormalize_mel",
    "draw_masking",
    "assemble_batch",
]

MANIFEST_NAME = "manifest.txt"
_MANIFEST_FORMAT = "singdiff-manifest"
_MANIFEST_VERSION = 1


class DatasetError(ValueError):
    """Missing, inconsistent, or malformed dataset files."""


@dataclass(frozen=True)
class ManifestItem:
    stem: str
    labeling: str
    n_frames: int


@dataclass(frozen=True)
class Manifest:
    config_hash: str
    items: tuple[ManifestItem, ...]

    def labeling_counts(self) -> dict[str, int]:
        counts: dict[str, int] = {}
        for item in self.items:
            counts[item.labeling] = counts.get(item.labeling, 0) + 1
        return counts


def format_manifest(manifest: Manifest) -> str:
    lines = [
        f"format = {_MANIFEST_FORMAT}",
        f"version = {_MANIFEST_VERSION}",
        f"config_hash = {manifest.config_hash}",
    ]
    for item in sorted(manifest.items, key=lambda i: i.stem):
        lines.append(f"item = {item.stem} {item.labeling} {item.n_frames}")
    return "\n".join(lines) + "\n"


def parse_manifest(text: str) -> Manifest:
    lines = [ln.strip() for ln in text.splitlines() if ln.strip()]
    if len(lines) < 3:
        raise DatasetError("manifest too short to hold its header")
    header = {}
    for ln in lines[:3]:
        key, _, value = ln.partition("=")
        header[key.strip()] = value.strip()
    if header.get("format") != _MANIFEST_FORMAT:
        raise DatasetError(f"not a dataset manifest: format = {header.get('format')!r}")
    if header.get("version") != str(_MANIFEST_VERSION):
        raise DatasetError(f"unsupported manifest version {header.get('version')!r}")
    if "config_hash" not in header:
        raise DatasetError("manifest missing config_hash")
    items = []
    seen: set[str] = set()
    for ln in lines[3:]:
        key, _, value = ln.partition("=")
        if key.strip() != "item":
            raise DatasetError(f"unexpected manifest line: {ln!r}")
        parts = value.split()
        if len(parts) != 3:
            raise DatasetError(f"malformed item line: {ln!r}")
        stem, labeling, n_frames = parts
        if labeling not in LABELINGS:
            raise DatasetError(f"unknown labeling {labeling!r} for item {stem}")
        if stem in seen:
            raise DatasetError(f"duplicate item stem {stem!r}")
        seen.add(stem)
        items.append(ManifestItem(stem=stem, labeling=labeling,
                                  n_frames=int(n_frames)))
    return Manifest(config_hash=header["config_hash"], items=tuple(items))


def write_manifest(manifest: Manifest, directory: str | Path) -> Path:
    path = Path(directory) / MANIFEST_NAME
    path.write_text(format_manifest(manifest), encoding="utf-8")
    return path


def read_manifest(directory: str | Path) -> Manifest:
    path = Path(directory) / MANIFEST_NAME
    if not path.exists():
        raise DatasetError(f"no manifest at {path}")
    return parse_manifest(path.read_text(encoding="utf-8"))


def save_conditions(fc: FrameConditions, path: str | Path) -> None:
    payload = {
        "speaker_id": fc.speaker_id,
        "phoneme_ids": [int(v) for v in fc.phoneme_ids],
        "pitch_ids": [int(v) for v in fc.pitch_ids],
    }
    Path(path).write_text(json.dumps(payload, sort_keys=True) + "\n",
                          encoding="utf-8")


def load_conditions(path: str | Path) -> FrameConditions:
    try:
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
        return FrameConditions(
            phoneme_ids=np.asarray(payload["phoneme_ids"], dtype=np.int64),
            pitch_ids=np.asarray(payload["pitch_ids"], dtype=np.int64),
            speaker_id=int(payload["speaker_id"]))
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise DatasetError(f"malformed condition file {path}: {exc}") from exc


@dataclass(frozen=True)
class DataItem:
    stem: str
    labeling: str
    mel: np.ndarray
    fc: FrameConditions


def load_items(directory: str | Path, manifest: Manifest | None = None) -> list[DataItem]:
    """Load every manifest item, checking the three frame counts agree."""
    directory = Path(directory)
    manifest = manifest or read_manifest(directory)
    items = []
    for entry in manifest.items:
        mel = load_mel(directory / f"{entry.stem}.mel")
        fc = load_conditions(directory / f"{entry.stem}.cond.json")
        if mel.shape[1] != entry.n_frames or fc.n_frames != entry.n_frames:
            raise DatasetError(
                f"{entry.stem}: manifest says {entry.n_frames} frames, "
                f"mel has {mel.shape[1]}, conditions have {fc.n_frames}")
        items.append(DataItem(stem=entry.stem, labeling=entry.labeling,
                              mel=mel, fc=fc))
    return items


def normalize_mel(mel: np.ndarray, audio: AudioSection) -> np.ndarray:
    return ((mel - audio.mel_shift) / audio.mel_scale).astype(np.float32)


def denormalize_mel(state: np.ndarray, audio: AudioSection) -> np.ndarray:
    return (state * audio.mel_scale + audio.mel_shift).astype(np.float32)


def draw_masking(labeling: str, training: TrainingSection,
                 rng: np.random.Generator) -> str:
    """Condition target for one training draw of one item.

    Unlabeled items always train the unconditional score. Items carrying
    any labels take one stochastic draw; partial labelings pass through
    mask_conditions, which never invents information.
    """
    if labeling == LABELING_NONE:
        return LABELING_NONE
    u = rng.random()
    if u < training.p_text_mask:
        return LABELING_PITCH_ONLY
    if u < training.p_text_mask + training.p_both_mask:
        return LABELING_NONE
    if u < training.p_text_mask + training.p_both_mask + training.p_pitch_mask:
        return LABELING_TEXT_ONLY
    return LABELING_FULL


def assemble_batch(items: list[DataItem], training: TrainingSection,
                   audio: AudioSection, rng: np.random.Generator) -> Batch:
    """Pad items to a common length and apply the masking policy."""
    if not items:
        raise DatasetError("cannot assemble an empty batch")
    t_max = max(item.mel.shape[1] for item in items)
    b = len(items)
    mels = np.zeros((b, audio.n_mels, t_max), dtype=np.float32)
    phoneme_ids = np.full((b, t_max), UNKNOWN_PHONEME_ID, dtype=np.int64)
    pitch_ids = np.full((b, t_max), UNKNOWN_PITCH_ID, dtype=np.int64)
    speaker_ids = np.zeros(b, dtype=np.int64)
    frame_mask = np.zeros((b, t_max), dtype=bool)
    for row, item in enumerate(items):
        target = draw_masking(item.labeling, training, rng)
        fc = item.fc if target == LABELING_FULL else mask_conditions(item.fc, target)
        t = item.mel.shape[1]
        mels[row, :, :t] = normalize_mel(item.mel, audio)
        phoneme_ids[row, :t] = fc.phoneme_ids
        pitch_ids[row, :t] = fc.pitch_ids
        speaker_ids[row] = fc.speaker_id
        frame_mask[row, :t] = True
    return Batch(mels=mels, phoneme_ids=phoneme_ids, pitch_ids=pitch_ids,
                 speaker_ids=speaker_ids, frame_mask=frame_mask)
