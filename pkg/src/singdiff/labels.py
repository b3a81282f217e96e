"""Score labels: parsing, frame alignment, and frame-level condition sequences.

A score label is a sorted, non-overlapping sequence of notes, each carrying
a pitch (MIDI number or unknown) and a syllable (Hangul or unknown), plus a
speaker ID and a labeling mode. Expansion turns it into per-frame phoneme
and pitch ID sequences; masking replaces labeled content with UNKNOWN
symbols while keeping the silence/rest structure intact.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, replace

import numpy as np

from .hangul import (
    SILENCE_ID,
    UNKNOWN_PHONEME_ID,
    HangulError,
    decompose_hangul,
    phoneme_ids,
)

LABELING_FULL = "full"
LABELING_PITCH_ONLY = "pitch_only"
LABELING_TEXT_ONLY = "text_only"
LABELING_NONE = "none"
LABELINGS = (LABELING_FULL, LABELING_PITCH_ONLY, LABELING_TEXT_ONLY, LABELING_NONE)

# Pitch ID space: MIDI 0..127, then rest (frames outside notes) and unknown.
REST_PITCH_ID = 128
UNKNOWN_PITCH_ID = 129
PITCH_VOCAB_SIZE = 130

MASK_TARGETS = (LABELING_PITCH_ONLY, LABELING_TEXT_ONLY, LABELING_NONE)


class LabelError(ValueError):
    """Malformed label document or invariant violation, naming the note where known."""


class AlignmentError(ValueError):
    """A note's frame span does not fit into the requested frame count."""


@dataclass(frozen=True)
class Note:
    """One note: [start_sec, end_sec) with pitch and syllable, None meaning unknown."""

    start_sec: float
    end_sec: float
    pitch: int | None
    syllable: str | None


@dataclass(frozen=True)
class ScoreLabel:
    notes: tuple[Note, ...]
    speaker_id: int
    labeling: str


@dataclass(frozen=True)
class FrameConditions:
    """Frame-aligned phoneme and pitch ID sequences plus the speaker ID."""

    phoneme_ids: np.ndarray
    pitch_ids: np.ndarray
    speaker_id: int

    @property
    def n_frames(self) -> int:
        return int(self.phoneme_ids.shape[0])

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, FrameConditions):
            return NotImplemented
        return (
            self.speaker_id == other.speaker_id
            and np.array_equal(self.phoneme_ids, other.phoneme_ids)
            and np.array_equal(self.pitch_ids, other.pitch_ids)
        )

    def to_json(self) -> str:
        return json.dumps(
            {
                "speaker_id": self.speaker_id,
                "n_frames": self.n_frames,
                "phoneme_ids": self.phoneme_ids.tolist(),
                "pitch_ids": self.pitch_ids.tolist(),
            },
            sort_keys=True,
        )

    @classmethod
    def from_json(cls, text: str) -> "FrameConditions":
        obj = json.loads(text)
        fc = cls(
            phoneme_ids=np.asarray(obj["phoneme_ids"], dtype=np.int64),
            pitch_ids=np.asarray(obj["pitch_ids"], dtype=np.int64),
            speaker_id=int(obj["speaker_id"]),
        )
        if fc.n_frames != obj["n_frames"] or fc.pitch_ids.shape != fc.phoneme_ids.shape:
            raise LabelError("frame condition payload length mismatch")
        return fc


def _parse_header_line(line: str, header: dict[str, str]) -> None:
    key, _, value = line.partition("=")
    key, value = key.strip(), value.strip()
    if key not in ("version", "speaker", "labeling"):
        raise LabelError(f"unknown header field {key!r}")
    if key in header:
        raise LabelError(f"duplicate header field {key!r}")
    header[key] = value


def _check_note_consistency(index: int, labeling: str, pitch: int | None, syllable: str | None) -> None:
    if labeling == LABELING_FULL and (pitch is None or syllable is None):
        raise LabelError(f"note {index}: labeling=full requires pitch and syllable")
    if labeling in (LABELING_PITCH_ONLY, LABELING_NONE) and syllable is not None:
        raise LabelError(f"note {index}: labeling={labeling} forbids a syllable")
    if labeling in (LABELING_TEXT_ONLY, LABELING_NONE) and pitch is not None:
        raise LabelError(f"note {index}: labeling={labeling} forbids a pitch")
    if labeling == LABELING_PITCH_ONLY and pitch is None:
        raise LabelError(f"note {index}: labeling=pitch_only requires a pitch")
    if labeling == LABELING_TEXT_ONLY and syllable is None:
        raise LabelError(f"note {index}: labeling=text_only requires a syllable")


def parse_label_file(data: bytes) -> ScoreLabel:
    """Parse a UTF-8 label document into a validated ScoreLabel.

    Grammar: header lines ``version=1``, ``speaker=<int>``,
    ``labeling=<full|pitch_only|text_only|none>`` in any order, then one
    whitespace-separated record per note: ``start_sec end_sec pitch
    syllable`` with ``.`` for an absent pitch or syllable. Blank lines and
    ``#`` comments are ignored.
    """
    try:
        text = data.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise LabelError(f"label file is not valid UTF-8: {exc}") from exc

    header: dict[str, str] = {}
    notes: list[Note] = []
    for raw in text.splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" in line and not notes:
            _parse_header_line(line, header)
            continue
        index = len(notes)
        parts = line.split()
        if len(parts) != 4:
            raise LabelError(f"note {index}: expected 4 fields, got {len(parts)}")
        try:
            start_sec, end_sec = float(parts[0]), float(parts[1])
        except ValueError as exc:
            raise LabelError(f"note {index}: bad time field: {exc}") from exc
        pitch: int | None = None
        if parts[2] != ".":
            try:
                pitch = int(parts[2])
            except ValueError as exc:
                raise LabelError(f"note {index}: bad pitch field {parts[2]!r}") from exc
            if not 0 <= pitch <= 127:
                raise LabelError(f"note {index}: pitch {pitch} outside 0..127")
        syllable = None if parts[3] == "." else parts[3]
        if start_sec < 0:
            raise LabelError(f"note {index}: start_sec must be >= 0")
        if end_sec <= start_sec:
            raise LabelError(f"note {index}: end_sec must exceed start_sec")
        if notes and start_sec < notes[-1].end_sec:
            raise LabelError(f"overlap at note {index}")
        notes.append(Note(start_sec, end_sec, pitch, syllable))

    for field in ("version", "speaker", "labeling"):
        if field not in header:
            raise LabelError(f"missing header field {field!r}")
    if header["version"] != "1":
        raise LabelError(f"unsupported version {header['version']!r}")
    try:
        speaker_id = int(header["speaker"])
    except ValueError as exc:
        raise LabelError(f"bad speaker field {header['speaker']!r}") from exc
    if speaker_id < 0:
        raise LabelError("speaker must be >= 0")
    labeling = header["labeling"]
    if labeling not in LABELINGS:
        raise LabelError(f"unknown labeling {labeling!r}")

    for i, note in enumerate(notes):
        if note.syllable is not None:
            try:
                decompose_hangul(note.syllable)
            except HangulError as exc:
                raise LabelError(f"note {i}: {exc}") from exc
        _check_note_consistency(i, labeling, note.pitch, note.syllable)

    return ScoreLabel(tuple(notes), speaker_id, labeling)


def format_label_file(label: ScoreLabel) -> str:
    """Serialize a ScoreLabel back into the text schema (inverse of parsing)."""
    lines = ["version=1", f"speaker={label.speaker_id}", f"labeling={label.labeling}"]
    for note in label.notes:
        pitch = "." if note.pitch is None else str(note.pitch)
        syllable = "." if note.syllable is None else note.syllable
        lines.append(f"{note.start_sec:.6f} {note.end_sec:.6f} {pitch} {syllable}")
    return "\n".join(lines) + "\n"


def note_to_frames(start_sec: float, end_sec: float, sample_rate: int, hop: int) -> tuple[int, int]:
    """Map note times to the half-open mel frame span [f_s, f_e)."""
    if end_sec <= start_sec:
        raise ValueError("end_sec must exceed start_sec")
    if sample_rate <= 0 or hop <= 0:
        raise ValueError("sample_rate and hop must be positive")
    f_s = int(np.floor(start_sec * sample_rate / hop))
    f_e = int(np.floor(end_sec * sample_rate / hop))
    return f_s, f_e


def allocate_frames(n_frames: int, has_coda: bool) -> tuple[int, int, int]:
    """Split a note's frame count into onset, nucleus, and coda lengths.

    Long notes give three frames to the onset and (when present) the coda,
    with the remainder on the nucleus. Short notes scale the consonant
    share down proportionally (max(1, n//4) each) while keeping at least
    one nucleus frame; at n <= 2 the nucleus wins first, then the onset.
    """
    if n_frames < 1:
        raise ValueError("n_frames must be >= 1")
    if has_coda:
        if n_frames >= 7:
            return 3, n_frames - 6, 3
        k = max(1, n_frames // 4)
        if n_frames - 2 * k >= 1:
            return k, n_frames - 2 * k, k
        if n_frames == 2:
            return 1, 1, 0
        return 0, 1, 0
    if n_frames >= 5:
        return 3, n_frames - 3, 0
    k = max(1, n_frames // 4)
    if n_frames - k >= 1:
        return k, n_frames - k, 0
    return 0, 1, 0


def expand_labels(label: ScoreLabel, total_frames: int, sample_rate: int, hop: int) -> FrameConditions:
    """Expand a ScoreLabel into frame-level phoneme and pitch ID sequences.

    Frames outside any note get SILENCE/REST; unknown syllables or pitches
    expand to UNKNOWN on every frame of their note. Notes whose frame span
    rounds to zero length are dropped with a warning.
    """
    if total_frames < 0:
        raise AlignmentError("total_frames must be >= 0")
    phonemes = np.full(total_frames, SILENCE_ID, dtype=np.int64)
    pitches = np.full(total_frames, REST_PITCH_ID, dtype=np.int64)
    for i, note in enumerate(label.notes):
        f_s, f_e = note_to_frames(note.start_sec, note.end_sec, sample_rate, hop)
        if f_e == f_s:
            warnings.warn(f"note {i} spans zero frames and was dropped", stacklevel=2)
            continue
        if f_e > total_frames:
            raise AlignmentError(f"note {i} ends at frame {f_e}, beyond total_frames={total_frames}")
        n = f_e - f_s
        pitches[f_s:f_e] = UNKNOWN_PITCH_ID if note.pitch is None else note.pitch
        if note.syllable is None:
            phonemes[f_s:f_e] = UNKNOWN_PHONEME_ID
            continue
        triple = decompose_hangul(note.syllable)
        onset_id, nucleus_id, coda_id = phoneme_ids(triple)
        onset_len, nucleus_len, coda_len = allocate_frames(n, triple.coda is not None)
        phonemes[f_s : f_s + onset_len] = onset_id
        phonemes[f_s + onset_len : f_s + onset_len + nucleus_len] = nucleus_id
        if coda_len:
            phonemes[f_e - coda_len : f_e] = coda_id
    return FrameConditions(phonemes, pitches, label.speaker_id)


def mask_conditions(fc: FrameConditions, target: str) -> FrameConditions:
    """Return a copy of fc with labeled content replaced by UNKNOWN symbols.

    ``pitch_only`` masks text, ``text_only`` masks pitch, ``none`` masks
    both. Silence/rest frames are structural rather than labeled content,
    so they survive masking; this makes masking commute with expanding the
    same label under the target labeling mode.
    """
    if target not in MASK_TARGETS:
        raise ValueError(f"unknown mask target {target!r}")
    phonemes = fc.phoneme_ids.copy()
    pitches = fc.pitch_ids.copy()
    if target in (LABELING_PITCH_ONLY, LABELING_NONE):
        phonemes[phonemes != SILENCE_ID] = UNKNOWN_PHONEME_ID
    if target in (LABELING_TEXT_ONLY, LABELING_NONE):
        pitches[pitches != REST_PITCH_ID] = UNKNOWN_PITCH_ID
    return FrameConditions(phonemes, pitches, fc.speaker_id)


def strip_label(label: ScoreLabel, labeling: str) -> ScoreLabel:
    """Rewrite a label under a weaker labeling mode, dropping masked fields."""
    if labeling not in LABELINGS:
        raise ValueError(f"unknown labeling {labeling!r}")
    notes = []
    for note in label.notes:
        pitch = note.pitch if labeling in (LABELING_FULL, LABELING_PITCH_ONLY) else None
        syllable = note.syllable if labeling in (LABELING_FULL, LABELING_TEXT_ONLY) else None
        notes.append(replace(note, pitch=pitch, syllable=syllable))
    return ScoreLabel(tuple(notes), label.speaker_id, labeling)
