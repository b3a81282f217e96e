"""Korean syllable decomposition and the phoneme ID inventory.

A precomposed Hangul syllable (U+AC00..U+D7A3) factors arithmetically into
an onset, a nucleus, and an optional coda. Each jamo gets a slot in a flat
phoneme ID space, followed by two control symbols: SILENCE for frames
outside any note and UNKNOWN for masked or unlabeled text.
"""

from __future__ import annotations

from dataclasses import dataclass

HANGUL_BASE = 0xAC00
HANGUL_LAST = 0xD7A3

N_ONSETS = 19
N_NUCLEI = 21
N_CODAS = 27  # nonzero coda indices 1..27; 0 means absent

# Flat phoneme ID layout: onsets, nuclei, codas, then control symbols.
ONSET_OFFSET = 0
NUCLEUS_OFFSET = N_ONSETS
CODA_OFFSET = N_ONSETS + N_NUCLEI
SILENCE_ID = N_ONSETS + N_NUCLEI + N_CODAS
UNKNOWN_PHONEME_ID = SILENCE_ID + 1
PHONEME_VOCAB_SIZE = UNKNOWN_PHONEME_ID + 1


class HangulError(ValueError):
    """Raised for codepoints outside the precomposed Hangul block."""


@dataclass(frozen=True)
class PhonemeTriple:
    """Jamo indices of one syllable: onset 0..18, nucleus 0..20, coda 1..27 or None."""

    onset: int
    nucleus: int
    coda: int | None


def decompose_hangul(syllable: str) -> PhonemeTriple:
    """Split a precomposed Hangul syllable into its jamo indices.

    Raises HangulError for anything outside U+AC00..U+D7A3.
    """
    if len(syllable) != 1:
        raise HangulError(f"expected a single codepoint, got {syllable!r}")
    cp = ord(syllable)
    if not HANGUL_BASE <= cp <= HANGUL_LAST:
        raise HangulError(f"U+{cp:04X} is not a precomposed Hangul syllable")
    offset = cp - HANGUL_BASE
    onset = offset // 588
    nucleus = (offset % 588) // 28
    coda = offset % 28
    return PhonemeTriple(onset, nucleus, coda if coda else None)


def compose_hangul(triple: PhonemeTriple) -> str:
    """Inverse of decompose_hangul."""
    coda = triple.coda or 0
    if not (0 <= triple.onset < N_ONSETS and 0 <= triple.nucleus < N_NUCLEI and 0 <= coda <= N_CODAS):
        raise HangulError(f"jamo indices out of range: {triple}")
    return chr(HANGUL_BASE + 588 * triple.onset + 28 * triple.nucleus + coda)


def phoneme_ids(triple: PhonemeTriple) -> tuple[int, int, int | None]:
    """Map a jamo triple into the flat phoneme ID space."""
    onset_id = ONSET_OFFSET + triple.onset
    nucleus_id = NUCLEUS_OFFSET + triple.nucleus
    coda_id = CODA_OFFSET + (triple.coda - 1) if triple.coda is not None else None
    return onset_id, nucleus_id, coda_id
