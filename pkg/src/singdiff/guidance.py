"""Classifier-free guidance algebra over score-estimator evaluations.

One jointly trained estimator is evaluated at masked variants of the same
conditioning (full, pitch-only or text-only, unconditional); this module
combines those evaluations into the guided total score used by each
reverse step. All functions are pure numpy and shape-agnostic: vectors
from the analytic oracle and 80 x T mel matrices go through the same code.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "MODE_NONE",
    "MODE_SINGLE",
    "MODE_DUAL_PITCH_ANCHORED",
    "MODE_DUAL_TEXT_ANCHORED",
    "GUIDANCE_MODES",
    "DEFAULT_W1",
    "DEFAULT_W2",
    "DEFAULT_EPS_NORM",
    "GuidanceError",
    "GuidanceConfig",
    "ScoreTriple",
    "norm_scale",
    "guided_score",
    "condition_variants",
    "encode_variants",
    "score_triple_from",
    "evaluate_triple",
]

MODE_NONE = "none"
MODE_SINGLE = "single"
MODE_DUAL_PITCH_ANCHORED = "dual_pitch_anchored"
MODE_DUAL_TEXT_ANCHORED = "dual_text_anchored"
GUIDANCE_MODES = (
    MODE_NONE,
    MODE_SINGLE,
    MODE_DUAL_PITCH_ANCHORED,
    MODE_DUAL_TEXT_ANCHORED,
)

DEFAULT_W1 = 0.2
DEFAULT_W2 = 0.02
DEFAULT_EPS_NORM = 1e-8


class GuidanceError(ValueError):
    """Invalid guidance configuration or incomplete score triple."""


@dataclass(frozen=True)
class GuidanceConfig:
    """Guidance mode and weights.

    w1 weights the text-guidance delta (the only weight in single mode);
    w2 weights the pitch-guidance delta. With norm_based on, each delta is
    rescaled so its norm matches the conditional score's norm before the
    weight is applied.
    """

    mode: str = MODE_DUAL_PITCH_ANCHORED
    w1: float = DEFAULT_W1
    w2: float = DEFAULT_W2
    norm_based: bool = True
    eps_norm: float = DEFAULT_EPS_NORM

    def __post_init__(self):
        if self.mode not in GUIDANCE_MODES:
            raise GuidanceError(f"unknown guidance mode {self.mode!r}")
        if self.w1 < 0 or self.w2 < 0:
            raise GuidanceError("guidance weights must be nonnegative")
        if self.eps_norm <= 0:
            raise GuidanceError("eps_norm must be positive")


@dataclass(frozen=True)
class ScoreTriple:
    """Score-estimator outputs at masked variants of one conditioning.

    Members not needed by the active mode may be left as None.
    """

    s_full: np.ndarray
    s_pitch_only: np.ndarray | None = None
    s_uncond: np.ndarray | None = None
    s_text_only: np.ndarray | None = None


def norm_scale(anchor: np.ndarray, delta: np.ndarray,
               eps_norm: float = DEFAULT_EPS_NORM) -> float:
    """Scale factor making ``norm(alpha * delta)`` equal ``norm(anchor)``.

    Frobenius norms over the whole array. The eps_norm floor keeps the
    ratio finite when delta vanishes.
    """
    anchor = np.asarray(anchor)
    delta = np.asarray(delta)
    if anchor.shape != delta.shape:
        raise GuidanceError(
            f"shape mismatch: anchor {anchor.shape} vs delta {delta.shape}"
        )
    anchor_norm = float(np.linalg.norm(anchor.reshape(-1)))
    delta_norm = float(np.linalg.norm(delta.reshape(-1)))
    return anchor_norm / max(delta_norm, eps_norm)


def _require(member: np.ndarray | None, name: str, mode: str) -> np.ndarray:
    if member is None:
        raise GuidanceError(f"mode {mode!r} requires triple member {name}")
    return np.asarray(member)


def guided_score(triple: ScoreTriple, g: GuidanceConfig) -> np.ndarray:
    """Combine a score triple into the guided total score.

    none: the conditional score unchanged. single: one delta against the
    unconditional score. The dual modes split that delta through an
    intermediate condition state (pitch-only or text-only) and weight the
    two parts independently. Guidance is always added on top of the
    conditional score; with norm_based on, each delta's scale factor is
    recomputed from the current scores, so it varies over reverse time.
    """
    s_full = np.asarray(triple.s_full)
    if g.mode == MODE_NONE or (g.w1 == 0.0 and g.w2 == 0.0):
        # Short-circuit keeps zero-weight guidance bit-identical to none.
        return s_full

    if g.mode == MODE_SINGLE:
        s_uncond = _require(triple.s_uncond, "s_uncond", g.mode)
        delta = s_full - s_uncond
        alpha = norm_scale(s_full, delta, g.eps_norm) if g.norm_based else 1.0
        return s_full + alpha * g.w1 * delta

    if g.mode == MODE_DUAL_PITCH_ANCHORED:
        mid = _require(triple.s_pitch_only, "s_pitch_only", g.mode)
    else:
        mid = _require(triple.s_text_only, "s_text_only", g.mode)
    s_uncond = _require(triple.s_uncond, "s_uncond", g.mode)

    delta1 = s_full - mid
    delta2 = mid - s_uncond
    if g.norm_based:
        alpha1 = norm_scale(s_full, delta1, g.eps_norm)
        alpha2 = norm_scale(s_full, delta2, g.eps_norm)
    else:
        alpha1 = alpha2 = 1.0
    return s_full + alpha1 * g.w1 * delta1 + alpha2 * g.w2 * delta2


def condition_variants(fc, mode: str) -> dict:
    """Masked condition states the mode reads, keyed by triple member name.

    The embeddings for these states are step-independent, so samplers
    encode them once and reuse them at every reverse step.
    """
    from .labels import LABELING_NONE, LABELING_PITCH_ONLY, LABELING_TEXT_ONLY, mask_conditions

    if mode not in GUIDANCE_MODES:
        raise GuidanceError(f"unknown guidance mode {mode!r}")
    variants = {"s_full": fc}
    if mode == MODE_NONE:
        return variants
    variants["s_uncond"] = mask_conditions(fc, LABELING_NONE)
    if mode == MODE_DUAL_PITCH_ANCHORED:
        variants["s_pitch_only"] = mask_conditions(fc, LABELING_PITCH_ONLY)
    elif mode == MODE_DUAL_TEXT_ANCHORED:
        variants["s_text_only"] = mask_conditions(fc, LABELING_TEXT_ONLY)
    return variants


def encode_variants(fc, params, mode: str) -> dict:
    """Encode each condition variant once for reuse across reverse steps."""
    from .model import encode_conditions

    return {name: encode_conditions(variant, params)
            for name, variant in condition_variants(fc, mode).items()}


def score_triple_from(x_t: np.ndarray, embeddings: dict, t: float, params,
                      sched=None) -> ScoreTriple:
    """Run the estimator at pre-encoded variants; see evaluate_triple."""
    from .model import estimate_score

    members = {name: estimate_score(x_t, emb, t, params, sched=sched)
               for name, emb in embeddings.items()}
    return ScoreTriple(**members)


def evaluate_triple(x_t: np.ndarray, fc, t: float, params, mode: str,
                    sched=None) -> ScoreTriple:
    """Evaluate the estimator at the condition variants the mode needs.

    Encodes the conditions, their pitch-only (or text-only) masking, and
    the fully unlabeled masking, then runs the score estimator at each;
    variants the mode never reads are skipped. Model forwards are
    deterministic, so skipping them does not perturb any sampler RNG
    stream.
    """
    return score_triple_from(x_t, encode_variants(fc, params, mode), t,
                             params, sched=sched)
