"""Guided reverse-process sampling of mel-spectrograms.

Draws a terminal prior sample the size of the requested conditions,
walks the reverse process with the guided score at every step, and maps
the result back from the diffusion state space to a log-mel matrix.
Condition embeddings are encoded once per variant up front; the network
itself is deterministic, so the whole sample is a pure function of
(conditions, parameters, configs, seed).
"""

from __future__ import annotations

import numpy as np

from .config import AudioSection, GuidanceSection, SamplerSection
from .dataset import denormalize_mel
from .diffusion import (NoiseSchedule, SamplerConfig, reverse_step,
                        sample_prior, time_grid)
from .guidance import GuidanceConfig, encode_variants, guided_score, score_triple_from
from .labels import FrameConditions
from .model import ModelParams

__all__ = ["SynthError", "sample", "sample_metadata"]


class SynthError(ValueError):
    """Invalid sampling request."""


def _guidance_config(g: GuidanceSection) -> GuidanceConfig:
    return GuidanceConfig(mode=g.mode, w1=g.w1, w2=g.w2,
                          norm_based=g.norm_based, eps_norm=g.eps_norm)


def sample(fc: FrameConditions, params: ModelParams, guidance: GuidanceSection,
           sampler: SamplerSection, audio: AudioSection,
           sched: NoiseSchedule, seed: int | None = None) -> np.ndarray:
    """Generate one (n_mels, n_frames) log-mel matrix for the conditions.

    seed overrides sampler.seed when given, so one config can drive many
    independent draws.
    """
    if fc.n_frames < 1:
        raise SynthError("conditions cover no frames")
    if params.config.n_mels != audio.n_mels:
        raise SynthError(
            f"model works in {params.config.n_mels} mel bins, config says {audio.n_mels}")
    g = _guidance_config(guidance)
    run_seed = sampler.seed if seed is None else seed
    rng = np.random.default_rng(run_seed)
    x = sample_prior((audio.n_mels, fc.n_frames), rng)
    embeddings = encode_variants(fc, params, g.mode)
    cfg = SamplerConfig(n_steps=sampler.n_steps, kind=sampler.kind, seed=run_seed)
    grid = time_grid(cfg.n_steps, cfg.t_min)
    for i in range(cfg.n_steps):
        t = float(grid[i])
        dt = float(grid[i] - grid[i + 1])
        triple = score_triple_from(x, embeddings, t, params, sched=sched)
        x = reverse_step(x, guided_score(triple, g), t, dt, sched, cfg.kind, rng)
    return denormalize_mel(x.astype(np.float32), audio)


def sample_metadata(fc: FrameConditions, guidance: GuidanceSection,
                    sampler: SamplerSection, config_hash: str,
                    seed: int | None = None) -> dict:
    """Sidecar values that pin down how a sample was produced."""
    return {
        "config_hash": config_hash,
        "seed": sampler.seed if seed is None else seed,
        "n_steps": sampler.n_steps,
        "kind": sampler.kind,
        "mode": guidance.mode,
        "w1": guidance.w1,
        "w2": guidance.w2,
        "norm_based": guidance.norm_based,
        "eps_norm": guidance.eps_norm,
        "n_frames": fc.n_frames,
        "speaker_id": fc.speaker_id,
    }
