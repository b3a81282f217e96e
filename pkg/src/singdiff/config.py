"""Run configuration: a flat key-value file driving the whole pipeline.

Every pipeline stage reads one RunConfig. Keys are dotted
``section.field`` pairs, one per line, with ``#`` comments. Unknown keys
are errors so a typo cannot silently fall back to a default. Missing
keys take the documented defaults, so a config file only needs to state
what it changes.

The compatibility hash covers the audio, model, and schedule sections,
the parts that determine whether a checkpoint, a mel binary, and a
sampler can be mixed. Training, guidance, sampler, and path settings may
differ between runs that share artifacts.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, fields
from pathlib import Path

from .guidance import GUIDANCE_MODES, MODE_DUAL_PITCH_ANCHORED
from .model import ModelConfig

__all__ = [
    "ConfigError",
    "AudioSection",
    "ScheduleSection",
    "TrainingSection",
    "GuidanceSection",
    "SamplerSection",
    "PathsSection",
    "RunConfig",
    "format_config",
    "parse_config",
    "load_config",
    "save_config",
    "config_hash",
]

SAMPLER_KINDS = ("sde", "ode")


class ConfigError(ValueError):
    """Malformed, unknown, or out-of-range configuration."""


@dataclass(frozen=True)
class AudioSection:
    sample_rate: int = 22050
    n_fft: int = 1024
    hop: int = 256
    n_mels: int = 80
    # affine map between log-mel values and the diffusion state space;
    # state = (mel - mel_shift) / mel_scale lands roughly in [-2.4, 3]
    mel_shift: float = -5.5
    mel_scale: float = 2.5

    def __post_init__(self):
        for name in ("sample_rate", "n_fft", "hop", "n_mels"):
            if getattr(self, name) < 1:
                raise ConfigError(f"audio.{name} must be >= 1")
        if self.mel_scale <= 0:
            raise ConfigError("audio.mel_scale must be positive")


@dataclass(frozen=True)
class ScheduleSection:
    beta_0: float = 0.05
    beta_1: float = 20.0
    t_min: float = 1e-4

    def __post_init__(self):
        if not 0 < self.beta_0 < self.beta_1:
            raise ConfigError("schedule requires 0 < beta_0 < beta_1")
        if not 0 < self.t_min < 1:
            raise ConfigError("schedule.t_min must lie in (0, 1)")


@dataclass(frozen=True)
class TrainingSection:
    batch: int = 8
    lr: float = 1e-4
    steps: int = 2000
    # per labeled item: drop text with p_text_mask, drop everything with
    # p_both_mask, drop pitch with p_pitch_mask, else keep full labels
    p_text_mask: float = 0.1
    p_both_mask: float = 0.1
    p_pitch_mask: float = 0.0
    log_every: int = 50
    checkpoint_every: int = 500

    def __post_init__(self):
        for name in ("batch", "steps", "log_every", "checkpoint_every"):
            if getattr(self, name) < 1:
                raise ConfigError(f"training.{name} must be >= 1")
        if self.lr <= 0:
            raise ConfigError("training.lr must be positive")
        probs = (self.p_text_mask, self.p_both_mask, self.p_pitch_mask)
        if any(p < 0 or p > 1 for p in probs):
            raise ConfigError("mask probabilities must lie in [0, 1]")
        if sum(probs) > 1:
            raise ConfigError("mask probabilities must sum to at most 1")


@dataclass(frozen=True)
class GuidanceSection:
    mode: str = MODE_DUAL_PITCH_ANCHORED
    w1: float = 0.2
    w2: float = 0.02
    norm_based: bool = True
    eps_norm: float = 1e-8

    def __post_init__(self):
        if self.mode not in GUIDANCE_MODES:
            raise ConfigError(f"guidance.mode must be one of {GUIDANCE_MODES}")
        if self.eps_norm <= 0:
            raise ConfigError("guidance.eps_norm must be positive")


@dataclass(frozen=True)
class SamplerSection:
    n_steps: int = 200
    kind: str = "sde"
    seed: int = 0

    def __post_init__(self):
        if self.n_steps < 1:
            raise ConfigError("sampler.n_steps must be >= 1")
        if self.kind not in SAMPLER_KINDS:
            raise ConfigError(f"sampler.kind must be one of {SAMPLER_KINDS}")
        if self.seed < 0:
            raise ConfigError("sampler.seed must be non-negative")


@dataclass(frozen=True)
class PathsSection:
    data_dir: str = "data"
    run_dir: str = "runs"

    def __post_init__(self):
        if not self.data_dir or not self.run_dir:
            raise ConfigError("paths must be non-empty")


@dataclass(frozen=True)
class RunConfig:
    audio: AudioSection = field(default_factory=AudioSection)
    model: ModelConfig = field(default_factory=ModelConfig)
    schedule: ScheduleSection = field(default_factory=ScheduleSection)
    training: TrainingSection = field(default_factory=TrainingSection)
    guidance: GuidanceSection = field(default_factory=GuidanceSection)
    sampler: SamplerSection = field(default_factory=SamplerSection)
    paths: PathsSection = field(default_factory=PathsSection)


_SECTION_NAMES = ("audio", "model", "schedule", "training", "guidance",
                  "sampler", "paths")
_HASH_SECTIONS = ("audio", "model", "schedule")


def _format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    return repr(value) if isinstance(value, float) else str(value)


def _parse_value(raw: str, default, key: str):
    try:
        if isinstance(default, bool):
            if raw not in ("true", "false"):
                raise ValueError
            return raw == "true"
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            return tuple(int(v) for v in raw.split(","))
        return raw
    except ValueError:
        raise ConfigError(
            f"cannot parse {key} = {raw!r} as {type(default).__name__}") from None


def format_config(cfg: RunConfig, sections: tuple[str, ...] = _SECTION_NAMES) -> str:
    lines = []
    for section_name in sections:
        section = getattr(cfg, section_name)
        for f in fields(section):
            value = getattr(section, f.name)
            lines.append(f"{section_name}.{f.name} = {_format_value(value)}")
    return "\n".join(lines) + "\n"


def parse_config(text: str) -> RunConfig:
    defaults = RunConfig()
    overrides: dict[str, dict[str, object]] = {n: {} for n in _SECTION_NAMES}
    seen: set[str] = set()
    for lineno, raw_line in enumerate(text.splitlines(), start=1):
        line = raw_line.split("#", 1)[0].strip()
        if not line:
            continue
        key, eq, raw = line.partition("=")
        if not eq:
            raise ConfigError(f"line {lineno}: expected 'section.key = value'")
        key = key.strip()
        raw = raw.strip()
        section_name, dot, field_name = key.partition(".")
        if not dot or section_name not in _SECTION_NAMES:
            raise ConfigError(f"unknown config key: {key}")
        section_default = getattr(defaults, section_name)
        names = {f.name for f in fields(section_default)}
        if field_name not in names:
            raise ConfigError(f"unknown config key: {key}")
        if key in seen:
            raise ConfigError(f"duplicate config key: {key}")
        seen.add(key)
        default = getattr(section_default, field_name)
        overrides[section_name][field_name] = _parse_value(raw, default, key)

    kwargs = {}
    for section_name in _SECTION_NAMES:
        section_default = getattr(defaults, section_name)
        kwargs[section_name] = type(section_default)(
            **{f.name: overrides[section_name].get(f.name, getattr(section_default, f.name))
               for f in fields(section_default)})
    return RunConfig(**kwargs)


def load_config(path: str | Path) -> RunConfig:
    return parse_config(Path(path).read_text(encoding="utf-8"))


def save_config(cfg: RunConfig, path: str | Path) -> None:
    Path(path).write_text(format_config(cfg), encoding="utf-8")


def config_hash(cfg: RunConfig) -> str:
    """Hex digest over the artifact-compatibility sections only."""
    text = format_config(cfg, sections=_HASH_SECTIONS)
    return hashlib.sha256(text.encode("utf-8")).hexdigest()
