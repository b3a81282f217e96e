"""End-to-end pipeline operations: prepare, train, sample, eval, check.

Each operation takes a RunConfig plus filesystem locations and returns a
plain result object; the service layer and the command line are thin
shells over these functions. Every artifact a stage writes embeds the
config's compatibility hash, and every stage that consumes artifacts
refuses a hash it did not expect, so mixed-up runs fail loudly instead
of producing silently wrong output.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .audio import (HOP, N_FFT, N_MELS, SAMPLE_RATE, AudioError, load_wav,
                    mel_spectrogram, save_mel, load_mel)
from .config import RunConfig, config_hash
from .corpus import CorpusError, label_frame_count, render_quantized
from .dataset import (DatasetError, Manifest, ManifestItem, assemble_batch,
                      load_items, read_manifest, save_conditions,
                      write_manifest)
from .diffusion import NoiseSchedule
from .hangul import UNKNOWN_PHONEME_ID
from .labels import (FrameConditions, LABELING_FULL, LABELING_NONE,
                     LabelError, UNKNOWN_PITCH_ID, expand_labels,
                     parse_label_file)
from .metrics import EvalReport, evaluate_segments, mel_to_f0
from .model import (ModelParams, TrainingError, init_params, load_checkpoint,
                    save_checkpoint, train_step)
from .oracle import (ORACLE_THRESHOLDS, default_test_oracle, identities_pass,
                     verify_guidance_identities)
from .synth import sample as synth_sample
from .synth import sample_metadata

__all__ = [
    "PipelineError",
    "PrepareResult",
    "TrainResult",
    "SampleResult",
    "OracleCheckResult",
    "run_prepare",
    "run_train",
    "run_sample",
    "run_eval",
    "run_oracle_check",
]

logger = logging.getLogger("singdiff.pipeline")

# fraction of corpus items allowed to fail preparation before the whole
# run counts as failed
PREPARE_FAILURE_BUDGET = 0.10


class PipelineError(ValueError):
    """Inputs that a pipeline stage refuses to work with."""


def _check_audio_section(cfg: RunConfig) -> None:
    # analysis parameters are compiled into the feature extractor; a
    # config asking for different ones would silently mislabel artifacts
    expected = {"sample_rate": SAMPLE_RATE, "n_fft": N_FFT, "hop": HOP,
                "n_mels": N_MELS}
    for name, value in expected.items():
        have = getattr(cfg.audio, name)
        if have != value:
            raise PipelineError(
                f"audio.{name} = {have} unsupported; the feature extractor "
                f"is built for {value}")


def _schedule(cfg: RunConfig) -> NoiseSchedule:
    return NoiseSchedule(beta_0=cfg.schedule.beta_0, beta_1=cfg.schedule.beta_1)


@dataclass(frozen=True)
class PrepareResult:
    manifest: Manifest
    out_dir: Path
    failures: tuple[str, ...]

    @property
    def n_items(self) -> int:
        return len(self.manifest.items)

    @property
    def failed_fraction(self) -> float:
        total = self.n_items + len(self.failures)
        return len(self.failures) / total if total else 0.0

    @property
    def ok(self) -> bool:
        return self.n_items > 0 and self.failed_fraction <= PREPARE_FAILURE_BUDGET


def run_prepare(cfg: RunConfig, corpus_dir: str | Path,
                out_dir: str | Path) -> PrepareResult:
    """Turn a directory of label files (+ optional audio) into a dataset.

    Items with audio are analyzed as-is; fully labeled items without
    audio are rendered from their own score. Unlabeled items get an
    all-unknown condition track sized to their audio, since no alignment
    is known for them. Unparseable items are skipped and reported.
    """
    _check_audio_section(cfg)
    corpus_dir = Path(corpus_dir)
    out_dir = Path(out_dir)
    if not corpus_dir.is_dir():
        raise PipelineError(f"corpus directory {corpus_dir} does not exist")
    lab_paths = sorted(corpus_dir.glob("*.lab"))
    if not lab_paths:
        raise PipelineError(f"no label files under {corpus_dir}")
    out_dir.mkdir(parents=True, exist_ok=True)

    items: list[ManifestItem] = []
    failures: list[str] = []
    for lab_path in lab_paths:
        stem = lab_path.stem
        try:
            label = parse_label_file(lab_path.read_bytes())
            wav_path = lab_path.with_suffix(".wav")
            if wav_path.exists():
                waveform = load_wav(wav_path)
            elif label.labeling == LABELING_FULL:
                waveform = render_quantized(label)
            else:
                raise PipelineError(
                    f"labeling {label.labeling!r} without audio cannot be prepared")
            mel = mel_spectrogram(waveform)
            total_frames = mel.shape[1]
            if label.labeling == LABELING_NONE:
                fc = FrameConditions(
                    phoneme_ids=np.full(total_frames, UNKNOWN_PHONEME_ID, dtype=np.int64),
                    pitch_ids=np.full(total_frames, UNKNOWN_PITCH_ID, dtype=np.int64),
                    speaker_id=label.speaker_id)
            else:
                fc = expand_labels(label, total_frames, SAMPLE_RATE, HOP)
        except (LabelError, AudioError, CorpusError, PipelineError) as exc:
            failures.append(f"{stem}: {exc}")
            logger.warning("skipping %s: %s", stem, exc)
            continue
        save_mel(mel, out_dir / f"{stem}.mel")
        save_conditions(fc, out_dir / f"{stem}.cond.json")
        items.append(ManifestItem(stem=stem, labeling=label.labeling,
                                  n_frames=total_frames))

    manifest = Manifest(config_hash=config_hash(cfg), items=tuple(items))
    write_manifest(manifest, out_dir)
    logger.info("prepared %d items (%d failed) into %s",
                len(items), len(failures), out_dir)
    return PrepareResult(manifest=manifest, out_dir=out_dir,
                         failures=tuple(failures))


@dataclass(frozen=True)
class TrainResult:
    params: ModelParams
    losses: tuple[float, ...]
    checkpoints: tuple[Path, ...]
    loss_log: Path


def run_train(cfg: RunConfig, data_dir: str | Path, run_dir: str | Path,
              seed: int = 0) -> TrainResult:
    """Train the score estimator on a prepared dataset.

    The whole run is a deterministic function of (config, dataset, seed):
    item picks, masking draws, and the per-step torch seeds all come from
    one seeded generator.
    """
    data_dir = Path(data_dir)
    run_dir = Path(run_dir)
    manifest = read_manifest(data_dir)
    expected = config_hash(cfg)
    if manifest.config_hash != expected:
        raise PipelineError(
            f"dataset was prepared under config hash {manifest.config_hash} "
            f"but this run has {expected}; re-run preparation")
    if not manifest.items:
        raise PipelineError("manifest lists no items")
    items = load_items(data_dir, manifest)
    run_dir.mkdir(parents=True, exist_ok=True)

    sched = _schedule(cfg)
    params = init_params(cfg.model, seed=seed, config_hash=expected)
    rng = np.random.default_rng([seed, 0x7A12])
    training = cfg.training
    losses: list[float] = []
    checkpoints: list[Path] = []
    for step in range(1, training.steps + 1):
        picks = rng.integers(0, len(items), size=min(training.batch, len(items)))
        batch = assemble_batch([items[i] for i in picks], training, cfg.audio, rng)
        torch_seed = int(rng.integers(0, 2**31 - 1))
        params, loss = train_step(params, batch, rng_seed=torch_seed,
                                  lr=training.lr, sched=sched,
                                  t_min=cfg.schedule.t_min)
        if not math.isfinite(loss):
            raise TrainingError(
                f"non-finite loss {loss} at step {step} "
                f"(batch items {[items[i].stem for i in picks]})")
        losses.append(loss)
        if step % training.log_every == 0:
            logger.info("step %d/%d loss %.5f", step, training.steps, loss)
        if step % training.checkpoint_every == 0 or step == training.steps:
            path = run_dir / f"checkpoint_{step:06d}.ckpt"
            save_checkpoint(params, path)
            checkpoints.append(path)

    loss_log = run_dir / "loss_log.txt"
    loss_log.write_text(
        "".join(f"{i + 1} {value!r}\n" for i, value in enumerate(losses)),
        encoding="utf-8")
    return TrainResult(params=params, losses=tuple(losses),
                       checkpoints=tuple(checkpoints), loss_log=loss_log)


@dataclass(frozen=True)
class SampleResult:
    mel_path: Path
    meta_path: Path
    n_frames: int


def run_sample(cfg: RunConfig, checkpoint: str | Path, label_path: str | Path,
               out_dir: str | Path, seed: int | None = None) -> SampleResult:
    """Sample a mel for one label file using a compatible checkpoint."""
    _check_audio_section(cfg)
    params = load_checkpoint(checkpoint, expect_hash=config_hash(cfg))
    label_path = Path(label_path)
    label = parse_label_file(label_path.read_bytes())
    total_frames = label_frame_count(label, SAMPLE_RATE, HOP)
    fc = expand_labels(label, total_frames, SAMPLE_RATE, HOP)

    mel = synth_sample(fc, params, cfg.guidance, cfg.sampler, cfg.audio,
                       _schedule(cfg), seed=seed)
    meta = sample_metadata(fc, cfg.guidance, cfg.sampler,
                           config_hash=config_hash(cfg), seed=seed)

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    mel_path = out_dir / f"{label_path.stem}.mel"
    meta_path = out_dir / f"{label_path.stem}.meta.json"
    save_mel(mel, mel_path)
    meta_path.write_text(json.dumps(meta, sort_keys=True) + "\n",
                         encoding="utf-8")
    return SampleResult(mel_path=mel_path, meta_path=meta_path,
                        n_frames=total_frames)


def run_eval(cfg: RunConfig, ref_dir: str | Path,
             gen_dir: str | Path) -> EvalReport:
    """Compare generated mels against references by matching file stem."""
    _check_audio_section(cfg)
    ref_dir = Path(ref_dir)
    gen_dir = Path(gen_dir)
    ref_stems = {p.stem for p in ref_dir.glob("*.mel")}
    gen_stems = {p.stem for p in gen_dir.glob("*.mel")}
    if not ref_stems:
        raise PipelineError(f"no mel files under {ref_dir}")
    if ref_stems != gen_stems:
        missing = sorted(ref_stems - gen_stems)
        extra = sorted(gen_stems - ref_stems)
        raise PipelineError(
            f"ref and gen sets differ; missing from gen: {missing}, "
            f"only in gen: {extra}")
    pairs = []
    for stem in sorted(ref_stems):
        ref_f0 = mel_to_f0(load_mel(ref_dir / f"{stem}.mel"))
        gen_f0 = mel_to_f0(load_mel(gen_dir / f"{stem}.mel"))
        pairs.append((stem, ref_f0, gen_f0))
    return evaluate_segments(pairs)


@dataclass(frozen=True)
class OracleCheckResult:
    report: dict[str, float]
    thresholds: dict[str, float]
    passed: bool

    def format_text(self) -> str:
        lines = []
        for key, bound in self.thresholds.items():
            value = self.report[key]
            verdict = "ok" if value <= bound else "FAIL"
            lines.append(f"{key} = {value:.3e} (bound {bound:.0e}) {verdict}")
        lines.append(f"result = {'pass' if self.passed else 'fail'}")
        return "\n".join(lines) + "\n"


def run_oracle_check(cfg: RunConfig, n_points: int = 1000,
                     seed: int = 0) -> OracleCheckResult:
    """Check the guidance algebra against the analytic oracle."""
    oracle = default_test_oracle(_schedule(cfg))
    report = verify_guidance_identities(oracle, n_points=n_points, seed=seed)
    return OracleCheckResult(report=report, thresholds=dict(ORACLE_THRESHOLDS),
                             passed=identities_pass(report))
