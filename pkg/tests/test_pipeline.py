"""Pipeline operations over real temp directories."""

import dataclasses
import json

import numpy as np
import pytest

from singdiff.audio import extract_f0, load_mel
from singdiff.config import (AudioSection, RunConfig, SamplerSection,
                             TrainingSection, config_hash)
from singdiff.corpus import label_frame_count, make_corpus, render_reference_sine
from singdiff.dataset import load_conditions, read_manifest
from singdiff.hangul import PhonemeTriple, UNKNOWN_PHONEME_ID, compose_hangul
from singdiff.labels import (LABELING_FULL, LABELING_NONE, Note, ScoreLabel,
                             UNKNOWN_PITCH_ID, format_label_file,
                             parse_label_file)
from singdiff.model import CheckpointError, ModelConfig
from singdiff.pipeline import (OracleCheckResult, PipelineError, run_eval,
                               run_oracle_check, run_prepare, run_sample,
                               run_train)

TINY = ModelConfig(hidden=32, n_blocks=2, n_heads=2, ffn_mult=2, dropout=0.0,
                   prenet_kernel=3, text_dim=16, pitch_dim=12, speaker_dim=8,
                   unet_widths=(8, 16, 32), time_dim=32)
CFG = RunConfig(
    model=TINY,
    training=TrainingSection(batch=2, lr=1e-3, steps=6, log_every=2,
                             checkpoint_every=3),
    sampler=SamplerSection(n_steps=4, kind="sde", seed=1))


@pytest.fixture(scope="module")
def corpus_dir(tmp_path_factory):
    path = tmp_path_factory.mktemp("corpus")
    make_corpus(path, n_items=5, seed=9,
                fractions={LABELING_FULL: 0.6, LABELING_NONE: 0.4})
    return path


@pytest.fixture(scope="module")
def data_dir(tmp_path_factory, corpus_dir):
    path = tmp_path_factory.mktemp("data")
    result = run_prepare(CFG, corpus_dir, path)
    assert result.ok
    return path


@pytest.fixture(scope="module")
def run_dir(tmp_path_factory, data_dir):
    path = tmp_path_factory.mktemp("run")
    run_train(CFG, data_dir, path, seed=0)
    return path


def test_prepare_writes_manifest_with_labeling_counts(data_dir):
    manifest = read_manifest(data_dir)
    assert len(manifest.items) == 5
    assert manifest.labeling_counts() == {LABELING_FULL: 3, LABELING_NONE: 2}
    assert manifest.config_hash == config_hash(CFG)


def test_prepare_writes_coherent_item_files(data_dir):
    manifest = read_manifest(data_dir)
    for item in manifest.items:
        mel = load_mel(data_dir / f"{item.stem}.mel")
        fc = load_conditions(data_dir / f"{item.stem}.cond.json")
        assert mel.shape == (80, item.n_frames)
        assert fc.n_frames == item.n_frames


def test_prepare_unlabeled_items_have_unknown_conditions(data_dir):
    manifest = read_manifest(data_dir)
    none_items = [i for i in manifest.items if i.labeling == LABELING_NONE]
    assert none_items
    for item in none_items:
        fc = load_conditions(data_dir / f"{item.stem}.cond.json")
        assert (fc.phoneme_ids == UNKNOWN_PHONEME_ID).all()
        assert (fc.pitch_ids == UNKNOWN_PITCH_ID).all()


def test_prepare_rerun_is_byte_identical(tmp_path, corpus_dir, data_dir):
    run_prepare(CFG, corpus_dir, tmp_path)
    for path in sorted(data_dir.iterdir()):
        assert (tmp_path / path.name).read_bytes() == path.read_bytes()


def test_prepare_pitch_69_self_check(tmp_path):
    corpus = tmp_path / "corpus"
    corpus.mkdir()
    syllable = compose_hangul(PhonemeTriple(onset=0, nucleus=0, coda=None))
    notes = tuple(Note(start_sec=0.1 * k, end_sec=0.1 * (k + 1), pitch=69,
                       syllable=syllable) for k in range(5))
    label = ScoreLabel(notes=notes, speaker_id=0, labeling=LABELING_FULL)
    (corpus / "item_0000.lab").write_text(format_label_file(label))
    result = run_prepare(CFG, corpus, tmp_path / "data")
    assert result.ok
    fc = load_conditions(tmp_path / "data" / "item_0000.cond.json")
    f0 = extract_f0(render_reference_sine(fc))
    voiced = f0 > 0
    # ignore attack/decay edges where the analysis window straddles silence
    interior = voiced.copy()
    interior[:3] = False
    interior[-3:] = False
    assert interior.sum() >= 10
    ratio = f0[interior] / 440.0
    assert np.all(np.abs(12 * np.log2(ratio)) <= 1.0)


def test_prepare_skips_unparseable_items(tmp_path, corpus_dir):
    corpus = tmp_path / "corpus"
    corpus.mkdir()
    for path in corpus_dir.iterdir():
        (corpus / path.name).write_bytes(path.read_bytes())
    bad = corpus / "item_9999.lab"
    bad.write_text("not a label file\n")
    result = run_prepare(CFG, corpus, tmp_path / "data")
    assert len(result.failures) == 1
    assert "item_9999" in result.failures[0]
    assert result.n_items == 5
    # 1 of 6 failed: above the 10% budget, so the run reports not-ok
    assert not result.ok


def test_prepare_rejects_missing_or_empty_corpus(tmp_path):
    with pytest.raises(PipelineError, match="does not exist"):
        run_prepare(CFG, tmp_path / "nope", tmp_path / "out")
    empty = tmp_path / "empty"
    empty.mkdir()
    with pytest.raises(PipelineError, match="no label files"):
        run_prepare(CFG, empty, tmp_path / "out")


def test_prepare_rejects_unsupported_audio_params(tmp_path, corpus_dir):
    cfg = dataclasses.replace(CFG, audio=AudioSection(hop=128))
    with pytest.raises(PipelineError, match="audio.hop"):
        run_prepare(cfg, corpus_dir, tmp_path)


def test_train_writes_checkpoints_and_loss_log(run_dir):
    ckpts = sorted(run_dir.glob("checkpoint_*.ckpt"))
    assert [p.name for p in ckpts] == ["checkpoint_000003.ckpt",
                                       "checkpoint_000006.ckpt"]
    lines = (run_dir / "loss_log.txt").read_text().splitlines()
    assert len(lines) == 6
    assert all(np.isfinite(float(line.split()[1])) for line in lines)


def test_train_is_reproducible(tmp_path, data_dir, run_dir):
    again = run_train(CFG, data_dir, tmp_path, seed=0)
    assert (tmp_path / "loss_log.txt").read_bytes() == \
        (run_dir / "loss_log.txt").read_bytes()
    assert (tmp_path / "checkpoint_000006.ckpt").read_bytes() == \
        (run_dir / "checkpoint_000006.ckpt").read_bytes()
    assert len(again.losses) == 6


def test_train_seed_changes_losses(tmp_path, data_dir, run_dir):
    other = run_train(CFG, data_dir, tmp_path, seed=1)
    base = tuple(float(ln.split()[1]) for ln in
                 (run_dir / "loss_log.txt").read_text().splitlines())
    assert other.losses != base


def test_train_refuses_mismatched_dataset_hash(tmp_path, data_dir):
    cfg = dataclasses.replace(CFG, model=ModelConfig())
    with pytest.raises(PipelineError, match=config_hash(cfg)):
        run_train(cfg, data_dir, tmp_path)


def full_label_path(corpus_dir):
    return next(p for p in sorted(corpus_dir.glob("*.lab"))
                if parse_label_file(p.read_bytes()).labeling == LABELING_FULL)


def test_sample_writes_mel_and_metadata(tmp_path, corpus_dir, run_dir):
    label_path = full_label_path(corpus_dir)
    label = parse_label_file(label_path.read_bytes())
    result = run_sample(CFG, run_dir / "checkpoint_000006.ckpt", label_path,
                        tmp_path, seed=5)
    assert result.n_frames == label_frame_count(label)
    mel = load_mel(result.mel_path)
    assert mel.shape == (80, result.n_frames)
    meta = json.loads(result.meta_path.read_text())
    assert meta["config_hash"] == config_hash(CFG)
    assert meta["seed"] == 5
    assert meta["mode"] == "dual_pitch_anchored"


def test_sample_rerun_is_byte_identical(tmp_path, corpus_dir, run_dir):
    label_path = full_label_path(corpus_dir)
    ckpt = run_dir / "checkpoint_000006.ckpt"
    a = run_sample(CFG, ckpt, label_path, tmp_path / "a", seed=5)
    b = run_sample(CFG, ckpt, label_path, tmp_path / "b", seed=5)
    assert a.mel_path.read_bytes() == b.mel_path.read_bytes()
    assert a.meta_path.read_bytes() == b.meta_path.read_bytes()


def test_sample_refuses_mismatched_checkpoint(tmp_path, corpus_dir, run_dir):
    cfg = dataclasses.replace(CFG, model=ModelConfig())
    label_path = full_label_path(corpus_dir)
    with pytest.raises(CheckpointError, match=config_hash(cfg)):
        run_sample(cfg, run_dir / "checkpoint_000006.ckpt", label_path, tmp_path)


def test_eval_identical_dirs_is_perfect(data_dir):
    report = run_eval(CFG, data_dir, data_dir)
    assert report.n_voiced > 0
    assert report.f0_rmse == 0.0
    assert report.s_acc == 1.0
    assert len(report.segments) == 5


def test_eval_mismatched_sets_lists_missing_pairs(tmp_path, data_dir):
    gen = tmp_path / "gen"
    gen.mkdir()
    stems = sorted(p.stem for p in data_dir.glob("*.mel"))
    (gen / f"{stems[0]}.mel").write_bytes(
        (data_dir / f"{stems[0]}.mel").read_bytes())
    with pytest.raises(PipelineError, match=stems[1]):
        run_eval(CFG, data_dir, gen)


def test_eval_empty_ref_dir(tmp_path):
    ref = tmp_path / "ref"
    gen = tmp_path / "gen"
    ref.mkdir()
    gen.mkdir()
    with pytest.raises(PipelineError, match="no mel files"):
        run_eval(CFG, ref, gen)


def test_oracle_check_passes_on_defaults():
    result = run_oracle_check(CFG, n_points=200, seed=0)
    assert isinstance(result, OracleCheckResult)
    assert result.passed
    assert result.report["telescoping_residual"] <= 1e-12
    assert "result = pass" in result.format_text()
