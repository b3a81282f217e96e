"""Dataset storage, batch assembly, and the masking policy."""

import numpy as np
import pytest

from singdiff.audio import save_mel
from singdiff.config import AudioSection, TrainingSection
from singdiff.dataset import (DataItem, DatasetError, Manifest, ManifestItem,
                              assemble_batch, denormalize_mel, draw_masking,
                              format_manifest, load_conditions, load_items,
                              normalize_mel, parse_manifest, read_manifest,
                              save_conditions, write_manifest)
from singdiff.hangul import SILENCE_ID, UNKNOWN_PHONEME_ID
from singdiff.labels import (FrameConditions, LABELING_FULL, LABELING_NONE,
                             LABELING_PITCH_ONLY, LABELING_TEXT_ONLY,
                             REST_PITCH_ID, UNKNOWN_PITCH_ID)

AUDIO = AudioSection()


def make_fc(t: int, speaker: int = 1) -> FrameConditions:
    rng = np.random.default_rng(t)
    return FrameConditions(
        phoneme_ids=rng.integers(0, 40, size=t).astype(np.int64),
        pitch_ids=rng.integers(20, 90, size=t).astype(np.int64),
        speaker_id=speaker)


def make_item(stem: str, t: int, labeling: str = LABELING_FULL) -> DataItem:
    rng = np.random.default_rng(len(stem) + t)
    mel = rng.normal(-5.5, 2.0, size=(80, t)).astype(np.float32)
    return DataItem(stem=stem, labeling=labeling, mel=mel, fc=make_fc(t))


def test_manifest_round_trip():
    m = Manifest(config_hash="ab" * 32, items=(
        ManifestItem("item_0001", LABELING_FULL, 120),
        ManifestItem("item_0000", LABELING_NONE, 80),
    ))
    parsed = parse_manifest(format_manifest(m))
    assert parsed.config_hash == m.config_hash
    assert set(parsed.items) == set(m.items)


def test_manifest_is_sorted_and_stable():
    items = (ManifestItem("b", LABELING_FULL, 1), ManifestItem("a", LABELING_NONE, 2))
    text = format_manifest(Manifest(config_hash="x", items=items))
    swapped = format_manifest(Manifest(config_hash="x", items=items[::-1]))
    assert text == swapped
    assert text.index("item = a") < text.index("item = b")


def test_manifest_labeling_counts():
    m = Manifest(config_hash="x", items=(
        ManifestItem("a", LABELING_FULL, 1),
        ManifestItem("b", LABELING_FULL, 1),
        ManifestItem("c", LABELING_NONE, 1)))
    assert m.labeling_counts() == {LABELING_FULL: 2, LABELING_NONE: 1}


def test_manifest_parse_errors():
    good = format_manifest(Manifest(config_hash="x", items=(
        ManifestItem("a", LABELING_FULL, 1),)))
    with pytest.raises(DatasetError, match="not a dataset manifest"):
        parse_manifest(good.replace("singdiff-manifest", "other"))
    with pytest.raises(DatasetError, match="version"):
        parse_manifest(good.replace("version = 1", "version = 9"))
    with pytest.raises(DatasetError, match="unknown labeling"):
        parse_manifest(good.replace(" full ", " half "))
    with pytest.raises(DatasetError, match="malformed item"):
        parse_manifest(good.replace("full 1", "full"))
    with pytest.raises(DatasetError, match="duplicate"):
        parse_manifest(good + "item = a none 4\n")
    with pytest.raises(DatasetError, match="too short"):
        parse_manifest("format = singdiff-manifest\n")


def test_conditions_round_trip(tmp_path):
    fc = make_fc(17, speaker=3)
    path = tmp_path / "x.cond.json"
    save_conditions(fc, path)
    loaded = load_conditions(path)
    assert loaded == fc
    assert loaded.phoneme_ids.dtype == np.int64


def test_conditions_malformed(tmp_path):
    path = tmp_path / "bad.cond.json"
    path.write_text("{\"speaker_id\": 1}")
    with pytest.raises(DatasetError, match="malformed condition file"):
        load_conditions(path)


def test_load_items_round_trip(tmp_path):
    item = make_item("item_0000", 24)
    save_mel(item.mel, tmp_path / "item_0000.mel")
    save_conditions(item.fc, tmp_path / "item_0000.cond.json")
    manifest = Manifest(config_hash="h", items=(
        ManifestItem("item_0000", LABELING_FULL, 24),))
    write_manifest(manifest, tmp_path)
    assert read_manifest(tmp_path).items == manifest.items
    loaded = load_items(tmp_path)
    assert len(loaded) == 1
    assert np.array_equal(loaded[0].mel, item.mel)
    assert loaded[0].fc == item.fc


def test_load_items_frame_count_mismatch(tmp_path):
    item = make_item("item_0000", 24)
    save_mel(item.mel, tmp_path / "item_0000.mel")
    save_conditions(item.fc, tmp_path / "item_0000.cond.json")
    write_manifest(Manifest(config_hash="h", items=(
        ManifestItem("item_0000", LABELING_FULL, 25),)), tmp_path)
    with pytest.raises(DatasetError, match="frames"):
        load_items(tmp_path)


def test_read_manifest_missing(tmp_path):
    with pytest.raises(DatasetError, match="no manifest"):
        read_manifest(tmp_path)


def test_normalize_denormalize_inverse():
    mel = np.random.default_rng(0).normal(-5.5, 2.5, size=(80, 30)).astype(np.float32)
    state = normalize_mel(mel, AUDIO)
    assert state.dtype == np.float32
    assert abs(float(state.mean())) < 0.2
    np.testing.assert_allclose(denormalize_mel(state, AUDIO), mel, atol=1e-5)


def test_draw_masking_unlabeled_is_forced():
    training = TrainingSection(p_text_mask=0.0, p_both_mask=0.0)
    rng = np.random.default_rng(0)
    for _ in range(20):
        assert draw_masking(LABELING_NONE, training, rng) == LABELING_NONE


def test_draw_masking_zero_probabilities_keep_labels():
    training = TrainingSection(p_text_mask=0.0, p_both_mask=0.0, p_pitch_mask=0.0)
    rng = np.random.default_rng(1)
    for _ in range(20):
        assert draw_masking(LABELING_FULL, training, rng) == LABELING_FULL


def test_draw_masking_frequencies_match_probabilities():
    # three-standard-error agreement over ten thousand draws
    training = TrainingSection(p_text_mask=0.1, p_both_mask=0.1, p_pitch_mask=0.05)
    rng = np.random.default_rng(42)
    n = 10_000
    counts = {LABELING_PITCH_ONLY: 0, LABELING_NONE: 0,
              LABELING_TEXT_ONLY: 0, LABELING_FULL: 0}
    for _ in range(n):
        counts[draw_masking(LABELING_FULL, training, rng)] += 1
    expected = {LABELING_PITCH_ONLY: 0.1, LABELING_NONE: 0.1,
                LABELING_TEXT_ONLY: 0.05, LABELING_FULL: 0.75}
    for target, p in expected.items():
        se = (n * p * (1 - p)) ** 0.5
        assert abs(counts[target] - n * p) <= 3 * se, (target, counts[target])


def test_assemble_batch_shapes_and_padding():
    items = [make_item("a", 10), make_item("b", 16)]
    training = TrainingSection(p_text_mask=0.0, p_both_mask=0.0)
    batch = assemble_batch(items, training, AUDIO, np.random.default_rng(0))
    assert batch.mels.shape == (2, 80, 16)
    assert batch.frame_mask[0, :10].all() and not batch.frame_mask[0, 10:].any()
    assert batch.frame_mask[1].all()
    # padded tail carries the unknown tokens, not stale label ids
    assert (batch.phoneme_ids[0, 10:] == UNKNOWN_PHONEME_ID).all()
    assert (batch.pitch_ids[0, 10:] == UNKNOWN_PITCH_ID).all()
    np.testing.assert_allclose(
        batch.mels[0, :, :10], normalize_mel(items[0].mel, AUDIO), atol=1e-6)
    assert (batch.mels[0, :, 10:] == 0).all()


def test_assemble_batch_unlabeled_items_are_unconditional():
    item = make_item("a", 12, labeling=LABELING_NONE)
    training = TrainingSection(p_text_mask=0.0, p_both_mask=0.0)
    batch = assemble_batch([item], training, AUDIO, np.random.default_rng(0))
    assert (batch.phoneme_ids == UNKNOWN_PHONEME_ID).all()
    assert (batch.pitch_ids == UNKNOWN_PITCH_ID).all()


def test_assemble_batch_structural_tokens_survive_forced_masking():
    t = 8
    fc = FrameConditions(
        phoneme_ids=np.full(t, SILENCE_ID, dtype=np.int64),
        pitch_ids=np.full(t, REST_PITCH_ID, dtype=np.int64), speaker_id=0)
    item = DataItem(stem="s", labeling=LABELING_FULL,
                    mel=np.zeros((80, t), dtype=np.float32), fc=fc)
    training = TrainingSection(p_text_mask=0.0, p_both_mask=1.0)
    batch = assemble_batch([item], training, AUDIO, np.random.default_rng(0))
    assert (batch.phoneme_ids == SILENCE_ID).all()
    assert (batch.pitch_ids == REST_PITCH_ID).all()


def test_assemble_batch_full_labels_survive_zero_probabilities():
    item = make_item("a", 9)
    training = TrainingSection(p_text_mask=0.0, p_both_mask=0.0)
    batch = assemble_batch([item], training, AUDIO, np.random.default_rng(0))
    assert np.array_equal(batch.phoneme_ids[0], item.fc.phoneme_ids)
    assert np.array_equal(batch.pitch_ids[0], item.fc.pitch_ids)
    assert batch.speaker_ids[0] == item.fc.speaker_id


def test_assemble_batch_deterministic_per_rng_seed():
    items = [make_item("a", 10), make_item("b", 12)]
    training = TrainingSection()
    a = assemble_batch(items, training, AUDIO, np.random.default_rng(5))
    b = assemble_batch(items, training, AUDIO, np.random.default_rng(5))
    assert np.array_equal(a.phoneme_ids, b.phoneme_ids)
    assert np.array_equal(a.pitch_ids, b.pitch_ids)
    assert np.array_equal(a.mels, b.mels)


def test_assemble_batch_empty_is_error():
    with pytest.raises(DatasetError, match="empty batch"):
        assemble_batch([], TrainingSection(), AUDIO, np.random.default_rng(0))
