import json
from dataclasses import replace

import numpy as np
import pytest

from suml.datagen import (
    WorldSpec,
    generate_world,
    narration_vector,
    read_dataset,
    sample_dataset,
    write_dataset,
)
from suml.exceptions import DatasetParseError, InvalidSpecError, InvalidViewError

SPEC = WorldSpec(n_verbs=4, n_nouns=6, text_dim=16, feat_dim=12, frames_per_clip=3)


def test_world_generation_deterministic():
    w1 = generate_world(SPEC)
    w2 = generate_world(SPEC)
    assert np.array_equal(w1.verb_prototypes, w2.verb_prototypes)
    assert np.array_equal(w1.fpv_render, w2.fpv_render)
    assert w1.tpv_noun_set == w2.tpv_noun_set


def test_world_seed_changes_content():
    w1 = generate_world(SPEC)
    w2 = generate_world(replace(SPEC, seed=1))
    assert not np.array_equal(w1.verb_prototypes, w2.verb_prototypes)


def test_prototypes_are_unit_norm():
    w = generate_world(SPEC)
    assert np.allclose(np.linalg.norm(w.verb_prototypes, axis=1), 1.0, atol=1e-12)
    assert np.allclose(np.linalg.norm(w.noun_prototypes, axis=1), 1.0, atol=1e-12)
    assert np.allclose(np.linalg.norm(w.fpv_render, axis=0), 1.0, atol=1e-12)
    assert np.allclose(np.linalg.norm(w.tpv_render, axis=0), 1.0, atol=1e-12)


def test_tpv_noun_set_size_and_membership():
    w = generate_world(SPEC)
    k = round(SPEC.noun_overlap_fraction * SPEC.n_nouns)
    assert len(w.tpv_noun_set) == k
    assert all(0 <= n < SPEC.n_nouns for n in w.tpv_noun_set)
    assert tuple(sorted(w.tpv_noun_set)) == w.tpv_noun_set


def test_zero_overlap_world_has_no_tpv_nouns():
    w = generate_world(replace(SPEC, noun_overlap_fraction=0.0))
    assert w.tpv_noun_set == ()
    with pytest.raises(InvalidSpecError):
        sample_dataset(w, "tpv", 4, 0)


def test_narration_vectors_unit_norm_and_structured():
    w = generate_world(replace(SPEC, text_noise_std=0.0))
    # noiseless narrations of actions sharing a verb are strictly closer
    # than narrations sharing neither component
    same_verb = float(narration_vector(w, 0, 0) @ narration_vector(w, 0, 1))
    disjoint = float(narration_vector(w, 0, 0) @ narration_vector(w, 1, 1))
    assert same_verb > disjoint
    assert np.isclose(np.linalg.norm(narration_vector(w, 2, 3)), 1.0, atol=1e-12)


def test_sample_dataset_shapes_and_labels():
    w = generate_world(SPEC)
    samples = sample_dataset(w, "fpv", 20, 7)
    assert len(samples) == 20
    for s in samples:
        assert s.view == "fpv"
        assert s.frames.shape == (SPEC.frames_per_clip, SPEC.feat_dim)
        assert s.narration.shape == (SPEC.text_dim,)
        assert np.isclose(np.linalg.norm(s.narration), 1.0, atol=1e-12)
        assert s.action_id == s.verb_id * SPEC.n_nouns + s.noun_id
        assert 0 <= s.verb_id < SPEC.n_verbs
        assert 0 <= s.noun_id < SPEC.n_nouns


def test_tpv_samples_restricted_to_noun_set():
    w = generate_world(SPEC)
    samples = sample_dataset(w, "tpv", 50, 3)
    assert all(s.noun_id in w.tpv_noun_set for s in samples)


def test_sample_dataset_deterministic_per_seed():
    w = generate_world(SPEC)
    a = sample_dataset(w, "fpv", 10, 5)
    b = sample_dataset(w, "fpv", 10, 5)
    c = sample_dataset(w, "fpv", 10, 6)
    assert a == b
    assert a != c


def test_sample_dataset_rejects_bad_args():
    w = generate_world(SPEC)
    with pytest.raises(InvalidViewError):
        sample_dataset(w, "sideways", 4, 0)
    with pytest.raises(InvalidSpecError):
        sample_dataset(w, "fpv", 0, 0)


def test_jsonl_round_trip_bitwise(tmp_path):
    w = generate_world(SPEC)
    samples = sample_dataset(w, "tpv", 12, 9)
    path = tmp_path / "data.jsonl"
    write_dataset(samples, str(path))
    back = read_dataset(str(path))
    assert back == samples
    # float payloads survive a second round trip byte-identically
    path2 = tmp_path / "data2.jsonl"
    write_dataset(back, str(path2))
    assert path.read_bytes() == path2.read_bytes()


def test_jsonl_records_have_expected_fields(tmp_path):
    w = generate_world(SPEC)
    write_dataset(sample_dataset(w, "fpv", 2, 0), str(tmp_path / "d.jsonl"))
    with open(tmp_path / "d.jsonl") as fh:
        rec = json.loads(fh.readline())
    assert set(rec) == {"id", "view", "verb_id", "noun_id", "action_id", "frames", "narration"}


def test_read_dataset_reports_bad_line(tmp_path):
    path = tmp_path / "bad.jsonl"
    w = generate_world(SPEC)
    write_dataset(sample_dataset(w, "fpv", 2, 0), str(path))
    with open(path, "a") as fh:
        fh.write("{not json\n")
    with pytest.raises(DatasetParseError) as err:
        read_dataset(str(path))
    assert "3" in str(err.value)  # line number surfaced


def test_world_spec_validation():
    with pytest.raises(InvalidSpecError):
        WorldSpec(text_dim=15).validate()
    with pytest.raises(InvalidSpecError):
        WorldSpec(noun_overlap_fraction=1.5).validate()
    with pytest.raises(InvalidSpecError):
        WorldSpec(frames_per_clip=0).validate()
    with pytest.raises(InvalidSpecError):
        WorldSpec(text_noise_std=-0.1).validate()
