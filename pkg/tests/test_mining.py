import numpy as np
import pytest

from suml.datagen import WorldSpec, generate_world, sample_dataset
from suml.exceptions import BadEdgesError, DimMismatchError, EmptyCorpusError
from suml.mining import (
    DEFAULT_BUCKET_EDGES,
    PseudoPair,
    mine_pseudo_pairs,
    select_pairs,
    select_top_fraction,
    similarity_histogram,
)

SPEC = WorldSpec(n_verbs=3, n_nouns=4, text_dim=8, feat_dim=6, frames_per_clip=2)


class FakeSample:
    def __init__(self, narration):
        self.narration = np.asarray(narration, dtype=float)


def oracle_mine(fpv, tpv):
    """Independent brute-force reference: plain argmax of cosine similarity."""
    out = []
    for i, f in enumerate(fpv):
        sims = [
            float(np.dot(f.narration, t.narration)
                  / (np.linalg.norm(f.narration) * np.linalg.norm(t.narration)))
            for t in tpv
        ]
        j = int(np.argmax(sims))
        out.append((i, j, sims[j]))
    return out


def test_mining_matches_oracle_on_synthetic_corpora():
    world = generate_world(SPEC)
    for trial in range(10):
        fpv = sample_dataset(world, "fpv", 15 + trial, 100 + trial)
        tpv = sample_dataset(world, "tpv", 25 + trial, 200 + trial)
        got = mine_pseudo_pairs(fpv, tpv)
        want = oracle_mine(fpv, tpv)
        assert [(p.fpv_index, p.tpv_index, p.similarity) for p in got] == want


def test_mining_breaks_ties_to_smallest_index():
    f = [FakeSample([1.0, 0.0])]
    t = [FakeSample([0.0, 1.0]), FakeSample([2.0, 0.0]), FakeSample([1.0, 0.0])]
    (p,) = mine_pseudo_pairs(f, t)
    assert p.tpv_index == 1  # indices 1 and 2 both have similarity 1.0
    assert p.similarity == pytest.approx(1.0)


def test_mining_rejects_empty_or_mismatched():
    f = [FakeSample([1.0, 0.0])]
    with pytest.raises(EmptyCorpusError):
        mine_pseudo_pairs([], f)
    with pytest.raises(EmptyCorpusError):
        mine_pseudo_pairs(f, [])
    with pytest.raises(DimMismatchError):
        mine_pseudo_pairs(f, [FakeSample([1.0, 0.0, 0.0])])
    with pytest.raises(DimMismatchError):
        mine_pseudo_pairs(f, [FakeSample([0.0, 0.0])])


def _pairs(sims):
    return [PseudoPair(i, i, s) for i, s in enumerate(sims)]


def test_select_pairs_threshold_and_monotonicity():
    pairs = _pairs([0.1, 0.5, 0.7, 0.9, -0.2])
    batch = select_pairs(pairs, 0.5)
    assert batch.selected.tolist() == [False, True, True, True, False]
    assert batch.n_selected == 3
    counts = [select_pairs(pairs, th).n_selected for th in np.linspace(-1, 1, 21)]
    assert counts == sorted(counts, reverse=True)
    with pytest.raises(ValueError):
        select_pairs(pairs, 1.5)


def test_select_top_fraction():
    pairs = _pairs([0.3, 0.9, 0.1, 0.9])
    batch = select_top_fraction(pairs, 0.5)
    assert batch.n_selected == 2
    assert batch.selected.tolist() == [False, True, False, True]
    assert select_top_fraction(pairs, 0.0).n_selected == 0
    assert select_top_fraction(pairs, 1.0).n_selected == 4
    # ceil: 0.26 of 4 pairs keeps 2
    assert select_top_fraction(pairs, 0.26).n_selected == 2


def test_histogram_counts_fractions_and_edge_cases():
    pairs = _pairs([-0.5, 0.1, 0.1, 0.65, 0.8, 1.0])
    hist = similarity_histogram(pairs)
    assert hist.counts.tolist() == [1, 2, 0, 0, 1, 2]
    assert hist.fractions.sum() == pytest.approx(1.0, abs=1e-12)
    # boundaries: 0.65 in [0.6, 0.8); 0.8 and 1.0 in the closed top bucket
    assert hist.bucket_edges == DEFAULT_BUCKET_EDGES


def test_histogram_matches_independent_bucketing(rng):
    sims = rng.uniform(-1, 1, size=500)
    pairs = _pairs(sims)
    hist = similarity_histogram(pairs)
    edges = np.asarray(DEFAULT_BUCKET_EDGES)
    # independent pass: numpy histogram with right-closed final bucket
    want, _ = np.histogram(sims, bins=edges)
    assert hist.counts.tolist() == want.tolist()


def test_histogram_rejects_bad_edges():
    pairs = _pairs([0.0])
    with pytest.raises(BadEdgesError):
        similarity_histogram(pairs, (0.0, 1.0))  # does not cover [-1, 1]
    with pytest.raises(BadEdgesError):
        similarity_histogram(pairs, (-1.0, 0.5, 0.5, 1.0))
    with pytest.raises(BadEdgesError):
        similarity_histogram(pairs, (-1.0,))


def test_histogram_empty_input():
    hist = similarity_histogram([])
    assert hist.counts.sum() == 0
    assert np.all(hist.fractions == 0.0)
