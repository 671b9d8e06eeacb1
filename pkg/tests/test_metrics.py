import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

import oracles
from greval.core import ScoringConfig, TripleList
from greval.embed import EmbeddingVector, HashEmbeddingProvider
from greval.metrics import (
    MatchRecord,
    completeness,
    completeness_score,
    uniqueness,
    uniqueness_score,
    write_match_trace,
)


def vecs(*rows):
    return [EmbeddingVector(np.array(r, dtype=float)) for r in rows]


def triples(n):
    return TripleList.from_lists([[f"s{i}", "r", f"o{i}"] for i in range(n)])


def test_uniqueness_examples():
    assert uniqueness(triples(2), vecs([1, 0], [1, 0]), 0.95) == 0.0
    assert uniqueness(triples(3), vecs([1, 0, 0], [0, 1, 0], [0, 0, 1]), 0.95) == 1.0
    # only the pair (1, 2) is similar: 4 of 6 ordered pairs stay below the threshold
    assert uniqueness(triples(3), vecs([1, 0], [0, 1], [0, 1]), 0.95) == pytest.approx(4 / 6, abs=1e-9)
    assert uniqueness(triples(1), vecs([1, 0]), 0.95) == 1.0
    with pytest.raises(ValueError, match="uniqueness undefined for empty extraction"):
        uniqueness(TripleList(), [], 0.95)


def test_completeness_examples():
    gold = triples(2)
    score, records = completeness(gold, TripleList(), vecs([1, 0], [0, 1]), [], 0.95)
    assert score == 0.0
    assert records[0] == MatchRecord(0, None, None, False)
    score, records = completeness(gold, triples(1), vecs([1, 0], [0, 1]), vecs([1, 0.01]), 0.95)
    assert score == 0.5
    assert [r.matched for r in records] == [True, False]
    with pytest.raises(ValueError, match="completeness requires gold triples"):
        completeness(TripleList(), triples(1), [], vecs([1, 0]), 0.95)


def test_completeness_tie_takes_lowest_index():
    _, records = completeness(triples(1), triples(3), vecs([1, 0]), vecs([0, 1], [1, 0], [2, 0]), 0.95)
    assert records[0].best_extracted_index == 1


def test_closed_mode_requires_relation_match():
    gold = triples(1)
    ext = triples(1)
    args = (gold, ext, vecs([1, 0]), vecs([1, 0]), 0.95, True)
    assert completeness(*args, vecs([1, 0]), vecs([1, 0]))[0] == 1.0
    score, records = completeness(*args, vecs([1, 0]), vecs([0, 1]))
    assert score == 0.0
    assert records[0].relation_similarity == 0.0


def test_ground_truth_scores_full_completeness():
    provider = HashEmbeddingProvider(dim=32)
    gold = TripleList.from_lists([["Alice", "live in", "Champaign"], ["Paris", "capital of", "France"]])
    score, _ = completeness_score(gold, gold, provider, ScoringConfig())
    assert score == 1.0
    assert completeness_score(gold, gold, provider, ScoringConfig(), closed_mode=True)[0] == 1.0


def test_phi_one_distinct_triples_are_unique():
    provider = HashEmbeddingProvider(dim=64)
    tl = TripleList.from_lists([["Alice", "live in", "Champaign"], ["Alice", "live in", "Urbana"], ["Bob", "live in", "Champaign"]])
    assert uniqueness_score(tl, provider, ScoringConfig(similarity_threshold=1.0)) == 1.0


def test_match_trace(tmp_path):
    write_match_trace(tmp_path / "t.json", {"u1": [MatchRecord(0, 1, 0.97, True)]})
    data = json.loads((tmp_path / "t.json").read_text())
    assert data == {"u1": [{"gold_index": 0, "best_extracted_index": 1, "best_similarity": 0.97, "matched": True, "relation_similarity": None}]}


raw_vectors = st.lists(
    st.lists(st.integers(-3, 3), min_size=3, max_size=3).filter(any),
    min_size=1,
    max_size=8,
)
thresholds = st.sampled_from([0.5, 0.8, 0.95, 1.0])


@given(raw_vectors, thresholds, st.randoms())
def test_uniqueness_matches_oracle_and_permutation(rows, phi, rnd):
    vs = vecs(*rows)
    value = uniqueness(triples(len(rows)), vs, phi)
    assert value == pytest.approx(oracles.uniqueness(rows, phi), abs=1e-12)
    shuffled = rows[:]
    rnd.shuffle(shuffled)
    assert uniqueness(triples(len(rows)), vecs(*shuffled), phi) == value


def similar_pairs(rows, phi):
    n = len(rows)
    return sum(1 for i in range(n) for j in range(n) if i != j and oracles.cosine(rows[i], rows[j]) >= phi)


@given(raw_vectors, st.integers(0, 7), st.sampled_from([0.5, 0.8, 0.95]))
def test_adding_duplicate_to_diverse_list_lowers_uniqueness(rows, pick, phi):
    rows = [r for i, r in enumerate(rows) if all(oracles.cosine(r, q) < phi for q in rows[:i])]
    dup = rows + [rows[pick % len(rows)]]
    assert uniqueness(triples(len(rows)), vecs(*rows), phi) == 1.0
    assert uniqueness(triples(len(dup)), vecs(*dup), phi) < 1.0


@given(raw_vectors.filter(lambda r: len(r) >= 2), st.integers(0, 7), st.sampled_from([0.5, 0.8, 0.95]))
def test_duplicate_effect_on_uniqueness(rows, pick, phi):
    # With S similar ordered pairs and k neighbours of the copied triple, the
    # ordered-pair formula drops only when (n - 1)(k + 1) > S. A list that is
    # already redundant elsewhere can therefore stay level or even rise.
    n = len(rows)
    x = rows[pick % n]
    k = sum(1 for i, r in enumerate(rows) if i != pick % n and oracles.cosine(x, r) >= phi)
    s = similar_pairs(rows, phi)
    before = uniqueness(triples(n), vecs(*rows), phi)
    after = uniqueness(triples(n + 1), vecs(*(rows + [x])), phi)
    if (n - 1) * (k + 1) > s:
        assert after < before
    elif (n - 1) * (k + 1) == s:
        assert after == pytest.approx(before, abs=1e-12)
    else:
        assert after > before


def test_duplicate_can_raise_uniqueness():
    a, b = [1, 0], [0, 1]
    assert uniqueness(triples(4), vecs(a, b, b, b), 0.95) == 0.5
    assert uniqueness(triples(5), vecs(a, b, b, b, a), 0.95) == 0.6


@given(raw_vectors, raw_vectors, raw_vectors, thresholds)
def test_completeness_monotone_in_extracted(gold, ext, extra, phi):
    base, _ = completeness(triples(len(gold)), triples(len(ext)), vecs(*gold), vecs(*ext), phi)
    more, _ = completeness(triples(len(gold)), triples(len(ext + extra)), vecs(*gold), vecs(*(ext + extra)), phi)
    assert more >= base
    assert base == pytest.approx(oracles.completeness(gold, ext, phi), abs=1e-12)


@given(raw_vectors, thresholds)
def test_self_completeness_is_one(rows, phi):
    assert completeness(triples(len(rows)), triples(len(rows)), vecs(*rows), vecs(*rows), phi)[0] == 1.0
