import json

import numpy as np
import pytest
import requests
from hypothesis import given, strategies as st

import oracles
from greval.core import Triple
from greval.embed import (
    EmbeddingCache,
    EmbeddingError,
    EmbeddingVector,
    HashEmbeddingProvider,
    HttpEmbeddingProvider,
    cached_embed,
    cosine_similarity,
    embed_triples,
    triple_embedding,
)


class Counting:
    provider_id = "count/1"
    dim = 2

    def __init__(self):
        self.batches = []

    def embed_batch(self, texts):
        self.batches.append(list(texts))
        return [EmbeddingVector([len(t) + 1.0, 1.0], self.provider_id) for t in texts]


def test_cosine_examples():
    assert cosine_similarity(np.array([1.0, 2.0, 3.0]), np.array([4.0, 5.0, 6.0])) == pytest.approx(0.974632, abs=1e-5)
    assert cosine_similarity(np.array([1.0, 2.0, 3.0]), np.array([4.0, 5.0, 6.0])) == pytest.approx(
        oracles.cosine([1, 2, 3], [4, 5, 6]), abs=1e-15
    )
    assert cosine_similarity(np.array([1.0, 0.0]), np.array([0.0, 1.0])) == 0.0
    v = np.array([0.3, -1.7, 2.2])
    assert cosine_similarity(v, v) == 1.0


def test_cosine_errors():
    with pytest.raises(ValueError):
        cosine_similarity(np.array([1.0, 0.0]), np.array([1.0, 0.0, 0.0]))
    with pytest.raises(ValueError):
        cosine_similarity(np.array([0.0, 0.0]), np.array([1.0, 0.0]))
    with pytest.raises(ValueError):
        EmbeddingVector([0.0, 0.0])


vec = st.lists(st.floats(min_value=-10, max_value=10), min_size=4, max_size=4).filter(lambda xs: sum(x * x for x in xs) > 1e-6)
scale = st.floats(min_value=1e-3, max_value=1e3)


@given(vec, vec, scale, scale)
def test_cosine_symmetric_and_scale_invariant(u, v, a, b):
    u, v = np.array(u), np.array(v)
    s = cosine_similarity(u, v)
    assert s == pytest.approx(cosine_similarity(v, u), abs=1e-12)
    assert s == pytest.approx(cosine_similarity(a * u, b * v), abs=1e-9)
    assert -1.0 <= s <= 1.0


def test_hash_provider_deterministic():
    p = HashEmbeddingProvider(dim=16, seed=1)
    a = p.embed_batch(["Alice", "live in"])
    b = HashEmbeddingProvider(dim=16, seed=1).embed_batch(["Alice", "live in"])
    assert a == b
    assert a[0].dim == 16
    assert p.provider_id == "hash-bow-v1/d16/s1"
    assert HashEmbeddingProvider(dim=16, seed=2).embed_one("Alice") != a[0]


def test_triple_embedding_modes():
    p = HashEmbeddingProvider(dim=8)
    t = Triple("Alice", "live in", "Champaign")
    s, r, o = p.embed_batch(list(t))
    summed = triple_embedding(t, "sum", p)
    assert np.allclose(summed.values, s.values + r.values + o.values, atol=1e-15)
    cat = triple_embedding(t, "concat", p)
    assert cat.dim == 3 * p.dim
    assert np.array_equal(cat.values, np.concatenate([s.values, r.values, o.values]))


field = st.text(alphabet="abcdefgh ", min_size=1, max_size=12).filter(lambda s: s.strip())


@given(field, field, field)
def test_sum_mode_ignores_direction(a, r, b):
    p = HashEmbeddingProvider(dim=8)
    assert triple_embedding(Triple(a, r, b), "sum", p) == triple_embedding(Triple(b, r, a), "sum", p)


def test_cache_short_circuits_provider(tmp_path):
    prov = Counting()
    cache = EmbeddingCache(tmp_path / "c.jsonl")
    first = cached_embed(["a", "bb", "a"], prov, cache)
    assert prov.batches == [["a", "bb"]]
    assert cached_embed(["a", "bb"], prov, cache) == first[:2]
    assert len(prov.batches) == 1
    mixed = cached_embed(["ccc", "a", "dddd"], prov, cache)
    assert prov.batches[-1] == ["ccc", "dddd"]
    assert [v.values[0] for v in mixed] == [4.0, 2.0, 5.0]


def test_cache_round_trip_bit_identical(tmp_path):
    prov = HashEmbeddingProvider(dim=32)
    vectors = cached_embed(["alpha", "beta gamma"], prov, EmbeddingCache(tmp_path / "c.jsonl"))
    reloaded = EmbeddingCache(tmp_path / "c.jsonl")
    for text, v in zip(["alpha", "beta gamma"], vectors):
        assert reloaded.get(prov.provider_id, text).values.tobytes() == v.values.tobytes()


def test_corrupted_cache_entry_is_refetched(tmp_path):
    path = tmp_path / "c.jsonl"
    prov = Counting()
    cached_embed(["a", "bb"], prov, EmbeddingCache(path))
    lines = path.read_text().splitlines()
    bad = json.loads(lines[0])
    bad["values"][0] = 99.0
    path.write_text(json.dumps(bad) + "\n" + lines[1] + "\n{not json\n")
    cache = EmbeddingCache(path)
    assert cache.corrupt_records == 2
    out = cached_embed(["a", "bb"], prov, cache)
    assert prov.batches[-1] == ["a"]
    assert out[0].values[0] == 2.0
    assert EmbeddingCache(path).get(prov.provider_id, "a").values[0] == 2.0


def test_embed_triples_single_round_trip():
    prov = Counting()
    triples = [Triple("a", "b", "c"), Triple("c", "b", "dd")]
    out = embed_triples(triples, "sum", prov)
    assert len(prov.batches) == 1
    assert len(out) == 2


class Failing:
    provider_id = "fail/1"
    dim = 2

    def embed_batch(self, texts):
        raise EmbeddingError("service down", texts[0])


def test_provider_failure_names_triple():
    with pytest.raises(EmbeddingError, match="Alice | live in | Champaign"):
        triple_embedding(Triple("Alice", "live in", "Champaign"), "sum", Failing())


class FakeResponse:
    def __init__(self, status, body=None, headers=None):
        self.status_code = status
        self._body = body
        self.headers = headers or {}
        self.text = json.dumps(body)

    def json(self):
        return self._body

    def raise_for_status(self):
        if self.status_code >= 400:
            raise requests.HTTPError(f"HTTP {self.status_code}", response=self)


class FakeSession:
    def __init__(self, responses):
        self.responses = list(responses)
        self.posts = []

    def post(self, url, json=None, headers=None, timeout=None):
        self.posts.append((url, json))
        item = self.responses.pop(0)
        if isinstance(item, Exception):
            raise item
        return item


def test_http_provider_retries_and_orders(monkeypatch):
    monkeypatch.setattr("time.sleep", lambda s: None)
    ok = FakeResponse(200, {"data": [{"index": 1, "embedding": [0.0, 1.0]}, {"index": 0, "embedding": [1.0, 0.0]}]})
    session = FakeSession([requests.ConnectionError("reset"), FakeResponse(429, {}, {"Retry-After": "1"}), ok])
    prov = HttpEmbeddingProvider("http://x/v1", "emb-model", api_key_env=None, session=session, max_parallel=1)
    out = prov.embed_batch(["first", "second"])
    assert [list(v.values) for v in out] == [[1.0, 0.0], [0.0, 1.0]]
    assert len(session.posts) == 3
    assert session.posts[0][0] == "http://x/v1/embeddings"


def test_http_provider_gives_up(monkeypatch):
    monkeypatch.setattr("time.sleep", lambda s: None)
    session = FakeSession([FakeResponse(400, {"error": "bad"})])
    prov = HttpEmbeddingProvider("http://x/v1", "emb-model", api_key_env=None, session=session, max_parallel=1)
    with pytest.raises(EmbeddingError):
        prov.embed_batch(["first"])
