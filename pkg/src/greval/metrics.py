"""Embedding-space scores: uniqueness and completeness."""

from __future__ import annotations

import json
from collections.abc import Mapping, Sequence
from dataclasses import asdict, dataclass
from pathlib import Path

from .core import ScoringConfig, TripleList
from .embed import (
    EmbeddingCache,
    EmbeddingProvider,
    EmbeddingVector,
    cosine_similarity,
    embed_triples,
    relation_embeddings,
)


@dataclass(frozen=True)
class MatchRecord:
    gold_index: int
    best_extracted_index: int | None
    best_similarity: float | None
    matched: bool
    # only filled in closed mode
    relation_similarity: float | None = None

    def to_dict(self) -> dict:
        return asdict(self)


def uniqueness(triples: TripleList, embeddings: Sequence[EmbeddingVector], threshold: float) -> float:
    """Share of ordered pairs (i, j), i != j, whose cosine similarity is below ``threshold``.

    A single triple scores 1. An empty list has no defined uniqueness.
    """
    n = len(triples)
    if len(embeddings) != n:
        raise ValueError(f"{len(embeddings)} embeddings for {n} triples")
    if n == 0:
        raise ValueError("uniqueness undefined for empty extraction")
    if n == 1:
        return 1.0
    below = 0
    for i in range(n):
        for j in range(i + 1, n):
            if cosine_similarity(embeddings[i], embeddings[j]) < threshold:
                below += 2  # (i, j) and (j, i)
    return below / (n * (n - 1))


def completeness(
    gold: TripleList,
    extracted: TripleList,
    gold_embeddings: Sequence[EmbeddingVector],
    extracted_embeddings: Sequence[EmbeddingVector],
    threshold: float,
    closed_mode: bool = False,
    gold_relation_embeddings: Sequence[EmbeddingVector] | None = None,
    extracted_relation_embeddings: Sequence[EmbeddingVector] | None = None,
) -> tuple[float, list[MatchRecord]]:
    """Fraction of gold triples whose best-matching extracted triple reaches ``threshold``.

    One extracted triple may match several gold triples. Ties for the best
    match go to the lowest extracted index. In closed mode the best pair must
    additionally have relation embeddings with similarity >= ``threshold``.
    """
    if len(gold) == 0:
        raise ValueError("completeness requires gold triples")
    if len(gold_embeddings) != len(gold) or len(extracted_embeddings) != len(extracted):
        raise ValueError("embeddings are not aligned with the triple lists")
    if closed_mode and (gold_relation_embeddings is None or extracted_relation_embeddings is None):
        raise ValueError("closed mode needs relation embeddings")

    records: list[MatchRecord] = []
    for g, g_vec in enumerate(gold_embeddings):
        best_idx: int | None = None
        best_sim: float | None = None
        for e, e_vec in enumerate(extracted_embeddings):
            sim = cosine_similarity(g_vec, e_vec)
            if best_sim is None or sim > best_sim:
                best_idx, best_sim = e, sim
        matched = best_sim is not None and best_sim >= threshold
        rel_sim = None
        if closed_mode and best_idx is not None:
            rel_sim = cosine_similarity(gold_relation_embeddings[g], extracted_relation_embeddings[best_idx])  # type: ignore[index]
            matched = matched and rel_sim >= threshold
        records.append(MatchRecord(g, best_idx, best_sim, matched, rel_sim))

    score = sum(r.matched for r in records) / len(gold)
    return score, records


def uniqueness_score(
    triples: TripleList,
    provider: EmbeddingProvider,
    config: ScoringConfig,
    cache: EmbeddingCache | None = None,
) -> float:
    vectors = embed_triples(list(triples), config.triple_embedding_mode, provider, cache)
    return uniqueness(triples, vectors, config.similarity_threshold)


def completeness_score(
    gold: TripleList,
    extracted: TripleList,
    provider: EmbeddingProvider,
    config: ScoringConfig,
    closed_mode: bool = False,
    cache: EmbeddingCache | None = None,
) -> tuple[float, list[MatchRecord]]:
    mode = config.triple_embedding_mode
    gold_vecs = embed_triples(list(gold), mode, provider, cache)
    ext_vecs = embed_triples(list(extracted), mode, provider, cache)
    gold_rel = ext_rel = None
    if closed_mode:
        gold_rel = relation_embeddings(list(gold), provider, cache)
        ext_rel = relation_embeddings(list(extracted), provider, cache)
    return completeness(gold, extracted, gold_vecs, ext_vecs, config.similarity_threshold, closed_mode, gold_rel, ext_rel)


def write_match_trace(path: str | Path, traces: Mapping[str, Sequence[MatchRecord]]) -> None:
    data = {uid: [r.to_dict() for r in records] for uid, records in traces.items()}
    Path(path).write_text(json.dumps(data, indent=2) + "\n", encoding="utf-8")
