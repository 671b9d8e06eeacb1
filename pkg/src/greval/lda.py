"""LDA topic model (collapsed Gibbs sampling) and the topical similarity score.

Training and inference both draw their randomness from a PCG64 generator
seeded by the caller, one uniform per token per sweep, so a model is
bit-identical for identical (corpus order, K, iterations, seed).
"""

from __future__ import annotations

import json
import logging
import math
import re
from collections.abc import Sequence
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources
from pathlib import Path

import numpy as np
from numba import njit

from .core import EvaluationUnit, TripleList

logger = logging.getLogger(__name__)

MODEL_FORMAT = "greval-lda/1"
DEFAULT_BETA = 0.01
DEFAULT_INFER_SWEEPS = 50

_WORD = re.compile(r"[^\W_]+")


@lru_cache(maxsize=1)
def stopwords() -> frozenset[str]:
    text = (resources.files("greval") / "resources" / "stopwords.txt").read_text(encoding="utf-8")
    return frozenset(w.strip() for w in text.splitlines() if w.strip() and not w.startswith("#"))


def tokenize(text: str) -> list[str]:
    """Lowercase, split on non-alphanumerics, drop 1-char tokens and stopwords."""
    stop = stopwords()
    return [w for w in _WORD.findall(text.lower()) if len(w) > 1 and w not in stop]


def flatten_triples(triples: TripleList) -> str:
    """Concatenate each triple's elements, then join the triples with spaces."""
    return " ".join(" ".join(t) for t in triples)


@dataclass(frozen=True)
class TopicModel:
    vocabulary: dict[str, int]
    topic_word_counts: np.ndarray  # K x V, int64
    topic_totals: np.ndarray  # K, int64
    alpha: float
    beta: float
    K: int
    training_seed: int
    iterations: int = 0

    def __post_init__(self) -> None:
        if self.K < 2:
            raise ValueError("K must be >= 2")
        if self.alpha <= 0 or self.beta <= 0:
            raise ValueError("alpha and beta must be positive")
        if self.topic_word_counts.shape != (self.K, len(self.vocabulary)):
            raise ValueError("topic_word_counts shape does not match K x |vocabulary|")
        if not np.array_equal(self.topic_word_counts.sum(axis=1), self.topic_totals):
            raise ValueError("topic_totals do not match the row sums of topic_word_counts")
        self.topic_word_counts.setflags(write=False)
        self.topic_totals.setflags(write=False)

    @property
    def vocab_size(self) -> int:
        return len(self.vocabulary)

    def to_json(self) -> str:
        words = sorted(self.vocabulary, key=self.vocabulary.__getitem__)
        rows = []
        for k in range(self.K):
            (nz,) = np.nonzero(self.topic_word_counts[k])
            rows.append([[int(v), int(self.topic_word_counts[k, v])] for v in nz])
        data = {
            "format": MODEL_FORMAT,
            "K": self.K,
            "alpha": self.alpha,
            "beta": self.beta,
            "training_seed": self.training_seed,
            "iterations": self.iterations,
            "vocabulary": words,
            "topic_totals": [int(x) for x in self.topic_totals],
            "topic_word_counts": rows,
        }
        return json.dumps(data, separators=(",", ":"), ensure_ascii=False) + "\n"

    @classmethod
    def from_json(cls, text: str) -> TopicModel:
        data = json.loads(text)
        if data.get("format") != MODEL_FORMAT:
            raise ValueError(f"unsupported model format {data.get('format')!r}, expected {MODEL_FORMAT!r}")
        K = int(data["K"])
        vocab = {w: i for i, w in enumerate(data["vocabulary"])}
        counts = np.zeros((K, len(vocab)), dtype=np.int64)
        for k, row in enumerate(data["topic_word_counts"]):
            for v, c in row:
                counts[k, v] = c
        return cls(
            vocabulary=vocab,
            topic_word_counts=counts,
            topic_totals=np.asarray(data["topic_totals"], dtype=np.int64),
            alpha=float(data["alpha"]),
            beta=float(data["beta"]),
            K=K,
            training_seed=int(data["training_seed"]),
            iterations=int(data.get("iterations", 0)),
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json(), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> TopicModel:
        return cls.from_json(Path(path).read_text(encoding="utf-8"))


@dataclass(frozen=True)
class TopicDistribution:
    probs: tuple[float, ...]
    # True when the text had no in-vocabulary tokens and probs is uniform
    degenerate: bool = False

    def __post_init__(self) -> None:
        probs = tuple(float(p) for p in self.probs)
        object.__setattr__(self, "probs", probs)
        if not probs:
            raise ValueError("empty distribution")
        if any(not p > 0 for p in probs):
            raise ValueError("topic probabilities must be strictly positive")
        if abs(math.fsum(probs) - 1.0) > 1e-9:
            raise ValueError(f"topic probabilities sum to {math.fsum(probs)}, not 1")

    def __len__(self) -> int:
        return len(self.probs)

    def argmax(self) -> int:
        return max(range(len(self.probs)), key=self.probs.__getitem__)


@njit(cache=True)
def _train_sweep(words, docs, z, ndk, nkw, nk, alpha, beta, vbeta, u):  # pragma: no cover - jitted
    K = nk.shape[0]
    cum = np.empty(K)
    for i in range(words.shape[0]):
        w = words[i]
        d = docs[i]
        k = z[i]
        ndk[d, k] -= 1
        nkw[k, w] -= 1
        nk[k] -= 1
        total = 0.0
        for t in range(K):
            total += (ndk[d, t] + alpha) * (nkw[t, w] + beta) / (nk[t] + vbeta)
            cum[t] = total
        r = u[i] * total
        k = 0
        while k < K - 1 and cum[k] <= r:
            k += 1
        z[i] = k
        ndk[d, k] += 1
        nkw[k, w] += 1
        nk[k] += 1


@njit(cache=True)
def _fold_in(words, z, nkw, nk, alpha, beta, vbeta, u):  # pragma: no cover - jitted
    K = nk.shape[0]
    n = words.shape[0]
    ndk = np.zeros(K, dtype=np.int64)
    for i in range(n):
        ndk[z[i]] += 1
    cum = np.empty(K)
    for s in range(u.shape[0]):
        for i in range(n):
            w = words[i]
            ndk[z[i]] -= 1
            total = 0.0
            for t in range(K):
                total += (ndk[t] + alpha) * (nkw[t, w] + beta) / (nk[t] + vbeta)
                cum[t] = total
            r = u[s, i] * total
            k = 0
            while k < K - 1 and cum[k] <= r:
                k += 1
            z[i] = k
            ndk[k] += 1
    return ndk


def train(
    corpus: Sequence[str],
    K: int,
    iterations: int,
    seed: int,
    alpha: float | None = None,
    beta: float = DEFAULT_BETA,
) -> TopicModel:
    """Fit LDA by collapsed Gibbs sampling and return the final-state counts.

    ``alpha`` defaults to 50/K.
    """
    if not corpus:
        raise ValueError("empty corpus")
    if iterations < 1:
        raise ValueError("iterations must be >= 1")
    if K < 2:
        raise ValueError("K must be >= 2")
    alpha = 50.0 / K if alpha is None else float(alpha)

    vocab: dict[str, int] = {}
    words: list[int] = []
    docs: list[int] = []
    for d, text in enumerate(corpus):
        for tok in tokenize(text):
            words.append(vocab.setdefault(tok, len(vocab)))
            docs.append(d)
    if not vocab:
        raise ValueError("empty vocabulary after preprocessing")

    w_arr = np.asarray(words, dtype=np.int64)
    d_arr = np.asarray(docs, dtype=np.int64)
    V = len(vocab)
    rng = np.random.Generator(np.random.PCG64(seed))
    z = rng.integers(0, K, size=len(w_arr), dtype=np.int64)

    ndk = np.zeros((len(corpus), K), dtype=np.int64)
    nkw = np.zeros((K, V), dtype=np.int64)
    np.add.at(ndk, (d_arr, z), 1)
    np.add.at(nkw, (z, w_arr), 1)
    nk = nkw.sum(axis=1)

    for _ in range(iterations):
        u = rng.random(len(w_arr))
        _train_sweep(w_arr, d_arr, z, ndk, nkw, nk, alpha, float(beta), V * float(beta), u)

    return TopicModel(
        vocabulary=vocab,
        topic_word_counts=nkw,
        topic_totals=nk,
        alpha=alpha,
        beta=float(beta),
        K=K,
        training_seed=seed,
        iterations=iterations,
    )


def infer(
    model: TopicModel,
    text: str,
    sweeps: int = DEFAULT_INFER_SWEEPS,
    seed: int | None = None,
) -> TopicDistribution:
    """Topic distribution of a held-out text by fold-in Gibbs sampling.

    The model's counts stay frozen. The result is the posterior mean
    (n_k + alpha) / (N + K * alpha) of the final sweep. Out-of-vocabulary
    tokens are skipped; a text with none left gets the uniform distribution.
    """
    ids = [model.vocabulary[t] for t in tokenize(text) if t in model.vocabulary]
    K = model.K
    if not ids:
        logger.warning("no in-vocabulary tokens; using the uniform topic distribution")
        return TopicDistribution(tuple([1.0 / K] * K), degenerate=True)

    rng = np.random.Generator(np.random.PCG64(model.training_seed if seed is None else seed))
    w_arr = np.asarray(ids, dtype=np.int64)
    z = rng.integers(0, K, size=len(w_arr), dtype=np.int64)
    u = rng.random((sweeps, len(w_arr)))
    ndk = _fold_in(
        w_arr,
        z,
        model.topic_word_counts,
        model.topic_totals,
        model.alpha,
        model.beta,
        model.vocab_size * model.beta,
        u,
    )
    denom = len(ids) + K * model.alpha
    return TopicDistribution(tuple((ndk + model.alpha) / denom))


def kl_divergence(
    p: TopicDistribution | Sequence[float],
    q: TopicDistribution | Sequence[float],
    epsilon: float = 1e-12,
) -> float:
    """KL(p || q) in nats.

    ``q`` is floored at ``epsilon`` and renormalised; terms with p_i = 0
    contribute nothing.
    """
    p_vals = p.probs if isinstance(p, TopicDistribution) else tuple(p)
    q_vals = q.probs if isinstance(q, TopicDistribution) else tuple(q)
    if len(p_vals) != len(q_vals):
        raise ValueError(f"distribution sizes differ: {len(p_vals)} vs {len(q_vals)}")
    q_floor = [max(float(x), epsilon) for x in q_vals]
    if any(float(x) < epsilon for x in q_vals):
        q_sum = math.fsum(q_floor)
        q_floor = [x / q_sum for x in q_floor]
    total = 0.0
    for pi, qi in zip(p_vals, q_floor):
        if pi > 0:
            total += pi * math.log(pi / qi)
    # rounding can leave a tiny negative value for p ~= q
    return max(total, 0.0)


def similarity_from_distributions(p: TopicDistribution, q: TopicDistribution, epsilon: float = 1e-12) -> float:
    return math.exp(-kl_divergence(p, q, epsilon))


def topical_similarity(
    model: TopicModel,
    unit: EvaluationUnit,
    epsilon: float = 1e-12,
    sweeps: int = DEFAULT_INFER_SWEEPS,
) -> float:
    """exp(-KL) between the topics of the source text and of the flattened triples.

    An empty extraction scores 0.
    """
    if len(unit.extracted) == 0:
        logger.warning("unit %s: empty extraction, topical similarity set to 0", unit.id)
        return 0.0
    p = infer(model, unit.text, sweeps)
    q = infer(model, flatten_triples(unit.extracted), sweeps)
    return similarity_from_distributions(p, q, epsilon)
