"""Corpus interchange format, loading, and the test-set sampling protocol.

Corpus files are JSON Lines, one unit per line::

    {"id": "doc-1", "text": "...", "gold": [["s", "r", "o"], ...] | null,
     "level": "document" | "bag" | "sentence"}

Optional keys: ``entity_pairs`` (``[[head, tail], ...]``, needed for closed
extraction) and ``split`` (e.g. ``"train"`` / ``"test"``).
"""

from __future__ import annotations

import json
import logging
from collections.abc import Iterable
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Any

from .core import EvaluationUnit, Level, Origin, TripleList

logger = logging.getLogger(__name__)

SAMPLER_ID = "splitmix64-partial-fisher-yates/1"
_MASK = (1 << 64) - 1


class CorpusError(ValueError):
    pass


@dataclass(frozen=True)
class CorpusManifest:
    name: str
    level: Level
    units: tuple[EvaluationUnit, ...]
    source_note: str = ""

    def __post_init__(self) -> None:
        object.__setattr__(self, "units", tuple(self.units))
        object.__setattr__(self, "level", Level(self.level))
        seen: set[str] = set()
        for u in self.units:
            if u.id in seen:
                raise CorpusError(f"duplicate id {u.id!r}")
            seen.add(u.id)
            if u.level != self.level:
                raise CorpusError(f"unit {u.id!r} has level {u.level.value}, corpus is {self.level.value}")

    def __len__(self) -> int:
        return len(self.units)

    def ids(self) -> list[str]:
        return [u.id for u in self.units]

    def by_id(self) -> dict[str, EvaluationUnit]:
        return {u.id: u for u in self.units}


def _unit_from_record(rec: Any, lineno: int) -> EvaluationUnit:
    if not isinstance(rec, dict):
        raise CorpusError(f"line {lineno}: expected a JSON object")
    for key in ("id", "text", "level"):
        if key not in rec:
            raise CorpusError(f"missing field {key!r} at line {lineno}")
    if not isinstance(rec["id"], str) or not rec["id"]:
        raise CorpusError(f"line {lineno}: id must be a non-empty string")
    try:
        gold_rows = rec.get("gold")
        gold = TripleList.from_lists(gold_rows, Origin.GOLD) if gold_rows else None
        pairs = rec.get("entity_pairs")
        if pairs is not None:
            pairs = tuple((str(h), str(t)) for h, t in pairs)
        return EvaluationUnit(
            id=rec["id"],
            text=rec["text"],
            gold=gold,
            level=Level(rec["level"]),
            entity_pairs=pairs,
            split=rec.get("split"),
        )
    except (TypeError, ValueError) as exc:
        raise CorpusError(f"line {lineno}: {exc}") from exc


def _unit_to_record(u: EvaluationUnit) -> dict[str, Any]:
    rec: dict[str, Any] = {
        "id": u.id,
        "text": u.text,
        "gold": u.gold.as_lists() if u.gold is not None else None,
        "level": u.level.value,
    }
    if u.entity_pairs is not None:
        rec["entity_pairs"] = [list(p) for p in u.entity_pairs]
    if u.split is not None:
        rec["split"] = u.split
    return rec


def load_corpus(path: str | Path, name: str | None = None, source_note: str = "") -> CorpusManifest:
    """Read and validate a corpus file; errors name the offending line."""
    path = Path(path)
    units: list[EvaluationUnit] = []
    seen: set[str] = set()
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusError(f"malformed JSON at line {lineno}: {exc.msg}") from exc
            unit = _unit_from_record(rec, lineno)
            if unit.id in seen:
                raise CorpusError(f"duplicate id at line {lineno}")
            seen.add(unit.id)
            if units and unit.level != units[0].level:
                raise CorpusError(f"level {unit.level.value!r} at line {lineno} differs from {units[0].level.value!r}")
            units.append(unit)
    if not units:
        raise CorpusError(f"{path}: no units")
    return CorpusManifest(name or path.stem, units[0].level, tuple(units), source_note)


def save_corpus(corpus: CorpusManifest, path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8", newline="\n") as fh:
        for u in corpus.units:
            fh.write(json.dumps(_unit_to_record(u), ensure_ascii=False) + "\n")


class SplitMix64:
    """SplitMix64 generator (Steele, Lea & Flood 2014), 64-bit outputs.

    Chosen because it is a few lines in any language, so sample sets can be
    reproduced outside Python from the seed alone.
    """

    def __init__(self, seed: int) -> None:
        self.state = seed & _MASK

    def next(self) -> int:
        self.state = (self.state + 0x9E3779B97F4A7C15) & _MASK
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
        return z ^ (z >> 31)

    def below(self, bound: int) -> int:
        """Uniform integer in [0, bound) by rejection, no modulo bias."""
        if bound <= 0:
            raise ValueError("bound must be positive")
        limit = (1 << 64) - ((1 << 64) % bound)
        while True:
            x = self.next()
            if x < limit:
                return x % bound


def sample_indices(population: int, n: int, seed: int) -> list[int]:
    """n distinct indices from range(population), returned in ascending order.

    Partial Fisher-Yates: for i in 0..n-1 swap position i with i + below(population - i).
    """
    if n < 0:
        raise ValueError("sample size must be non-negative")
    if n > population:
        raise ValueError(f"sample size {n} exceeds corpus size {population}")
    rng = SplitMix64(seed)
    idx = list(range(population))
    for i in range(n):
        j = i + rng.below(population - i)
        idx[i], idx[j] = idx[j], idx[i]
    return sorted(idx[:n])


def sample(corpus: CorpusManifest, n: int, seed: int) -> CorpusManifest:
    """Uniform sample without replacement that keeps the original unit order."""
    picked = sample_indices(len(corpus), n, seed)
    return replace(corpus, units=tuple(corpus.units[i] for i in picked))


def filter_min_gold(corpus: CorpusManifest, min_triples: int) -> CorpusManifest:
    kept = tuple(u for u in corpus.units if min_triples <= 0 or (u.gold is not None and len(u.gold) >= min_triples))
    if not kept:
        logger.warning("no unit of %s has at least %d gold triples", corpus.name, min_triples)
    return replace(corpus, units=kept)


def select_split(corpus: CorpusManifest, split: str | None) -> CorpusManifest:
    if split is None:
        return corpus
    return replace(corpus, units=tuple(u for u in corpus.units if u.split == split))


def texts(units: Iterable[EvaluationUnit]) -> list[str]:
    return [u.text for u in units]
