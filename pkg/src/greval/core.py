"""Domain types shared across the scoring pipeline.

Scores are kept in [0, 1] everywhere inside the package; percentages only
appear when a report is rendered for people to read.
"""

from __future__ import annotations

import json
import math
from collections.abc import Iterable, Iterator, Mapping, Sequence
from dataclasses import asdict, dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any

SCORE_KEYS = ("ts", "us", "fs", "gs", "cs")
COUNT_KEYS = ("triple_count", "mean_tokens_per_triple")
REPORT_FORMAT = "greval-report/1"


class Origin(str, Enum):
    EXTRACTED = "extracted"
    GOLD = "gold"


class Level(str, Enum):
    DOCUMENT = "document"
    BAG = "bag"
    SENTENCE = "sentence"


class EmbeddingMode(str, Enum):
    SUM = "sum"
    CONCAT = "concat"


@dataclass(frozen=True)
class Triple:
    """A ``subject | relation | object`` statement.

    Fields are whitespace-trimmed on construction and must be non-empty.
    Equality is exact and case-sensitive.
    """

    subject: str
    relation: str
    object: str

    def __post_init__(self) -> None:
        for name in ("subject", "relation", "object"):
            value = getattr(self, name)
            if not isinstance(value, str):
                raise TypeError(f"triple {name} must be a string, got {type(value).__name__}")
            value = value.strip()
            if not value:
                raise ValueError(f"triple {name} is empty")
            object.__setattr__(self, name, value)

    @classmethod
    def from_list(cls, items: Sequence[str]) -> Triple:
        if len(items) != 3:
            raise ValueError(f"expected 3 elements, got {len(items)}")
        return cls(*items)

    def as_list(self) -> list[str]:
        return [self.subject, self.relation, self.object]

    def text(self) -> str:
        """Human-readable ``s | r | o`` form, used as a lookup key by mocks."""
        return f"{self.subject} | {self.relation} | {self.object}"

    def __iter__(self) -> Iterator[str]:
        return iter((self.subject, self.relation, self.object))


@dataclass(frozen=True)
class TripleList:
    triples: tuple[Triple, ...] = ()
    origin: Origin = Origin.EXTRACTED

    def __post_init__(self) -> None:
        object.__setattr__(self, "triples", tuple(self.triples))
        object.__setattr__(self, "origin", Origin(self.origin))

    @classmethod
    def from_lists(cls, rows: Iterable[Sequence[str]], origin: Origin | str = Origin.EXTRACTED) -> TripleList:
        return cls(tuple(Triple.from_list(r) for r in rows), Origin(origin))

    def as_lists(self) -> list[list[str]]:
        return [t.as_list() for t in self.triples]

    def __len__(self) -> int:
        return len(self.triples)

    def __iter__(self) -> Iterator[Triple]:
        return iter(self.triples)

    def __getitem__(self, i: int) -> Triple:
        return self.triples[i]


@dataclass(frozen=True)
class EvaluationUnit:
    """One source text with its extracted triples and optional gold triples."""

    id: str
    text: str
    extracted: TripleList = field(default_factory=TripleList)
    gold: TripleList | None = None
    level: Level = Level.SENTENCE
    # closed GRE needs the entity pairs to classify; carried per unit
    entity_pairs: tuple[tuple[str, str], ...] | None = None
    split: str | None = None

    def __post_init__(self) -> None:
        if not self.id:
            raise ValueError("unit id is empty")
        if not self.text or not self.text.strip():
            raise ValueError(f"unit {self.id!r} has empty text")
        object.__setattr__(self, "level", Level(self.level))
        if self.gold is not None and len(self.gold) == 0:
            object.__setattr__(self, "gold", None)

    def with_extracted(self, extracted: TripleList) -> EvaluationUnit:
        return EvaluationUnit(
            id=self.id,
            text=self.text,
            extracted=extracted,
            gold=self.gold,
            level=self.level,
            entity_pairs=self.entity_pairs,
            split=self.split,
        )


@dataclass(frozen=True)
class ScoringConfig:
    similarity_threshold: float = 0.95
    topic_count: int = 50
    kl_epsilon: float = 1e-12
    triple_embedding_mode: EmbeddingMode = EmbeddingMode.SUM
    judge_retries: int = 2
    seed: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "triple_embedding_mode", EmbeddingMode(self.triple_embedding_mode))
        if not 0.0 < self.similarity_threshold <= 1.0:
            raise ValueError(f"similarity_threshold must be in (0, 1], got {self.similarity_threshold}")
        if self.topic_count < 2:
            raise ValueError(f"topic_count must be >= 2, got {self.topic_count}")
        if not self.kl_epsilon > 0:
            raise ValueError(f"kl_epsilon must be > 0, got {self.kl_epsilon}")
        if self.judge_retries < 0:
            raise ValueError("judge_retries must be >= 0")

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        d["triple_embedding_mode"] = self.triple_embedding_mode.value
        return d


def tokens_per_triple(t: Triple) -> int:
    """Number of whitespace-delimited tokens across subject, relation and object."""
    return sum(len(part.split()) for part in t)


def mean_tokens_per_triple(triples: TripleList) -> float | None:
    if len(triples) == 0:
        return None
    return sum(tokens_per_triple(t) for t in triples) / len(triples)


def _check_score(key: str, value: Any, where: str) -> None:
    if value is None:
        return
    if not isinstance(value, (int, float)) or isinstance(value, bool):
        raise TypeError(f"{where}: {key} must be a number, got {value!r}")
    if math.isnan(value) or not 0.0 <= value <= 1.0:
        raise ValueError(f"{where}: {key}={value} outside [0, 1]")


@dataclass
class ScoreReport:
    """Per-unit and corpus-level scores.

    ``per_unit`` maps unit id to a record. A score key that is missing from a
    record was not requested; a key mapped to ``None`` was requested but is
    undefined for that unit (for example ``cs`` without gold triples).
    """

    per_unit: dict[str, dict[str, Any]]
    aggregate: dict[str, float | None]
    metadata: dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        return {"per_unit": self.per_unit, "aggregate": self.aggregate, "metadata": self.metadata}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, ensure_ascii=False, allow_nan=False) + "\n"

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> ScoreReport:
        for key in ("per_unit", "aggregate", "metadata"):
            if key not in data:
                raise ValueError(f"report is missing {key!r}")
        report = cls(dict(data["per_unit"]), dict(data["aggregate"]), dict(data["metadata"]))
        for uid, rec in report.per_unit.items():
            for key in SCORE_KEYS:
                _check_score(key, rec.get(key), f"unit {uid}")
        return report

    @classmethod
    def from_json(cls, text: str) -> ScoreReport:
        return cls.from_dict(json.loads(text))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json(), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> ScoreReport:
        return cls.from_json(Path(path).read_text(encoding="utf-8"))


def aggregate_report(
    per_unit_scores: Sequence[Mapping[str, Any]],
    metadata: Mapping[str, Any] | None = None,
) -> ScoreReport:
    """Build a report whose aggregates are unweighted means over units.

    Each field is averaged only over the units where it is defined, so CS
    ends up averaged over the units that carry gold triples.
    """
    if not per_unit_scores:
        raise ValueError("empty corpus")

    per_unit: dict[str, dict[str, Any]] = {}
    for i, rec in enumerate(per_unit_scores):
        uid = str(rec.get("id", i))
        if uid in per_unit:
            raise ValueError(f"duplicate unit id {uid!r}")
        body = {k: v for k, v in rec.items() if k != "id"}
        for key in SCORE_KEYS:
            _check_score(key, body.get(key), f"unit {uid}")
        per_unit[uid] = body

    aggregate: dict[str, float | None] = {}
    for key in SCORE_KEYS + COUNT_KEYS:
        present = [rec[key] for rec in per_unit.values() if key in rec]
        if not present:
            continue
        defined = [float(v) for v in present if v is not None]
        # math.fsum keeps the mean independent of unit order
        aggregate[key] = math.fsum(defined) / len(defined) if defined else None

    return ScoreReport(per_unit, aggregate, dict(metadata or {}))
