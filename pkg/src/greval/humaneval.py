"""Pairwise human annotations: merging, Elo ratings, inter-annotator agreement.

Annotation CSV columns: ``sample_id,metric,model_a,model_b,verdict,annotator_id``
with ``verdict`` one of ``a``, ``b`` or ``tie``.
"""

from __future__ import annotations

import csv
import math
from collections.abc import Iterable, Sequence
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

from .core import SCORE_KEYS

INITIAL_RATING = 1500.0
K_FACTOR = 32.0
CSV_FIELDS = ("sample_id", "metric", "model_a", "model_b", "verdict", "annotator_id")


class Verdict(str, Enum):
    A_WINS = "a_wins"
    B_WINS = "b_wins"
    TIE = "tie"

    @classmethod
    def from_csv(cls, value: str) -> Verdict:
        v = value.strip().lower()
        mapping = {"a": cls.A_WINS, "b": cls.B_WINS, "tie": cls.TIE}
        if v in mapping:
            return mapping[v]
        return cls(v)

    def to_csv(self) -> str:
        return {Verdict.A_WINS: "a", Verdict.B_WINS: "b", Verdict.TIE: "tie"}[self]

    def score_a(self) -> float:
        return {Verdict.A_WINS: 1.0, Verdict.B_WINS: 0.0, Verdict.TIE: 0.5}[self]


@dataclass(frozen=True)
class PairwiseAnnotation:
    sample_id: str
    metric: str
    model_a: str
    model_b: str
    verdict: Verdict
    annotator_id: str = ""

    def __post_init__(self) -> None:
        object.__setattr__(self, "verdict", Verdict(self.verdict))
        if self.model_a == self.model_b:
            raise ValueError(f"model_a and model_b are both {self.model_a!r}")
        if self.metric not in SCORE_KEYS:
            raise ValueError(f"unknown metric {self.metric!r}")

    def key(self) -> tuple[str, str, str, str]:
        return (self.sample_id, self.metric, self.model_a, self.model_b)


def merge_annotations(a1: PairwiseAnnotation, a2: PairwiseAnnotation) -> PairwiseAnnotation:
    """Combine two annotators' verdicts on the same comparison.

    Agreement keeps the shared verdict; a tie defers to the other annotator;
    opposite wins become a tie.
    """
    if a1.key() != a2.key():
        raise ValueError(f"cannot merge annotations for different comparisons: {a1.key()} vs {a2.key()}")
    v1, v2 = a1.verdict, a2.verdict
    if v1 == v2:
        merged = v1
    elif v1 is Verdict.TIE:
        merged = v2
    elif v2 is Verdict.TIE:
        merged = v1
    else:
        merged = Verdict.TIE
    annotator = "+".join(sorted((a1.annotator_id, a2.annotator_id)))
    return PairwiseAnnotation(a1.sample_id, a1.metric, a1.model_a, a1.model_b, merged, annotator)


def merge_annotation_sets(
    first: Sequence[PairwiseAnnotation],
    second: Sequence[PairwiseAnnotation],
) -> list[PairwiseAnnotation]:
    """Merge comparisons both annotators labelled; keep the rest unchanged.

    Output is sorted by comparison key.
    """
    by_key: dict[tuple, PairwiseAnnotation] = {}
    for ann in first:
        if ann.key() in by_key:
            raise ValueError(f"duplicate comparison {ann.key()} in first annotation set")
        by_key[ann.key()] = ann
    seen_second: set[tuple] = set()
    for ann in second:
        if ann.key() in seen_second:
            raise ValueError(f"duplicate comparison {ann.key()} in second annotation set")
        seen_second.add(ann.key())
        other = by_key.get(ann.key())
        by_key[ann.key()] = merge_annotations(other, ann) if other is not None else ann
    return [by_key[k] for k in sorted(by_key)]


def expected_score(r_a: float, r_b: float) -> float:
    return 1.0 / (1.0 + 10.0 ** ((r_b - r_a) / 400.0))


@dataclass(frozen=True)
class Comparison:
    model_a: str
    model_b: str
    verdict: Verdict


@dataclass(frozen=True)
class EloState:
    """Ratings plus the comparisons that produced them.

    ``tie_policy="no_change"`` leaves ratings untouched on a tie;
    ``"half"`` scores a tie as 0.5 for both sides (classic Elo, which only
    leaves ratings unchanged when they were equal).
    """

    ratings: dict[str, float] = field(default_factory=dict)
    k_factor: float = K_FACTOR
    initial_rating: float = INITIAL_RATING
    tie_policy: str = "no_change"
    history: tuple[Comparison, ...] = ()

    def __post_init__(self) -> None:
        if self.k_factor <= 0:
            raise ValueError("k_factor must be positive")
        if self.tie_policy not in ("no_change", "half"):
            raise ValueError(f"unknown tie_policy {self.tie_policy!r}")

    def rating(self, model: str) -> float:
        return self.ratings.get(model, self.initial_rating)


def elo_update(state: EloState, comparison: Comparison | PairwiseAnnotation) -> EloState:
    a, b, verdict = comparison.model_a, comparison.model_b, comparison.verdict
    ratings = dict(state.ratings)
    ratings.setdefault(a, state.initial_rating)
    ratings.setdefault(b, state.initial_rating)
    if not (verdict is Verdict.TIE and state.tie_policy == "no_change"):
        e_a = expected_score(ratings[a], ratings[b])
        delta = state.k_factor * (verdict.score_a() - e_a)
        # b's expected score is 1 - e_a, so b moves by exactly -delta
        ratings[a] += delta
        ratings[b] -= delta
    return EloState(
        ratings=ratings,
        k_factor=state.k_factor,
        initial_rating=state.initial_rating,
        tie_policy=state.tie_policy,
        history=state.history + (Comparison(a, b, verdict),),
    )


def replay(
    history: Iterable[Comparison],
    k_factor: float = K_FACTOR,
    initial_rating: float = INITIAL_RATING,
    tie_policy: str = "no_change",
) -> EloState:
    state = EloState(k_factor=k_factor, initial_rating=initial_rating, tie_policy=tie_policy)
    # mutate a working dict and build history once; elo_update would copy per step
    ratings: dict[str, float] = {}
    applied: list[Comparison] = []
    for c in history:
        step = elo_update(EloState(ratings, k_factor, initial_rating, tie_policy), c)
        ratings = step.ratings
        applied.append(Comparison(c.model_a, c.model_b, c.verdict))
    return EloState(ratings, state.k_factor, state.initial_rating, state.tie_policy, tuple(applied))


def elo_ratings(
    annotations: Sequence[PairwiseAnnotation],
    k_factor: float = K_FACTOR,
    initial_rating: float = INITIAL_RATING,
    tie_policy: str = "no_change",
    metric: str | None = None,
) -> EloState:
    """Elo over annotations applied in (sample_id, metric, model_a, model_b, annotator) order.

    Elo is order-dependent; the fixed sort makes results reproducible.
    """
    selected = [a for a in annotations if metric is None or a.metric == metric]
    ordered = sorted(selected, key=lambda a: a.key() + (a.annotator_id,))
    return replay(ordered, k_factor, initial_rating, tie_policy)


def _credit(v1: Verdict, v2: Verdict) -> float:
    if v1 == v2:
        return 1.0
    if Verdict.TIE in (v1, v2):
        return 0.5
    return 0.0


def tie_discounted_agreement(
    first: Sequence[PairwiseAnnotation | Verdict],
    second: Sequence[PairwiseAnnotation | Verdict],
) -> float:
    """Mean credit over aligned verdict pairs: 1 for a match, 0.5 if exactly one is a tie, else 0."""
    if len(first) != len(second):
        raise ValueError(f"misaligned annotation lists: {len(first)} vs {len(second)}")
    if not first:
        raise ValueError("no annotations to compare")
    total = 0.0
    for i, (x, y) in enumerate(zip(first, second)):
        if isinstance(x, PairwiseAnnotation) and isinstance(y, PairwiseAnnotation):
            if x.key() != y.key():
                raise ValueError(f"misaligned annotation lists at position {i}: {x.key()} vs {y.key()}")
            x, y = x.verdict, y.verdict
        total += _credit(Verdict(x), Verdict(y))
    return total / len(first)


def align(
    first: Sequence[PairwiseAnnotation],
    second: Sequence[PairwiseAnnotation],
) -> tuple[list[PairwiseAnnotation], list[PairwiseAnnotation]]:
    """Comparisons labelled by both annotators, paired up and sorted by key."""
    second_by_key = {a.key(): a for a in second}
    common = sorted(a.key() for a in first if a.key() in second_by_key)
    first_by_key = {a.key(): a for a in first}
    return [first_by_key[k] for k in common], [second_by_key[k] for k in common]


def agreement_by_metric(
    first: Sequence[PairwiseAnnotation],
    second: Sequence[PairwiseAnnotation],
) -> dict[str, float]:
    xs, ys = align(first, second)
    out: dict[str, float] = {}
    for metric in SCORE_KEYS:
        pairs = [(x, y) for x, y in zip(xs, ys) if x.metric == metric]
        if pairs:
            out[metric] = tie_discounted_agreement([p[0] for p in pairs], [p[1] for p in pairs])
    if xs:
        out["overall"] = tie_discounted_agreement(xs, ys)
    return out


def read_annotations(path: str | Path) -> list[PairwiseAnnotation]:
    out: list[PairwiseAnnotation] = []
    with Path(path).open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = [f for f in CSV_FIELDS if f not in (reader.fieldnames or [])]
        if missing:
            raise ValueError(f"{path}: missing columns {', '.join(missing)}")
        for lineno, row in enumerate(reader, 2):
            try:
                out.append(
                    PairwiseAnnotation(
                        sample_id=row["sample_id"],
                        metric=row["metric"].strip().lower(),
                        model_a=row["model_a"],
                        model_b=row["model_b"],
                        verdict=Verdict.from_csv(row["verdict"]),
                        annotator_id=row["annotator_id"],
                    )
                )
            except ValueError as exc:
                raise ValueError(f"{path} line {lineno}: {exc}") from exc
    return out


def write_annotations(path: str | Path, annotations: Iterable[PairwiseAnnotation]) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_FIELDS)
        for a in annotations:
            writer.writerow([a.sample_id, a.metric, a.model_a, a.model_b, a.verdict.to_csv(), a.annotator_id])


def rating_mass(state: EloState) -> float:
    return math.fsum(state.ratings.values())
