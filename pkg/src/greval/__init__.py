"""Scoring toolkit for generative relation extraction.

Five per-unit scores, each in [0, 1]:

* ``ts`` topical similarity between source text and extracted triples (LDA),
* ``us`` uniqueness of the extracted triples (embedding similarity),
* ``fs`` factualness checked by an LLM judge,
* ``gs`` granularity, penalising triples the judge can split further,
* ``cs`` completeness against gold triples by soft matching.
"""

__version__ = "0.1.0"

from .core import EvaluationUnit, ScoreReport, ScoringConfig, Triple, TripleList, aggregate_report, tokens_per_triple
from .parser import parse_triples, render_prompt

__all__ = [
    "EvaluationUnit",
    "ScoreReport",
    "ScoringConfig",
    "Triple",
    "TripleList",
    "aggregate_report",
    "parse_triples",
    "render_prompt",
    "tokens_per_triple",
    "__version__",
]
