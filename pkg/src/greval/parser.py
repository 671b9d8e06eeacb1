"""Parse LLM generations into triples and render extraction prompts.

The parser looks for bracketed expressions (``["s", "r", "o"]`` or
``[["s", "r", "o"], ...]``) anywhere in the generation and decodes each one
as JSON. Anything that does not decode to arrays of exactly three non-empty
strings is dropped and reported as a warning; nothing is repaired.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, NamedTuple

from . import prompts
from .core import Origin, Triple, TripleList

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class RawGeneration:
    unit_id: str
    raw: str
    model_id: str = ""


class ParseResult(NamedTuple):
    triples: TripleList
    warnings: list[str]


@dataclass
class _Span:
    start: int
    end: int  # index one past the closing bracket, or len(text) if unterminated
    terminated: bool

    def body(self, text: str) -> str:
        stop = self.end - 1 if self.terminated else self.end
        return text[self.start + 1 : stop]


def _scan(text: str) -> list[_Span]:
    """Top-level balanced ``[...]`` spans; double-quoted strings are opaque."""
    spans: list[_Span] = []
    depth = 0
    start = 0
    in_string = False
    escaped = False
    for i, ch in enumerate(text):
        if depth == 0:
            if ch == "[":
                depth, start = 1, i
            continue
        if in_string:
            if escaped:
                escaped = False
            elif ch == "\\":
                escaped = True
            elif ch == '"':
                in_string = False
            continue
        if ch == '"':
            in_string = True
        elif ch == "[":
            depth += 1
        elif ch == "]":
            depth -= 1
            if depth == 0:
                spans.append(_Span(start, i + 1, True))
    if depth > 0:
        spans.append(_Span(start, len(text), False))
    return spans


def _as_triple(value: Any, warnings: list[str], where: str) -> Triple | None:
    if not isinstance(value, list) or len(value) != 3:
        arity = len(value) if isinstance(value, list) else "non-list"
        warnings.append(f"{where}: expected 3 elements, got {arity}")
        return None
    if not all(isinstance(v, str) for v in value):
        warnings.append(f"{where}: triple elements must all be strings")
        return None
    if not all(v.strip() for v in value):
        warnings.append(f"{where}: triple has an empty field")
        return None
    return Triple(*value)


def _decode(text: str, span: _Span, out: list[Triple], warnings: list[str]) -> None:
    where = f"offset {span.start}"
    if span.terminated:
        try:
            value = json.loads(text[span.start : span.end])
        except json.JSONDecodeError:
            value = None
        else:
            if value == []:
                return
            if all(isinstance(v, list) for v in value):
                for j, inner in enumerate(value):
                    if inner and all(isinstance(x, list) for x in inner):
                        warnings.append(f"{where}[{j}]: nesting deeper than two levels")
                        continue
                    t = _as_triple(inner, warnings, f"{where}[{j}]")
                    if t is not None:
                        out.append(t)
            else:
                t = _as_triple(value, warnings, where)
                if t is not None:
                    out.append(t)
            return

    reason = "malformed JSON" if span.terminated else "unterminated bracket"
    body = span.body(text)
    inner_spans = _scan(body)
    warnings.append(f"{where}: {reason}" + (f", scanning {len(inner_spans)} inner candidates" if inner_spans else ""))
    offset = span.start + 1
    for inner in inner_spans:
        shifted = _Span(inner.start + offset, inner.end + offset, inner.terminated)
        _decode(text, shifted, out, warnings)


def parse_triples(gen: RawGeneration | str) -> ParseResult:
    """Extract triples from raw model output, in order of appearance.

    Never raises; problems are returned as warnings.
    """
    raw = gen.raw if isinstance(gen, RawGeneration) else gen
    triples: list[Triple] = []
    warnings: list[str] = []
    for span in _scan(raw or ""):
        _decode(raw, span, triples, warnings)
    if warnings and isinstance(gen, RawGeneration):
        logger.debug("unit %s: %d parse warnings", gen.unit_id, len(warnings))
    return ParseResult(TripleList(tuple(triples), Origin.EXTRACTED), warnings)


def serialize_triples(triples: TripleList) -> str:
    """Double-bracket JSON form; ``parse_triples`` reads it back unchanged."""
    return json.dumps(triples.as_lists(), ensure_ascii=True)


class Strategy(str, Enum):
    CLOSED = "closed"
    SEMI_OPEN = "semi_open"
    OPEN = "open"


class Domain(str, Enum):
    GENERAL = "general"
    BIOMEDICAL = "biomedical"


@dataclass(frozen=True)
class PromptInputs:
    source_text: str
    relation_types: tuple[str, ...] | None = None
    entity_types: tuple[str, ...] | None = None
    entity_pairs: tuple[tuple[str, str], ...] | None = None
    # overrides the domain's shipped demonstrations when given
    demonstrations: str | None = None


@dataclass(frozen=True)
class GrePrompt:
    strategy: Strategy
    rendered: str
    inputs: PromptInputs = field(repr=False)
    template: str = ""


_REQUIRED = {
    Strategy.CLOSED: ("entity_pairs", "relation_types"),
    Strategy.SEMI_OPEN: ("relation_types", "entity_types"),
    Strategy.OPEN: (),
}


def validate_inputs(strategy: Strategy | str, inputs: PromptInputs) -> None:
    strategy = Strategy(strategy)
    if not inputs.source_text or not inputs.source_text.strip():
        raise ValueError("source_text required")
    label = {"closed": "closed", "semi_open": "semi-open", "open": "open"}[strategy.value]
    for name in _REQUIRED[strategy]:
        if not getattr(inputs, name):
            raise ValueError(f"{name} required for {label} GRE")


def render_prompt(
    strategy: Strategy | str,
    inputs: PromptInputs,
    domain: Domain | str = Domain.GENERAL,
) -> GrePrompt:
    strategy = Strategy(strategy)
    domain = Domain(domain)
    validate_inputs(strategy, inputs)

    demos = inputs.demonstrations
    if demos is None:
        demos = prompts.load(f"demos_{domain.value}").strip()
    values = {
        "demonstrations": demos,
        "source_text": inputs.source_text.strip(),
    }
    if inputs.relation_types:
        values["relation_types"] = ", ".join(inputs.relation_types)
    if inputs.entity_types:
        values["entity_types"] = ", ".join(inputs.entity_types)
    if inputs.entity_pairs:
        values["entity_pairs"] = "\n".join(f"- ({h}, {t})" for h, t in inputs.entity_pairs)

    name = f"gre_{strategy.value}"
    rendered = prompts.render(name, values)
    return GrePrompt(strategy, rendered, inputs, prompts.versioned_name(name))


@dataclass(frozen=True)
class ExtractionRecord:
    """One line of an extraction file.

    ``{"id": ..., "model": ..., "raw": ..., "triples": [[s, r, o], ...]}``,
    plus ``"warnings"`` from parsing and ``"error"`` when the backend failed.
    """

    id: str
    model: str
    raw: str
    triples: TripleList
    warnings: tuple[str, ...] = ()
    error: str | None = None

    def to_json(self) -> str:
        rec: dict[str, Any] = {
            "id": self.id,
            "model": self.model,
            "raw": self.raw,
            "triples": self.triples.as_lists(),
            "warnings": list(self.warnings),
        }
        if self.error is not None:
            rec["error"] = self.error
        return json.dumps(rec, ensure_ascii=False)

    @classmethod
    def from_dict(cls, rec: dict[str, Any]) -> ExtractionRecord:
        return cls(
            id=str(rec["id"]),
            model=str(rec.get("model", "")),
            raw=str(rec.get("raw", "")),
            triples=TripleList.from_lists(rec.get("triples") or []),
            warnings=tuple(rec.get("warnings") or ()),
            error=rec.get("error"),
        )

    @classmethod
    def from_generation(cls, gen: RawGeneration) -> ExtractionRecord:
        triples, warnings = parse_triples(gen)
        return cls(gen.unit_id, gen.model_id, gen.raw, triples, tuple(warnings))


def read_extractions(path: str | Path) -> dict[str, ExtractionRecord]:
    """Load an extraction file; a later line for the same id replaces an earlier one."""
    out: dict[str, ExtractionRecord] = {}
    with Path(path).open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = ExtractionRecord.from_dict(json.loads(line))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise ValueError(f"{path} line {lineno}: {exc}") from exc
            out[rec.id] = rec
    return out
