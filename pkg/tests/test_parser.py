import json

import pytest
from hypothesis import given, settings, strategies as st

from conftest import FIXTURES
from greval.core import Origin, Triple, TripleList
from greval.parser import (
    ExtractionRecord,
    PromptInputs,
    RawGeneration,
    Strategy,
    parse_triples,
    read_extractions,
    render_prompt,
    serialize_triples,
)

CASES = json.loads((FIXTURES / "parser_cases.json").read_text(encoding="utf-8"))


@pytest.mark.parametrize("case", CASES, ids=[c["name"] for c in CASES])
def test_golden_case(case):
    result = parse_triples(RawGeneration("u", case["raw"], "m"))
    assert result.triples.as_lists() == case["triples"]
    assert len(result.warnings) == case["warnings"], result.warnings


def test_golden_suite_size():
    assert len(CASES) == 50


def test_listed_examples():
    assert parse_triples('[["Alice", "live in", "Champaign"]]').triples == TripleList((Triple("Alice", "live in", "Champaign"),))
    res = parse_triples('Here are the triples: ["Paris", "capital of", "France"] and ["Paris", "located in", "Europe"]')
    assert [t.object for t in res.triples] == ["France", "Europe"]
    res = parse_triples("no triples found")
    assert len(res.triples) == 0 and res.warnings == []


field_text = st.text(
    alphabet=st.characters(blacklist_categories=("Cs",)),
    min_size=1,
    max_size=20,
).filter(lambda s: s.strip() == s and s != "")
triple = st.builds(Triple, field_text, field_text, field_text)
triple_lists = st.lists(triple, max_size=8).map(lambda ts: TripleList(tuple(ts), Origin.EXTRACTED))


@settings(max_examples=1000)
@given(triple_lists)
def test_serialize_round_trip(tl):
    res = parse_triples(serialize_triples(tl))
    assert res.triples == tl
    assert res.warnings == []


prose = st.text(alphabet=st.characters(blacklist_characters='[]"', blacklist_categories=("Cs",)), max_size=40)


@given(triple_lists, prose, prose)
def test_surrounding_prose_is_ignored(tl, before, after):
    body = serialize_triples(tl)
    assert parse_triples(before + body + after).triples == parse_triples(body).triples


@given(st.text(max_size=200))
def test_parser_is_total(raw):
    res = parse_triples(raw)
    assert all(isinstance(t, Triple) for t in res.triples)


def test_render_open_contains_text_and_demos():
    p = render_prompt(Strategy.OPEN, PromptInputs("Alice lives in Champaign."), "general")
    assert "Alice lives in Champaign." in p.rendered
    assert "Example 1" in p.rendered
    assert "Output only the list of triples" in p.rendered
    assert p.template == "gre_open.v1"


def test_render_is_pure():
    inputs = PromptInputs("Alice lives in Champaign.")
    assert render_prompt("open", inputs).rendered == render_prompt("open", inputs).rendered


def test_render_semi_open_golden():
    p = render_prompt(
        "semi_open",
        PromptInputs(
            "Cisplatin-induced nephrotoxicity was observed in two patients.",
            relation_types=("chemical induces disease",),
            entity_types=("chemical", "disease"),
        ),
        "biomedical",
    )
    expected = (FIXTURES / "prompts" / "semi_open_biomedical.txt").read_text(encoding="utf-8")
    assert p.rendered == expected
    assert "chemical, disease" in p.rendered


def test_render_closed_lists_pairs():
    p = render_prompt(
        "closed",
        PromptInputs("Alice lives in Champaign.", relation_types=("live in", "born in"), entity_pairs=(("Alice", "Champaign"),)),
    )
    assert "- (Alice, Champaign)" in p.rendered
    assert "live in, born in" in p.rendered


@pytest.mark.parametrize(
    "strategy, inputs, message",
    [
        ("closed", PromptInputs("x", relation_types=("r",)), "entity_pairs required for closed GRE"),
        ("closed", PromptInputs("x", entity_pairs=(("a", "b"),)), "relation_types required for closed GRE"),
        ("semi_open", PromptInputs("x", relation_types=("r",)), "entity_types required for semi-open GRE"),
        ("open", PromptInputs("  "), "source_text required"),
    ],
)
def test_render_missing_inputs(strategy, inputs, message):
    with pytest.raises(ValueError, match=message):
        render_prompt(strategy, inputs)


def test_extraction_file_round_trip(tmp_path):
    rec = ExtractionRecord.from_generation(RawGeneration("d1", '[["a", "b", "c"]] ["x"]', "m"))
    assert rec.triples.as_lists() == [["a", "b", "c"]]
    assert len(rec.warnings) == 1
    path = tmp_path / "ex.jsonl"
    later = ExtractionRecord("d1", "m", "", TripleList(), error="boom")
    path.write_text(rec.to_json() + "\n" + later.to_json() + "\n")
    loaded = read_extractions(path)
    assert loaded["d1"].error == "boom"
    path.write_text(rec.to_json() + "\n")
    assert read_extractions(path)["d1"] == rec
