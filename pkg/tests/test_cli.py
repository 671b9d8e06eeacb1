import json

import pytest

from conftest import ANN_DIR, MINI
from greval.cli import main
from greval.core import ScoreReport
from greval.lda import TopicModel


def run(mini, *args):
    return main([args[0], "-c", str(mini / "config.yaml"), *args[1:]])


def test_train_lda(mini, capsys):
    assert run(mini, "train-lda") == 0
    out = capsys.readouterr().out
    assert "documents=10" in out and "K=5" in out and "seed=7" in out
    model = TopicModel.load(mini / "out" / "lda_model.json")
    assert model.K == 5
    first = (mini / "out" / "lda_model.json").read_bytes()
    assert run(mini, "train-lda") == 0
    assert (mini / "out" / "lda_model.json").read_bytes() == first


def test_missing_corpus(mini, capsys):
    assert run(mini, "train-lda", "--corpus", "nope.jsonl") == 1
    assert "corpus not found" in capsys.readouterr().err


def test_unknown_config_key(mini, capsys):
    assert run(mini, "score", "--set", "scoring.phi=0.9") == 1
    assert "phi" in capsys.readouterr().err


def test_extract_is_resumable(mini, capsys):
    assert run(mini, "extract") == 0
    path = mini / "out" / "extractions.jsonl"
    lines = path.read_text().splitlines()
    assert len(lines) == 10
    path.write_text("\n".join(lines[:6]) + "\n")
    capsys.readouterr()
    assert run(mini, "extract") == 0
    assert "skipped=6 extracted=4" in capsys.readouterr().out
    assert path.read_text().splitlines() == lines


def test_extract_backend_failure_is_recorded(mini, capsys):
    script = json.loads((mini / "extract_script.json").read_text())
    del script["extract: u03"]
    (mini / "extract_script.json").write_text(json.dumps(script))
    assert run(mini, "extract") == 3
    records = [json.loads(l) for l in (mini / "out" / "extractions.jsonl").read_text().splitlines()]
    assert [r["id"] for r in records if "error" in r] == ["u03"]
    assert run(mini, "score", "--metrics", "us") == 3
    report = ScoreReport.load(mini / "out" / "report.json")
    assert "u03" not in report.per_unit and len(report.per_unit) == 9


def test_extract_all_failing_is_backend_error(mini):
    (mini / "extract_script.json").write_text("{}")
    assert run(mini, "extract") == 2


def test_closed_strategy_needs_entity_pairs(mini, capsys):
    corpus = [json.loads(l) for l in (mini / "corpus.jsonl").read_text().splitlines()]
    for rec in corpus:
        rec.pop("entity_pairs")
    (mini / "corpus.jsonl").write_text("".join(json.dumps(r) + "\n" for r in corpus))
    code = run(mini, "extract", "--set", "extraction.strategy=closed", "--set", "extraction.relation_types=[born in]")
    assert code == 1
    assert "entity_pairs required for closed GRE" in capsys.readouterr().err
    assert not (mini / "out" / "extractions.jsonl").exists()


def test_gold_as_extracted_completeness(mini):
    assert run(mini, "score", "--gold-as-extracted", "--metrics", "cs") == 0
    report = ScoreReport.load(mini / "out" / "report.json")
    assert report.aggregate["cs"] == 1.0


def test_metric_selection(mini):
    assert run(mini, "train-lda") == 0
    assert run(mini, "extract") == 0
    assert run(mini, "score", "--metrics", "ts,us") == 0
    report = ScoreReport.load(mini / "out" / "report.json")
    for rec in report.per_unit.values():
        assert {k for k in rec if k in ("ts", "us", "fs", "gs", "cs")} == {"ts", "us"}
    assert set(report.aggregate) == {"ts", "us", "triple_count", "mean_tokens_per_triple"}


def test_cs_without_gold_lists_units(mini, capsys):
    corpus = [json.loads(l) for l in (mini / "corpus.jsonl").read_text().splitlines()]
    for rec in corpus:
        rec["gold"] = None
    (mini / "corpus.jsonl").write_text("".join(json.dumps(r) + "\n" for r in corpus))
    assert run(mini, "extract") == 0
    assert run(mini, "score", "--metrics", "cs") == 1
    err = capsys.readouterr().err
    assert "u01" in err and "u10" in err


def test_ts_without_model(mini, capsys):
    assert run(mini, "extract") == 0
    assert run(mini, "score", "--metrics", "ts") == 1
    assert "train-lda" in capsys.readouterr().err


def test_judge_failure_leaves_score_absent(mini):
    script = json.loads((mini / "judge_script.json").read_text())
    del script["fact: Paris | located in | Europe"]
    (mini / "judge_script.json").write_text(json.dumps(script))
    assert run(mini, "extract") == 0
    assert run(mini, "score", "--metrics", "fs,gs") == 3
    report = ScoreReport.load(mini / "out" / "report.json")
    assert report.per_unit["u02"]["fs"] is None
    assert report.per_unit["u02"]["gs"] == 1.0
    assert any("u02" in w for w in report.metadata["warnings"])


def test_run_matches_golden_and_is_repeatable(mini):
    assert run(mini, "run") == 0
    first = (mini / "out" / "report.json").read_bytes()
    assert first == (MINI / "golden_report.json").read_bytes()
    assert run(mini, "run") == 0
    assert (mini / "out" / "report.json").read_bytes() == first


def test_report_command(mini, capsys):
    assert main(["report", str(MINI / "golden_report.json")]) == 0
    out = capsys.readouterr().out
    assert "89.9" in out and "65.0" in out and "CS" in out


def test_trace_output(mini):
    assert run(mini, "extract") == 0
    assert run(mini, "score", "--metrics", "cs", "--trace") == 0
    trace = json.loads((mini / "out" / "report.matches.json").read_text())
    assert set(trace) == {f"u{i:02d}" for i in range(1, 11)}
    assert trace["u06"][0]["best_extracted_index"] is None


def test_timestamps_unless_deterministic(mini):
    assert run(mini, "score", "--gold-as-extracted", "--metrics", "cs", "--set", "deterministic=false") == 0
    meta = ScoreReport.load(mini / "out" / "report.json").metadata
    assert "started_at" in meta and "finished_at" in meta
    assert run(mini, "score", "--gold-as-extracted", "--metrics", "cs") == 0
    assert "started_at" not in ScoreReport.load(mini / "out" / "report.json").metadata


def test_sampling_flags(mini):
    assert run(mini, "score", "--gold-as-extracted", "--metrics", "cs", "--sample-size", "4", "--sample-seed", "3") == 0
    report = ScoreReport.load(mini / "out" / "report.json")
    assert len(report.per_unit) == 4
    assert run(mini, "score", "--gold-as-extracted", "--metrics", "cs", "--sample-size", "4") == 1


def test_merge_elo_agreement(tmp_path, capsys):
    merged = tmp_path / "merged.csv"
    assert main(["merge", str(ANN_DIR / "ann1.csv"), str(ANN_DIR / "ann2.csv"), "-o", str(merged)]) == 0
    assert merged.read_text() == (ANN_DIR / "merged_expected.csv").read_text()
    out = tmp_path / "elo.json"
    assert main(["elo", str(merged), "-o", str(out)]) == 0
    elo = json.loads(out.read_text())
    assert sum(elo["ratings"].values()) == pytest.approx(3000.0, abs=1e-9)
    assert elo["config"]["k_factor"] == 32.0 and "order" in elo["config"]["note"]
    capsys.readouterr()
    assert main(["agreement", str(ANN_DIR / "ann1.csv"), str(ANN_DIR / "ann2.csv")]) == 0
    assert json.loads(capsys.readouterr().out)["agreement"]["overall"] == 0.625


def test_bad_annotation_file(tmp_path, capsys):
    (tmp_path / "bad.csv").write_text("nope\n")
    assert main(["elo", str(tmp_path / "bad.csv")]) == 1
    assert "missing columns" in capsys.readouterr().err
