"""Command line entry point.

Exit codes: 0 success, 1 validation error, 2 backend/transport failure,
3 partial completion (some units failed).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from collections.abc import Sequence
from pathlib import Path

from . import __version__, humaneval
from .config import ConfigError, PipelineConfig, load_config
from .core import ScoreReport
from .data import CorpusError
from .embed import EmbeddingError
from .judge import TransportError
from .pipeline import render_table, run_extract, run_score, run_train_lda

EXIT_OK, EXIT_INVALID, EXIT_BACKEND, EXIT_PARTIAL = 0, 1, 2, 3

log = logging.getLogger("greval")


def _config_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("-c", "--config", type=Path, help="pipeline YAML file")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                   help="override any config field, e.g. --set scoring.similarity_threshold=0.9")
    p.add_argument("--corpus", help="corpus JSONL (config: corpus)")
    p.add_argument("--output-dir", help="config: output_dir")
    p.add_argument("--seed", type=int, help="config: scoring.seed")
    p.add_argument("--sample-size", type=int, help="config: sample.size")
    p.add_argument("--sample-seed", type=int, help="config: sample.seed")
    p.add_argument("--workers", type=int, help="config: workers")
    p.add_argument("--deterministic", action="store_true", default=None, help="omit timestamps from reports")


def _load(args: argparse.Namespace) -> PipelineConfig:
    overrides = list(args.overrides)
    for flag, key in (
        ("corpus", "corpus"),
        ("output_dir", "output_dir"),
        ("seed", "scoring.seed"),
        ("sample_size", "sample.size"),
        ("sample_seed", "sample.seed"),
        ("workers", "workers"),
        ("deterministic", "deterministic"),
    ):
        value = getattr(args, flag, None)
        if value is not None:
            overrides.append(f"{key}={json.dumps(value)}")
    return load_config(args.config, overrides)


def _metrics(value: str | None) -> list[str] | None:
    if value is None:
        return None
    return [m.strip().lower() for m in value.split(",") if m.strip()]


def cmd_train_lda(args: argparse.Namespace) -> int:
    cfg = _load(args)
    cfg.validate()
    info = run_train_lda(cfg)
    print(f"documents={info.documents} vocabulary={info.vocabulary} K={info.K} seed={info.seed} model={info.model_path}")
    return EXIT_OK


def cmd_extract(args: argparse.Namespace) -> int:
    cfg = _load(args)
    cfg.validate()
    stats = run_extract(cfg)
    print(f"units={stats.total} skipped={stats.skipped} extracted={stats.done} errors={len(stats.errors)} output={stats.output}")
    if stats.errors:
        for uid in stats.errors:
            print(f"extraction failed: {uid}", file=sys.stderr)
        return EXIT_BACKEND if stats.done == 0 and stats.skipped == 0 else EXIT_PARTIAL
    return EXIT_OK


def _score(cfg: PipelineConfig, args: argparse.Namespace) -> int:
    out = Path(args.out) if args.out else cfg.output_path("report.json")
    outcome = run_score(
        cfg,
        extraction_path=Path(args.extractions) if getattr(args, "extractions", None) else None,
        metrics=_metrics(args.metrics),
        gold_as_extracted=args.gold_as_extracted,
        out_path=out,
        trace=args.trace,
    )
    print(render_table({cfg.extraction.backend.model or "report": outcome.report}))
    print(f"report={outcome.path}")
    for msg in outcome.failed_units:
        print(msg, file=sys.stderr)
    return EXIT_PARTIAL if outcome.failed_units else EXIT_OK


def cmd_score(args: argparse.Namespace) -> int:
    cfg = _load(args)
    cfg.validate()
    return _score(cfg, args)


def cmd_run(args: argparse.Namespace) -> int:
    """train-lda (when needed), extract, score."""
    cfg = _load(args)
    cfg.validate()
    metrics = _metrics(args.metrics)
    wants_ts = metrics is None and cfg.metrics is None or "ts" in (metrics or cfg.metrics or [])
    if wants_ts and (args.retrain or not cfg.output_path(cfg.lda.model_path).exists()):
        info = run_train_lda(cfg)
        print(f"trained LDA: documents={info.documents} vocabulary={info.vocabulary} K={info.K} seed={info.seed}")
    status = EXIT_OK
    if not args.gold_as_extracted:
        stats = run_extract(cfg)
        print(f"extracted={stats.done} skipped={stats.skipped} errors={len(stats.errors)}")
        if stats.errors:
            status = EXIT_PARTIAL
    args.extractions = None
    return max(status, _score(cfg, args))


def cmd_report(args: argparse.Namespace) -> int:
    reports = {}
    for path in args.reports:
        reports[Path(path).stem if len(args.reports) > 1 else Path(path).name] = ScoreReport.load(path)
    print(render_table(reports))
    return EXIT_OK


def cmd_merge(args: argparse.Namespace) -> int:
    merged = humaneval.merge_annotation_sets(humaneval.read_annotations(args.first), humaneval.read_annotations(args.second))
    humaneval.write_annotations(args.out, merged)
    print(f"merged={len(merged)} output={args.out}")
    return EXIT_OK


def cmd_elo(args: argparse.Namespace) -> int:
    annotations = []
    for path in args.annotations:
        annotations += humaneval.read_annotations(path)
    kwargs = {"k_factor": args.k_factor, "initial_rating": args.initial_rating, "tie_policy": args.tie_policy}
    overall = humaneval.elo_ratings(annotations, **kwargs)
    metrics = sorted({a.metric for a in annotations})
    result = {
        "ratings": dict(sorted(overall.ratings.items())),
        "by_metric": {m: dict(sorted(humaneval.elo_ratings(annotations, metric=m, **kwargs).ratings.items())) for m in metrics},
        "config": {
            **kwargs,
            "comparisons": len(overall.history),
            "ordering": "sorted by (sample_id, metric, model_a, model_b, annotator_id)",
            "note": "Elo ratings depend on the order comparisons are applied",
        },
    }
    text = json.dumps(result, indent=2) + "\n"
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    print(text, end="")
    return EXIT_OK


def cmd_agreement(args: argparse.Namespace) -> int:
    first = humaneval.read_annotations(args.first)
    second = humaneval.read_annotations(args.second)
    xs, _ = humaneval.align(first, second)
    if not xs:
        raise ValueError("the two annotation files share no comparisons")
    result = {"pairs": len(xs), "agreement": humaneval.agreement_by_metric(first, second)}
    text = json.dumps(result, indent=2) + "\n"
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    print(text, end="")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="greval", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train-lda", help="train the topic model used for topical similarity")
    _config_args(p)
    p.set_defaults(func=cmd_train_lda)

    p = sub.add_parser("extract", help="prompt the extraction backend for every unit (resumable)")
    _config_args(p)
    p.set_defaults(func=cmd_extract)

    for name, func, help_text in (
        ("score", cmd_score, "score an extraction file"),
        ("run", cmd_run, "train-lda if needed, extract, then score"),
    ):
        p = sub.add_parser(name, help=help_text)
        _config_args(p)
        p.add_argument("--metrics", help="comma-separated subset of ts,us,fs,gs,cs (default: all available)")
        p.add_argument("--gold-as-extracted", action="store_true", help="score the gold triples themselves")
        p.add_argument("--out", help="report path (default: <output_dir>/report.json)")
        p.add_argument("--trace", action="store_true", help="also write per-unit completeness match records")
        if name == "score":
            p.add_argument("--extractions", help="extraction JSONL (default: <output_dir>/<extraction.output>)")
        else:
            p.add_argument("--retrain", action="store_true", help="retrain the topic model even if it exists")
        p.set_defaults(func=func)

    p = sub.add_parser("report", help="print report aggregates as a percentage table")
    p.add_argument("reports", nargs="+")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("merge", help="merge two annotators' pairwise judgements")
    p.add_argument("first")
    p.add_argument("second")
    p.add_argument("-o", "--out", required=True)
    p.set_defaults(func=cmd_merge)

    p = sub.add_parser("elo", help="Elo ratings from pairwise annotations")
    p.add_argument("annotations", nargs="+")
    p.add_argument("--k-factor", type=float, default=humaneval.K_FACTOR)
    p.add_argument("--initial-rating", type=float, default=humaneval.INITIAL_RATING)
    p.add_argument("--tie-policy", choices=["no_change", "half"], default="no_change")
    p.add_argument("-o", "--out")
    p.set_defaults(func=cmd_elo)

    p = sub.add_parser("agreement", help="tie-discounted agreement between two annotators")
    p.add_argument("first")
    p.add_argument("second")
    p.add_argument("-o", "--out")
    p.set_defaults(func=cmd_agreement)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (TransportError, EmbeddingError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_BACKEND
    except (ConfigError, CorpusError, ValueError, KeyError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
