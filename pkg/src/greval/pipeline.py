"""End-to-end steps behind the CLI: train the topic model, extract, score."""

from __future__ import annotations

import hashlib
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any

from . import __version__, data, lda, prompts
from .config import BackendSettings, ConfigError, EmbeddingSettings, PipelineConfig
from .core import SCORE_KEYS, EvaluationUnit, Origin, ScoreReport, TripleList, aggregate_report, mean_tokens_per_triple
from .embed import EmbeddingCache, EmbeddingError, HashEmbeddingProvider, HttpEmbeddingProvider
from .judge import (
    HttpCompletionClient,
    JudgeSettings,
    ScriptedClient,
    TransportError,
    check_facts,
    check_granularities,
    granularity_from_counts,
)
from .metrics import MatchRecord, completeness_score, uniqueness_score, write_match_trace
from .parser import (
    Domain,
    ExtractionRecord,
    PromptInputs,
    RawGeneration,
    Strategy,
    read_extractions,
    render_prompt,
    validate_inputs,
)

logger = logging.getLogger(__name__)

CONVENTIONS = {
    "ts_empty_extraction": 0.0,
    "us_single_triple": 1.0,
    "cs_tie_break": "lowest extracted index",
    "fs_unparseable_verdict": "unsupported",
    "gs_unparseable_verdict": "split count 0",
    "aggregation": "unweighted mean over units where the score is defined",
}


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def make_client(settings: BackendSettings, cfg: PipelineConfig):
    if settings.kind == "mock_scripted":
        if settings.script is None:
            raise ConfigError("mock_scripted backend needs a script file")
        return ScriptedClient.from_file(cfg.resolve(settings.script), model_id=settings.model or "scripted-mock")  # type: ignore[arg-type]
    if settings.kind == "http_completion":
        return HttpCompletionClient(
            base_url=settings.base_url,  # type: ignore[arg-type]
            model=settings.model,  # type: ignore[arg-type]
            api_key_env=settings.api_key_env,
            endpoint=settings.endpoint,
            timeout=settings.timeout,
            retries=settings.transport_retries,
        )
    raise ConfigError(f"unknown backend kind {settings.kind!r}")


def make_embedding_provider(settings: EmbeddingSettings):
    if settings.kind == "mock":
        return HashEmbeddingProvider(dim=settings.dim, seed=settings.seed)
    if not (settings.base_url and settings.model):
        raise ConfigError("embedding provider 'http' needs base_url and model")
    return HttpEmbeddingProvider(
        base_url=settings.base_url,
        model=settings.model,
        api_key_env=settings.api_key_env,
        timeout=settings.timeout,
        max_parallel=settings.max_parallel,
        batch_size=settings.batch_size,
    )


def prepare_corpus(cfg: PipelineConfig) -> data.CorpusManifest:
    """Load the corpus, keep the configured split, filter by gold size, then sample."""
    corpus = data.load_corpus(cfg.resolve(cfg.corpus))  # type: ignore[arg-type]
    corpus = data.select_split(corpus, cfg.sample.split)
    if cfg.sample.min_gold > 0:
        corpus = data.filter_min_gold(corpus, cfg.sample.min_gold)
    if cfg.sample.size is not None:
        corpus = data.sample(corpus, cfg.sample.size, cfg.sample.seed)  # type: ignore[arg-type]
    return corpus


# --- train-lda -------------------------------------------------------------


@dataclass
class TrainInfo:
    model_path: Path
    documents: int
    vocabulary: int
    K: int
    seed: int


def run_train_lda(cfg: PipelineConfig) -> TrainInfo:
    scoring = cfg.scoring_config()
    if cfg.lda.train_corpus is not None:
        source = cfg.resolve(cfg.lda.train_corpus)
    else:
        source = cfg.resolve(cfg.corpus)
    if source is None or not source.exists():
        raise ConfigError(f"training corpus not found: {source}")
    corpus = data.select_split(data.load_corpus(source), cfg.lda.train_split)
    model = lda.train(
        data.texts(corpus.units),
        K=scoring.topic_count,
        iterations=cfg.lda.iterations,
        seed=scoring.seed,
        alpha=cfg.lda.alpha,
        beta=cfg.lda.beta,
    )
    path = cfg.output_path(cfg.lda.model_path)
    path.parent.mkdir(parents=True, exist_ok=True)
    model.save(path)
    return TrainInfo(path, len(corpus), model.vocab_size, model.K, model.training_seed)


# --- extract ---------------------------------------------------------------


@dataclass
class ExtractStats:
    output: Path
    total: int
    skipped: int = 0
    done: int = 0
    errors: list[str] = field(default_factory=list)


def _prompt_inputs(cfg: PipelineConfig, unit: EvaluationUnit) -> PromptInputs:
    ex = cfg.extraction
    return PromptInputs(
        source_text=unit.text,
        relation_types=tuple(ex.relation_types) if ex.relation_types else None,
        entity_types=tuple(ex.entity_types) if ex.entity_types else None,
        entity_pairs=unit.entity_pairs,
    )


def run_extract(cfg: PipelineConfig) -> ExtractStats:
    """Prompt the backend for every unit not yet in the output file.

    Units whose earlier attempt recorded an error are retried. Lines are
    written in corpus order by a single writer.
    """
    strategy = Strategy(cfg.extraction.strategy)
    domain = Domain(cfg.extraction.domain)
    corpus = prepare_corpus(cfg)
    # validate every unit before sending anything
    for unit in corpus.units:
        try:
            validate_inputs(strategy, _prompt_inputs(cfg, unit))
        except ValueError as exc:
            raise ConfigError(f"unit {unit.id}: {exc}") from exc

    out_path = cfg.output_path(cfg.extraction.output)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    existing = read_extractions(out_path) if out_path.exists() else {}
    todo = [u for u in corpus.units if u.id not in existing or existing[u.id].error is not None]
    stats = ExtractStats(out_path, len(corpus), skipped=len(corpus) - len(todo))
    if not todo:
        return stats

    backend = cfg.extraction.backend
    client = make_client(backend, cfg)

    def work(unit: EvaluationUnit) -> ExtractionRecord:
        prompt = render_prompt(strategy, _prompt_inputs(cfg, unit), domain)
        try:
            raw = client.complete(
                prompt.rendered,
                max_new_tokens=backend.max_new_tokens,
                temperature=backend.temperature,
                hint=f"extract: {unit.id}",
            )
        except TransportError as exc:
            return ExtractionRecord(unit.id, client.model_id, "", TripleList(), error=str(exc))
        return ExtractionRecord.from_generation(RawGeneration(unit.id, raw, client.model_id))

    with out_path.open("a", encoding="utf-8", newline="\n") as fh, ThreadPoolExecutor(max_workers=max(1, backend.max_parallel)) as pool:
        for rec in pool.map(work, todo):
            fh.write(rec.to_json() + "\n")
            fh.flush()
            if rec.error is not None:
                stats.errors.append(rec.id)
            else:
                stats.done += 1
    return stats


# --- score -----------------------------------------------------------------


@dataclass
class ScoreOutcome:
    report: ScoreReport
    path: Path | None
    failed_units: list[str]


def available_metrics(cfg: PipelineConfig, corpus: data.CorpusManifest) -> list[str]:
    metrics = []
    if cfg.output_path(cfg.lda.model_path).exists():
        metrics.append("ts")
    if cfg.embedding is not None:
        metrics.append("us")
    if cfg.judge is not None:
        metrics += ["fs", "gs"]
    if cfg.embedding is not None and any(u.gold is not None for u in corpus.units):
        metrics.append("cs")
    return [m for m in SCORE_KEYS if m in metrics]


def _check_requested(cfg: PipelineConfig, corpus: data.CorpusManifest, metrics: list[str]) -> None:
    unknown = [m for m in metrics if m not in SCORE_KEYS]
    if unknown:
        raise ConfigError(f"unknown metrics: {', '.join(unknown)}")
    if "ts" in metrics and not cfg.output_path(cfg.lda.model_path).exists():
        raise ConfigError(f"ts requested but LDA model {cfg.output_path(cfg.lda.model_path)} does not exist; run train-lda")
    if ("us" in metrics or "cs" in metrics) and cfg.embedding is None:
        raise ConfigError("us/cs requested but no embedding provider is configured")
    if ("fs" in metrics or "gs" in metrics) and cfg.judge is None:
        raise ConfigError("fs/gs requested but no judge is configured")
    if "cs" in metrics:
        missing = [u.id for u in corpus.units if u.gold is None]
        if len(missing) == len(corpus.units):
            shown = ", ".join(missing[:20]) + (" ..." if len(missing) > 20 else "")
            raise ConfigError(f"cs requested but no unit has gold triples: {shown}")


def run_score(
    cfg: PipelineConfig,
    extraction_path: Path | None = None,
    metrics: list[str] | None = None,
    gold_as_extracted: bool = False,
    out_path: Path | None = None,
    trace: bool = False,
) -> ScoreOutcome:
    started = _now()
    scoring = cfg.scoring_config()
    corpus = prepare_corpus(cfg)
    if metrics is None:
        metrics = cfg.metrics or available_metrics(cfg, corpus)
    _check_requested(cfg, corpus, metrics)

    records: dict[str, ExtractionRecord] = {}
    if gold_as_extracted:
        no_gold = [u.id for u in corpus.units if u.gold is None]
        if no_gold:
            raise ConfigError(f"gold-as-extracted needs gold for every unit; missing: {', '.join(no_gold[:20])}")
    else:
        extraction_path = extraction_path or cfg.output_path(cfg.extraction.output)
        if not extraction_path.exists():
            raise ConfigError(f"extraction file not found: {extraction_path}")
        records = read_extractions(extraction_path)

    model = lda.TopicModel.load(cfg.output_path(cfg.lda.model_path)) if "ts" in metrics else None
    provider = make_embedding_provider(cfg.embedding) if cfg.embedding is not None and {"us", "cs"} & set(metrics) else None
    cache = EmbeddingCache(cfg.resolve(cfg.embedding.cache_path) if cfg.embedding and cfg.embedding.cache_path else None)
    client = make_client(cfg.judge, cfg) if cfg.judge is not None and {"fs", "gs"} & set(metrics) else None
    judge_settings = JudgeSettings(
        temperature=cfg.judge.temperature if cfg.judge else 0.3,
        max_new_tokens=cfg.judge.max_new_tokens if cfg.judge else 800,
        retries=scoring.judge_retries,
        max_workers=cfg.judge.max_parallel if cfg.judge else 1,
    )
    closed_mode = cfg.extraction.strategy == Strategy.CLOSED.value and not gold_as_extracted

    warnings: list[str] = []
    failed: list[str] = []
    traces: dict[str, Any] = {}

    def score_unit(unit: EvaluationUnit) -> dict[str, Any] | None:
        notes: list[str] = []
        if gold_as_extracted:
            extracted = TripleList(unit.gold.triples, Origin.EXTRACTED)  # type: ignore[union-attr]
        else:
            rec = records.get(unit.id)
            if rec is None:
                return {"_fail": f"unit {unit.id}: no extraction record"}
            if rec.error is not None:
                return {"_fail": f"unit {unit.id}: extraction failed: {rec.error}"}
            extracted = rec.triples
        unit = unit.with_extracted(extracted)
        n = len(extracted)
        out: dict[str, Any] = {"id": unit.id}
        if "ts" in metrics:
            if n == 0:
                notes.append(f"unit {unit.id}: empty extraction, ts = 0")
            out["ts"] = lda.topical_similarity(model, unit, scoring.kl_epsilon, cfg.lda.infer_sweeps)  # type: ignore[arg-type]
        if "us" in metrics:
            out["us"] = uniqueness_score(extracted, provider, scoring, cache) if n else None
        if "fs" in metrics:
            out["fs"] = None
            if n:
                try:
                    verdicts = check_facts(unit, client, judge_settings)  # type: ignore[arg-type]
                    out["fs"] = sum(v.supported for v in verdicts) / n
                    notes += [f"unit {unit.id}: triple {v.triple_index} fact verdict unreadable" for v in verdicts if not v.parsed]
                except TransportError as exc:
                    notes.append(f"unit {unit.id}: fs absent, judge failed: {exc}")
                    out["_partial"] = True
        if "gs" in metrics:
            out["gs"] = None
            if n:
                try:
                    splits = check_granularities(unit, client, judge_settings)  # type: ignore[arg-type]
                    out["gs"] = granularity_from_counts([s.split_count for s in splits])
                    notes += [f"unit {unit.id}: triple {s.triple_index} split count unreadable" for s in splits if not s.parsed]
                except TransportError as exc:
                    notes.append(f"unit {unit.id}: gs absent, judge failed: {exc}")
                    out["_partial"] = True
        if "cs" in metrics:
            out["cs"] = None
            if unit.gold is not None:
                out["cs"], matches = completeness_score(unit.gold, extracted, provider, scoring, closed_mode, cache)
                if trace:
                    traces[unit.id] = [m.to_dict() for m in matches]
        out["triple_count"] = n
        out["mean_tokens_per_triple"] = mean_tokens_per_triple(extracted)
        out["_notes"] = notes
        return out

    try:
        with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
            results = list(pool.map(score_unit, corpus.units))
    except EmbeddingError as exc:
        raise TransportError(f"embedding provider failed: {exc}") from exc

    per_unit = []
    for res in results:
        if "_fail" in res:
            failed.append(res["_fail"])
            continue
        warnings += res.pop("_notes")
        if res.pop("_partial", False):
            failed.append(f"unit {res['id']}: judge failure")
        per_unit.append(res)
    warnings += failed
    if not per_unit:
        raise TransportError("no unit could be scored: " + "; ".join(failed[:5]))

    metadata: dict[str, Any] = {
        "format": "greval-report/1",
        "package_version": __version__,
        "corpus": {"name": corpus.name, "level": corpus.level.value, "units": len(corpus), "sampler": data.SAMPLER_ID},
        "metrics": metrics,
        "gold_as_extracted": gold_as_extracted,
        "closed_mode": closed_mode,
        "config": cfg.snapshot(),
        "backends": {
            "embedding": provider.provider_id if provider is not None else None,
            "judge": client.model_id if client is not None else None,
            "lda_model_sha256": _sha256(cfg.output_path(cfg.lda.model_path)) if model is not None else None,
        },
        "templates": prompts.versions(),
        "conventions": CONVENTIONS,
        "warnings": warnings,
    }
    if not cfg.deterministic:
        metadata["started_at"] = started
        metadata["finished_at"] = _now()

    report = aggregate_report(per_unit, metadata)
    path = None
    if out_path is not None:
        out_path.parent.mkdir(parents=True, exist_ok=True)
        report.save(out_path)
        path = out_path
        if trace:
            write_match_trace(
                out_path.with_suffix(".matches.json"),
                {uid: [MatchRecord(**m) for m in ms] for uid, ms in traces.items()},
            )
    return ScoreOutcome(report, path, failed)


def render_table(reports: dict[str, ScoreReport]) -> str:
    """Console table of aggregates, scores as percentages with one decimal."""
    cols = ["#tri", "#tok", "TS", "US", "FS", "GS", "CS"]
    keys = ["triple_count", "mean_tokens_per_triple", "ts", "us", "fs", "gs", "cs"]
    width = max([len(n) for n in reports] + [5])
    lines = [f"{'':<{width}}  " + "  ".join(f"{c:>6}" for c in cols)]
    for name, rep in reports.items():
        cells = []
        for key in keys:
            value = rep.aggregate.get(key)
            if value is None:
                cells.append(f"{'-':>6}")
            elif key in SCORE_KEYS:
                cells.append(f"{100 * value:>6.1f}")
            else:
                cells.append(f"{value:>6.1f}")
        lines.append(f"{name:<{width}}  " + "  ".join(cells))
    return "\n".join(lines)
