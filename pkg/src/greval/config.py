"""Pipeline configuration: one YAML file, every field overridable from the CLI.

Relative paths are resolved against the directory of the config file. The
config snapshot stored in reports keeps paths exactly as written so reports
stay identical across machines.
"""

from __future__ import annotations

import copy
from dataclasses import asdict, dataclass, field, fields, is_dataclass
from pathlib import Path
from typing import Any

import yaml

from .core import ScoringConfig


class ConfigError(ValueError):
    pass


@dataclass
class SampleSettings:
    size: int | None = None
    seed: int | None = None
    min_gold: int = 0
    split: str | None = None


@dataclass
class LdaSettings:
    model_path: str = "lda_model.json"
    iterations: int = 200
    alpha: float | None = None
    beta: float = 0.01
    infer_sweeps: int = 50
    # train on this split of the corpus file (all units when null)
    train_split: str | None = None
    # or on a separate corpus file
    train_corpus: str | None = None


@dataclass
class EmbeddingSettings:
    kind: str = "mock"  # mock | http
    dim: int = 64
    seed: int = 0
    base_url: str | None = None
    model: str | None = None
    api_key_env: str | None = "OPENAI_API_KEY"
    timeout: float = 60.0
    max_parallel: int = 4
    batch_size: int = 256
    cache_path: str | None = None


@dataclass
class BackendSettings:
    kind: str = "mock_scripted"  # mock_scripted | http_completion
    model: str | None = None
    base_url: str | None = None
    api_key_env: str | None = "OPENAI_API_KEY"
    endpoint: str = "completions"
    temperature: float = 0.3
    max_new_tokens: int = 800
    transport_retries: int = 4
    timeout: float = 120.0
    max_parallel: int = 4
    script: str | None = None


@dataclass
class ExtractionSettings:
    strategy: str = "open"
    domain: str = "general"
    relation_types: list[str] | None = None
    entity_types: list[str] | None = None
    output: str = "extractions.jsonl"
    backend: BackendSettings = field(default_factory=BackendSettings)


@dataclass
class PipelineConfig:
    corpus: str | None = None
    output_dir: str = "out"
    metrics: list[str] | None = None
    workers: int = 1
    # drop wall-clock timestamps from reports so reruns are byte-identical
    deterministic: bool = False
    sample: SampleSettings = field(default_factory=SampleSettings)
    scoring: dict[str, Any] = field(default_factory=dict)
    lda: LdaSettings = field(default_factory=LdaSettings)
    embedding: EmbeddingSettings | None = None
    judge: BackendSettings | None = None
    extraction: ExtractionSettings = field(default_factory=ExtractionSettings)
    base_dir: Path = field(default=Path("."), repr=False, compare=False)

    def scoring_config(self) -> ScoringConfig:
        try:
            return ScoringConfig(**self.scoring)
        except TypeError as exc:
            raise ConfigError(f"scoring: {exc}") from exc
        except ValueError as exc:
            raise ConfigError(f"scoring: {exc}") from exc

    def resolve(self, path: str | None) -> Path | None:
        if path is None:
            return None
        p = Path(path)
        return p if p.is_absolute() else self.base_dir / p

    def output_path(self, path: str) -> Path:
        p = Path(path)
        if p.is_absolute():
            return p
        return self.resolve(self.output_dir) / p  # type: ignore[operator]

    def snapshot(self) -> dict[str, Any]:
        data = asdict(self)
        data.pop("base_dir")
        data["scoring"] = self.scoring_config().to_dict()
        return data

    def validate(self, need_corpus: bool = True) -> None:
        if need_corpus:
            if self.corpus is None:
                raise ConfigError("corpus path is required")
            if not self.resolve(self.corpus).exists():  # type: ignore[union-attr]
                raise ConfigError(f"corpus not found: {self.resolve(self.corpus)}")
        if self.sample.size is not None and self.sample.seed is None:
            raise ConfigError("sample.seed is required when sample.size is set")
        self.scoring_config()
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        if self.embedding is not None and self.embedding.kind not in ("mock", "http"):
            raise ConfigError(f"embedding.kind must be mock or http, got {self.embedding.kind!r}")
        for label, backend in (("judge", self.judge), ("extraction.backend", self.extraction.backend)):
            if backend is None:
                continue
            if backend.kind not in ("mock_scripted", "http_completion"):
                raise ConfigError(f"{label}.kind must be mock_scripted or http_completion, got {backend.kind!r}")
            if backend.kind == "mock_scripted" and backend.script is not None:
                if not self.resolve(backend.script).exists():  # type: ignore[union-attr]
                    raise ConfigError(f"{label}.script not found: {self.resolve(backend.script)}")
            if backend.kind == "http_completion" and not (backend.base_url and backend.model):
                raise ConfigError(f"{label} needs base_url and model for http_completion")


def _build(cls: type, data: Any, where: str) -> Any:
    if data is None:
        return None
    if not isinstance(data, dict):
        raise ConfigError(f"{where or 'config'}: expected a mapping, got {type(data).__name__}")
    known = {f.name: f for f in fields(cls)}
    kwargs = {}
    for key, value in data.items():
        if key not in known or key == "base_dir":
            raise ConfigError(f"unknown config key {where + '.' if where else ''}{key}")
        sub = _NESTED.get((cls.__name__, key))
        kwargs[key] = _build(sub, value, f"{where}.{key}" if where else key) if sub is not None else value
    return cls(**kwargs)


_NESTED: dict[tuple[str, str], type] = {
    ("PipelineConfig", "sample"): SampleSettings,
    ("PipelineConfig", "lda"): LdaSettings,
    ("PipelineConfig", "embedding"): EmbeddingSettings,
    ("PipelineConfig", "judge"): BackendSettings,
    ("PipelineConfig", "extraction"): ExtractionSettings,
    ("ExtractionSettings", "backend"): BackendSettings,
}


def apply_override(data: dict[str, Any], assignment: str) -> None:
    """Apply ``a.b.c=value``; the value is parsed as YAML (so ``3``, ``null``, ``[a, b]`` work)."""
    if "=" not in assignment:
        raise ConfigError(f"override {assignment!r} is not of the form key=value")
    dotted, raw = assignment.split("=", 1)
    keys = dotted.strip().split(".")
    node = data
    for key in keys[:-1]:
        node = node.setdefault(key, {})
        if not isinstance(node, dict):
            raise ConfigError(f"override {dotted!r}: {key} is not a section")
    node[keys[-1]] = yaml.safe_load(raw)


def load_config(
    path: str | Path | None,
    overrides: list[str] | None = None,
) -> PipelineConfig:
    data: dict[str, Any] = {}
    base_dir = Path.cwd()
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        loaded = yaml.safe_load(path.read_text(encoding="utf-8"))
        if loaded is not None and not isinstance(loaded, dict):
            raise ConfigError(f"{path}: top level must be a mapping")
        data = copy.deepcopy(loaded or {})
        base_dir = path.resolve().parent
    for assignment in overrides or []:
        apply_override(data, assignment)
    try:
        cfg = _build(PipelineConfig, data, "")
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc
    cfg.base_dir = base_dir
    return cfg


def to_plain(obj: Any) -> Any:
    if is_dataclass(obj):
        return {k: to_plain(v) for k, v in asdict(obj).items()}
    return obj
