"""LLM-as-judge scores: factualness and granularity.

Both scores query a text-completion client once per triple. Any object with
``model_id`` and a ``complete`` method fits; two are provided here, an
OpenAI-compatible HTTP client and a scripted mock that replays canned
responses.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import os
import re
import threading
import time
from collections.abc import Mapping, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Protocol, runtime_checkable

import requests

from . import prompts
from .core import EvaluationUnit, Triple

logger = logging.getLogger(__name__)

DEFAULT_TEMPERATURE = 0.3
DEFAULT_MAX_NEW_TOKENS = 800


class TransportError(RuntimeError):
    """The backend could not be reached or kept failing after retries."""


@runtime_checkable
class JudgeClient(Protocol):
    model_id: str

    def complete(
        self,
        prompt: str,
        *,
        max_new_tokens: int = DEFAULT_MAX_NEW_TOKENS,
        temperature: float = DEFAULT_TEMPERATURE,
        hint: str | None = None,
    ) -> str: ...


def fingerprint(prompt: str) -> str:
    return "sha256:" + hashlib.sha256(prompt.encode("utf-8")).hexdigest()


class ScriptedClient:
    """Replays canned responses; the backbone of the offline test fixtures.

    The script maps keys to a response string or a list of responses served
    in turn (the last one repeats). A call is looked up by the prompt
    fingerprint (``sha256:<hex>``) first, then by the caller's hint
    (``fact: s | r | o``, ``granularity: s | r | o``, ``extract: <unit id>``),
    then ``__default__``. A call nothing matches raises ``TransportError``.
    """

    DEFAULT_KEY = "__default__"

    def __init__(self, script: Mapping[str, str | Sequence[str]], model_id: str = "scripted-mock") -> None:
        self.script = {k: ([v] if isinstance(v, str) else list(v)) for k, v in script.items()}
        for key, responses in self.script.items():
            if not responses:
                raise ValueError(f"script entry {key!r} has no responses")
        self.model_id = model_id
        self._served: dict[str, int] = {}
        self._lock = threading.Lock()
        self.calls: list[tuple[str, str | None]] = []

    @classmethod
    def from_file(cls, path: str | Path, model_id: str = "scripted-mock") -> ScriptedClient:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        if not isinstance(data, dict):
            raise ValueError(f"{path}: script must be a JSON object")
        return cls(data, model_id)

    def complete(
        self,
        prompt: str,
        *,
        max_new_tokens: int = DEFAULT_MAX_NEW_TOKENS,
        temperature: float = DEFAULT_TEMPERATURE,
        hint: str | None = None,
    ) -> str:
        with self._lock:
            self.calls.append((prompt, hint))
            for key in (fingerprint(prompt), hint, self.DEFAULT_KEY):
                if key is not None and key in self.script:
                    responses = self.script[key]
                    i = self._served.get(key, 0)
                    self._served[key] = i + 1
                    return responses[min(i, len(responses) - 1)]
        raise TransportError(f"no scripted response for hint {hint!r}")


class HttpCompletionClient:
    """OpenAI-compatible completion endpoint with exponential backoff.

    ``endpoint="completions"`` posts a plain prompt; ``"chat"`` wraps it in a
    single user message. Rate-limit (429) and server errors are retried,
    honouring ``Retry-After``; other 4xx responses fail immediately.
    """

    def __init__(
        self,
        base_url: str,
        model: str,
        api_key_env: str | None = "OPENAI_API_KEY",
        endpoint: str = "completions",
        timeout: float = 120.0,
        retries: int = 4,
        backoff: float = 1.0,
        session: requests.Session | None = None,
    ) -> None:
        if endpoint not in ("completions", "chat"):
            raise ValueError(f"unknown endpoint {endpoint!r}")
        self.base_url = base_url.rstrip("/")
        self.model_id = model
        self.api_key_env = api_key_env
        self.endpoint = endpoint
        self.timeout = timeout
        self.retries = retries
        self.backoff = backoff
        self.session = session or requests.Session()

    def _request(self, prompt: str, max_new_tokens: int, temperature: float) -> tuple[str, dict]:
        body: dict = {"model": self.model_id, "max_tokens": max_new_tokens, "temperature": temperature}
        if self.endpoint == "chat":
            body["messages"] = [{"role": "user", "content": prompt}]
            return f"{self.base_url}/chat/completions", body
        body["prompt"] = prompt
        return f"{self.base_url}/completions", body

    def complete(
        self,
        prompt: str,
        *,
        max_new_tokens: int = DEFAULT_MAX_NEW_TOKENS,
        temperature: float = DEFAULT_TEMPERATURE,
        hint: str | None = None,
    ) -> str:
        url, body = self._request(prompt, max_new_tokens, temperature)
        headers = {"Content-Type": "application/json"}
        key = os.environ.get(self.api_key_env) if self.api_key_env else None
        if key:
            headers["Authorization"] = f"Bearer {key}"

        last = "no attempt made"
        for attempt in range(self.retries + 1):
            delay = self.backoff * 2**attempt
            try:
                resp = self.session.post(url, json=body, headers=headers, timeout=self.timeout)
            except requests.RequestException as exc:
                last = str(exc)
            else:
                if resp.status_code == 200:
                    try:
                        choice = resp.json()["choices"][0]
                        return choice["message"]["content"] if self.endpoint == "chat" else choice["text"]
                    except (ValueError, KeyError, IndexError, TypeError) as exc:
                        raise TransportError(f"unexpected response body: {exc}") from exc
                last = f"HTTP {resp.status_code}: {resp.text[:200]}"
                if resp.status_code != 429 and resp.status_code < 500:
                    raise TransportError(last)
                retry_after = resp.headers.get("Retry-After", "")
                if retry_after.isdigit():
                    delay = max(delay, float(retry_after))
            if attempt < self.retries:
                logger.info("completion request failed (%s), retrying in %.1fs", last, delay)
                time.sleep(delay)
        raise TransportError(f"completion request failed after {self.retries + 1} attempts: {last}")


@dataclass(frozen=True)
class JudgeSettings:
    temperature: float = DEFAULT_TEMPERATURE
    max_new_tokens: int = DEFAULT_MAX_NEW_TOKENS
    retries: int = 2
    max_workers: int = 4


@dataclass(frozen=True)
class FactVerdict:
    triple_index: int
    supported: bool
    raw_response: str
    attempts: int
    parsed: bool = True


@dataclass(frozen=True)
class SplitVerdict:
    triple_index: int
    split_count: int
    raw_response: str
    attempts: int = 1
    parsed: bool = True


_VERDICT = re.compile(r"(?<![A-Za-z0-9_])(true|false)(?![A-Za-z0-9_])", re.IGNORECASE)


def parse_verdict(response: str) -> bool | None:
    """First standalone true/false token, case-insensitive; None when absent."""
    m = _VERDICT.search(response)
    if m is None:
        return None
    return m.group(1).lower() == "true"


_BRACKET_GROUP = re.compile(r"\[[^\[\]]*\]")
_INTEGER = r"(?<![\w.\-])(\d+)(?!\w|\.\d)"
_ANSWER_INT = re.compile(r"answer\s*[:=]?\s*" + _INTEGER, re.IGNORECASE)
_LEADING_INT = re.compile(r"^\s*" + _INTEGER)
_ANY_INT = re.compile(_INTEGER)
_NO_SPLIT = re.compile(r"\b(cannot|can't|can\s+not|could\s+not|not\s+be\s+split|no\s+split|atomic|indivisible)\b", re.IGNORECASE)


def _looks_like_triple(group: str) -> bool:
    try:
        value = json.loads(group)
    except json.JSONDecodeError:
        value = [part.strip().strip("\"'") for part in group[1:-1].split(",")]
    return isinstance(value, list) and len(value) == 3 and all(str(v).strip() for v in value)


def parse_split_count(response: str) -> int | None:
    """Number of sub-triples a judge response reports, or None if unreadable.

    Order of evidence: an integer given as the answer (``Answer: 2`` or a
    leading number), any other bare integer outside brackets, the number of
    listed ``[s, r, o]`` groups, and finally a phrase saying the triple
    cannot be split (0).
    """
    outside = _BRACKET_GROUP.sub(" ", response)
    for pattern in (_ANSWER_INT, _LEADING_INT, _ANY_INT):
        m = pattern.search(outside)
        if m:
            return int(m.group(1))
    listed = sum(_looks_like_triple(g) for g in _BRACKET_GROUP.findall(response))
    if listed:
        return listed
    if _NO_SPLIT.search(response):
        return 0
    return None


def _triple_json(t: Triple) -> str:
    return json.dumps(t.as_list(), ensure_ascii=False)


def render_fact_prompt(d: str, t: Triple) -> str:
    return prompts.render("fact_check", {"source_text": d.strip(), "triple": _triple_json(t)})


def render_granularity_prompt(t: Triple) -> str:
    return prompts.render("granularity", {"triple": _triple_json(t)})


def check_fact(
    d: str,
    t: Triple,
    client: JudgeClient,
    settings: JudgeSettings = JudgeSettings(),
    triple_index: int = 0,
) -> FactVerdict:
    """Ask the judge whether ``t`` is supported by ``d``.

    Unreadable answers are retried; after the last retry the triple counts
    as unsupported. Transport errors propagate.
    """
    if not d or not d.strip():
        raise ValueError("source text is empty")
    prompt = render_fact_prompt(d, t)
    response = ""
    for attempt in range(1, settings.retries + 2):
        response = client.complete(
            prompt,
            max_new_tokens=settings.max_new_tokens,
            temperature=settings.temperature,
            hint=f"fact: {t.text()}",
        )
        verdict = parse_verdict(response)
        if verdict is not None:
            return FactVerdict(triple_index, verdict, response, attempt)
    logger.warning("no true/false verdict for %r after %d attempts; counting as unsupported", t.text(), attempt)
    return FactVerdict(triple_index, False, response, attempt, parsed=False)


def check_granularity(
    t: Triple,
    client: JudgeClient,
    settings: JudgeSettings = JudgeSettings(),
    triple_index: int = 0,
) -> SplitVerdict:
    """Ask the judge how many sub-triples ``t`` splits into (0 if atomic).

    Unreadable answers are retried, then treated as 0 so judge noise is not
    penalised.
    """
    prompt = render_granularity_prompt(t)
    response = ""
    for attempt in range(1, settings.retries + 2):
        response = client.complete(
            prompt,
            max_new_tokens=settings.max_new_tokens,
            temperature=settings.temperature,
            hint=f"granularity: {t.text()}",
        )
        count = parse_split_count(response)
        if count is not None:
            return SplitVerdict(triple_index, count, response, attempt)
    logger.warning("no split count for %r after %d attempts; assuming 0", t.text(), attempt)
    return SplitVerdict(triple_index, 0, response, attempt, parsed=False)


def _fan_out(fn, items: Sequence, max_workers: int) -> list:
    if max_workers <= 1 or len(items) <= 1:
        return [fn(i, item) for i, item in enumerate(items)]
    with ThreadPoolExecutor(max_workers=max_workers) as pool:
        futures = [pool.submit(fn, i, item) for i, item in enumerate(items)]
        return [f.result() for f in futures]


def check_facts(unit: EvaluationUnit, client: JudgeClient, settings: JudgeSettings = JudgeSettings()) -> list[FactVerdict]:
    return _fan_out(
        lambda i, t: check_fact(unit.text, t, client, settings, i),
        list(unit.extracted),
        settings.max_workers,
    )


def check_granularities(unit: EvaluationUnit, client: JudgeClient, settings: JudgeSettings = JudgeSettings()) -> list[SplitVerdict]:
    return _fan_out(
        lambda i, t: check_granularity(t, client, settings, i),
        list(unit.extracted),
        settings.max_workers,
    )


def factualness_from_verdicts(verdicts: Sequence[FactVerdict]) -> float:
    if not verdicts:
        raise ValueError("factualness undefined for empty extraction")
    return sum(v.supported for v in verdicts) / len(verdicts)


def granularity_from_counts(counts: Sequence[int]) -> float:
    """Mean of exp(-n) over per-triple split counts."""
    if not counts:
        raise ValueError("granularity undefined for empty extraction")
    if any(n < 0 for n in counts):
        raise ValueError("split counts must be non-negative")
    return math.fsum(math.exp(-n) for n in counts) / len(counts)


def factualness(unit: EvaluationUnit, client: JudgeClient, settings: JudgeSettings = JudgeSettings()) -> float:
    if len(unit.extracted) == 0:
        raise ValueError("factualness undefined for empty extraction")
    return factualness_from_verdicts(check_facts(unit, client, settings))


def granularity(unit: EvaluationUnit, client: JudgeClient, settings: JudgeSettings = JudgeSettings()) -> float:
    if len(unit.extracted) == 0:
        raise ValueError("granularity undefined for empty extraction")
    return granularity_from_counts([v.split_count for v in check_granularities(unit, client, settings)])
