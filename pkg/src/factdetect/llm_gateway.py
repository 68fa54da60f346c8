"""Uniform chat-completion interface with persistent response caching.

Two backends: an OpenAI-compatible HTTP endpoint and a deterministic scripted
fixture backend for offline runs and tests. Responses are cached in a
content-addressed directory keyed by the request digest and namespaced by run
index, so re-running a pipeline with a warm cache issues zero backend calls.
"""

from __future__ import annotations

import hashlib
import json
import os
import tempfile
import threading
import time
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Any, Callable, Iterable, Sequence

import requests

ENV_API_KEY = "FACTDETECT_API_KEY"
ENV_ENDPOINT = "FACTDETECT_ENDPOINT"

# Default completion budgets per pipeline stage.
MAX_TOKENS_PHRASE_MATCH = 256
MAX_TOKENS_QUESTION = 96
MAX_TOKENS_FACT = 128
MAX_TOKENS_REASONABILITY = 8
MAX_TOKENS_VERIFY = 512

_RETRYABLE_STATUS = {429, 500, 502, 503, 504}


class GatewayError(RuntimeError):
    """Transport-level failure: HTTP error after retries, or a fixture miss."""

    def __init__(self, message: str, status: int | None = None):
        super().__init__(message)
        self.status = status


@dataclass(frozen=True)
class LlmRequest:
    """One chat-completion request; the unit of caching."""

    model: str
    user: str
    system: str | None = None
    temperature: float = 0.0
    max_tokens: int = 256
    stop: tuple[str, ...] | None = None

    def __post_init__(self):
        if not self.user:
            raise ValueError("user prompt must be non-empty")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if self.max_tokens <= 0:
            raise ValueError("max_tokens must be positive")


@dataclass(frozen=True)
class LlmResponse:
    text: str
    from_cache: bool
    backend: str
    latency_ms: float


def cache_key(req: LlmRequest) -> str:
    """SHA-256 hex digest of the canonical request encoding.

    Canonical bytes: model, system (absent -> empty), user, temperature
    formatted with 6 decimals, max_tokens, stop (elements joined by 0x1E,
    absent -> empty), all UTF-8 and joined by the 0x1F unit separator.
    """
    parts = [
        req.model,
        req.system or "",
        req.user,
        f"{req.temperature:.6f}",
        str(req.max_tokens),
        "\x1e".join(req.stop) if req.stop else "",
    ]
    return hashlib.sha256("\x1f".join(parts).encode("utf-8")).hexdigest()


class ResponseCache:
    """Content-addressed directory of {key -> response JSON} files.

    Writes go to a temp file and are renamed into place, so concurrent
    writers of the same key are safe and the cache is append-only.
    """

    def __init__(self, root: str | Path, namespace: str = "run-1"):
        self.root = Path(root)
        self.namespace = namespace
        self._dir = self.root / namespace

    def with_namespace(self, namespace: str) -> "ResponseCache":
        return ResponseCache(self.root, namespace)

    def get(self, key: str) -> str | None:
        path = self._dir / f"{key}.json"
        if not path.exists():
            return None
        with open(path, encoding="utf-8") as f:
            payload = json.load(f)
        return payload["text"]

    def put(self, key: str, text: str, backend: str) -> None:
        self._dir.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(dir=self._dir, suffix=".tmp")
        try:
            with os.fdopen(fd, "w", encoding="utf-8") as f:
                json.dump({"text": text, "backend": backend}, f, ensure_ascii=False)
            os.replace(tmp, self._dir / f"{key}.json")
        finally:
            if os.path.exists(tmp):
                os.unlink(tmp)


class ScriptedBackend:
    """Deterministic fixture backend.

    Rules are looked up by exact request key first, then by the first
    substring rule in file order. ``user_contains`` may be a string or a list
    of strings that must all occur in the user prompt. In strict mode an
    unmatched request is an error; otherwise it yields an empty response.
    """

    name = "scripted"

    def __init__(self, rules: Sequence[dict[str, Any]], strict: bool = True):
        self.strict = strict
        self.calls = 0
        self._lock = threading.Lock()
        self._exact: dict[str, str] = {}
        self._substring: list[tuple[list[str], str]] = []
        for rule in rules:
            if "key" in rule:
                self._exact[rule["key"]] = rule["response"]
            elif "match" in rule:
                needle = rule["match"].get("user_contains")
                if needle is None:
                    raise ValueError(f"fixture rule without user_contains: {rule!r}")
                needles = [needle] if isinstance(needle, str) else list(needle)
                self._substring.append((needles, rule["response"]))
            else:
                raise ValueError(f"fixture rule needs 'key' or 'match': {rule!r}")

    def complete(self, req: LlmRequest) -> str:
        with self._lock:
            self.calls += 1
        key = cache_key(req)
        if key in self._exact:
            return self._exact[key]
        for needles, response in self._substring:
            if all(n in req.user for n in needles):
                return response
        if self.strict:
            raise GatewayError(f"fixture miss for prompt: {req.user[:80]!r}")
        return ""


def scripted_backend(fixture_path: str | Path, strict: bool = True) -> ScriptedBackend:
    """Load a JSONL fixture of {key, response} / {match:{user_contains}, response}."""
    rules = []
    with open(fixture_path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                rules.append(json.loads(line))
            except json.JSONDecodeError as e:
                raise ValueError(f"{fixture_path}: malformed fixture line {lineno}: {e}") from e
    return ScriptedBackend(rules, strict=strict)


class HttpBackend:
    """OpenAI-compatible chat-completions client with retry and backoff."""

    name = "http"

    def __init__(
        self,
        endpoint: str,
        api_key: str | None = None,
        retries: int = 3,
        backoff_s: float = 1.0,
        timeout_s: float = 120.0,
        sleep: Callable[[float], None] = time.sleep,
    ):
        self.endpoint = endpoint.rstrip("/")
        self.api_key = api_key if api_key is not None else os.environ.get(ENV_API_KEY)
        self.retries = retries
        self.backoff_s = backoff_s
        self.timeout_s = timeout_s
        self._sleep = sleep
        self.calls = 0
        self._lock = threading.Lock()

    def complete(self, req: LlmRequest) -> str:
        with self._lock:
            self.calls += 1
        messages = []
        if req.system:
            messages.append({"role": "system", "content": req.system})
        messages.append({"role": "user", "content": req.user})
        body: dict[str, Any] = {
            "model": req.model,
            "messages": messages,
            "temperature": req.temperature,
            "max_tokens": req.max_tokens,
        }
        if req.stop:
            body["stop"] = list(req.stop)
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"

        url = f"{self.endpoint}/chat/completions"
        last_error: Exception | None = None
        for attempt in range(self.retries + 1):
            if attempt:
                self._sleep(self.backoff_s * 2 ** (attempt - 1))
            try:
                resp = requests.post(url, json=body, headers=headers, timeout=self.timeout_s)
            except requests.Timeout as e:
                last_error = e
                continue
            except requests.RequestException as e:
                raise GatewayError(f"request to {url} failed: {e}") from e
            if resp.status_code in _RETRYABLE_STATUS:
                last_error = GatewayError(
                    f"{url} returned {resp.status_code}", status=resp.status_code
                )
                continue
            if resp.status_code >= 400:
                raise GatewayError(
                    f"{url} returned {resp.status_code}: {resp.text[:200]}",
                    status=resp.status_code,
                )
            data = resp.json()
            return data["choices"][0]["message"]["content"]
        status = getattr(last_error, "status", None)
        raise GatewayError(f"{url} failed after {self.retries} retries: {last_error}", status=status)


class LlmGateway:
    """Cache-first completion front end shared by all pipeline stages.

    ``complete`` is safe to call from many threads; in-flight backend calls
    are bounded by ``parallelism`` and ``complete_many`` reassembles results
    in input order.
    """

    def __init__(
        self,
        backend,
        cache: ResponseCache | None = None,
        parallelism: int = 4,
    ):
        self.backend = backend
        self.cache = cache
        self.parallelism = max(1, parallelism)
        self._inflight = threading.Semaphore(self.parallelism)
        self._stats_lock = threading.Lock()
        self.backend_calls = 0
        self.cache_hits = 0

    def for_run(self, run: int) -> "LlmGateway":
        """Gateway sharing this backend but caching under run namespace ``run``."""
        cache = self.cache.with_namespace(f"run-{run}") if self.cache else None
        gw = LlmGateway(self.backend, cache, self.parallelism)
        # Share counters so a driver sees totals across runs.
        gw._stats_lock = self._stats_lock
        gw._count = self._count
        gw._inflight = self._inflight
        return gw

    def _count(self, backend_call: bool) -> None:
        with self._stats_lock:
            if backend_call:
                self.backend_calls += 1
            else:
                self.cache_hits += 1

    def complete(self, req: LlmRequest) -> LlmResponse:
        key = cache_key(req)
        if self.cache is not None:
            cached = self.cache.get(key)
            if cached is not None:
                self._count(backend_call=False)
                return LlmResponse(cached, from_cache=True, backend=self.backend.name, latency_ms=0.0)
        start = time.monotonic()
        with self._inflight:
            text = self.backend.complete(req)
        latency = (time.monotonic() - start) * 1000.0
        if self.cache is not None:
            self.cache.put(key, text, self.backend.name)
        self._count(backend_call=True)
        return LlmResponse(text, from_cache=False, backend=self.backend.name, latency_ms=latency)

    def complete_many(self, requests_: Iterable[LlmRequest]) -> list[LlmResponse]:
        from concurrent.futures import ThreadPoolExecutor

        reqs = list(requests_)
        if not reqs:
            return []
        with ThreadPoolExecutor(max_workers=self.parallelism) as pool:
            return list(pool.map(self.complete, reqs))
