"""Pluggable generation backends with persistent caching and bounded concurrency.

Two HTTP wire protocols (chat-completion style and local-generate style) plus
a deterministic scripted mock for tests and offline runs. Transport failures
degrade to an empty-string generation by default, which downstream counts as
a parse failure; strict_transport turns them into hard errors instead.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import tempfile
import threading
import time
from dataclasses import dataclass
from pathlib import Path

import httpx

from .errors import (
    BackendUnreachable,
    ConfigError,
    HttpError,
    MalformedResponse,
    MockFixtureMiss,
)
from .model import RunConfig

log = logging.getLogger(__name__)

OPENAI_COMPATIBLE = "openai_compatible"
OLLAMA_COMPATIBLE = "ollama_compatible"
SCRIPTED_MOCK = "scripted_mock"

API_KEY_ENV = "APIE_API_KEY"
CACHE_DIR_ENV = "APIE_CACHE_DIR"

RETRYABLE_STATUSES = {429, 500, 502, 503, 504}


@dataclass(frozen=True)
class BackendDescriptor:
    kind: str
    endpoint: str = ""
    model: str = ""
    timeout: float = 60.0
    max_retries: int = 2
    max_inflight: int = 4
    retry_backoff: float = 0.5
    fixture_path: str = ""  # scripted_mock only

    def __post_init__(self):
        if self.kind not in (OPENAI_COMPATIBLE, OLLAMA_COMPATIBLE, SCRIPTED_MOCK):
            raise ConfigError("unknown_backend", f"unknown backend kind {self.kind!r}")
        if self.kind != SCRIPTED_MOCK and not self.endpoint:
            raise ConfigError("missing_endpoint", f"backend kind {self.kind!r} requires an endpoint")
        if self.max_inflight < 1:
            raise ConfigError("bad_inflight", "max_inflight must be >= 1")

    def to_obj(self) -> dict:
        return {
            "kind": self.kind,
            "endpoint": self.endpoint,
            "model": self.model,
            "timeout": self.timeout,
            "max_retries": self.max_retries,
            "max_inflight": self.max_inflight,
            "fixture_path": self.fixture_path,
        }


def parse_backend_spec(spec: str, model: str = "", **overrides) -> BackendDescriptor:
    """Build a descriptor from a CLI-style string: mock:FIXTURE.jsonl,
    openai:http://host:port, or ollama:http://host:port."""
    prefix, _, rest = spec.partition(":")
    if prefix == "mock":
        return BackendDescriptor(kind=SCRIPTED_MOCK, fixture_path=rest, model=model, **overrides)
    if prefix == "openai":
        return BackendDescriptor(kind=OPENAI_COMPATIBLE, endpoint=rest, model=model, **overrides)
    if prefix == "ollama":
        return BackendDescriptor(kind=OLLAMA_COMPATIBLE, endpoint=rest, model=model, **overrides)
    raise ConfigError("unknown_backend", f"cannot parse backend spec {spec!r}")


@dataclass(frozen=True)
class GenerationRequest:
    prompt: str
    temperature: float
    sample_index: int  # j in [1, k]; keeps the k probes distinct in the cache
    seed: int


def prompt_digest(prompt: str) -> str:
    return hashlib.sha256(prompt.encode("utf-8")).hexdigest()


def request_key(desc: BackendDescriptor, req: GenerationRequest) -> str:
    material = json.dumps(
        [desc.kind, desc.model, req.prompt, req.temperature, req.sample_index, req.seed],
        ensure_ascii=False,
    )
    return hashlib.sha256(material.encode("utf-8")).hexdigest()


class ResponseCache:
    """One JSON file per request key, written atomically; safe for concurrent
    writers (last writer wins) and durable across process restarts."""

    def __init__(self, root: str | Path):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)

    def _path(self, key: str) -> Path:
        return self.root / key[:2] / f"{key}.json"

    def lookup(self, key: str) -> str | None:
        path = self._path(key)
        try:
            entry = json.loads(path.read_text(encoding="utf-8"))
            return entry["response"]
        except FileNotFoundError:
            return None
        except (ValueError, KeyError, OSError):
            log.warning("corrupt cache entry %s treated as a miss", path)
            return None

    def store(self, key: str, response: str) -> None:
        path = self._path(key)
        path.parent.mkdir(parents=True, exist_ok=True)
        entry = {"key": key, "response": response, "created_at": time.time()}
        fd, tmp = tempfile.mkstemp(dir=path.parent, suffix=".tmp")
        try:
            with os.fdopen(fd, "w", encoding="utf-8") as fh:
                json.dump(entry, fh, ensure_ascii=False)
            os.replace(tmp, path)
        except OSError:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise


class OpenAiStyleBackend:
    """POST {endpoint}/chat/completions with the prompt as one user message."""

    def __init__(self, desc: BackendDescriptor, client: httpx.Client | None = None):
        self.desc = desc
        self.client = client or httpx.Client(timeout=desc.timeout)

    def send(self, req: GenerationRequest) -> str:
        body = {
            "model": self.desc.model,
            "messages": [{"role": "user", "content": req.prompt}],
            "temperature": req.temperature,
        }
        headers = {}
        api_key = os.environ.get(API_KEY_ENV, "")
        if api_key:
            headers["Authorization"] = f"Bearer {api_key}"
        url = self.desc.endpoint.rstrip("/") + "/chat/completions"
        response = self.client.post(url, json=body, headers=headers)
        if response.status_code != 200:
            raise HttpError(response.status_code)
        try:
            payload = response.json()
            content = payload["choices"][0]["message"]["content"]
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise MalformedResponse(f"chat-completion response missing content: {exc}") from exc
        if not isinstance(content, str):
            raise MalformedResponse("chat-completion content is not a string")
        return content


class OllamaStyleBackend:
    """POST {endpoint}/api/generate with streaming forced off."""

    def __init__(self, desc: BackendDescriptor, client: httpx.Client | None = None):
        self.desc = desc
        self.client = client or httpx.Client(timeout=desc.timeout)

    def send(self, req: GenerationRequest) -> str:
        body = {
            "model": self.desc.model,
            "prompt": req.prompt,
            "stream": False,
            "options": {"temperature": req.temperature},
        }
        url = self.desc.endpoint.rstrip("/") + "/api/generate"
        response = self.client.post(url, json=body)
        if response.status_code != 200:
            raise HttpError(response.status_code)
        try:
            payload = response.json()
            text = payload["response"]
        except (ValueError, KeyError, TypeError) as exc:
            raise MalformedResponse(f"generate response missing text: {exc}") from exc
        if not isinstance(text, str):
            raise MalformedResponse("generate response text is not a string")
        return text


class ScriptedMockBackend:
    """Replays fixture responses keyed by the digest of the prompt.

    Fixture lines: {"prompt_digest": "...", "responses": ["...", ...]};
    sample_index j maps to responses[j-1], and indexes past the end yield the
    empty-string sentinel. An unknown digest raises: a stale fixture must be
    loud, not quietly produce empty generations.
    """

    def __init__(self, desc: BackendDescriptor, fixtures: dict[str, list[str]] | None = None):
        self.desc = desc
        if fixtures is not None:
            self.fixtures = dict(fixtures)
        else:
            self.fixtures = load_mock_fixture(desc.fixture_path)

    def send(self, req: GenerationRequest) -> str:
        digest = prompt_digest(req.prompt)
        if digest not in self.fixtures:
            raise MockFixtureMiss(f"no fixture entry for prompt digest {digest}")
        responses = self.fixtures[digest]
        index = req.sample_index - 1
        return responses[index] if 0 <= index < len(responses) else ""


def load_mock_fixture(path: str | Path) -> dict[str, list[str]]:
    fixtures: dict[str, list[str]] = {}
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError("missing_fixture", f"cannot read mock fixture {path}: {exc}") from exc
    for line in text.splitlines():
        if not line.strip():
            continue
        entry = json.loads(line)
        fixtures[entry["prompt_digest"]] = list(entry["responses"])
    return fixtures


def build_backend(desc: BackendDescriptor, client: httpx.Client | None = None):
    if desc.kind == OPENAI_COMPATIBLE:
        return OpenAiStyleBackend(desc, client)
    if desc.kind == OLLAMA_COMPATIBLE:
        return OllamaStyleBackend(desc, client)
    return ScriptedMockBackend(desc)


class Gateway:
    """Cache-first generation front end with retries and an inflight bound.

    The semaphore wraps the actual transport send, so whatever fan-out the
    caller uses, at most max_inflight requests are outstanding at once.
    """

    def __init__(self, cfg: RunConfig, backend=None, cache: ResponseCache | None = None):
        if cfg.backend is None:
            raise ConfigError("missing_backend", "run config has no backend descriptor")
        self.cfg = cfg
        self.desc = cfg.backend
        self.backend = backend if backend is not None else build_backend(self.desc)
        cache_root = cfg.cache_dir or os.environ.get(CACHE_DIR_ENV) or ".apie-cache"
        self.cache = cache if cache is not None else ResponseCache(cache_root)
        self._inflight = threading.BoundedSemaphore(self.desc.max_inflight)
        self._stats_lock = threading.Lock()
        self.stats = {"cache_hits": 0, "cache_misses": 0, "requests": 0, "retries": 0, "failures": 0}

    def _bump(self, name: str, n: int = 1) -> None:
        with self._stats_lock:
            self.stats[name] += n

    def _send_with_retries(self, req: GenerationRequest) -> str:
        attempts = self.desc.max_retries + 1
        last_error: Exception | None = None
        for attempt in range(attempts):
            if attempt:
                self._bump("retries")
                time.sleep(self.desc.retry_backoff * (2 ** (attempt - 1)))
            try:
                with self._inflight:
                    self._bump("requests")
                    return self.backend.send(req)
            except MockFixtureMiss:
                raise  # configuration bug, never degrade
            except HttpError as exc:
                last_error = exc
                if exc.status not in RETRYABLE_STATUSES:
                    break
            except (httpx.TimeoutException, httpx.TransportError, MalformedResponse) as exc:
                last_error = exc
        raise BackendUnreachable(f"backend failed after {attempts} attempts: {last_error}")

    def generate(self, prompt: str, sample_index: int) -> str:
        """One generation, cache-first; failures degrade to the empty sentinel
        unless strict_transport is set."""
        req = GenerationRequest(
            prompt=prompt,
            temperature=self.cfg.temperature,
            sample_index=sample_index,
            seed=self.cfg.seed,
        )
        key = request_key(self.desc, req)
        cached = self.cache.lookup(key)
        if cached is not None:
            self._bump("cache_hits")
            return cached
        self._bump("cache_misses")
        try:
            response = self._send_with_retries(req)
        except MockFixtureMiss:
            raise
        except BackendUnreachable:
            self._bump("failures")
            if self.cfg.strict_transport:
                raise
            return ""  # sentinel; parses as a format failure downstream
        self.cache.store(key, response)
        return response

    def generate_k(self, prompt: str, k: int) -> list[str]:
        """Exactly k generations in sample_index order 1..k."""
        if k < 1:
            raise ConfigError("k_too_small", f"generate_k needs k >= 1, got {k}")
        return [self.generate(prompt, j) for j in range(1, k + 1)]
