"""Uniform access to the two inference capabilities the pipeline needs.

Free-text LLM completion and pairwise entailment, each reachable over HTTP or
through deterministic in-process mocks, fronted by a persistent call cache so
identical pipeline executions produce identical reports.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from datetime import datetime, timezone
from enum import Enum
from pathlib import Path
from typing import Callable, Hashable, Mapping, Protocol, TypeVar

import requests

from .errors import BackendReplyError, ConfigError, TransportError

logger = logging.getLogger(__name__)

K = TypeVar("K", bound=Hashable)

RETRY_ATTEMPTS = 3
RETRY_BACKOFF_S = 1.0


class EntailmentLabel(str, Enum):
    ENTAILMENT = "entailment"
    NEUTRAL = "neutral"
    CONTRADICTION = "contradiction"


@dataclass(frozen=True)
class LlmRequest:
    """One zero-shot completion request."""

    user_message: str
    system_instruction: str = ""
    temperature: float = 0.0
    max_output_tokens: int = 1024

    def __post_init__(self):
        if not self.user_message:
            raise ValueError("user_message must be non-empty")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")


@dataclass(frozen=True)
class EntailmentQuery:
    premise: str
    hypothesis: str

    def __post_init__(self):
        if not self.premise or not self.hypothesis:
            raise ValueError("premise and hypothesis must be non-empty")


@dataclass(frozen=True)
class EntailmentVerdict:
    label: EntailmentLabel
    score: float

    def __post_init__(self):
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"score must be in [0, 1], got {self.score}")

    @property
    def is_entailment(self) -> bool:
        """Binary decision: argmax class equals entailment; score ignored."""
        return self.label is EntailmentLabel.ENTAILMENT


class LlmBackend(Protocol):
    kind: str
    model_id: str

    def complete(self, request: LlmRequest) -> str: ...


class NliBackend(Protocol):
    kind: str
    model_id: str

    def entail(self, query: EntailmentQuery) -> EntailmentVerdict: ...


# ---------------------------------------------------------------------------
# HTTP backends


def _with_retries(call: Callable[[], requests.Response], what: str,
                  sleep: Callable[[float], None] = time.sleep) -> requests.Response:
    """3 attempts, exponential backoff from 1s. Retries transport errors,
    429 and 5xx; other statuses fail immediately."""
    delay = RETRY_BACKOFF_S
    last_error: Exception | None = None
    for attempt in range(RETRY_ATTEMPTS):
        try:
            response = call()
        except requests.RequestException as exc:
            last_error = exc
        else:
            if response.status_code < 400:
                return response
            if response.status_code == 429 or response.status_code >= 500:
                last_error = BackendReplyError(
                    f"{what}: status {response.status_code}"
                )
            else:
                raise BackendReplyError(
                    f"{what}: status {response.status_code}: {response.text[:200]}"
                )
        if attempt < RETRY_ATTEMPTS - 1:
            sleep(delay)
            delay *= 2
    raise TransportError(f"{what}: retries exhausted: {last_error}")


class HttpLlmBackend:
    """Chat-completion style JSON POST; first choice's message text comes back."""

    kind = "http-llm"

    def __init__(self, endpoint: str, model_id: str, api_key: str | None = None,
                 timeout: float = 120.0, session: requests.Session | None = None,
                 sleep: Callable[[float], None] = time.sleep):
        self.endpoint = endpoint
        self.model_id = model_id
        self.api_key = api_key
        self.timeout = timeout
        self.session = session or requests.Session()
        self._sleep = sleep

    def complete(self, request: LlmRequest) -> str:
        messages = []
        if request.system_instruction:
            messages.append({"role": "system", "content": request.system_instruction})
        messages.append({"role": "user", "content": request.user_message})
        body = {
            "model": self.model_id,
            "messages": messages,
            "temperature": request.temperature,
            "max_tokens": request.max_output_tokens,
        }
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        response = _with_retries(
            lambda: self.session.post(self.endpoint, json=body, headers=headers,
                                      timeout=self.timeout),
            what=f"LLM endpoint {self.endpoint}",
            sleep=self._sleep,
        )
        try:
            text = response.json()["choices"][0]["message"]["content"]
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise BackendReplyError(f"malformed completion reply: {exc}") from exc
        if not text:
            raise BackendReplyError("empty completion")
        return text


def _parse_verdict(payload: Mapping) -> EntailmentVerdict:
    try:
        return EntailmentVerdict(
            label=EntailmentLabel(payload["label"]),
            score=float(payload["score"]),
        )
    except (KeyError, ValueError, TypeError) as exc:
        raise BackendReplyError(f"malformed entailment reply: {exc}") from exc


class HttpNliBackend:
    """POST {base}/entail with {"premise", "hypothesis"}; batch via /entail/batch."""

    kind = "http-nli"

    def __init__(self, endpoint: str, model_id: str = "nli",
                 timeout: float = 60.0, batch_size: int = 0,
                 session: requests.Session | None = None,
                 sleep: Callable[[float], None] = time.sleep):
        base = endpoint.rstrip("/")
        if base.endswith("/entail"):
            base = base[: -len("/entail")]
        self.base = base
        self.model_id = model_id
        self.timeout = timeout
        self.batch_size = batch_size
        self.session = session or requests.Session()
        self._sleep = sleep

    def entail(self, query: EntailmentQuery) -> EntailmentVerdict:
        response = _with_retries(
            lambda: self.session.post(
                f"{self.base}/entail",
                json={"premise": query.premise, "hypothesis": query.hypothesis},
                timeout=self.timeout,
            ),
            what=f"NLI endpoint {self.base}/entail",
            sleep=self._sleep,
        )
        try:
            payload = response.json()
        except ValueError as exc:
            raise BackendReplyError(f"non-JSON entailment reply: {exc}") from exc
        return _parse_verdict(payload)

    def entail_batch(self, queries: list[EntailmentQuery]) -> list[EntailmentVerdict]:
        if self.batch_size <= 1:
            return [self.entail(q) for q in queries]
        verdicts: list[EntailmentVerdict] = []
        for start in range(0, len(queries), self.batch_size):
            chunk = queries[start:start + self.batch_size]
            response = _with_retries(
                lambda chunk=chunk: self.session.post(
                    f"{self.base}/entail/batch",
                    json=[{"premise": q.premise, "hypothesis": q.hypothesis}
                          for q in chunk],
                    timeout=self.timeout,
                ),
                what=f"NLI endpoint {self.base}/entail/batch",
                sleep=self._sleep,
            )
            try:
                payload = response.json()
            except ValueError as exc:
                raise BackendReplyError(f"non-JSON batch reply: {exc}") from exc
            if not isinstance(payload, list) or len(payload) != len(chunk):
                raise BackendReplyError("batch reply length mismatch")
            verdicts.extend(_parse_verdict(item) for item in payload)
        return verdicts


# ---------------------------------------------------------------------------
# Deterministic mocks


class CannedLlmBackend:
    """Replies from a fixed user_message -> completion map."""

    kind = "mock-llm-canned"

    def __init__(self, replies: Mapping[str, str], model_id: str = "canned",
                 default: str | None = None):
        self.replies = dict(replies)
        self.model_id = model_id
        self.default = default

    def complete(self, request: LlmRequest) -> str:
        if request.user_message in self.replies:
            return self.replies[request.user_message]
        if self.default is not None:
            return self.default
        raise BackendReplyError(
            "canned LLM backend has no reply for this prompt "
            f"(first 80 chars: {request.user_message[:80]!r})"
        )

    @classmethod
    def from_file(cls, path: str | Path) -> "CannedLlmBackend":
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls(replies=doc.get("replies", {}), default=doc.get("default"))


class ConstantLlmBackend:
    """Always replies with the same text (e.g. "yes" / "no")."""

    kind = "mock-llm-constant"

    def __init__(self, reply: str):
        self.reply = reply
        self.model_id = f"constant:{reply}"

    def complete(self, request: LlmRequest) -> str:
        return self.reply


class FunctionLlmBackend:
    """Computes the reply from the request; for tests."""

    kind = "mock-llm-function"

    def __init__(self, fn: Callable[[LlmRequest], str], model_id: str = "function"):
        self.fn = fn
        self.model_id = model_id

    def complete(self, request: LlmRequest) -> str:
        return self.fn(request)


class ExactMatchNli:
    """entailment iff premise == hypothesis; reflexive by construction."""

    kind = "mock-nli-exact"
    model_id = "exact-match"

    def entail(self, query: EntailmentQuery) -> EntailmentVerdict:
        if query.premise == query.hypothesis:
            return EntailmentVerdict(EntailmentLabel.ENTAILMENT, 1.0)
        return EntailmentVerdict(EntailmentLabel.NEUTRAL, 0.0)


class SubstringNli:
    """entailment iff the hypothesis occurs inside the premise."""

    kind = "mock-nli-substring"
    model_id = "substring"

    def entail(self, query: EntailmentQuery) -> EntailmentVerdict:
        if query.hypothesis in query.premise:
            return EntailmentVerdict(EntailmentLabel.ENTAILMENT, 1.0)
        return EntailmentVerdict(EntailmentLabel.NEUTRAL, 0.0)


class RelationNli:
    """entailment exactly on a given set of (premise, hypothesis) pairs."""

    kind = "mock-nli-relation"

    def __init__(self, pairs: set[tuple[str, str]], model_id: str = "relation"):
        self.pairs = set(pairs)
        self.model_id = model_id

    def entail(self, query: EntailmentQuery) -> EntailmentVerdict:
        if (query.premise, query.hypothesis) in self.pairs:
            return EntailmentVerdict(EntailmentLabel.ENTAILMENT, 1.0)
        return EntailmentVerdict(EntailmentLabel.NEUTRAL, 0.0)


class PoisonBackend:
    """Fails on any call; proves a warm cache never reaches the network."""

    kind = "poison"
    model_id = "poison"

    def complete(self, request: LlmRequest) -> str:
        raise TransportError("poison backend called")

    def entail(self, query: EntailmentQuery) -> EntailmentVerdict:
        raise TransportError("poison backend called")


# ---------------------------------------------------------------------------
# Call cache


class CallCache:
    """Append-only JSON-lines cache keyed by content hash.

    Keys cover (backend kind, model id, canonicalized request), so identical
    requests hit the same entry across runs and any field change misses.
    Reads are lock-free after load; writes are serialized.
    """

    def __init__(self, path: str | Path | None = None):
        self.path = Path(path) if path is not None else None
        self._entries: dict[str, object] = {}
        self._lock = threading.Lock()
        if self.path is not None and self.path.exists():
            with self.path.open(encoding="utf-8") as handle:
                for line in handle:
                    line = line.strip()
                    if not line:
                        continue
                    record = json.loads(line)
                    self._entries[record["key"]] = record["response"]

    def __len__(self) -> int:
        return len(self._entries)

    @staticmethod
    def key_for(kind: str, model_id: str, request: Mapping) -> str:
        canonical = json.dumps(
            {"kind": kind, "model": model_id, "request": request},
            sort_keys=True, ensure_ascii=False, separators=(",", ":"),
        )
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()

    def get(self, key: str):
        return self._entries.get(key)

    def put(self, key: str, response: object) -> None:
        with self._lock:
            if key in self._entries:
                return
            self._entries[key] = response
            if self.path is not None:
                record = {
                    "key": key,
                    "response": response,
                    "timestamp": datetime.now(timezone.utc).isoformat(),
                }
                with self.path.open("a", encoding="utf-8") as handle:
                    handle.write(json.dumps(record, ensure_ascii=False) + "\n")


def llm_request_payload(request: LlmRequest) -> dict:
    return {
        "system": request.system_instruction,
        "user": request.user_message,
        "temperature": request.temperature,
        "max_tokens": request.max_output_tokens,
    }


def entailment_query_payload(query: EntailmentQuery) -> dict:
    return {"premise": query.premise, "hypothesis": query.hypothesis}


# ---------------------------------------------------------------------------
# Gateway


class Gateway:
    """Shared front door: cache first, then the configured backend.

    Thread-safe; at most `concurrency` calls are in flight at a time, and the
    *_many helpers key their results so aggregates never depend on completion
    order.
    """

    def __init__(self, llm: LlmBackend | None = None, nli: NliBackend | None = None,
                 cache: CallCache | None = None, concurrency: int = 8):
        if concurrency < 1:
            raise ValueError("concurrency must be >= 1")
        self.llm = llm
        self.nli = nli
        self.cache = cache if cache is not None else CallCache()
        self.concurrency = concurrency
        self._slots = threading.Semaphore(concurrency)

    def complete(self, request: LlmRequest) -> str:
        if self.llm is None:
            raise TransportError("no LLM backend configured")
        key = CallCache.key_for(self.llm.kind, self.llm.model_id,
                                llm_request_payload(request))
        cached = self.cache.get(key)
        if cached is not None:
            return str(cached)
        with self._slots:
            text = self.llm.complete(request)
        self.cache.put(key, text)
        return text

    def entail(self, query: EntailmentQuery) -> EntailmentVerdict:
        if self.nli is None:
            raise TransportError("no NLI backend configured")
        key = CallCache.key_for(self.nli.kind, self.nli.model_id,
                                entailment_query_payload(query))
        cached = self.cache.get(key)
        if cached is not None:
            return EntailmentVerdict(
                label=EntailmentLabel(cached["label"]), score=float(cached["score"])
            )
        with self._slots:
            verdict = self.nli.entail(query)
        self.cache.put(key, {"label": verdict.label.value, "score": verdict.score})
        return verdict

    def complete_many(self, requests_by_key: Mapping[K, LlmRequest]) -> dict[K, str]:
        return self._map(self.complete, requests_by_key)

    def entail_many(
        self, queries_by_key: Mapping[K, EntailmentQuery]
    ) -> dict[K, EntailmentVerdict]:
        return self._map(self.entail, queries_by_key)

    def _map(self, fn, items: Mapping[K, object]) -> dict[K, object]:
        if not items:
            return {}
        if len(items) == 1 or self.concurrency == 1:
            return {key: fn(value) for key, value in items.items()}
        with ThreadPoolExecutor(max_workers=min(self.concurrency, len(items))) as pool:
            futures = {key: pool.submit(fn, value) for key, value in items.items()}
            return {key: future.result() for key, future in futures.items()}


# ---------------------------------------------------------------------------
# Backend selection

ENV_LLM_ENDPOINT = "CONE_LLM_ENDPOINT"
ENV_LLM_MODEL = "CONE_LLM_MODEL"
ENV_LLM_KEY = "CONE_LLM_KEY"
ENV_NLI_ENDPOINT = "CONE_NLI_ENDPOINT"


def llm_backend_from_spec(spec: str | None) -> LlmBackend | None:
    """Build an LLM backend from a CLI spec string.

    Forms: "canned:<path>", "constant:<text>", an http(s) endpoint URL, or
    None to fall back to the CONE_LLM_* environment variables (returning
    None when they are unset).
    """
    if spec is None:
        endpoint = os.environ.get(ENV_LLM_ENDPOINT)
        if not endpoint:
            return None
        return HttpLlmBackend(
            endpoint=endpoint,
            model_id=os.environ.get(ENV_LLM_MODEL, "default"),
            api_key=os.environ.get(ENV_LLM_KEY),
        )
    if spec.startswith("canned:"):
        return CannedLlmBackend.from_file(spec[len("canned:"):])
    if spec.startswith("constant:"):
        return ConstantLlmBackend(spec[len("constant:"):])
    if spec.startswith("http://") or spec.startswith("https://"):
        return HttpLlmBackend(
            endpoint=spec,
            model_id=os.environ.get(ENV_LLM_MODEL, "default"),
            api_key=os.environ.get(ENV_LLM_KEY),
        )
    raise ConfigError(f"unrecognized LLM backend spec {spec!r}")


def nli_backend_from_spec(spec: str | None) -> NliBackend | None:
    """Build an NLI backend from a CLI spec string.

    Forms: "exact", "substring", "pairs:<path>" (JSON array of
    [premise, hypothesis] pairs that entail), an http(s) endpoint URL, or
    None to fall back to CONE_NLI_ENDPOINT.
    """
    if spec is None:
        endpoint = os.environ.get(ENV_NLI_ENDPOINT)
        if not endpoint:
            return None
        return HttpNliBackend(endpoint=endpoint)
    if spec == "exact":
        return ExactMatchNli()
    if spec == "substring":
        return SubstringNli()
    if spec.startswith("pairs:"):
        path = spec[len("pairs:"):]
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
        return RelationNli({(premise, hypothesis) for premise, hypothesis in doc})
    if spec.startswith("http://") or spec.startswith("https://"):
        return HttpNliBackend(endpoint=spec)
    raise ConfigError(f"unrecognized NLI backend spec {spec!r}")


def gateway_from_specs(llm_spec: str | None = None, nli_spec: str | None = None,
                       cache_path: str | Path | None = None,
                       concurrency: int = 8) -> Gateway:
    return Gateway(
        llm=llm_backend_from_spec(llm_spec),
        nli=nli_backend_from_spec(nli_spec),
        cache=CallCache(cache_path),
        concurrency=concurrency,
    )
