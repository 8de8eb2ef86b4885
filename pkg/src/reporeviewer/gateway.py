"""Provider-agnostic chat-completion gateway.

One live implementation speaks the OpenAI-compatible chat-completions wire
format; a deterministic stub and a record/replay transcript layer keep every
stage above this module testable offline. Retry policy is fixed backoff
(1s, 2s, 4s) with an injectable sleep so tests never wait.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import os
import threading
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Mapping, Protocol

import httpx

logger = logging.getLogger(__name__)

ENV_API_KEY = "PROVIDER_API_KEY"
ENV_BASE_URL = "PROVIDER_BASE_URL"
ENV_MODEL = "PROVIDER_MODEL"
DEFAULT_BASE_URL = "https://api.openai.com/v1"
DEFAULT_MODEL_ID = "default"

STUB_FALLBACK_TEXT = "Stub response."


class GatewayError(Exception):
    """Base class for provider failures; `retryable` drives the retry policy."""

    retryable = False

    def __init__(self, message: str, attempts: int = 1):
        super().__init__(message)
        self.attempts = attempts


class ProviderAuthError(GatewayError):
    retryable = False


class ProviderRateLimitError(GatewayError):
    retryable = True

    def __init__(self, message: str, retry_after: float | None = None, attempts: int = 1):
        super().__init__(message, attempts)
        self.retry_after = retry_after


class ProviderTimeoutError(GatewayError):
    retryable = True


class MalformedResponseError(GatewayError):
    # Retryable, but only once per call.
    retryable = True


class RequestTooLargeError(GatewayError):
    """Signals the caller to shrink context; never retried."""

    retryable = False


class RetriesExhaustedError(GatewayError):
    def __init__(self, last: GatewayError, attempts: int):
        super().__init__(f"retries exhausted after {attempts} attempts: {last}", attempts)
        self.last = last


class ReplayMissError(GatewayError):
    def __init__(self, request_hash: str):
        super().__init__(f"no transcript entry for request hash {request_hash}")
        self.request_hash = request_hash


class TranscriptLoadError(Exception):
    def __init__(self, path: str, line_number: int, cause: str):
        super().__init__(f"corrupt transcript {path} line {line_number}: {cause}")
        self.line_number = line_number


@dataclass(frozen=True)
class ModelRequest:
    model_id: str
    messages: tuple[tuple[str, str], ...]  # (role, content) pairs, role in {system, user}
    temperature: float = 0.0
    max_output_tokens: int = 4096

    def __post_init__(self) -> None:
        if not self.messages:
            raise ValueError("messages must be nonempty")
        for role, content in self.messages:
            if role not in ("system", "user"):
                raise ValueError(f"unsupported role {role!r}")
            if not content:
                raise ValueError("message contents must be nonempty")
        if not 0 <= self.temperature <= 2:
            raise ValueError("temperature must be in [0, 2]")


@dataclass(frozen=True)
class ModelResponse:
    text: str
    tokens_in: int
    tokens_out: int
    latency_ms: int = 0
    attempts: int = 1


class Provider(Protocol):
    def complete(self, request: ModelRequest) -> ModelResponse: ...


def estimate_tokens(text_chars: int) -> int:
    """Fallback usage estimate when the provider omits token counts: ceil(chars / 4)."""
    return math.ceil(text_chars / 4)


def _request_chars(request: ModelRequest) -> int:
    return sum(len(content) for _, content in request.messages)


def messages_hash(messages: tuple[tuple[str, str], ...]) -> str:
    payload = json.dumps([[r, c] for r, c in messages], ensure_ascii=False)
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


def request_hash(request: ModelRequest) -> str:
    payload = json.dumps(
        {
            "model_id": request.model_id,
            "messages": [[r, c] for r, c in request.messages],
            "temperature": request.temperature,
            "max_output_tokens": request.max_output_tokens,
        },
        ensure_ascii=False,
    )
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


class StubProvider:
    """Pure function of the request: canned text by message hash, fixed fallback otherwise."""

    def __init__(self, responses: Mapping[str, str] | None = None, fallback: str = STUB_FALLBACK_TEXT):
        self._responses = dict(responses or {})
        self._fallback = fallback
        self.calls: list[ModelRequest] = []
        self._lock = threading.Lock()

    def add_response(self, messages: tuple[tuple[str, str], ...], text: str) -> None:
        self._responses[messages_hash(messages)] = text

    def complete(self, request: ModelRequest) -> ModelResponse:
        with self._lock:
            self.calls.append(request)
        text = self._responses.get(messages_hash(request.messages), self._fallback)
        return ModelResponse(
            text=text,
            tokens_in=estimate_tokens(_request_chars(request)),
            tokens_out=estimate_tokens(len(text)),
            latency_ms=0,
            attempts=1,
        )


class FailingProvider:
    """Always raises; used to exercise degradation paths."""

    def __init__(self, error_factory: Callable[[], GatewayError] | None = None):
        self._error_factory = error_factory or (lambda: ProviderTimeoutError("provider down"))

    def complete(self, request: ModelRequest) -> ModelResponse:
        raise self._error_factory()


class OpenAICompatProvider:
    """Live HTTP provider speaking the OpenAI-compatible chat-completions format."""

    def __init__(
        self,
        api_key: str | None = None,
        base_url: str | None = None,
        timeout_s: float = 120.0,
        client: httpx.Client | None = None,
    ):
        self._api_key = api_key if api_key is not None else os.environ.get(ENV_API_KEY, "")
        self._base_url = (base_url or os.environ.get(ENV_BASE_URL, DEFAULT_BASE_URL)).rstrip("/")
        self._timeout_s = timeout_s
        self._client = client or httpx.Client(timeout=timeout_s)

    def complete(self, request: ModelRequest) -> ModelResponse:
        body = {
            "model": request.model_id,
            "messages": [{"role": r, "content": c} for r, c in request.messages],
            "temperature": request.temperature,
            "max_tokens": request.max_output_tokens,
        }
        headers = {"Content-Type": "application/json"}
        if self._api_key:
            headers["Authorization"] = f"Bearer {self._api_key}"
        started = time.monotonic()
        try:
            resp = self._client.post(
                f"{self._base_url}/chat/completions", json=body, headers=headers
            )
        except httpx.TimeoutException as exc:
            raise ProviderTimeoutError(f"provider timeout: {exc}") from exc
        except httpx.HTTPError as exc:
            raise ProviderTimeoutError(f"provider connection error: {exc}") from exc
        latency_ms = int((time.monotonic() - started) * 1000)

        if resp.status_code in (401, 403):
            raise ProviderAuthError(f"provider auth failure (HTTP {resp.status_code})")
        if resp.status_code == 429:
            retry_after = None
            header = resp.headers.get("retry-after")
            if header is not None:
                try:
                    retry_after = float(header)
                except ValueError:
                    retry_after = None
            raise ProviderRateLimitError("provider rate limited (HTTP 429)", retry_after)
        if resp.status_code == 413:
            raise RequestTooLargeError("request too large (HTTP 413)")
        if resp.status_code >= 500:
            raise ProviderTimeoutError(f"provider server error (HTTP {resp.status_code})")
        if resp.status_code != 200:
            raise MalformedResponseError(f"unexpected provider status {resp.status_code}")

        try:
            payload = resp.json()
            text = payload["choices"][0]["message"]["content"]
            if not isinstance(text, str):
                raise TypeError("content is not a string")
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise MalformedResponseError(f"malformed provider response: {exc}") from exc

        usage = payload.get("usage") or {}
        tokens_in = usage.get("prompt_tokens")
        tokens_out = usage.get("completion_tokens")
        if not isinstance(tokens_in, int):
            tokens_in = estimate_tokens(_request_chars(request))
        if not isinstance(tokens_out, int):
            tokens_out = estimate_tokens(len(text))
        return ModelResponse(
            text=text, tokens_in=tokens_in, tokens_out=tokens_out, latency_ms=latency_ms
        )


@dataclass(frozen=True)
class RetryPolicy:
    max_retries: int = 3
    backoffs_s: tuple[float, ...] = (1.0, 2.0, 4.0)
    sleep: Callable[[float], None] = time.sleep


def with_retry(
    inner_call: Callable[[], ModelResponse], policy: RetryPolicy = RetryPolicy()
) -> ModelResponse:
    """Retry retryable provider errors on the fixed backoff schedule.

    Malformed-response errors are retried at most once; a provider-supplied
    retry-after overrides a smaller scheduled backoff. The final error is
    re-raised annotated with the attempt count.
    """
    attempts = 0
    malformed_seen = False
    while True:
        attempts += 1
        try:
            response = inner_call()
            if response.attempts != attempts:
                response = replace(response, attempts=attempts)
            return response
        except GatewayError as exc:
            exc.attempts = attempts
            if not exc.retryable:
                raise
            if isinstance(exc, MalformedResponseError):
                if malformed_seen:
                    raise
                malformed_seen = True
            if attempts > policy.max_retries:
                raise RetriesExhaustedError(exc, attempts)
            delay = policy.backoffs_s[min(attempts - 1, len(policy.backoffs_s) - 1)]
            retry_after = getattr(exc, "retry_after", None)
            if retry_after is not None and retry_after > delay:
                delay = retry_after
            policy.sleep(delay)


class RetryingProvider:
    """Provider wrapper applying the module retry policy to each call."""

    def __init__(self, inner: Provider, policy: RetryPolicy = RetryPolicy()):
        self._inner = inner
        self._policy = policy

    def complete(self, request: ModelRequest) -> ModelResponse:
        return with_retry(lambda: self._inner.complete(request), self._policy)


@dataclass(frozen=True)
class PriceTable:
    """Per-model USD prices per million tokens; user-supplied config."""

    prices: Mapping[str, tuple[float, float]] = field(default_factory=dict)

    def __post_init__(self) -> None:
        for model_id, (price_in, price_out) in self.prices.items():
            if price_in < 0 or price_out < 0:
                raise ValueError(f"negative price for {model_id}")

    @classmethod
    def from_json_file(cls, path: str | Path) -> "PriceTable":
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
        prices = {
            model_id: (
                float(entry["usd_per_million_tokens_in"]),
                float(entry["usd_per_million_tokens_out"]),
            )
            for model_id, entry in raw.items()
        }
        return cls(prices=prices)


def estimate_cost(tokens_in: int, tokens_out: int, model_id: str, table: PriceTable) -> float:
    """tokens x price / 1e6; unknown model costs 0 and logs a missing-price warning."""
    entry = table.prices.get(model_id)
    if entry is None:
        logger.warning("no price for model %r; estimated cost recorded as 0", model_id)
        return 0.0
    price_in, price_out = entry
    return tokens_in * price_in / 1e6 + tokens_out * price_out / 1e6


class RecordingProvider:
    """Wraps a live provider and appends request/response pairs to a transcript file."""

    def __init__(self, inner: Provider, transcript_path: str | Path):
        self._inner = inner
        self._path = Path(transcript_path)
        self._lock = threading.Lock()
        self._path.parent.mkdir(parents=True, exist_ok=True)

    def complete(self, request: ModelRequest) -> ModelResponse:
        response = self._inner.complete(request)
        entry = {
            "request_hash": request_hash(request),
            "request": {
                "model_id": request.model_id,
                "messages": [[r, c] for r, c in request.messages],
                "temperature": request.temperature,
                "max_output_tokens": request.max_output_tokens,
            },
            "response": {
                "text": response.text,
                "tokens_in": response.tokens_in,
                "tokens_out": response.tokens_out,
                "latency_ms": response.latency_ms,
                "attempts": response.attempts,
            },
        }
        line = json.dumps(entry, ensure_ascii=False)
        with self._lock:
            with self._path.open("a", encoding="utf-8") as fh:
                fh.write(line + "\n")
        return response


class ReplayProvider:
    """Serves recorded responses by request hash; fails loudly on a miss."""

    def __init__(self, transcript_path: str | Path):
        self._path = str(transcript_path)
        self._entries: dict[str, ModelResponse] = {}
        try:
            lines = Path(transcript_path).read_text(encoding="utf-8").splitlines()
        except OSError as exc:
            raise TranscriptLoadError(self._path, 0, str(exc)) from exc
        for number, line in enumerate(lines, start=1):
            if not line.strip():
                continue
            try:
                entry = json.loads(line)
                resp = entry["response"]
                response = ModelResponse(
                    text=resp["text"],
                    tokens_in=int(resp["tokens_in"]),
                    tokens_out=int(resp["tokens_out"]),
                    latency_ms=int(resp.get("latency_ms", 0)),
                    attempts=int(resp.get("attempts", 1)),
                )
                key = entry["request_hash"]
            except (ValueError, KeyError, TypeError) as exc:
                raise TranscriptLoadError(self._path, number, str(exc)) from exc
            self._entries.setdefault(key, response)

    def complete(self, request: ModelRequest) -> ModelResponse:
        key = request_hash(request)
        response = self._entries.get(key)
        if response is None:
            raise ReplayMissError(key)
        return response


def live_provider_from_env() -> OpenAICompatProvider:
    return OpenAICompatProvider()


def default_model_id() -> str:
    return os.environ.get(ENV_MODEL) or DEFAULT_MODEL_ID
