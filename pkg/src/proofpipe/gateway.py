"""Uniform interface to completion backends: remote HTTP or scripted mock.

The gateway owns retry policy, an admission limiter bounding in-flight
requests, and request/token quotas. Backends raise ``TransportError`` for
transient faults; everything else surfaces as a gateway error.
"""

from __future__ import annotations

import hashlib
import json
import random
import threading
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Optional, Protocol

import requests

from .core import FormalStatement, PipelineError
from .prompts import render_proof_prompt


class GatewayError(PipelineError):
    """Base class for model-gateway failures."""


class BackendUnavailable(GatewayError):
    """Transport kept failing after the configured retries."""


class MalformedResponse(GatewayError):
    """The backend answered, but not with usable completions."""


class BudgetExceeded(GatewayError):
    """The configured request or token quota would be exceeded."""


class TransportError(Exception):
    """Internal: a single transport attempt failed and may be retried."""


@dataclass(frozen=True)
class SamplingParams:
    """Decoding controls for one completion request."""

    temperature: float = 1.0
    max_tokens: int = 1024
    n_samples: int = 1
    stop_sequences: tuple[str, ...] = ()

    def __post_init__(self):
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if self.max_tokens <= 0:
            raise ValueError("max_tokens must be > 0")
        if self.n_samples < 1:
            raise ValueError("n_samples must be >= 1")
        if self.temperature == 0 and self.n_samples != 1:
            raise ValueError("greedy decoding (temperature 0) is single-shot")


@dataclass(frozen=True)
class CompletionRequest:
    prompt: str
    params: SamplingParams
    route: str = ""


@dataclass(frozen=True)
class CompletionResponse:
    completions: tuple[str, ...]
    prompt_tokens: int = 0
    completion_tokens: int = 0
    latency: float = 0.0


class Backend(Protocol):
    """One transport attempt; raises ``TransportError`` on transient faults."""

    def send(self, request: CompletionRequest) -> CompletionResponse: ...


def prompt_digest(prompt: str) -> str:
    return hashlib.sha256(prompt.encode("utf-8")).hexdigest()


class HttpBackend:
    """Plain completion-over-HTTP backend with bearer-token auth.

    The request body carries ``prompt``, ``temperature``, ``max_tokens``,
    ``n`` and ``stop``; the response is expected to hold ``completions`` (or
    OpenAI-style ``choices[].text``) plus optional ``usage`` counts.
    """

    RETRYABLE_STATUS = {429, 500, 502, 503, 504}

    def __init__(
        self,
        endpoint: str,
        token_env: str = "PROOFPIPE_API_TOKEN",
        timeout: float = 120.0,
        post: Callable = requests.post,
    ):
        self.endpoint = endpoint
        self.token_env = token_env
        self.timeout = timeout
        self.post = post

    def send(self, request: CompletionRequest) -> CompletionResponse:
        import os

        headers = {"Content-Type": "application/json"}
        token = os.environ.get(self.token_env)
        if token:
            headers["Authorization"] = f"Bearer {token}"
        body = {
            "prompt": request.prompt,
            "temperature": request.params.temperature,
            "max_tokens": request.params.max_tokens,
            "n": request.params.n_samples,
            "stop": list(request.params.stop_sequences),
        }
        url = request.route or self.endpoint
        try:
            resp = self.post(url, json=body, headers=headers, timeout=self.timeout)
        except requests.RequestException as exc:
            raise TransportError(str(exc)) from exc
        if resp.status_code in self.RETRYABLE_STATUS:
            raise TransportError(f"HTTP {resp.status_code}")
        if resp.status_code != 200:
            raise MalformedResponse(f"HTTP {resp.status_code}: {resp.text[:200]}")
        try:
            payload = resp.json()
        except ValueError as exc:
            raise MalformedResponse(f"non-JSON response: {exc}") from exc
        if "completions" in payload:
            completions = tuple(payload["completions"])
        elif "choices" in payload:
            completions = tuple(c.get("text", "") for c in payload["choices"])
        else:
            raise MalformedResponse("response has neither 'completions' nor 'choices'")
        usage = payload.get("usage", {})
        return CompletionResponse(
            completions=completions,
            prompt_tokens=usage.get("prompt_tokens", 0),
            completion_tokens=usage.get("completion_tokens", 0),
        )


class ScriptMiss(GatewayError):
    """The mock backend has no completions scripted for a prompt."""


class MockBackend:
    """Deterministic backend scripted by prompt digest.

    Greedy requests (temperature 0) always return the first scripted
    completion; sampled requests consume the list in order and cycle when it
    runs out, so a short script can feed an arbitrarily long search stream.
    """

    def __init__(
        self,
        script: Optional[dict[str, list[str]]] = None,
        default: Optional[list[str]] = None,
    ):
        self._script = dict(script or {})
        self._default = list(default) if default else None
        self._cursors: dict[str, int] = {}
        self._lock = threading.Lock()

    @classmethod
    def from_file(cls, path: str | Path) -> "MockBackend":
        """Load a script: JSONL of {"prompt_sha256": ..., "completions": [...]}.

        A line holding {"default": [...]} answers any unscripted prompt.
        """
        script: dict[str, list[str]] = {}
        default = None
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                entry = json.loads(line)
                if "default" in entry:
                    default = list(entry["default"])
                else:
                    script[entry["prompt_sha256"]] = list(entry["completions"])
        return cls(script=script, default=default)

    def script(self, prompt: str, completions: list[str]) -> None:
        self._script[prompt_digest(prompt)] = list(completions)

    def send(self, request: CompletionRequest) -> CompletionResponse:
        digest = prompt_digest(request.prompt)
        completions = self._script.get(digest, self._default)
        if completions is None:
            raise ScriptMiss(f"no completions scripted for digest {digest[:12]}")
        n = request.params.n_samples
        if request.params.temperature == 0:
            picked = [completions[0]] * n
        else:
            with self._lock:
                cursor = self._cursors.get(digest, 0)
                picked = [completions[(cursor + i) % len(completions)] for i in range(n)]
                self._cursors[digest] = cursor + n
        return CompletionResponse(completions=tuple(picked))


@dataclass(frozen=True)
class RetryPolicy:
    """Exponential backoff with +/- jitter for transient transport faults."""

    max_retries: int = 4
    initial_delay: float = 1.0
    multiplier: float = 2.0
    jitter: float = 0.2

    def delay(self, attempt: int, rng: random.Random) -> float:
        base = self.initial_delay * (self.multiplier**attempt)
        return base * (1 + rng.uniform(-self.jitter, self.jitter))


@dataclass
class GatewayStats:
    requests: int = 0
    transport_calls: int = 0
    retries: int = 0
    completion_tokens: int = 0


class ModelGateway:
    """Completion calls with retries, admission limiting, and quotas.

    Safe for concurrent invocation; the admission limiter bounds in-flight
    transport calls per gateway instance.
    """

    def __init__(
        self,
        backend: Backend,
        retry: RetryPolicy = RetryPolicy(),
        max_in_flight: int = 8,
        max_requests: Optional[int] = None,
        sleeper: Callable[[float], None] = time.sleep,
        rng: Optional[random.Random] = None,
        timer: Callable[[], float] = time.perf_counter,
    ):
        self.backend = backend
        self.retry = retry
        self.max_requests = max_requests
        self.sleeper = sleeper
        self.rng = rng or random.Random()
        self.timer = timer
        self._limiter = threading.BoundedSemaphore(max_in_flight)
        self._stats = GatewayStats()
        self._lock = threading.Lock()

    def complete(self, request: CompletionRequest) -> CompletionResponse:
        with self._lock:
            if self.max_requests is not None and self._stats.requests >= self.max_requests:
                raise BudgetExceeded(f"request quota {self.max_requests} exhausted")
            self._stats.requests += 1
        attempt = 0
        start = self.timer()
        while True:
            with self._lock:
                self._stats.transport_calls += 1
            try:
                with self._limiter:
                    response = self.backend.send(request)
                break
            except TransportError as exc:
                if attempt >= self.retry.max_retries:
                    raise BackendUnavailable(
                        f"backend unreachable after {attempt} retries: {exc}"
                    ) from exc
                self.sleeper(self.retry.delay(attempt, self.rng))
                attempt += 1
                with self._lock:
                    self._stats.retries += 1
        if len(response.completions) != request.params.n_samples:
            raise MalformedResponse(
                f"expected {request.params.n_samples} completions, "
                f"got {len(response.completions)}"
            )
        with self._lock:
            self._stats.completion_tokens += response.completion_tokens
        return replace(response, latency=self.timer() - start)

    def stats(self) -> GatewayStats:
        with self._lock:
            return replace(self._stats)


class ProofSampler:
    """Samples whole-proof tactic bodies for a statement via the gateway."""

    def __init__(
        self,
        gateway: ModelGateway,
        params: SamplingParams,
        include_header: bool = True,
        route: str = "",
    ):
        self.gateway = gateway
        self.params = params
        self.include_header = include_header
        self.route = route

    def sample(self, stmt: FormalStatement, n: int = 1) -> list[str]:
        prompt = render_proof_prompt(stmt, include_header=self.include_header)
        params = replace(self.params, n_samples=n)
        response = self.gateway.complete(
            CompletionRequest(prompt=prompt, params=params, route=self.route)
        )
        return list(response.completions)
