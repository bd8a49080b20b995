"""Supervised pool of external checker processes with a result cache.

The checker is any command that consumes a Lean source file and emits
diagnostics on its standard streams. A pinned source prefix is prepended to
every candidate; its digest is checked at pool start so drift in the
imports/options block aborts loudly instead of silently changing results.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import queue
import re
import subprocess
import tempfile
import threading
import time
from concurrent.futures import Future
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Optional

from .core import Diagnostic, PipelineError, VerificationOutcome, Verdict

logger = logging.getLogger(__name__)

VERIFICATION_PREFIX = """import Mathlib.Algebra.Algebra.Basic
import Mathlib.Algebra.Order.Floor
import Mathlib.Algebra.Associated
import Mathlib.Algebra.BigOperators.Basic
import Mathlib.Algebra.BigOperators.Order
import Mathlib.Algebra.BigOperators.Pi
import Mathlib.Algebra.GeomSum
import Mathlib.Algebra.Group.Pi.Basic
import Mathlib.Algebra.Group.Commute.Basic
import Mathlib.Algebra.GroupPower.Basic
import Mathlib.Algebra.GroupPower.Identities
import Mathlib.Algebra.Order.Floor
import Mathlib.Algebra.QuadraticDiscriminant
import Mathlib.Algebra.Ring.Basic
import Mathlib.Analysis.Asymptotics.AsymptoticEquivalent
import Mathlib.Analysis.NormedSpace.Basic
import Mathlib.Analysis.SpecialFunctions.Log.Basic
import Mathlib.Analysis.SpecialFunctions.Log.Base
import Mathlib.Combinatorics.SimpleGraph.Basic
import Mathlib.Data.Complex.Basic
import Mathlib.Data.Complex.Exponential
import Mathlib.Data.Finset.Basic
import Mathlib.Data.Fintype.Card
import Mathlib.Data.Int.Basic
import Mathlib.Data.Int.GCD
import Mathlib.Data.Int.ModEq
import Mathlib.Data.Int.Parity
import Mathlib.Data.List.Intervals
import Mathlib.Data.List.Palindrome
import Mathlib.Data.Multiset.Basic
import Mathlib.Data.Nat.Basic
import Mathlib.Data.Nat.Choose.Basic
import Mathlib.Data.Nat.Digits
import Mathlib.Data.Nat.Factorial.Basic
import Mathlib.Data.Nat.ModEq
import Mathlib.Data.Nat.Multiplicity
import Mathlib.Data.Nat.Parity
import Mathlib.Data.Nat.Prime
import Mathlib.Data.PNat.Basic
import Mathlib.Data.PNat.Prime
import Mathlib.Data.Polynomial.Basic
import Mathlib.Data.Polynomial.Eval
import Mathlib.Data.Real.Basic
import Mathlib.Data.Real.Irrational
import Mathlib.Data.Real.NNReal
import Mathlib.Data.Real.Sqrt
import Mathlib.Data.Set.Finite
import Mathlib.Data.Sym.Sym2
import Mathlib.Data.ZMod.Basic
import Mathlib.Dynamics.FixedPoints.Basic
import Mathlib.LinearAlgebra.AffineSpace.AffineMap
import Mathlib.LinearAlgebra.AffineSpace.Independent
import Mathlib.LinearAlgebra.AffineSpace.Ordered
import Mathlib.LinearAlgebra.FiniteDimensional
import Mathlib.Logic.Equiv.Basic
import Mathlib.Order.Filter.Basic
import Mathlib.Order.LocallyFinite
import Mathlib.Order.WellFounded
import Mathlib.Topology.Basic
import Mathlib.Topology.Instances.NNReal
import Aesop

set_option maxHeartbeats 0
set_option trace.aesop true
set_option trace.aesop.proof true

open Nat Real Rat BigOperators"""

# Frozen at build time from the transcribed block above; the pool refuses to
# start if the in-memory prefix no longer matches.
PREFIX_SHA256 = "f75891367285b3db82bed0141d1d076936ee28725ec77060a85ab96c55a8655e"

TOOLCHAIN_TAG = "leanprover/lean4:v4.7.0-rc2"
MATHLIB_COMMIT = "64528268b3c2cf578639bc479828882a9ecd3a82"


class PoolUnavailable(PipelineError):
    """The pool is not started or failed to start."""


class PrefixMismatch(PipelineError):
    """The verification prefix no longer matches its pinned digest."""


def prefix_digest() -> str:
    return hashlib.sha256(VERIFICATION_PREFIX.encode("utf-8")).hexdigest()


def assemble_source(candidate: str) -> str:
    """Pinned prefix, one blank line, then the candidate declaration+proof."""
    return f"{VERIFICATION_PREFIX}\n\n{candidate}"


def content_key(source: str) -> str:
    return hashlib.sha256(source.encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class VerificationJob:
    """One checkable source plus its content-addressed cache key."""

    source: str
    content_key: str
    priority: int = 0

    @classmethod
    def for_source(cls, source: str, priority: int = 0) -> "VerificationJob":
        return cls(source=source, content_key=content_key(source), priority=priority)


@dataclass(frozen=True)
class VerifierConfig:
    checker_command: tuple[str, ...] = ("lean", "{src}")
    pool_size: int = 4
    timeout_s: float = 300.0
    toolchain_tag: str = TOOLCHAIN_TAG
    mathlib_commit: str = MATHLIB_COMMIT
    cache_path: Optional[str] = None
    env_passthrough: tuple[str, ...] = ()

    def __post_init__(self):
        if self.pool_size < 1:
            raise ValueError("pool_size must be >= 1")
        if self.timeout_s <= 0:
            raise ValueError("timeout_s must be > 0")


@dataclass
class RawRunResult:
    """What one checker invocation produced, before classification."""

    exit_code: int
    stdout: str = ""
    stderr: str = ""
    wall_time: float = 0.0
    timed_out: bool = False
    crashed: bool = False


# Checker message shape: "<file>:<line>:<col>: <severity>: <text>".
_DIAG_RE = re.compile(r"^(?P<file>[^:\n]+):(?P<line>\d+):(?P<col>\d+):\s*(?P<sev>\w+):\s?(?P<msg>.*)$")


def parse_diagnostics(output: str) -> tuple[Diagnostic, ...]:
    """Extract message records; only 'error' lines carry error severity."""
    diags = []
    for line in output.splitlines():
        m = _DIAG_RE.match(line)
        if not m:
            continue
        sev = m.group("sev").lower()
        severity = "error" if sev == "error" else sev
        diags.append(
            Diagnostic(
                severity=severity,
                line=int(m.group("line")),
                col=int(m.group("col")),
                text=m.group("msg"),
            )
        )
    return tuple(diags)


def classify(raw: RawRunResult) -> VerificationOutcome:
    """Map a raw run to a verdict.

    Timeouts and abnormal termination are verdicts, not exceptions, so a
    flaky worker never poisons the caller.
    """
    if raw.timed_out:
        return VerificationOutcome(Verdict.TIMEOUT, wall_time=raw.wall_time)
    diags = parse_diagnostics(raw.stdout + "\n" + raw.stderr)
    if raw.crashed or raw.exit_code < 0:
        return VerificationOutcome(
            Verdict.VERIFIER_CRASH, diagnostics=diags, wall_time=raw.wall_time
        )
    if any(d.severity == "error" for d in diags):
        return VerificationOutcome(
            Verdict.FAILED, diagnostics=diags, wall_time=raw.wall_time
        )
    if raw.exit_code == 0:
        return VerificationOutcome(
            Verdict.PROVED, diagnostics=diags, wall_time=raw.wall_time
        )
    # Nonzero exit without any error diagnostic: the checker died abnormally.
    return VerificationOutcome(
        Verdict.VERIFIER_CRASH, diagnostics=diags, wall_time=raw.wall_time
    )


class SubprocessRunner:
    """Run the configured checker command on a temporary source file.

    ``{src}`` in any argument is replaced by the source path; if absent the
    path is appended as the final argument.
    """

    def __init__(self, command: tuple[str, ...], env_passthrough: tuple[str, ...] = ()):
        self.command = tuple(command)
        self.env_passthrough = tuple(env_passthrough)

    def _argv(self, src_path: str) -> list[str]:
        argv = [arg.replace("{src}", src_path) for arg in self.command]
        if not any("{src}" in arg for arg in self.command):
            argv.append(src_path)
        return argv

    def _env(self) -> Optional[dict[str, str]]:
        if not self.env_passthrough:
            return None
        env = {k: v for k, v in os.environ.items() if k in ("PATH", "HOME")}
        for key in self.env_passthrough:
            if key in os.environ:
                env[key] = os.environ[key]
        return env

    def __call__(self, source: str, timeout: float) -> RawRunResult:
        start = time.perf_counter()
        with tempfile.NamedTemporaryFile(
            "w", suffix=".lean", delete=False, encoding="utf-8"
        ) as fh:
            fh.write(source)
            src_path = fh.name
        try:
            proc = subprocess.run(
                self._argv(src_path),
                capture_output=True,
                text=True,
                timeout=timeout,
                env=self._env(),
            )
            return RawRunResult(
                exit_code=proc.returncode,
                stdout=proc.stdout,
                stderr=proc.stderr,
                wall_time=time.perf_counter() - start,
            )
        except subprocess.TimeoutExpired:
            return RawRunResult(
                exit_code=-1, timed_out=True, wall_time=time.perf_counter() - start
            )
        except OSError as exc:
            return RawRunResult(
                exit_code=-1,
                stderr=str(exc),
                crashed=True,
                wall_time=time.perf_counter() - start,
            )
        finally:
            try:
                os.unlink(src_path)
            except OSError:
                pass


class ScriptedRunner:
    """Pure-logic stand-in for the checker, scripted by substring rules.

    Rules are ``(contains, verdict)`` pairs checked in order against the
    source; the first match wins and the raw result emulates the matching
    checker behaviour. Tracks peak concurrency so tests can probe the pool's
    admission bound.
    """

    def __init__(
        self,
        rules: Optional[list[tuple[str, str]]] = None,
        default: str = "failed",
        latency: float = 0.0,
    ):
        self.rules = list(rules or [])
        self.default = default
        self.latency = latency
        self.calls = 0
        self.active = 0
        self.max_active = 0
        self._lock = threading.Lock()

    @classmethod
    def from_file(cls, path: str | Path) -> "ScriptedRunner":
        rules: list[tuple[str, str]] = []
        default = "failed"
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                entry = json.loads(line)
                if "default" in entry:
                    default = entry["default"]
                else:
                    rules.append((entry["contains"], entry["verdict"]))
        return cls(rules=rules, default=default)

    def _verdict_for(self, source: str) -> str:
        for needle, verdict in self.rules:
            if needle in source:
                return verdict
        return self.default

    def __call__(self, source: str, timeout: float) -> RawRunResult:
        with self._lock:
            self.calls += 1
            self.active += 1
            self.max_active = max(self.max_active, self.active)
        try:
            if self.latency:
                time.sleep(self.latency)
            verdict = self._verdict_for(source)
            if verdict == "proved":
                return RawRunResult(exit_code=0)
            if verdict == "failed":
                return RawRunResult(
                    exit_code=1, stdout="mock.lean:1:1: error: scripted failure"
                )
            if verdict == "timeout":
                return RawRunResult(exit_code=-1, timed_out=True)
            return RawRunResult(exit_code=-9, crashed=True)
        finally:
            with self._lock:
                self.active -= 1


@dataclass
class PoolStats:
    jobs: int = 0
    proved: int = 0
    failed: int = 0
    timeouts: int = 0
    crashes: int = 0
    cache_hits: int = 0
    in_flight: int = 0
    total_wall_time: float = 0.0

    @property
    def mean_wall_time(self) -> float:
        done = self.proved + self.failed + self.timeouts + self.crashes
        return self.total_wall_time / done if done else 0.0


_VERDICT_COUNTER = {
    Verdict.PROVED: "proved",
    Verdict.FAILED: "failed",
    Verdict.TIMEOUT: "timeouts",
    Verdict.VERIFIER_CRASH: "crashes",
}


class VerifierPool:
    """Bounded worker pool over a checker runner, with a verdict cache.

    ``verify`` is safe for concurrent callers; at most ``pool_size`` checker
    invocations run at any instant. Verdicts ``proved``/``failed`` are cached
    by content key; ``timeout`` and ``verifier_crash`` are not, so a slow or
    flaky machine cannot permanently poison a statement.
    """

    def __init__(
        self,
        config: VerifierConfig,
        runner: Optional[Callable[[str, float], RawRunResult]] = None,
    ):
        self.config = config
        self.runner = runner or SubprocessRunner(
            config.checker_command, config.env_passthrough
        )
        self._queue: "queue.PriorityQueue" = queue.PriorityQueue()
        self._workers: list[threading.Thread] = []
        self._cache: dict[str, VerificationOutcome] = {}
        self._cache_fh = None
        self._seq = 0
        self._stats = PoolStats()
        self._lock = threading.Lock()
        self._started = False

    # -- lifecycle ---------------------------------------------------------

    def start(self) -> None:
        if self._started:
            return
        if prefix_digest() != PREFIX_SHA256:
            raise PrefixMismatch(
                "verification prefix digest mismatch; refusing to start"
            )
        if self.config.cache_path:
            self._load_cache(self.config.cache_path)
            try:
                self._cache_fh = open(self.config.cache_path, "a", encoding="utf-8")
            except OSError as exc:
                raise PoolUnavailable(f"cannot open cache log: {exc}") from exc
        for i in range(self.config.pool_size):
            worker = threading.Thread(
                target=self._worker_loop, name=f"verifier-{i}", daemon=True
            )
            worker.start()
            self._workers.append(worker)
        self._started = True

    def stop(self) -> None:
        if not self._started:
            return
        for _ in self._workers:
            self._queue.put((float("inf"), -1, None, None, None))
        for worker in self._workers:
            worker.join()
        self._workers.clear()
        if self._cache_fh:
            self._cache_fh.close()
            self._cache_fh = None
        self._started = False

    def __enter__(self) -> "VerifierPool":
        self.start()
        return self

    def __exit__(self, *exc_info) -> None:
        self.stop()

    def _load_cache(self, path: str) -> None:
        if not os.path.exists(path):
            return
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                try:
                    entry = json.loads(line)
                except json.JSONDecodeError:
                    logger.warning("skipping corrupt cache line")
                    continue
                self._cache[entry["content_key"]] = VerificationOutcome(
                    verdict=Verdict(entry["verdict"]),
                    wall_time=entry.get("wall_time", 0.0),
                )

    # -- verification ------------------------------------------------------

    def verify(
        self, job: VerificationJob, timeout: Optional[float] = None
    ) -> VerificationOutcome:
        if not self._started:
            raise PoolUnavailable("pool not started")
        with self._lock:
            self._stats.jobs += 1
            cached = self._cache.get(job.content_key)
            if cached is not None:
                outcome = replace(cached, from_cache=True)
                counter = _VERDICT_COUNTER[outcome.verdict]
                setattr(self._stats, counter, getattr(self._stats, counter) + 1)
                self._stats.cache_hits += 1
                self._stats.total_wall_time += outcome.wall_time
                return outcome
            self._stats.in_flight += 1
            self._seq += 1
            seq = self._seq
        future: Future = Future()
        self._queue.put((-job.priority, seq, job, timeout, future))
        outcome: VerificationOutcome = future.result()
        with self._lock:
            self._stats.in_flight -= 1
            counter = _VERDICT_COUNTER[outcome.verdict]
            setattr(self._stats, counter, getattr(self._stats, counter) + 1)
            self._stats.total_wall_time += outcome.wall_time
            if outcome.verdict in (Verdict.PROVED, Verdict.FAILED):
                if job.content_key not in self._cache:
                    self._cache[job.content_key] = outcome
                    self._persist(job, outcome)
        return outcome

    def _persist(self, job: VerificationJob, outcome: VerificationOutcome) -> None:
        if self._cache_fh is None:
            return
        line = json.dumps(
            {
                "content_key": job.content_key,
                "verdict": outcome.verdict.value,
                "wall_time": outcome.wall_time,
            },
            sort_keys=True,
        )
        self._cache_fh.write(line + "\n")
        self._cache_fh.flush()

    def _worker_loop(self) -> None:
        while True:
            _, _, job, timeout, future = self._queue.get()
            if job is None:
                return
            # Any fault here is contained in the job's verdict; the worker
            # keeps serving, which is the crash-isolation contract.
            try:
                raw = self.runner(job.source, timeout or self.config.timeout_s)
                outcome = classify(raw)
            except Exception as exc:  # noqa: BLE001 - worker must survive
                logger.warning("worker crash on job %s: %s", job.content_key[:12], exc)
                outcome = VerificationOutcome(Verdict.VERIFIER_CRASH)
            future.set_result(outcome)

    def pool_stats(self) -> PoolStats:
        """Consistent snapshot of the monotone counters."""
        with self._lock:
            return replace(self._stats)
