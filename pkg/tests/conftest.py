"""Shared test doubles and fixture builders."""

from __future__ import annotations

import sys
import threading
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from proofpipe.core import (
    RecordState,
    StatementRecord,
    Verdict,
    VerificationOutcome,
)
from proofpipe.statements import parse_statement

DATA_DIR = Path(__file__).parent / "data"
GOLDEN_DIR = DATA_DIR / "golden"


class RuleVerifier:
    """Pool-free verifier double: substring rules decide the verdict."""

    def __init__(self, rules=None, default=Verdict.FAILED):
        self.rules = list(rules or [])
        self.default = default
        self.calls = 0
        self._lock = threading.Lock()

    def verify(self, job, timeout=None):
        with self._lock:
            self.calls += 1
        for needle, verdict in self.rules:
            if needle in job.source:
                return VerificationOutcome(verdict)
        return VerificationOutcome(self.default)


class ScriptSampler:
    """Prover double scripted per statement text; cycles when exhausted."""

    def __init__(self, scripts: dict[str, list[str]], default: str = "fail_tac"):
        self.scripts = {k: list(v) for k, v in scripts.items()}
        self.default = default
        self.calls = 0
        self._cursors: dict[str, int] = {}
        self._lock = threading.Lock()

    def sample(self, stmt, n: int = 1):
        with self._lock:
            self.calls += n
            bodies = self.scripts.get(stmt.raw)
            if bodies is None:
                return [self.default] * n
            cursor = self._cursors.get(stmt.raw, 0)
            out = [bodies[(cursor + i) % len(bodies)] for i in range(n)]
            self._cursors[stmt.raw] = cursor + n
            return out


def make_queued_record(
    raw: str = "example (n : ℕ) : n + 0 = n", record_id: str = "r1"
) -> StatementRecord:
    rec = StatementRecord(
        record_id=record_id,
        origin_id="p1",
        statement=parse_statement(raw),
        state=RecordState.FORMALIZED,
    )
    rec.log("state", state=RecordState.FORMALIZED.value)
    rec.advance(RecordState.SCORED)
    rec.advance(RecordState.QUEUED)
    return rec


@pytest.fixture
def rule_verifier():
    return RuleVerifier


@pytest.fixture
def script_sampler():
    return ScriptSampler
