"""Stage 3: dual concurrent proof search over a statement and its negation.

Two streams race: one proves the statement, the other its negation. The
scheduler advances both in lockstep rounds; within a round each live stream
starts up to ``stream_parallelism`` attempts and all of them run
concurrently. The first verified success cancels the search, so nothing new
starts afterwards; attempts of the same round that also finished are
discarded from the outcome but kept in the event log. Two successes of
opposite polarity in the same round mean the checker accepted both P and
not-P, which is recorded as anomalous and kept out of the dataset.

Round numbers double as the logical clock: every event carries its round,
and tests assert that no attempt starts after the success round.
"""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Any, Optional, Protocol

from .core import (
    FormalStatement,
    Polarity,
    ProofAttempt,
    RecordState,
    StatementRecord,
    SystemClock,
    TheoremProofPair,
    Verdict,
    VerificationOutcome,
)
from .statements import negate_statement, training_pair
from .verifier import VerificationJob, assemble_source


class SupportsVerify(Protocol):
    def verify(
        self, job: VerificationJob, timeout: Optional[float] = None
    ) -> VerificationOutcome: ...


class SupportsSample(Protocol):
    def sample(self, stmt: FormalStatement, n: int = 1) -> list[str]: ...


@dataclass(frozen=True)
class DualSearchConfig:
    k: int = 64  # per-stream attempt budget; no production value is published
    per_attempt_timeout: float = 300.0
    stream_parallelism: int = 1

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.per_attempt_timeout <= 0:
            raise ValueError("per_attempt_timeout must be > 0")
        if self.stream_parallelism < 1:
            raise ValueError("stream_parallelism must be >= 1")


@dataclass(frozen=True)
class DualSearchOutcome:
    result: RecordState  # proved_original | proved_negation | exhausted | anomalous
    winning_attempt: Optional[ProofAttempt]
    attempts_used: tuple[int, int]  # (original, negation)
    wall_time: float
    events: tuple[dict[str, Any], ...] = ()


def build_attempt(
    statement_id: str,
    stmt: FormalStatement,
    polarity: Polarity,
    sample_index: int,
    proof_body: str,
) -> ProofAttempt:
    """Assemble a checkable attempt for one sampled proof body."""
    return ProofAttempt(
        statement_id=statement_id,
        polarity=polarity,
        sample_index=sample_index,
        proof_body=proof_body,
        full_source=assemble_source(f"{stmt.raw} := by\n{proof_body}"),
    )


class _Stream:
    def __init__(self, polarity: Polarity, stmt: FormalStatement):
        self.polarity = polarity
        self.stmt = stmt
        self.started = 0


def dual_search(
    rec: StatementRecord,
    cfg: DualSearchConfig,
    prover: SupportsSample,
    verifier: SupportsVerify,
) -> DualSearchOutcome:
    """Race proof searches for the statement and its negation.

    Sampling is on-demand, one candidate per attempt, so cancellation saves
    both model and checker calls. Backend errors propagate and leave the
    record untouched (still queued, hence retryable): an outage says nothing
    about provability.
    """
    assert rec.statement is not None and rec.state is RecordState.QUEUED
    streams = {
        Polarity.ORIGINAL: _Stream(Polarity.ORIGINAL, rec.statement),
        Polarity.NEGATION: _Stream(Polarity.NEGATION, negate_statement(rec.statement)),
    }
    events: list[dict[str, Any]] = []
    started_at = time.perf_counter()
    tick = 0
    winner: Optional[ProofAttempt] = None
    result: Optional[RecordState] = None

    def run_attempt(stream: _Stream, index: int):
        body = prover.sample(stream.stmt, 1)[0]
        attempt = build_attempt(rec.record_id, stream.stmt, stream.polarity, index, body)
        outcome = verifier.verify(
            VerificationJob.for_source(attempt.full_source),
            timeout=cfg.per_attempt_timeout,
        )
        return attempt, outcome

    with ThreadPoolExecutor(max_workers=2 * cfg.stream_parallelism) as executor:
        while result is None:
            tick += 1
            batch = []
            for stream in streams.values():
                for _ in range(cfg.stream_parallelism):
                    if stream.started >= cfg.k:
                        break
                    index = stream.started
                    stream.started += 1
                    events.append(
                        {
                            "tick": tick,
                            "event": "attempt_started",
                            "polarity": stream.polarity.value,
                            "index": index,
                        }
                    )
                    batch.append(executor.submit(run_attempt, stream, index))
            if not batch:
                result = RecordState.EXHAUSTED
                break
            # Join the whole round; everything in it shares logical time
            # `tick`, which is what makes ties detectable.
            outcomes = [future.result() for future in batch]
            successes = []
            for attempt, outcome in outcomes:
                events.append(
                    {
                        "tick": tick,
                        "event": "attempt_result",
                        "polarity": attempt.polarity.value,
                        "index": attempt.sample_index,
                        "verdict": outcome.verdict.value,
                    }
                )
                if outcome.verdict is Verdict.PROVED:
                    successes.append(attempt)
            if not successes:
                continue
            events.append({"tick": tick, "event": "cancelled"})
            polarities = {a.polarity for a in successes}
            if len(polarities) > 1:
                # The checker accepted both P and not-P in the same round:
                # evidence of a malformed statement or checker fault.
                result = RecordState.ANOMALOUS
                for attempt in successes:
                    events.append(
                        {
                            "tick": tick,
                            "event": "success",
                            "polarity": attempt.polarity.value,
                            "index": attempt.sample_index,
                        }
                    )
                break
            winner = min(successes, key=lambda a: a.sample_index)
            events.append(
                {
                    "tick": tick,
                    "event": "success",
                    "polarity": winner.polarity.value,
                    "index": winner.sample_index,
                }
            )
            for attempt in successes:
                if attempt is not winner:
                    events.append(
                        {
                            "tick": tick,
                            "event": "discarded_result",
                            "polarity": attempt.polarity.value,
                            "index": attempt.sample_index,
                        }
                    )
            result = (
                RecordState.PROVED_ORIGINAL
                if winner.polarity is Polarity.ORIGINAL
                else RecordState.PROVED_NEGATION
            )

    return DualSearchOutcome(
        result=result,
        winning_attempt=winner,
        attempts_used=(
            streams[Polarity.ORIGINAL].started,
            streams[Polarity.NEGATION].started,
        ),
        wall_time=time.perf_counter() - started_at,
        events=tuple(events),
    )


def finalize(
    rec: StatementRecord,
    outcome: DualSearchOutcome,
    iteration: int = 0,
    clock: Optional[SystemClock] = None,
) -> tuple[StatementRecord, Optional[TheoremProofPair]]:
    """Apply a search outcome to the record and mint a training pair.

    Both polarities feed the dataset: a proved negation contributes the
    negated statement with its proof. Anomalous outcomes contribute nothing.
    """
    assert rec.statement is not None
    rec.attempt_counts = outcome.attempts_used
    for event in outcome.events:
        fields = dict(event)
        kind = fields.pop("event")
        rec.log(f"search_{kind}", clock=clock, **fields)
    rec.advance(
        outcome.result,
        clock=clock,
        attempts_original=outcome.attempts_used[0],
        attempts_negation=outcome.attempts_used[1],
    )
    if outcome.result is RecordState.ANOMALOUS:
        rec.log("note", clock=clock, note="dual_success_anomaly")
        return rec, None
    if outcome.winning_attempt is None:
        return rec, None
    rec.winning_attempt = outcome.winning_attempt
    if outcome.result is RecordState.PROVED_ORIGINAL:
        pair_stmt = rec.statement
        polarity = Polarity.ORIGINAL
    else:
        pair_stmt = negate_statement(rec.statement)
        polarity = Polarity.NEGATION
    pair = training_pair(
        pair_stmt, outcome.winning_attempt.proof_body, polarity, iteration
    )
    return rec, pair
