"""Benchmark harness: sample whole proofs, verify, compute pass rates.

pass@k here is the empirical count — a problem passes iff one of its first k
attempts (in global sample order across runs) verified — matching how the
budgets are reported for whole-proof generation. The combinatorial unbiased
estimator is available as an alternative for comparison with sampling-based
reports.
"""

from __future__ import annotations

import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional

from .core import FormalStatement, PipelineError, Polarity, Verdict
from .statements import parse_statement
from .search import SupportsSample, SupportsVerify, build_attempt
from .verifier import VerificationJob

logger = logging.getLogger(__name__)

LEDGER_SCHEMA = "proofpipe/ledger/v1"


@dataclass(frozen=True)
class BenchmarkProblem:
    """One benchmark statement (header only, no proof body)."""

    id: str
    statement: FormalStatement
    split: str = "test"
    suite: str = "minif2f"


@dataclass
class AttemptRecord:
    problem_id: str
    run_id: str
    sample_index: int
    verdict: Verdict
    wall_time: float = 0.0


class AttemptLedger:
    """Ordered attempt log per problem, spanning possibly multiple runs.

    Within a run sample indices are strictly increasing per problem; global
    attempt order for a problem is run order then sample order. The ledger
    can persist itself as JSONL and reload for resumed runs.
    """

    def __init__(self, suite: str = "", split: str = "", label: str = ""):
        self.suite = suite
        self.split = split
        self.label = label
        self._attempts: dict[str, list[AttemptRecord]] = {}
        self._run_order: list[str] = []

    def record(
        self,
        problem_id: str,
        run_id: str,
        sample_index: int,
        verdict: Verdict,
        wall_time: float = 0.0,
    ) -> None:
        if run_id not in self._run_order:
            self._run_order.append(run_id)
        bucket = self._attempts.setdefault(problem_id, [])
        last = max(
            (a.sample_index for a in bucket if a.run_id == run_id), default=-1
        )
        if sample_index <= last:
            raise ValueError(
                f"{problem_id}: sample_index {sample_index} not increasing in {run_id}"
            )
        bucket.append(AttemptRecord(problem_id, run_id, sample_index, verdict, wall_time))

    def problems(self) -> list[str]:
        return sorted(self._attempts)

    def attempts(self, problem_id: str) -> list[AttemptRecord]:
        """Attempts in global order: run order, then sample order."""
        run_rank = {run: i for i, run in enumerate(self._run_order)}
        return sorted(
            self._attempts.get(problem_id, []),
            key=lambda a: (run_rank[a.run_id], a.sample_index),
        )

    def samples_in_run(self, problem_id: str, run_id: str) -> int:
        return sum(1 for a in self._attempts.get(problem_id, []) if a.run_id == run_id)

    def proved(self, problem_id: str) -> bool:
        return any(a.verdict is Verdict.PROVED for a in self._attempts.get(problem_id, []))

    def save(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(
                json.dumps(
                    {
                        "schema": LEDGER_SCHEMA,
                        "suite": self.suite,
                        "split": self.split,
                        "label": self.label,
                        "runs": self._run_order,
                    },
                    sort_keys=True,
                )
                + "\n"
            )
            for problem_id in self.problems():
                for a in self.attempts(problem_id):
                    fh.write(
                        json.dumps(
                            {
                                "problem_id": a.problem_id,
                                "run_id": a.run_id,
                                "sample_index": a.sample_index,
                                "verdict": a.verdict.value,
                                "wall_time": a.wall_time,
                            },
                            sort_keys=True,
                        )
                        + "\n"
                    )

    @classmethod
    def load(cls, path: str | Path) -> "AttemptLedger":
        ledger = cls()
        with open(path, encoding="utf-8") as fh:
            header = json.loads(fh.readline())
            if header.get("schema") != LEDGER_SCHEMA:
                raise PipelineError(f"{path}: not an attempt ledger")
            ledger.suite = header.get("suite", "")
            ledger.split = header.get("split", "")
            ledger.label = header.get("label", "")
            ledger._run_order = list(header.get("runs", []))
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                entry = json.loads(line)
                ledger.record(
                    entry["problem_id"],
                    entry["run_id"],
                    entry["sample_index"],
                    Verdict(entry["verdict"]),
                    entry.get("wall_time", 0.0),
                )
        return ledger


def load_suite(path: str | Path) -> list[BenchmarkProblem]:
    """Read a suite manifest: JSONL of {id, statement|path, split, suite}.

    Statements may be inline or in a referenced file holding one declaration;
    any trailing ':= by sorry' placeholder is stripped by the parser.
    """
    path = Path(path)
    problems = []
    seen: set[str] = set()
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            entry = json.loads(line)
            if entry.get("schema"):
                continue
            if "statement" in entry:
                text = entry["statement"]
            else:
                ref = Path(entry["path"])
                if not ref.is_absolute():
                    ref = path.parent / ref
                text = ref.read_text(encoding="utf-8")
            if entry["id"] in seen:
                raise PipelineError(f"duplicate benchmark id {entry['id']!r}")
            seen.add(entry["id"])
            problems.append(
                BenchmarkProblem(
                    id=entry["id"],
                    statement=parse_statement(text),
                    split=entry.get("split", "test"),
                    suite=entry.get("suite", "minif2f"),
                )
            )
    return problems


def run_benchmark(
    problems: list[BenchmarkProblem],
    n: int,
    prover: SupportsSample,
    verifier: SupportsVerify,
    ledger: Optional[AttemptLedger] = None,
    run_id: str = "run0",
    early_stop: bool = False,
    workers: int = 1,
    per_attempt_timeout: Optional[float] = None,
) -> AttemptLedger:
    """Sample and verify ``n`` proofs per problem, recording every attempt.

    With ``early_stop`` off (the default) every problem gets all ``n``
    attempts, so one run supports pass@k for every k <= n. A resumed run
    (same ledger and run id) continues each problem's sample indices without
    gaps.
    """
    if ledger is None and problems:
        ledger = AttemptLedger(suite=problems[0].suite, split=problems[0].split)
    elif ledger is None:
        ledger = AttemptLedger()

    def evaluate(problem: BenchmarkProblem) -> list[AttemptRecord]:
        existing = ledger.samples_in_run(problem.id, run_id)
        attempts = []
        if early_stop and any(
            a.verdict is Verdict.PROVED
            for a in ledger.attempts(problem.id)
            if a.run_id == run_id
        ):
            return attempts
        for index in range(existing, n):
            body = prover.sample(problem.statement, 1)[0]
            attempt = build_attempt(
                problem.id,
                problem.statement,
                polarity=Polarity.ORIGINAL,
                sample_index=index,
                proof_body=body,
            )
            outcome = verifier.verify(
                VerificationJob.for_source(attempt.full_source),
                timeout=per_attempt_timeout,
            )
            attempts.append(
                AttemptRecord(problem.id, run_id, index, outcome.verdict, outcome.wall_time)
            )
            if early_stop and outcome.verdict is Verdict.PROVED:
                break
        return attempts

    if workers <= 1:
        batches = (evaluate(p) for p in problems)
    else:
        executor = ThreadPoolExecutor(max_workers=workers)
        batches = executor.map(evaluate, problems)
    for batch in batches:
        for a in batch:
            ledger.record(a.problem_id, a.run_id, a.sample_index, a.verdict, a.wall_time)
    if workers > 1:
        executor.shutdown()
    return ledger


def pass_at_k(ledger: AttemptLedger, k: int, estimator: str = "empirical") -> float:
    """Fraction of problems with a verified proof in their first k attempts.

    Problems with fewer than k recorded attempts and no success are counted
    over what is available, with a warning. ``estimator="unbiased"`` instead
    averages 1 - C(n-c, k)/C(n, k) per problem.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    problems = ledger.problems()
    if not problems:
        return 0.0
    if estimator == "unbiased":
        total = 0.0
        for problem_id in problems:
            attempts = ledger.attempts(problem_id)
            n = len(attempts)
            c = sum(1 for a in attempts if a.verdict is Verdict.PROVED)
            total += _unbiased_pass(n, c, min(k, n))
        return total / len(problems)
    passed = 0
    short = 0
    for problem_id in problems:
        attempts = ledger.attempts(problem_id)[:k]
        hit = any(a.verdict is Verdict.PROVED for a in attempts)
        if hit:
            passed += 1
        elif len(attempts) < k:
            short += 1
    if short:
        logger.warning(
            "pass@%d: %d problems have fewer than %d attempts and no success",
            k,
            short,
            k,
        )
    return passed / len(problems)


def _unbiased_pass(n: int, c: int, k: int) -> float:
    if c == 0:
        return 0.0
    if n - c < k:
        return 1.0
    return 1.0 - math.comb(n - c, k) / math.comb(n, k)


def cumulative_pass(ledgers: Iterable[AttemptLedger]) -> float:
    """Union of proved problems over every attempt of every run."""
    ledgers = list(ledgers)
    problems: set[str] = set()
    proved: set[str] = set()
    for ledger in ledgers:
        for problem_id in ledger.problems():
            problems.add(problem_id)
            if ledger.proved(problem_id):
                proved.add(problem_id)
    return len(proved) / len(problems) if problems else 0.0


def report(ledgers: list[AttemptLedger], ks: list[int]) -> tuple[str, list[dict]]:
    """Pass-rate table: one row per k plus cumulative, one column per ledger.

    Returns the aligned text table and machine-readable rows; rates render
    to one decimal place.
    """
    columns = [
        (ledger.label or f"{ledger.suite}/{ledger.split}" or f"ledger{i}")
        for i, ledger in enumerate(ledgers)
    ]
    rows: list[dict] = []
    for k in ks:
        row = {"metric": f"pass@{k}"}
        for name, ledger in zip(columns, ledgers):
            row[name] = f"{100 * pass_at_k(ledger, k):.1f}%"
        rows.append(row)
    row = {"metric": "cumulative"}
    for name, ledger in zip(columns, ledgers):
        row[name] = f"{100 * cumulative_pass([ledger]):.1f}%"
    rows.append(row)

    headers = ["metric", *columns]
    widths = {
        h: max(len(h), *(len(str(r.get(h, ""))) for r in rows)) if rows else len(h)
        for h in headers
    }
    lines = [
        "  ".join(h.ljust(widths[h]) for h in headers),
        "  ".join("-" * widths[h] for h in headers),
    ]
    for r in rows:
        lines.append("  ".join(str(r.get(h, "")).ljust(widths[h]) for h in headers))
    return "\n".join(lines) + "\n", rows


def write_csv(rows: list[dict], ks: list[int], path: str | Path) -> None:
    """Delimiter-separated twin of the text table."""
    import csv

    if not rows:
        Path(path).write_text("metric\n", encoding="utf-8")
        return
    headers = list(rows[0].keys())
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=headers)
        writer.writeheader()
        writer.writerows(rows)
