"""Persistence: statement records, deduplicated pairs, iteration manifests.

All stores are append-only line-delimited JSON with a schema header line and
periodic compaction. Appends are flushed per write so a crashed run loses at
most the record being written; reloads are last-writer-wins for records and
first-writer-wins for pairs (the dedup contract).
"""

from __future__ import annotations

import json
import logging
import os
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Optional

from .core import (
    DeclarationKind,
    Diagnostic,
    FormalStatement,
    PipelineError,
    Polarity,
    ProofAttempt,
    QualityAssessment,
    QualityCategory,
    RecordState,
    StatementRecord,
    TheoremProofPair,
    TERMINAL_STATES,
)
from .prompts import render_proof_prompt
from .verifier import VERIFICATION_PREFIX

logger = logging.getLogger(__name__)

RECORDS_SCHEMA = "proofpipe/records/v1"
PAIRS_SCHEMA = "proofpipe/pairs/v1"
MANIFESTS_SCHEMA = "proofpipe/manifests/v1"

STAGE_COUNT_KEYS = (
    "problems",
    "formalized",
    "scored",
    "rejected_parse",
    "rejected_score",
    "rejected_false_hypothesis",
    "queued",
    "proved_original",
    "proved_negation",
    "exhausted",
    "anomalous",
)


class StorageFailure(PipelineError):
    """The backing file could not be read or written."""


def _dumps(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, ensure_ascii=False, separators=(",", ":"))


# -- (de)serialization -------------------------------------------------------


def statement_to_dict(stmt: FormalStatement) -> dict:
    return {
        "raw": stmt.raw,
        "binders": stmt.binders,
        "goal": stmt.goal,
        "kind": stmt.declaration_kind.value,
        "name": stmt.name,
    }


def statement_from_dict(d: dict) -> FormalStatement:
    return FormalStatement(
        raw=d["raw"],
        binders=d["binders"],
        goal=d["goal"],
        declaration_kind=DeclarationKind(d["kind"]),
        name=d.get("name"),
    )


def attempt_to_dict(attempt: ProofAttempt) -> dict:
    return {
        "statement_id": attempt.statement_id,
        "polarity": attempt.polarity.value,
        "sample_index": attempt.sample_index,
        "proof_body": attempt.proof_body,
        "full_source": attempt.full_source,
    }


def attempt_from_dict(d: dict) -> ProofAttempt:
    return ProofAttempt(
        statement_id=d["statement_id"],
        polarity=Polarity(d["polarity"]),
        sample_index=d["sample_index"],
        proof_body=d["proof_body"],
        full_source=d["full_source"],
    )


def record_to_dict(rec: StatementRecord) -> dict:
    return {
        "record_id": rec.record_id,
        "origin_id": rec.origin_id,
        "iteration": rec.iteration,
        "state": rec.state.value,
        "statement": statement_to_dict(rec.statement) if rec.statement else None,
        "assessment": (
            {
                "category": rec.assessment.category.value,
                "analysis": rec.assessment.analysis,
                "translation": rec.assessment.translation,
                "raw_response": rec.assessment.raw_response,
            }
            if rec.assessment
            else None
        ),
        "winning_attempt": (
            attempt_to_dict(rec.winning_attempt) if rec.winning_attempt else None
        ),
        "attempt_counts": list(rec.attempt_counts),
        "audit": rec.audit,
    }


def record_from_dict(d: dict) -> StatementRecord:
    assessment = None
    if d.get("assessment"):
        a = d["assessment"]
        assessment = QualityAssessment(
            category=QualityCategory(a["category"]),
            analysis=a.get("analysis", ""),
            translation=a.get("translation", ""),
            raw_response=a.get("raw_response", ""),
        )
    return StatementRecord(
        record_id=d["record_id"],
        origin_id=d["origin_id"],
        iteration=d.get("iteration", 0),
        state=RecordState(d["state"]),
        statement=statement_from_dict(d["statement"]) if d.get("statement") else None,
        assessment=assessment,
        winning_attempt=(
            attempt_from_dict(d["winning_attempt"]) if d.get("winning_attempt") else None
        ),
        attempt_counts=tuple(d.get("attempt_counts", (0, 0))),
        audit=list(d.get("audit", [])),
    )


def pair_to_dict(pair: TheoremProofPair) -> dict:
    return {
        "statement": statement_to_dict(pair.statement),
        "proof_body": pair.proof_body,
        "polarity": pair.polarity.value,
        "iteration": pair.iteration,
        "content_hash": pair.content_hash,
    }


def pair_from_dict(d: dict) -> TheoremProofPair:
    return TheoremProofPair(
        statement=statement_from_dict(d["statement"]),
        proof_body=d["proof_body"],
        polarity=Polarity(d["polarity"]),
        iteration=d["iteration"],
        content_hash=d["content_hash"],
    )


# -- file plumbing ------------------------------------------------------------


class _JsonlFile:
    """Append-only JSONL file with a schema header line."""

    def __init__(self, path: str | Path, schema: str):
        self.path = Path(path)
        self.schema = schema
        self._fh = None

    def open(self) -> list[dict]:
        """Load existing entries (validating the header) and open for append."""
        entries: list[dict] = []
        try:
            if self.path.exists() and self.path.stat().st_size > 0:
                with open(self.path, encoding="utf-8") as fh:
                    header = json.loads(fh.readline())
                    if header.get("schema") != self.schema:
                        raise StorageFailure(
                            f"{self.path}: schema {header.get('schema')!r}, "
                            f"expected {self.schema!r}"
                        )
                    for line in fh:
                        line = line.strip()
                        if line:
                            entries.append(json.loads(line))
            else:
                self.path.parent.mkdir(parents=True, exist_ok=True)
                with open(self.path, "w", encoding="utf-8") as fh:
                    fh.write(_dumps({"schema": self.schema}) + "\n")
            self._fh = open(self.path, "a", encoding="utf-8")
        except (OSError, json.JSONDecodeError) as exc:
            raise StorageFailure(f"cannot open {self.path}: {exc}") from exc
        return entries

    def append(self, entry: dict) -> None:
        if self._fh is None:
            raise StorageFailure(f"{self.path} not open")
        try:
            self._fh.write(_dumps(entry) + "\n")
            self._fh.flush()
        except OSError as exc:
            raise StorageFailure(f"cannot append to {self.path}: {exc}") from exc

    def rewrite(self, entries: Iterable[dict]) -> None:
        """Compaction: replace the file with the given entries."""
        self.close()
        tmp = self.path.with_suffix(self.path.suffix + ".tmp")
        try:
            with open(tmp, "w", encoding="utf-8") as fh:
                fh.write(_dumps({"schema": self.schema}) + "\n")
                for entry in entries:
                    fh.write(_dumps(entry) + "\n")
            os.replace(tmp, self.path)
            self._fh = open(self.path, "a", encoding="utf-8")
        except OSError as exc:
            raise StorageFailure(f"cannot compact {self.path}: {exc}") from exc

    def close(self) -> None:
        if self._fh is not None:
            self._fh.close()
            self._fh = None


class RecordStore:
    """Statement records keyed by record id; reload is last-writer-wins."""

    def __init__(self, path: str | Path):
        self._file = _JsonlFile(path, RECORDS_SCHEMA)
        self._records: dict[str, StatementRecord] = {}

    def open(self) -> "RecordStore":
        for entry in self._file.open():
            rec = record_from_dict(entry)
            self._records[rec.record_id] = rec
        return self

    def close(self) -> None:
        self._file.close()

    def save(self, rec: StatementRecord) -> None:
        self._records[rec.record_id] = rec
        self._file.append(record_to_dict(rec))

    def get(self, record_id: str) -> Optional[StatementRecord]:
        return self._records.get(record_id)

    def __len__(self) -> int:
        return len(self._records)

    def records(self) -> list[StatementRecord]:
        """All records, ordered by id for deterministic iteration."""
        return [self._records[k] for k in sorted(self._records)]

    def in_state(self, *states: RecordState) -> list[StatementRecord]:
        wanted = set(states)
        return [r for r in self.records() if r.state in wanted]

    def origin_ids(self) -> set[str]:
        return {r.origin_id for r in self._records.values()}

    def compact(self) -> None:
        self._file.rewrite(record_to_dict(r) for r in self.records())


class PairStore:
    """Deduplicated theorem/proof pairs, keyed by content hash."""

    def __init__(self, path: str | Path):
        self._file = _JsonlFile(path, PAIRS_SCHEMA)
        self._pairs: dict[str, TheoremProofPair] = {}

    def open(self) -> "PairStore":
        for entry in self._file.open():
            pair = pair_from_dict(entry)
            # First writer wins on duplicate hashes.
            self._pairs.setdefault(pair.content_hash, pair)
        return self

    def close(self) -> None:
        self._file.close()

    def upsert(self, pair: TheoremProofPair) -> bool:
        """Insert unless the normalized statement was seen before."""
        if pair.content_hash in self._pairs:
            return False
        self._pairs[pair.content_hash] = pair
        self._file.append(pair_to_dict(pair))
        return True

    def __len__(self) -> int:
        return len(self._pairs)

    def pairs(self) -> list[TheoremProofPair]:
        """All pairs ordered by content hash (the export order)."""
        return [self._pairs[k] for k in sorted(self._pairs)]

    def count_for_iteration(self, iteration: int) -> int:
        return sum(1 for p in self._pairs.values() if p.iteration == iteration)

    def compact(self) -> None:
        self._file.rewrite(pair_to_dict(p) for p in self.pairs())


# -- manifests ----------------------------------------------------------------


@dataclass
class IterationManifest:
    """Per-iteration accounting of the funnel and the dataset delta."""

    iteration: int
    config_digest: str
    config_text: str
    stage_counts: dict[str, int]
    new_pairs: int
    cumulative_pairs: int
    benchmark_scores: Optional[dict[str, float]] = None
    started: float = 0.0
    finished: float = 0.0

    def __post_init__(self):
        sc = self.stage_counts
        missing = [k for k in STAGE_COUNT_KEYS if k not in sc]
        if missing:
            raise ValueError(f"stage_counts missing keys: {missing}")
        if not (sc["formalized"] >= sc["scored"] >= sc["queued"]):
            raise ValueError("stage_counts violate the pipeline funnel")

    def to_dict(self) -> dict:
        return {
            "iteration": self.iteration,
            "config_digest": self.config_digest,
            "config_text": self.config_text,
            "stage_counts": dict(self.stage_counts),
            "new_pairs": self.new_pairs,
            "cumulative_pairs": self.cumulative_pairs,
            "benchmark_scores": self.benchmark_scores,
            "started": self.started,
            "finished": self.finished,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "IterationManifest":
        return cls(
            iteration=d["iteration"],
            config_digest=d["config_digest"],
            config_text=d["config_text"],
            stage_counts=dict(d["stage_counts"]),
            new_pairs=d["new_pairs"],
            cumulative_pairs=d["cumulative_pairs"],
            benchmark_scores=d.get("benchmark_scores"),
            started=d.get("started", 0.0),
            finished=d.get("finished", 0.0),
        )


class ManifestLog:
    """Ordered log of iteration manifests."""

    def __init__(self, path: str | Path):
        self._file = _JsonlFile(path, MANIFESTS_SCHEMA)
        self._manifests: list[IterationManifest] = []

    def open(self) -> "ManifestLog":
        self._manifests = [
            IterationManifest.from_dict(e) for e in self._file.open()
        ]
        return self

    def close(self) -> None:
        self._file.close()

    def append(self, manifest: IterationManifest) -> None:
        if self._manifests:
            last = self._manifests[-1]
            if manifest.cumulative_pairs < last.cumulative_pairs:
                raise ValueError("cumulative_pairs must be nondecreasing")
        self._manifests.append(manifest)
        self._file.append(manifest.to_dict())

    def all(self) -> list[IterationManifest]:
        return list(self._manifests)


def should_stop(
    manifests: list[IterationManifest],
    epsilon_score: float = 0.005,
    epsilon_data: float = 0.01,
) -> bool:
    """Stop once benchmark gains and dataset growth are both marginal.

    The data criterion uses the cumulative-pair delta between the last two
    manifests (equivalent to new_pairs for self-consistent bookkeeping, and
    well-defined when an iteration is replayed).
    """
    if len(manifests) < 2:
        return False
    prev, last = manifests[-2], manifests[-1]

    prev_scores = prev.benchmark_scores or {}
    last_scores = last.benchmark_scores or {}
    shared = set(prev_scores) & set(last_scores)
    score_gain = max((last_scores[k] - prev_scores[k] for k in shared), default=0.0)

    delta = last.cumulative_pairs - prev.cumulative_pairs
    data_gain = delta / last.cumulative_pairs if last.cumulative_pairs else 0.0

    return score_gain < epsilon_score and data_gain < epsilon_data


# -- corpus + training-file formats -------------------------------------------


def load_corpus(path: str | Path):
    """Read informal problems from JSONL; ids must be unique in the file."""
    from .core import InformalProblem

    problems = []
    seen: set[str] = set()
    try:
        with open(path, encoding="utf-8") as fh:
            for line_no, line in enumerate(fh, 1):
                line = line.strip()
                if not line:
                    continue
                entry = json.loads(line)
                if entry.get("schema"):
                    continue
                if entry["id"] in seen:
                    raise StorageFailure(
                        f"{path}:{line_no}: duplicate problem id {entry['id']!r}"
                    )
                seen.add(entry["id"])
                problems.append(
                    InformalProblem(
                        id=entry["id"],
                        text=entry["text"],
                        answer=entry.get("answer"),
                        source_tag=entry.get("source_tag", ""),
                    )
                )
    except FileNotFoundError as exc:
        raise StorageFailure(f"corpus not found: {path}") from exc
    except (json.JSONDecodeError, KeyError) as exc:
        raise StorageFailure(f"malformed corpus {path}: {exc}") from exc
    return problems


def export_training_file(
    pair_store: PairStore, iteration: int, path: str | Path
) -> int:
    """Write {prompt, response} lines for pairs minted up to ``iteration``.

    Deterministic: pairs are ordered by content hash and the response closes
    the code fence the prompt opened. Returns the record count.
    """
    pairs = [p for p in pair_store.pairs() if p.iteration <= iteration]
    if not pairs:
        logger.warning("export_training_file: no pairs up to iteration %d", iteration)
    try:
        with open(path, "w", encoding="utf-8") as fh:
            for pair in pairs:
                fh.write(
                    _dumps(
                        {
                            "prompt": render_proof_prompt(pair.statement),
                            "response": f"{pair.proof_body}\n```",
                        }
                    )
                    + "\n"
                )
    except OSError as exc:
        raise StorageFailure(f"cannot write export {path}: {exc}") from exc
    return len(pairs)


def import_training_file(path: str | Path) -> list[tuple[str, str]]:
    """Recover (statement, proof body) pairs from an exported training file."""
    header = f"{VERIFICATION_PREFIX}\n\n"
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            entry = json.loads(line)
            prompt, response = entry["prompt"], entry["response"]
            if prompt.startswith(header):
                prompt = prompt[len(header) :]
            statement = prompt.rsplit(" := by", 1)[0]
            body = response[: -len("\n```")] if response.endswith("\n```") else response
            out.append((statement, body))
    return out


def export_slice(
    pair_store: PairStore, size: int, seed: int, path: str | Path
) -> int:
    """Seeded uniform sample of the pair set, for dataset-size ablations."""
    pairs = pair_store.pairs()
    rng = random.Random(seed)
    chosen = pairs if size >= len(pairs) else rng.sample(pairs, size)
    chosen = sorted(chosen, key=lambda p: p.content_hash)
    try:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(_dumps({"schema": PAIRS_SCHEMA, "slice_seed": seed}) + "\n")
            for pair in chosen:
                fh.write(_dumps(pair_to_dict(pair)) + "\n")
    except OSError as exc:
        raise StorageFailure(f"cannot write slice {path}: {exc}") from exc
    return len(chosen)
