"""Domain types shared by every pipeline stage.

Value types (problems, statements, attempts, outcomes, pairs) are frozen
dataclasses and safe to share across threads. ``StatementRecord`` is the one
mutable type: it carries the per-statement state machine and an append-only
audit trail, and is mutated only by the stage operations that own it.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Optional


class PipelineError(Exception):
    """Base class for all errors raised by this package."""


class ParseError(PipelineError):
    """A declaration could not be split into binders and goal.

    ``code`` is machine-readable: unbalanced_brackets, no_goal_separator,
    empty_goal, unsupported_declaration or empty_input.
    """

    def __init__(self, code: str, message: str = ""):
        self.code = code
        super().__init__(message or code)


class StateTransitionError(PipelineError):
    """A record was asked to move against the pipeline's stage order."""


class DeclarationKind(str, Enum):
    EXAMPLE = "example"
    THEOREM = "theorem"


class Polarity(str, Enum):
    ORIGINAL = "original"
    NEGATION = "negation"
    FALSE_TEST = "false_test"


class QualityCategory(str, Enum):
    EXCELLENT = "excellent"
    GOOD = "good"
    ABOVE_AVERAGE = "above_average"
    FAIR = "fair"
    POOR = "poor"


#: Categories excluded by the score gate.
REJECTED_CATEGORIES = frozenset({QualityCategory.FAIR, QualityCategory.POOR})


class Verdict(str, Enum):
    PROVED = "proved"
    FAILED = "failed"
    TIMEOUT = "timeout"
    VERIFIER_CRASH = "verifier_crash"


class RecordState(str, Enum):
    FORMALIZED = "formalized"
    SCORED = "scored"
    REJECTED_SCORE = "rejected_score"
    REJECTED_FALSE_HYPOTHESIS = "rejected_false_hypothesis"
    REJECTED_PARSE = "rejected_parse"
    QUEUED = "queued"
    PROVED_ORIGINAL = "proved_original"
    PROVED_NEGATION = "proved_negation"
    EXHAUSTED = "exhausted"
    ANOMALOUS = "anomalous"


TERMINAL_STATES = frozenset(
    {
        RecordState.REJECTED_PARSE,
        RecordState.REJECTED_SCORE,
        RecordState.REJECTED_FALSE_HYPOTHESIS,
        RecordState.PROVED_ORIGINAL,
        RecordState.PROVED_NEGATION,
        RecordState.EXHAUSTED,
        RecordState.ANOMALOUS,
    }
)

# Stage order of the pipeline; a record never re-enters an earlier state.
_ALLOWED_TRANSITIONS: dict[RecordState, frozenset[RecordState]] = {
    RecordState.FORMALIZED: frozenset({RecordState.SCORED}),
    RecordState.SCORED: frozenset(
        {
            RecordState.REJECTED_SCORE,
            RecordState.REJECTED_FALSE_HYPOTHESIS,
            RecordState.QUEUED,
        }
    ),
    RecordState.QUEUED: frozenset(
        {
            RecordState.PROVED_ORIGINAL,
            RecordState.PROVED_NEGATION,
            RecordState.EXHAUSTED,
            RecordState.ANOMALOUS,
        }
    ),
}


def collapse_whitespace(text: str) -> str:
    """Collapse every whitespace run to a single space and trim the ends."""
    return " ".join(text.split())


class SystemClock:
    """Wall-clock timestamps for audit entries."""

    def now(self) -> float:
        return time.time()


#: Shared default clock. Pass ``clock=None`` to stage operations for
#: deterministic audits (entries then carry only their sequence number).
SYSTEM_CLOCK = SystemClock()


@dataclass(frozen=True)
class InformalProblem:
    """A natural-language math problem, the pipeline's raw input."""

    id: str
    text: str
    answer: Optional[str] = None
    source_tag: str = ""

    def __post_init__(self):
        if not self.text.strip():
            raise ValueError(f"problem {self.id!r} has empty text")


@dataclass(frozen=True)
class FormalStatement:
    """A parsed declaration: binders (hypotheses) and goal, no proof body.

    ``raw`` is the full declaration text; ``binders`` and ``goal`` are the
    text spans either side of the goal separator. Reassembling the parts
    reproduces ``raw`` up to whitespace normalization.
    """

    raw: str
    binders: str
    goal: str
    declaration_kind: DeclarationKind = DeclarationKind.EXAMPLE
    name: Optional[str] = None

    def __post_init__(self):
        if not self.goal.strip():
            raise ValueError("statement goal must be non-empty")

    def reassemble(self) -> str:
        """Rebuild the declaration from its parts."""
        head = self.declaration_kind.value
        if self.name:
            head = f"{head} {self.name}"
        if self.binders:
            head = f"{head} {self.binders}"
        return f"{head} : {self.goal}"


@dataclass(frozen=True)
class QualityAssessment:
    """The five-way quality score parsed from a scoring completion."""

    category: QualityCategory
    analysis: str = ""
    translation: str = ""
    raw_response: str = ""


@dataclass(frozen=True)
class ProofAttempt:
    """One sampled proof candidate for a statement (or its negation)."""

    statement_id: str
    polarity: Polarity
    sample_index: int
    proof_body: str
    full_source: str

    def __post_init__(self):
        if self.sample_index < 0:
            raise ValueError("sample_index must be >= 0")


@dataclass(frozen=True)
class Diagnostic:
    """One checker message: severity, source position, text."""

    severity: str
    line: int
    col: int
    text: str


@dataclass(frozen=True)
class VerificationOutcome:
    """The checker's structured verdict on one proof candidate."""

    verdict: Verdict
    diagnostics: tuple[Diagnostic, ...] = ()
    wall_time: float = 0.0
    from_cache: bool = False

    def __post_init__(self):
        if self.verdict is Verdict.PROVED:
            if any(d.severity == "error" for d in self.diagnostics):
                raise ValueError("proved outcome cannot carry error diagnostics")


@dataclass(frozen=True)
class TheoremProofPair:
    """A validated statement/proof pair destined for the training set."""

    statement: FormalStatement
    proof_body: str
    polarity: Polarity
    iteration: int
    content_hash: str


@dataclass
class StatementRecord:
    """Per-statement state machine with an append-only audit trail.

    Audit entries are dicts ``{"seq": n, "event": ..., ...}``; when a clock
    is supplied they additionally carry a ``"ts"`` wall-clock value. ``seq``
    is the logical timestamp and is deterministic across runs.
    """

    record_id: str
    origin_id: str
    iteration: int = 0
    statement: Optional[FormalStatement] = None
    state: RecordState = RecordState.FORMALIZED
    assessment: Optional[QualityAssessment] = None
    winning_attempt: Optional[ProofAttempt] = None
    attempt_counts: tuple[int, int] = (0, 0)  # (original, negation)
    audit: list[dict[str, Any]] = field(default_factory=list)

    def log(self, event: str, clock: Optional[SystemClock] = None, **fields: Any) -> None:
        entry: dict[str, Any] = {"seq": len(self.audit), "event": event}
        if clock is not None:
            entry["ts"] = clock.now()
        entry.update(fields)
        self.audit.append(entry)

    def advance(
        self,
        new_state: RecordState,
        clock: Optional[SystemClock] = None,
        **fields: Any,
    ) -> None:
        """Move to ``new_state``, enforcing the pipeline stage order."""
        allowed = _ALLOWED_TRANSITIONS.get(self.state, frozenset())
        if new_state not in allowed:
            raise StateTransitionError(
                f"{self.record_id}: illegal transition {self.state.value} -> {new_state.value}"
            )
        self.state = new_state
        self.log("state", clock=clock, state=new_state.value, **fields)

    @property
    def terminal(self) -> bool:
        return self.state in TERMINAL_STATES

    def state_history(self) -> list[str]:
        """States recorded in the audit trail, in order (initial one included)."""
        history = [e["state"] for e in self.audit if e["event"] == "state"]
        return history
