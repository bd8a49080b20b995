"""Stage 2: model-scored quality gate plus hypothesis rejection.

Statements rated fair or poor are excluded; survivors must then resist a
False-conclusion proof search. A verified False-proof is evidence of
inconsistent hypotheses and carries the witness into the record's audit.
"""

from __future__ import annotations

import re
from typing import Optional

from .core import (
    ProofAttempt,
    Polarity,
    QualityAssessment,
    QualityCategory,
    RecordState,
    REJECTED_CATEGORIES,
    StatementRecord,
    SystemClock,
    Verdict,
)
from .gateway import CompletionRequest, ModelGateway, ProofSampler, SamplingParams
from .prompts import render_scoring_prompt
from .statements import rewrite_goal_to_false
from .verifier import VerificationJob, assemble_source

_ASSESSMENT_RE = re.compile(r"^\s*assessment\s*:\s*(?P<value>.+?)\s*$", re.IGNORECASE)
_SECTION_RES = {
    "translation": re.compile(
        r"translate the code to natural language\s*:\s*(?P<body>.*?)(?=\n\s*analysis\s*:|\n\s*assessment\s*:|\Z)",
        re.IGNORECASE | re.DOTALL,
    ),
    "analysis": re.compile(
        r"\banalysis\s*:\s*(?P<body>.*?)(?=\n\s*assessment\s*:|\Z)",
        re.IGNORECASE | re.DOTALL,
    ),
}

_CATEGORY_ALIASES = {
    "excellent": QualityCategory.EXCELLENT,
    "good": QualityCategory.GOOD,
    "above average": QualityCategory.ABOVE_AVERAGE,
    "above_average": QualityCategory.ABOVE_AVERAGE,
    "fair": QualityCategory.FAIR,
    "poor": QualityCategory.POOR,
}


def parse_assessment(text: str) -> Optional[QualityCategory]:
    """Find the Assessment line and map it onto the five categories.

    Tolerates case, surrounding quotes/backticks and trailing punctuation;
    returns None when no line resolves to a known category.
    """
    for line in text.splitlines():
        m = _ASSESSMENT_RE.match(line)
        if not m:
            continue
        value = m.group("value").strip().strip("`'\"*.").strip().lower()
        value = value.rstrip(".!")
        if value in _CATEGORY_ALIASES:
            return _CATEGORY_ALIASES[value]
    return None


def score(
    rec: StatementRecord,
    params: SamplingParams,
    gateway: ModelGateway,
    route: str = "",
    clock: Optional[SystemClock] = None,
) -> StatementRecord:
    """Attach a quality assessment and move the record to ``scored``.

    An unparseable assessment defaults to ``poor`` (fail closed) with an
    audit note.
    """
    assert rec.statement is not None
    prompt = render_scoring_prompt(rec.statement)
    response = gateway.complete(
        CompletionRequest(prompt=prompt, params=params, route=route)
    )
    raw = response.completions[0]
    category = parse_assessment(raw)
    sections = {}
    for key, pattern in _SECTION_RES.items():
        m = pattern.search(raw)
        sections[key] = m.group("body").strip() if m else ""
    if category is None:
        rec.assessment = QualityAssessment(
            category=QualityCategory.POOR,
            analysis=sections["analysis"],
            translation=sections["translation"],
            raw_response=raw,
        )
        rec.advance(RecordState.SCORED, clock=clock, category="poor")
        rec.log("note", clock=clock, note="unparseable_assessment")
        return rec
    rec.assessment = QualityAssessment(
        category=category,
        analysis=sections["analysis"],
        translation=sections["translation"],
        raw_response=raw,
    )
    rec.advance(RecordState.SCORED, clock=clock, category=category.value)
    return rec


def apply_score_gate(
    rec: StatementRecord, clock: Optional[SystemClock] = None
) -> StatementRecord:
    """Exclude fair/poor statements; others proceed unchanged."""
    assert rec.assessment is not None
    if rec.assessment.category in REJECTED_CATEGORIES:
        rec.advance(
            RecordState.REJECTED_SCORE,
            clock=clock,
            category=rec.assessment.category.value,
        )
    return rec


def hypothesis_rejection(
    rec: StatementRecord,
    budget: int,
    prover: ProofSampler,
    verifier,
    clock: Optional[SystemClock] = None,
) -> StatementRecord:
    """Probe the statement's hypotheses by trying to prove ``False``.

    Up to ``budget`` candidates are sampled and verified; the first verified
    proof rejects the statement with the witness stored in its audit. A zero
    budget disables the gate and queues the record directly.
    """
    assert rec.statement is not None
    if budget <= 0:
        rec.advance(RecordState.QUEUED, clock=clock, false_test="disabled")
        return rec
    false_stmt = rewrite_goal_to_false(rec.statement)
    for index in range(budget):
        body = prover.sample(false_stmt, 1)[0]
        attempt = ProofAttempt(
            statement_id=rec.record_id,
            polarity=Polarity.FALSE_TEST,
            sample_index=index,
            proof_body=body,
            full_source=assemble_source(f"{false_stmt.raw} := by\n{body}"),
        )
        outcome = verifier.verify(VerificationJob.for_source(attempt.full_source))
        if outcome.verdict is Verdict.PROVED:
            rec.advance(
                RecordState.REJECTED_FALSE_HYPOTHESIS,
                clock=clock,
                witness_proof=body,
                witness_index=index,
            )
            rec.log(
                "false_proof_witness",
                clock=clock,
                proof_body=body,
                sample_index=index,
                verdict=outcome.verdict.value,
            )
            return rec
    rec.advance(RecordState.QUEUED, clock=clock, false_attempts=budget)
    return rec
