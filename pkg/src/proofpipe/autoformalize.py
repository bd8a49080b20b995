"""Stage 1: turn informal problems into parsed formal statements.

Every completion yields exactly one record. Extraction or parse failures are
data, not errors: they become ``rejected_parse`` records that keep the raw
completion in their audit trail.
"""

from __future__ import annotations

from typing import Optional

from .core import (
    InformalProblem,
    ParseError,
    PipelineError,
    RecordState,
    StatementRecord,
    SystemClock,
)
from .gateway import CompletionRequest, ModelGateway, SamplingParams
from .prompts import render_formalization_prompt
from .statements import parse_statement


class EmptyExtraction(PipelineError):
    """Nothing was left of the completion after fence stripping."""


def extract(completion: str) -> str:
    """Pull the declaration out of a completion.

    The prompt ends with an opening code fence, so a well-behaved completion
    is the declaration followed by a closing fence. Models sometimes re-open
    the fence or append prose after closing it; we take everything before the
    first fence terminator, after dropping a leading fence or language-tag
    line.
    """
    text = completion
    stripped = text.lstrip()
    if stripped.startswith("```"):
        _, _, text = stripped.partition("\n")
    fence = text.find("```")
    if fence != -1:
        text = text[:fence]
    text = text.strip()
    first_line, _, rest = text.partition("\n")
    if first_line.strip() in ("lean", "lean4"):
        text = rest.strip()
    if not text:
        raise EmptyExtraction("no declaration text in completion")
    return text


def formalize(
    problem: InformalProblem,
    params: SamplingParams,
    gateway: ModelGateway,
    iteration: int = 0,
    route: str = "",
    clock: Optional[SystemClock] = None,
) -> list[StatementRecord]:
    """Sample formalizations for one problem; one record per completion."""
    prompt = render_formalization_prompt(problem)
    response = gateway.complete(
        CompletionRequest(prompt=prompt, params=params, route=route)
    )
    records = []
    for i, completion in enumerate(response.completions):
        record_id = f"{problem.id}/f{i}"
        try:
            declaration = extract(completion)
            stmt = parse_statement(declaration)
        except (EmptyExtraction, ParseError) as exc:
            rec = StatementRecord(
                record_id=record_id,
                origin_id=problem.id,
                iteration=iteration,
                statement=None,
                state=RecordState.REJECTED_PARSE,
            )
            rec.log(
                "state",
                clock=clock,
                state=RecordState.REJECTED_PARSE.value,
                completion=completion,
                error=getattr(exc, "code", "empty_extraction"),
            )
            records.append(rec)
            continue
        rec = StatementRecord(
            record_id=record_id,
            origin_id=problem.id,
            iteration=iteration,
            statement=stmt,
            state=RecordState.FORMALIZED,
        )
        rec.log(
            "state", clock=clock, state=RecordState.FORMALIZED.value, sample_index=i
        )
        records.append(rec)
    return records
