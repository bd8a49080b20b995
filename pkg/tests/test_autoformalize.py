"""Extraction robustness and record conservation."""

import pytest

from proofpipe.autoformalize import EmptyExtraction, extract, formalize
from proofpipe.core import InformalProblem, RecordState
from proofpipe.gateway import MockBackend, ModelGateway, SamplingParams
from proofpipe.prompts import render_formalization_prompt

# Malformed model output corpus: (completion, expected extraction or None).
MALFORMED_CASES = [
    ("example : True\n```", "example : True"),
    ("```lean4\nexample : True\n```", "example : True"),
    ("```lean\nexample : True\n```", "example : True"),
    ("```\nexample : True\n```", "example : True"),
    ("lean4\nexample : True\n```", "example : True"),
    ("example : True", "example : True"),
    ("example : True\n```\nThis proves the claim.", "example : True"),
    ("  example : True  \n```", "example : True"),
    ("example : ∀ x : ℕ, x = x\n``` trailing", "example : ∀ x : ℕ, x = x"),
    ("", None),
    ("   ", None),
    ("```lean4\n```", None),
]


@pytest.mark.parametrize("completion,expected", MALFORMED_CASES)
def test_extract_malformed_corpus(completion, expected):
    if expected is None:
        with pytest.raises(EmptyExtraction):
            extract(completion)
    else:
        assert extract(completion) == expected


def _gateway_for(problem, completions):
    mock = MockBackend()
    mock.script(render_formalization_prompt(problem), completions)
    return ModelGateway(mock)


def test_formalize_fenced_completion():
    problem = InformalProblem(id="p1", text="Prove 1+1=2.")
    gw = _gateway_for(problem, ["example : 1 + 1 = 2\n```"])
    records = formalize(problem, SamplingParams(), gw)
    assert len(records) == 1
    rec = records[0]
    assert rec.state is RecordState.FORMALIZED
    assert rec.statement.goal == "1 + 1 = 2"
    assert rec.record_id == "p1/f0"


def test_formalize_unparseable_becomes_rejected_parse_with_audit():
    problem = InformalProblem(id="p2", text="Prove something.")
    gw = _gateway_for(problem, ["not a declaration at all"])
    records = formalize(problem, SamplingParams(), gw)
    assert records[0].state is RecordState.REJECTED_PARSE
    assert records[0].statement is None
    # The raw completion is preserved in the audit trail.
    assert any(
        e.get("completion") == "not a declaration at all" for e in records[0].audit
    )


def test_formalize_empty_completion_rejected():
    problem = InformalProblem(id="p3", text="Prove nothing.")
    gw = _gateway_for(problem, [""])
    records = formalize(problem, SamplingParams(), gw)
    assert records[0].state is RecordState.REJECTED_PARSE


def test_conservation_n_samples():
    """|problems| x n_samples completions -> exactly that many records."""
    problem = InformalProblem(id="p4", text="Prove a few things.")
    completions = [
        "example : 1 = 1\n```",
        "garbage",
        "example : 2 = 2\n```",
        "",
    ]
    gw = _gateway_for(problem, completions)
    records = formalize(problem, SamplingParams(n_samples=4), gw)
    assert len(records) == 4
    states = [r.state for r in records]
    assert states.count(RecordState.FORMALIZED) == 2
    assert states.count(RecordState.REJECTED_PARSE) == 2
    assert [r.record_id for r in records] == [f"p4/f{i}" for i in range(4)]


def test_every_rejected_record_keeps_completion():
    problem = InformalProblem(id="p5", text="Prove junk.")
    junk = ["x" * 3, "def f : ℕ := 1", "theorem : True"]
    gw = _gateway_for(problem, [f"{j}" for j in junk])
    records = formalize(problem, SamplingParams(n_samples=3), gw)
    for rec, completion in zip(records, junk):
        assert rec.state is RecordState.REJECTED_PARSE
        assert any(e.get("completion") == completion for e in rec.audit)
