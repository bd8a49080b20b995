"""Deterministic 50-problem end-to-end fixture.

Builds a corpus, a scripted mock model, a scripted mock checker and a config
in a target directory. The outcome class of every problem is fixed by
``PLAN``, so exact stage counts are known analytically:

    problems=50 formalized=46 scored=46 rejected_parse=4 rejected_score=10
    rejected_false_hypothesis=6 queued=30 proved_original=12
    proved_negation=8 exhausted=10 anomalous=0 new_pairs=20

The fixture uses the package's own prompt renderers so the scripted mock keys
stay in lockstep with the templates.
"""

from __future__ import annotations

import json
from pathlib import Path

from proofpipe.core import InformalProblem
from proofpipe.gateway import prompt_digest
from proofpipe.prompts import (
    render_formalization_prompt,
    render_proof_prompt,
    render_scoring_prompt,
)
from proofpipe.statements import (
    negate_statement,
    parse_statement,
    rewrite_goal_to_false,
)

# class -> problem numbers (1-based)
PLAN = {
    "parse_fail": range(1, 5),
    "reject_fair": range(5, 10),
    "reject_poor": range(10, 15),
    "reject_false": range(15, 21),
    "prove_original": range(21, 33),
    "prove_negation": range(33, 41),
    "exhaust": range(41, 51),
}

EXPECTED_STAGE_COUNTS = {
    "problems": 50,
    "formalized": 46,
    "scored": 46,
    "rejected_parse": 4,
    "rejected_score": 10,
    "rejected_false_hypothesis": 6,
    "queued": 30,
    "proved_original": 12,
    "proved_negation": 8,
    "exhausted": 10,
    "anomalous": 0,
}
EXPECTED_NEW_PAIRS = 20

_PASS_ASSESSMENTS = [
    "Translate the code to natural language: A small arithmetic identity.\n"
    "Analysis: Self-contained and checkable.\n"
    "Assessment: excellent",
    "Assessment: Good.",
    "Assessment: `above average`",
]


def _problem_class(number: int) -> str:
    for cls, numbers in PLAN.items():
        if number in numbers:
            return cls
    raise ValueError(number)


def statement_text(number: int) -> str:
    return f"example (n : ℕ) (h : n = {number}) : n + 0 = {number}"


def build_fixture(target: Path, k: int = 4, false_budget: int = 2) -> dict[str, Path]:
    """Write corpus, mock scripts and config; return the paths."""
    target.mkdir(parents=True, exist_ok=True)
    corpus_path = target / "corpus.jsonl"
    model_path = target / "mock_model.jsonl"
    checker_path = target / "mock_checker.jsonl"
    config_path = target / "config.json"

    problems = []
    model_script: dict[str, list[str]] = {}

    with open(corpus_path, "w", encoding="utf-8") as fh:
        for number in range(1, 51):
            pid = f"p{number:03d}"
            problem = InformalProblem(
                id=pid,
                text=f"Show that n + 0 = {number} when n = {number}.",
                answer=str(number) if number % 2 == 0 else None,
                source_tag="fixture",
            )
            problems.append(problem)
            entry = {"id": problem.id, "text": problem.text, "source_tag": "fixture"}
            if problem.answer is not None:
                entry["answer"] = problem.answer
            fh.write(json.dumps(entry, sort_keys=True, ensure_ascii=False) + "\n")

    for number, problem in enumerate(problems, start=1):
        cls = _problem_class(number)
        pid = problem.id

        if cls == "parse_fail":
            completion = "I cannot translate this problem."
            model_script[prompt_digest(render_formalization_prompt(problem))] = [
                completion
            ]
            continue

        stmt_text = statement_text(number)
        model_script[prompt_digest(render_formalization_prompt(problem))] = [
            f"{stmt_text}\n```"
        ]
        stmt = parse_statement(stmt_text)

        if cls == "reject_fair":
            assessment = "Analysis: Routine once simplified.\nAssessment: fair"
        elif cls == "reject_poor":
            assessment = "Assessment: Poor."
        else:
            assessment = _PASS_ASSESSMENTS[number % len(_PASS_ASSESSMENTS)]
        model_script[prompt_digest(render_scoring_prompt(stmt))] = [assessment]

        false_prompt = render_proof_prompt(rewrite_goal_to_false(stmt))
        if cls == "reject_false":
            model_script[prompt_digest(false_prompt)] = [f"falseok_{pid}"]
        else:
            model_script[prompt_digest(false_prompt)] = ["no_false_proof"]

        orig_prompt = render_proof_prompt(stmt)
        neg_prompt = render_proof_prompt(negate_statement(stmt))
        if cls == "prove_original":
            win_at = number % 3 + 1  # attempt 1..3 (k=4 in the fixture config)
            model_script[prompt_digest(orig_prompt)] = ["fail_tac"] * (win_at - 1) + [
                f"proofok_{pid}"
            ]
            model_script[prompt_digest(neg_prompt)] = ["neg_fail"]
        elif cls == "prove_negation":
            win_at = number % 2 + 1
            model_script[prompt_digest(orig_prompt)] = ["fail_tac"]
            model_script[prompt_digest(neg_prompt)] = ["neg_fail"] * (win_at - 1) + [
                f"negok_{pid}"
            ]
        else:
            model_script[prompt_digest(orig_prompt)] = ["fail_tac"]
            model_script[prompt_digest(neg_prompt)] = ["neg_fail"]

    with open(model_path, "w", encoding="utf-8") as fh:
        for digest in sorted(model_script):
            fh.write(
                json.dumps(
                    {"prompt_sha256": digest, "completions": model_script[digest]},
                    sort_keys=True,
                    ensure_ascii=False,
                )
                + "\n"
            )

    with open(checker_path, "w", encoding="utf-8") as fh:
        for needle in ("falseok_", "proofok_", "negok_"):
            fh.write(json.dumps({"contains": needle, "verdict": "proved"}) + "\n")
        fh.write(json.dumps({"default": "failed"}) + "\n")

    config = {
        "backend": {"kind": "mock", "mock_script": "mock_model.jsonl"},
        "filter": {"false_proof_budget": false_budget},
        "search": {"k": k, "per_attempt_timeout_s": 30.0, "stream_parallelism": 1},
        "verifier": {
            "pool_size": 2,
            "timeout_s": 30.0,
            "mock_script": "mock_checker.jsonl",
            "cache_path": None,
        },
        "store": {"dir": "store"},
        "iteration": {"corpus": "corpus.jsonl", "max_iterations": 1},
        "run": {"deterministic": True, "workers": 1},
    }
    config_path.write_text(
        json.dumps(config, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )

    return {
        "corpus": corpus_path,
        "model_script": model_path,
        "checker_script": checker_path,
        "config": config_path,
        "store": target / "store",
    }
