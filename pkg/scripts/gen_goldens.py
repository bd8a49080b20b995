#!/usr/bin/env python3
"""Regenerate the golden files under tests/data/golden/.

Run from the repository root after a deliberate template or fixture change:

    python scripts/gen_goldens.py

Review the diff before committing; golden files are the frozen contract.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

ROOT = Path(__file__).parent.parent
sys.path.insert(0, str(ROOT / "tests"))

from proofpipe.config import PipelineConfig
from proofpipe.core import InformalProblem
from proofpipe.evaluate import AttemptLedger, report
from proofpipe.core import Verdict
from proofpipe.pipeline import Pipeline
from proofpipe.prompts import (
    render_formalization_prompt,
    render_proof_prompt,
    render_scoring_prompt,
)
from proofpipe.statements import parse_statement

from fixtures import build_fixture

GOLDEN = ROOT / "tests" / "data" / "golden"


def load_problems() -> list[InformalProblem]:
    problems = []
    with open(ROOT / "tests" / "data" / "problems_5.jsonl", encoding="utf-8") as fh:
        for line in fh:
            entry = json.loads(line)
            problems.append(
                InformalProblem(
                    id=entry["id"],
                    text=entry["text"],
                    answer=entry.get("answer"),
                    source_tag=entry.get("source_tag", ""),
                )
            )
    return problems


def write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")
    print(f"wrote {path.relative_to(ROOT)}")


def gen_prompt_goldens() -> None:
    for problem in load_problems():
        write(
            GOLDEN / f"prompt_formalize_{problem.id}.txt",
            render_formalization_prompt(problem),
        )
    stmt = parse_statement("example (a : ℝ) : a ^ 2 ≥ 0")
    write(GOLDEN / "prompt_scoring.txt", render_scoring_prompt(stmt))
    write(GOLDEN / "prompt_proof.txt", render_proof_prompt(stmt))
    write(
        GOLDEN / "prompt_proof_bare.txt",
        render_proof_prompt(stmt, include_header=False),
    )


def gen_pipeline_goldens(tmp: Path) -> None:
    paths = build_fixture(tmp)
    config = PipelineConfig.from_file(paths["config"])
    with Pipeline(config) as pipeline:
        pipeline.run_iteration(0)
        export_path = tmp / "train_iter0.jsonl"
        pipeline.export(0, export_path)
    manifest_line = (tmp / "store" / "manifests.jsonl").read_text(encoding="utf-8")
    write(GOLDEN / "manifests_iter0.jsonl", manifest_line)
    write(GOLDEN / "export_iter0.jsonl", export_path.read_text(encoding="utf-8"))


def gen_report_golden() -> None:
    ledger = AttemptLedger(suite="minif2f", split="test", label="minif2f/test")
    verdicts = {
        "prob_a": [Verdict.FAILED, Verdict.PROVED, Verdict.FAILED, Verdict.FAILED],
        "prob_b": [Verdict.FAILED] * 4,
        "prob_c": [Verdict.FAILED, Verdict.FAILED, Verdict.FAILED, Verdict.PROVED],
        "prob_d": [Verdict.TIMEOUT, Verdict.FAILED, Verdict.PROVED, Verdict.PROVED],
    }
    for problem_id, outcomes in verdicts.items():
        for index, verdict in enumerate(outcomes):
            ledger.record(problem_id, "run0", index, verdict)
    table, _ = report([ledger], ks=[1, 2, 4])
    write(GOLDEN / "report.txt", table)


def main() -> None:
    import tempfile

    gen_prompt_goldens()
    with tempfile.TemporaryDirectory() as tmp:
        gen_pipeline_goldens(Path(tmp))
    gen_report_golden()


if __name__ == "__main__":
    main()
