"""Prompt templates for the three model calls the pipeline makes.

Rendered prompts are byte-stable for fixed inputs; golden-file tests pin
them. Do not reflow or "fix" the template strings — downstream models and
the training-file exporter both depend on the exact bytes.
"""

from __future__ import annotations

from .core import FormalStatement, InformalProblem
from .verifier import VERIFICATION_PREFIX

FORMALIZATION_TEMPLATE = (
    "Mathematical Problem in Natural Language:\n"
    "{problem}\n"
    "Translate the problem to Lean 4 (only the core declaration): \n"
    "```lean4"
)

SCORING_RUBRIC = """To evaluate whether a formal Lean4 statement will be of interest to the community, consider the following criteria:

1. Relevance to Current Research: Does the statement address a problem or concept that is actively being researched in mathematics or related fields? Higher relevance scores indicate greater potential interest.

2. Complexity and Depth: Is the statement complex enough to challenge existing theories and methodologies, yet deep enough to provide significant insights or advancements? Complexity and depth showcase Lean4's capabilities and attract interest.

3. Interdisciplinary Potential: Does the statement offer opportunities for interdisciplinary research, connecting mathematics with other fields such as computer science, physics, or biology? Interdisciplinary projects often garner wide interest.

4. Community Needs and Gaps: Does the statement fill an identified need or gap within the Lean4 community or the broader mathematical community? Addressing these needs directly correlates with interest.

5. Innovativeness: How innovative is the statement? Does it propose new methods, concepts, or applications? Innovation drives interest and engagement.

Customize your evaluation for each problem accordingly, assessing it as `excellent`, `good`, `above average`, `fair` or `poor`.

You should respond in the following format for each statement:

```

Translate the code to natural language: (Detailed explanation of the informal statement, including any relevant background information, assumptions, and definitions.)
Analysis: (Provide a brief justification for each score, highlighting why the statement scored as it did across the criteria.)
Assessment: (Based on the criteria, rate the statement as `excellent', `good`, `above average`, `fair` or `poor`.)
```"""


def render_formalization_prompt(problem: InformalProblem) -> str:
    """Prompt asking for the Lean 4 core declaration of an informal problem.

    The answer, when present, rides along under the problem text on its own
    line; the prompt ends with the opening code fence so the completion is
    the declaration itself.
    """
    body = problem.text if not problem.answer else f"{problem.text}\n{problem.answer}"
    return FORMALIZATION_TEMPLATE.format(problem=body)


def render_scoring_prompt(stmt: FormalStatement) -> str:
    """Five-criterion quality rubric followed by the statement to assess."""
    return f"{SCORING_RUBRIC}\n\n{stmt.raw}"


def render_proof_prompt(stmt: FormalStatement, include_header: bool = True) -> str:
    """Whole-proof prompt: the statement opened with ``:= by`` for completion.

    ``include_header`` prepends the pinned verification prefix so the
    completion continues a source the checker will actually see.
    """
    header = f"{VERIFICATION_PREFIX}\n\n" if include_header else ""
    return f"{header}{stmt.raw} := by\n"
