"""Synthetic theorem-proving data pipeline.

Autoformalizes informal math problems, filters statements by model score and
hypothesis rejection, races dual statement/negation proof searches against a
pool of external checkers, and accumulates validated theorem/proof pairs
across iterations. A pass@k evaluation harness rides along.
"""

from .core import (
    FormalStatement,
    InformalProblem,
    Polarity,
    ProofAttempt,
    QualityAssessment,
    QualityCategory,
    RecordState,
    StatementRecord,
    TheoremProofPair,
    Verdict,
    VerificationOutcome,
)
from .statements import (
    negate_statement,
    normalize_for_hash,
    parse_statement,
    rewrite_goal_to_false,
)

__version__ = "0.1.0"

__all__ = [
    "FormalStatement",
    "InformalProblem",
    "Polarity",
    "ProofAttempt",
    "QualityAssessment",
    "QualityCategory",
    "RecordState",
    "StatementRecord",
    "TheoremProofPair",
    "Verdict",
    "VerificationOutcome",
    "negate_statement",
    "normalize_for_hash",
    "parse_statement",
    "rewrite_goal_to_false",
    "__version__",
]
