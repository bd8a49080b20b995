"""Splitting declarations into binders and goal, plus goal rewriting.

The scanner is not a Lean grammar. It tracks bracket depth, double-quoted
string literals and binder groups, which is enough to locate the goal
separator of ``example``/``theorem``-style competition declarations. The
decomposition is validated against a hand-checked corpus in the tests.
"""

from __future__ import annotations

import hashlib
import re
from dataclasses import replace

from .core import (
    DeclarationKind,
    FormalStatement,
    ParseError,
    Polarity,
    TheoremProofPair,
    collapse_whitespace,
)

_OPENERS = {"(": ")", "[": "]", "{": "}", "⟨": "⟩", "⦃": "⦄"}
_CLOSERS = {v: k for k, v in _OPENERS.items()}

# Single-char binder heads whose ascription colon must not be mistaken for
# the goal separator (e.g. the colon in "∀ x : ℕ, ...").
_BINDER_CHARS = set("∀∃λ∑∏⨆⨅⋃⋂")
# Word binder heads, matched on identifier boundaries.
_BINDER_WORDS = ("fun", "let")
# Any of these at the binder's own bracket depth closes the binder group.
_BINDER_TERMINATORS = {",", ";"}  # "=>" is handled as a two-char token


def _is_ident_char(c: str) -> bool:
    return c.isalnum() or c in "_'!?"


_HEAD_RE = re.compile(r"(example|theorem|lemma)(?![\w'])")
_NAME_RE = re.compile(r"\s+([^\s:(){}\[\]⟨⟩⦃⦄]+)")


class _Scan:
    """One pass over a declaration, collecting separator candidates."""

    def __init__(self, text: str):
        self.text = text
        self.colons: list[int] = []  # top-level ':' positions
        self.assigns: list[int] = []  # top-level ':=' positions
        self.balanced = True
        self._walk()

    def _walk(self) -> None:
        text = self.text
        stack: list[str] = []  # expected closers
        binder_depths: list[int] = []  # bracket depth at each open binder group
        in_string = False
        i = 0
        n = len(text)
        while i < n:
            c = text[i]
            if in_string:
                if c == "\\":
                    i += 2
                    continue
                if c == '"':
                    in_string = False
                i += 1
                continue
            if c == '"':
                in_string = True
                i += 1
                continue
            if c in _OPENERS:
                stack.append(_OPENERS[c])
                i += 1
                continue
            if c in _CLOSERS:
                if not stack or stack[-1] != c:
                    self.balanced = False
                    return
                stack.pop()
                # Binder groups opened inside this bracket die with it.
                while binder_depths and binder_depths[-1] > len(stack):
                    binder_depths.pop()
                i += 1
                continue
            if c in _BINDER_CHARS:
                binder_depths.append(len(stack))
                i += 1
                continue
            if c.isalpha() and not (i > 0 and _is_ident_char(text[i - 1])):
                for word in _BINDER_WORDS:
                    end = i + len(word)
                    if text.startswith(word, i) and (
                        end >= n or not _is_ident_char(text[end])
                    ):
                        binder_depths.append(len(stack))
                        i = end
                        break
                else:
                    i += 1
                    continue
                continue
            if c == "=" and text.startswith("=>", i):
                if binder_depths and binder_depths[-1] == len(stack):
                    binder_depths.pop()
                i += 2
                continue
            if c in _BINDER_TERMINATORS:
                if binder_depths and binder_depths[-1] == len(stack):
                    binder_depths.pop()
                i += 1
                continue
            if c == ":":
                if text.startswith(":=", i):
                    if not stack and not binder_depths:
                        self.assigns.append(i)
                    i += 2
                    continue
                prev_colon = i > 0 and text[i - 1] == ":"
                next_colon = i + 1 < n and text[i + 1] == ":"
                if not stack and not binder_depths and not prev_colon and not next_colon:
                    self.colons.append(i)
                i += 1
                continue
            i += 1
        if stack:
            self.balanced = False


def _strip_proof_body(text: str, scan: _Scan) -> str:
    """Drop a trailing ':= by ...' (or ':= sorry') proof body if present."""
    for pos in scan.assigns:
        tail = text[pos + 2 :].lstrip()
        if tail.startswith("by") and (len(tail) == 2 or not _is_ident_char(tail[2])):
            return text[:pos].rstrip()
        if tail.startswith("sorry") and (
            len(tail) == 5 or not _is_ident_char(tail[5])
        ):
            return text[:pos].rstrip()
    return text


def parse_statement(raw: str) -> FormalStatement:
    """Split a declaration into binders and goal.

    The goal separator is the first colon at bracket depth zero that is
    outside string literals, not part of ``:=`` or ``::`` and not the
    ascription colon of a binder group. Any trailing ``:= by ...`` proof
    body is stripped first.
    """
    if not raw or not raw.strip():
        raise ParseError("empty_input", "empty declaration")

    scan = _Scan(raw)
    if not scan.balanced:
        raise ParseError("unbalanced_brackets", "unbalanced brackets in declaration")

    text = _strip_proof_body(raw.strip(), _Scan(raw.strip()))

    # Declaration head: 'example' or 'theorem <name>' ('lemma' folds into
    # 'theorem'; the raw text is canonicalized accordingly).
    head = _HEAD_RE.match(text)
    if head is None:
        raise ParseError(
            "unsupported_declaration", f"not a declaration: {text.split(None, 1)[0]!r}"
        )
    keyword = head.group(1)
    head_end = head.end()
    name = None
    if keyword == "example":
        kind = DeclarationKind.EXAMPLE
    else:
        kind = DeclarationKind.THEOREM
        named = _NAME_RE.match(text, head_end)
        if named is None:
            raise ParseError("unsupported_declaration", f"{keyword} without a name")
        name = named.group(1)
        head_end = named.end()
        if keyword == "lemma":
            text = "theorem" + text[len("lemma") :]
            head_end += len("theorem") - len("lemma")

    body_scan = _Scan(text)
    sep = next((p for p in body_scan.colons if p >= head_end), None)
    if sep is None:
        raise ParseError("no_goal_separator", "no top-level goal separator found")

    binders = text[head_end:sep].strip()
    goal = text[sep + 1 :].strip()
    if not goal:
        raise ParseError("empty_goal", "goal is empty")

    return FormalStatement(
        raw=text, binders=binders, goal=goal, declaration_kind=kind, name=name
    )


def rewrite_goal_to_false(stmt: FormalStatement) -> FormalStatement:
    """Replace the goal with ``False``, keeping binders verbatim.

    Proving the rewritten statement witnesses inconsistent hypotheses.
    """
    return _with_goal(stmt, "False")


def negate_statement(stmt: FormalStatement) -> FormalStatement:
    """Wrap the goal as ``¬ (goal)``, keeping binders verbatim."""
    return _with_goal(stmt, f"¬ ({stmt.goal})")


def _with_goal(stmt: FormalStatement, goal: str) -> FormalStatement:
    rewritten = replace(stmt, goal=goal, raw="")
    return replace(rewritten, raw=rewritten.reassemble())


def normalize_for_hash(stmt: FormalStatement) -> str:
    """Canonical text used as the deduplication key.

    Whitespace runs collapse to single spaces and the optional theorem name
    is dropped, so `example` and named duplicates hash identically.
    """
    binders = f" {stmt.binders}" if stmt.binders else ""
    return collapse_whitespace(f"example{binders} : {stmt.goal}")


def content_hash(stmt: FormalStatement) -> str:
    """Hex digest of the normalized statement text."""
    return hashlib.sha256(normalize_for_hash(stmt).encode("utf-8")).hexdigest()


def training_pair(
    stmt: FormalStatement, proof_body: str, polarity: Polarity, iteration: int
) -> TheoremProofPair:
    """Build a training pair with its deduplication hash."""
    return TheoremProofPair(
        statement=stmt,
        proof_body=proof_body,
        polarity=polarity,
        iteration=iteration,
        content_hash=content_hash(stmt),
    )
