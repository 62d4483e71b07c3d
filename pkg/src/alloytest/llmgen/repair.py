"""Arity repair for equalities that give a field the unary empty set."""
from __future__ import annotations

import re
from typing import Optional

from .. import ast as A
from ..errors import ParseError
from ..parser import parse_command

_NAME = r"[A-Za-z_][A-Za-z0-9_'\"]*"
_EMPTY = re.compile(
    rf"(?<![\w'\"])(?P<lhs>(?:{_NAME}\s*<:\s*)?{_NAME})(?P<eq>\s*=\s*)"
    rf"(?P<rhs>none|no\s+{_NAME})(?![\w'\"])(?!\s*(?:->|\.|\+|&|-|<:|:>|\[))"
)
_COMMENT = re.compile(r"//[^\n]*|--[^\n]*|/\*.*?(?:\*/|\Z)", re.DOTALL)


def _lhs_arity(model: A.Model, lhs: str) -> Optional[int]:
    if "<:" in lhs:
        try:
            return A.arity_of(model, {}, lhs)
        except (ParseError, A.AlloyTypeError):
            return None
    if model.has_sig(lhs):
        return 1
    arities = {f.arity for f in model.fields_named(lhs)}
    if lhs == "next" and model.orderings:
        arities.add(2)
    return arities.pop() if len(arities) == 1 else None


def _parse_error(model: A.Model, text: str) -> Optional[ParseError]:
    try:
        parse_command(model, text)
    except ParseError as exc:
        return exc
    return None


def repair_syntax(model: A.Model, raw: str) -> tuple[str, list[str]]:
    """Rewrite `F = none` and `F = no F` to the empty relation of F's arity.

    Commands that already parse are returned untouched, and a rewrite is kept
    only if it parses or moves the first error later in the text.
    """
    before = _parse_error(model, raw)
    if before is None:
        return raw, []
    comments = [(m.start(), m.end()) for m in _COMMENT.finditer(raw)]
    edits: list[str] = []
    pieces: list[str] = []
    last = 0
    for m in _EMPTY.finditer(raw):
        if any(s <= m.start() < e for s, e in comments):
            continue
        # the left side must be a whole operand, not the tail of a larger expression
        if raw[: m.start()].rstrip()[-1:] in tuple(".>+&~^*[,:<=-"):
            continue
        lhs = re.sub(r"\s+", " ", m.group("lhs"))
        k = _lhs_arity(model, lhs)
        if k is None or k < 2:
            continue
        product = "->".join(["none"] * k)
        pieces.append(raw[last : m.start("rhs")])
        pieces.append(product)
        last = m.end("rhs")
        line = raw.count("\n", 0, m.start()) + 1
        edits.append(f"line {line}: '{lhs} = {m.group('rhs')}' rewritten as '{lhs} = {product}'")
    if not edits:
        return raw, []
    repaired = "".join(pieces) + raw[last:]
    after = _parse_error(model, repaired)
    if after is None or after.span.start > before.span.start:
        return repaired, edits
    return raw, []
