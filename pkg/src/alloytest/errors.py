from __future__ import annotations

from dataclasses import dataclass


@dataclass(frozen=True)
class SourceSpan:
    """Character offsets (into the decoded text) plus 1-based line/column."""

    start: int
    end: int
    line: int
    col: int
    end_line: int
    end_col: int

    def __str__(self) -> str:
        return f"{self.line}:{self.col}"


UNKNOWN_SPAN = SourceSpan(0, 0, 1, 1, 1, 1)

ERROR_KINDS = ("lexical", "syntactic", "resolution", "arity")


class ParseError(Exception):
    def __init__(self, message: str, span: SourceSpan = UNKNOWN_SPAN, kind: str = "syntactic"):
        assert kind in ERROR_KINDS, kind
        super().__init__(message)
        self.message = message
        self.span = span
        self.kind = kind

    def __str__(self) -> str:
        return f"{self.span}: {self.kind} error: {self.message}"
