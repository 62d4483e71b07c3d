"""Parse, solve and validate test cases for a subset of Alloy."""

__version__ = "0.1.0"

from .ast import AlloyTypeError, Model, Requirement, RunCommand, arity_of
from .errors import ParseError, SourceSpan
from .parser import extract_commands, parse_command, parse_formula, parse_model
from .render import render
from .semantics import Atom, Instance, RelationValue, check_structure, eval_expr, eval_formula
from .solver import Budget, SolveResult, enumerate_instances, extract_valuation, solve

__all__ = [
    "AlloyTypeError",
    "Atom",
    "Budget",
    "Instance",
    "Model",
    "ParseError",
    "RelationValue",
    "Requirement",
    "RunCommand",
    "SolveResult",
    "SourceSpan",
    "arity_of",
    "check_structure",
    "enumerate_instances",
    "eval_expr",
    "eval_formula",
    "extract_commands",
    "extract_valuation",
    "parse_command",
    "parse_formula",
    "parse_model",
    "render",
    "solve",
]
