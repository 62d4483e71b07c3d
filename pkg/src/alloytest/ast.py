"""Abstract syntax for the supported Alloy subset.

Every node is a frozen dataclass, so parsed models can be shared freely and
compared structurally.  Names in expressions are already resolved: a field
reference carries its owning signature, an ordering relation carries the
ordered signature.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from itertools import product
from typing import Iterable, Mapping, Optional, Union

MULTIPLICITIES = ("set", "lone", "some", "one")
QUANTIFIERS = ("all", "some", "no", "lone", "one")
DEFAULT_BOUND = 3


class AlloyTypeError(Exception):
    """Raised when an expression or formula is ill-typed."""

    def __init__(self, message: str, op: Optional[str] = None, arities: tuple = ()):
        super().__init__(message)
        self.op = op
        self.arities = arities


# --------------------------------------------------------------------------
# declarations


@dataclass(frozen=True)
class FieldDecl:
    name: str
    owner: str
    columns: tuple[str, ...]
    multiplicity: str = "set"

    @property
    def arity(self) -> int:
        return 1 + len(self.columns)


@dataclass(frozen=True)
class SigDecl:
    name: str
    kind: str = "top"  # "top" | "in" | "extends"
    parent: Optional[str] = None
    abstract: bool = False
    multiplicity: Optional[str] = None  # lone | some | one
    fields: tuple[FieldDecl, ...] = ()

    @property
    def is_top(self) -> bool:
        return self.kind == "top"


# --------------------------------------------------------------------------
# expressions


class Expr:
    __slots__ = ()


@dataclass(frozen=True)
class Var(Expr):
    name: str


@dataclass(frozen=True)
class SigRef(Expr):
    name: str


@dataclass(frozen=True)
class FieldRef(Expr):
    owner: str
    name: str


@dataclass(frozen=True)
class NextRef(Expr):
    sig: str


@dataclass(frozen=True)
class FirstRef(Expr):
    sig: str


@dataclass(frozen=True)
class LastRef(Expr):
    sig: str


@dataclass(frozen=True)
class Const(Expr):
    name: str  # none | univ | iden


@dataclass(frozen=True)
class BinExpr(Expr):
    op: str  # + - & -> . <: :>
    left: Expr
    right: Expr


@dataclass(frozen=True)
class UnExpr(Expr):
    op: str  # ~ ^ *
    expr: Expr


NONE = Const("none")
UNIV = Const("univ")
IDEN = Const("iden")

EXPR_BINOPS = ("+", "-", "&", "->", ".", "<:", ":>")
EXPR_UNOPS = ("~", "^", "*")


# --------------------------------------------------------------------------
# formulas


class Formula:
    __slots__ = ()


@dataclass(frozen=True)
class Compare(Formula):
    op: str  # in | =
    left: Expr
    right: Expr


@dataclass(frozen=True)
class MultTest(Formula):
    op: str  # no | some | lone | one
    expr: Expr


@dataclass(frozen=True)
class Not(Formula):
    formula: Formula


@dataclass(frozen=True)
class BinFormula(Formula):
    op: str  # and | or | implies | iff
    left: Formula
    right: Formula


@dataclass(frozen=True)
class Block(Formula):
    """Conjunction of the formulas in a brace block; empty means true."""

    formulas: tuple[Formula, ...] = ()


@dataclass(frozen=True)
class Decl:
    names: tuple[str, ...]
    bound: Expr
    disj: bool = False


@dataclass(frozen=True)
class Quant(Formula):
    quant: str
    decls: tuple[Decl, ...]
    body: Formula

    def variables(self) -> list[str]:
        return [n for d in self.decls for n in d.names]


TRUE = Block(())

Node = Union[Expr, Formula]


# --------------------------------------------------------------------------
# paragraphs and commands


@dataclass(frozen=True)
class Scope:
    bound: int
    exact: bool = False


@dataclass(frozen=True)
class Fact:
    name: Optional[str]
    body: Formula


@dataclass(frozen=True)
class Pred:
    name: str
    params: tuple[Decl, ...]
    body: Formula


@dataclass(frozen=True)
class Fun:
    name: str
    params: tuple[Decl, ...]
    result: Expr
    body: Expr


@dataclass(frozen=True)
class RunCommand:
    name: Optional[str]
    body: Formula
    scopes: tuple[tuple[str, Scope], ...] = ()
    expect: Optional[int] = None
    default_bound: int = DEFAULT_BOUND

    def scope_for(self, sig: str) -> Scope:
        for name, sc in self.scopes:
            if name == sig:
                return sc
        return Scope(self.default_bound)

    @property
    def scope_map(self) -> dict[str, Scope]:
        return dict(self.scopes)


@dataclass(frozen=True)
class Requirement:
    index: int
    text: str
    oracle: str


@dataclass(frozen=True)
class Model:
    name: Optional[str] = None
    orderings: tuple[str, ...] = ()
    sigs: tuple[SigDecl, ...] = ()
    facts: tuple[Fact, ...] = ()
    preds: tuple[Pred, ...] = ()
    funs: tuple[Fun, ...] = ()
    commands: tuple[RunCommand, ...] = ()
    # ordering alias name -> ordered signature, e.g. `open util/ordering[Grade] as go`
    ordering_aliases: tuple[tuple[str, str], ...] = field(default=(), compare=False)

    # lookups -------------------------------------------------------------

    @cached_property
    def _sig_index(self) -> dict[str, SigDecl]:
        return {s.name: s for s in self.sigs}

    def sig(self, name: str) -> SigDecl:
        return self._sig_index[name]

    def has_sig(self, name: str) -> bool:
        return name in self._sig_index

    @cached_property
    def top_sigs(self) -> tuple[str, ...]:
        return tuple(s.name for s in self.sigs if s.is_top)

    def top_of(self, name: str) -> str:
        s = self._sig_index[name]
        seen = set()
        while not s.is_top:
            if s.name in seen:
                raise AlloyTypeError(f"cyclic signature hierarchy at {s.name}")
            seen.add(s.name)
            s = self._sig_index[s.parent]
        return s.name

    def children(self, name: str, kind: Optional[str] = None) -> list[SigDecl]:
        return [s for s in self.sigs if s.parent == name and (kind is None or s.kind == kind)]

    @cached_property
    def sig_order(self) -> tuple[str, ...]:
        """Signature names ordered so that parents precede children."""
        done: list[str] = []
        placed: set[str] = set()
        pending = list(self.sigs)
        while pending:
            progress = False
            for s in list(pending):
                if s.is_top or s.parent in placed:
                    done.append(s.name)
                    placed.add(s.name)
                    pending.remove(s)
                    progress = True
            if not progress:
                raise AlloyTypeError("cyclic signature hierarchy: " + ", ".join(s.name for s in pending))
        return tuple(done)

    @cached_property
    def fields(self) -> tuple[FieldDecl, ...]:
        return tuple(f for s in self.sigs for f in s.fields)

    def fields_named(self, name: str) -> list[FieldDecl]:
        return [f for f in self.fields if f.name == name]

    def field(self, owner: str, name: str) -> FieldDecl:
        for f in self._sig_index[owner].fields:
            if f.name == name:
                return f
        raise KeyError((owner, name))

    def pred(self, name: str) -> Pred:
        for p in self.preds:
            if p.name == name:
                return p
        raise KeyError(name)

    def has_pred(self, name: str) -> bool:
        return any(p.name == name for p in self.preds)

    def command(self, name: str) -> RunCommand:
        for c in self.commands:
            if c.name == name:
                return c
        raise KeyError(name)

    def is_ordered(self, sig: str) -> bool:
        return sig in self.orderings


# --------------------------------------------------------------------------
# relational types


@dataclass(frozen=True)
class RelType:
    """Arity plus the set of top-level signature tuples an expression may contain."""

    arity: int
    tuples: frozenset = frozenset()

    def first_columns(self) -> set[str]:
        return {t[0] for t in self.tuples}

    def last_columns(self) -> set[str]:
        return {t[-1] for t in self.tuples}


def _unary(*names: str) -> RelType:
    return RelType(1, frozenset((n,) for n in names))


def _closure(pairs: Iterable[tuple]) -> frozenset:
    result = set(pairs)
    while True:
        extra = {(a, d) for (a, b) in result for (c, d) in result if b == c} - result
        if not extra:
            return frozenset(result)
        result |= extra


TypeEnv = Mapping[str, Union[str, RelType]]


def type_of(model: Model, env: TypeEnv, e: Expr) -> RelType:
    """Relational type of an expression; raises AlloyTypeError on arity errors."""
    if isinstance(e, Var):
        if e.name not in env:
            raise AlloyTypeError(f"unknown variable '{e.name}'")
        t = env[e.name]
        if isinstance(t, str):
            return _unary(model.top_of(t))
        return t
    if isinstance(e, SigRef):
        if not model.has_sig(e.name):
            raise AlloyTypeError(f"unknown signature '{e.name}'")
        return _unary(model.top_of(e.name))
    if isinstance(e, FieldRef):
        try:
            f = model.field(e.owner, e.name)
        except KeyError:
            raise AlloyTypeError(f"unknown field '{e.owner}.{e.name}'") from None
        cols = [model.top_of(e.owner)] + [model.top_of(c) for c in f.columns]
        return RelType(f.arity, frozenset([tuple(cols)]))
    if isinstance(e, (NextRef, FirstRef, LastRef)):
        if not model.is_ordered(e.sig):
            raise AlloyTypeError(f"signature '{e.sig}' is not ordered")
        top = model.top_of(e.sig)
        if isinstance(e, NextRef):
            return RelType(2, frozenset([(top, top)]))
        return _unary(top)
    if isinstance(e, Const):
        if e.name == "none":
            return RelType(1)
        if e.name == "univ":
            return _unary(*model.top_sigs)
        if e.name == "iden":
            return RelType(2, frozenset((t, t) for t in model.top_sigs))
        raise AlloyTypeError(f"unknown constant '{e.name}'")
    if isinstance(e, UnExpr):
        t = type_of(model, env, e.expr)
        if t.arity != 2:
            raise AlloyTypeError(
                f"operator {e.op} requires a binary relation, got arity {t.arity}", e.op, (t.arity,)
            )
        if e.op == "~":
            return RelType(2, frozenset((b, a) for a, b in t.tuples))
        closed = _closure(t.tuples)
        if e.op == "*":
            closed = closed | {(s, s) for s in model.top_sigs}
        return RelType(2, frozenset(closed))
    if isinstance(e, BinExpr):
        lt = type_of(model, env, e.left)
        rt = type_of(model, env, e.right)
        return binary_type(e.op, lt, rt)
    raise AlloyTypeError(f"not an expression: {e!r}")


def binary_type(op: str, lt: RelType, rt: RelType) -> RelType:
    a, b = lt.arity, rt.arity
    if op in ("+", "-", "&"):
        if a != b:
            raise AlloyTypeError(f"operator {op} requires equal arities, got {a} and {b}", op, (a, b))
        if op == "+":
            return RelType(a, lt.tuples | rt.tuples)
        if op == "&":
            return RelType(a, lt.tuples & rt.tuples)
        return lt
    if op == "->":
        return RelType(a + b, frozenset(x + y for x, y in product(lt.tuples, rt.tuples)))
    if op == ".":
        if a + b - 2 < 1:
            raise AlloyTypeError(f"operator . cannot join arities {a} and {b}", op, (a, b))
        return RelType(
            a + b - 2, frozenset(x[:-1] + y[1:] for x, y in product(lt.tuples, rt.tuples) if x[-1] == y[0])
        )
    if op == "<:":
        if a != 1:
            raise AlloyTypeError(f"operator <: requires a set on the left, got arity {a}", op, (a, b))
        dom = lt.first_columns()
        return RelType(b, frozenset(t for t in rt.tuples if t[0] in dom))
    if op == ":>":
        if b != 1:
            raise AlloyTypeError(f"operator :> requires a set on the right, got arity {b}", op, (a, b))
        ran = rt.first_columns()
        return RelType(a, frozenset(t for t in lt.tuples if t[-1] in ran))
    raise AlloyTypeError(f"unknown operator {op}", op)


def arity_of(model: Model, env: TypeEnv, e: Union[Expr, str]) -> int:
    """Arity of ``e`` in ``model``.  ``e`` may be source text, which is parsed first."""
    if isinstance(e, str):
        from .parser import parse_expr

        e = parse_expr(model, e, env)
    return type_of(model, env, e).arity


def check_formula(model: Model, env: TypeEnv, f: Formula) -> None:
    """Type-check a formula, raising AlloyTypeError on the first problem."""
    if isinstance(f, Compare):
        a = type_of(model, env, f.left).arity
        b = type_of(model, env, f.right).arity
        if a != b:
            raise AlloyTypeError(f"operator {f.op} requires equal arities, got {a} and {b}", f.op, (a, b))
    elif isinstance(f, MultTest):
        type_of(model, env, f.expr)
    elif isinstance(f, Not):
        check_formula(model, env, f.formula)
    elif isinstance(f, BinFormula):
        check_formula(model, env, f.left)
        check_formula(model, env, f.right)
    elif isinstance(f, Block):
        for g in f.formulas:
            check_formula(model, env, g)
    elif isinstance(f, Quant):
        inner = dict(env)
        seen: set[str] = set()
        for d in f.decls:
            t = type_of(model, inner, d.bound)
            if t.arity != 1:
                raise AlloyTypeError(f"quantifier bound must be a set, got arity {t.arity}", f.quant, (t.arity,))
            for n in d.names:
                if n in seen:
                    raise AlloyTypeError(f"variable '{n}' declared twice in one quantifier")
                seen.add(n)
                inner[n] = t
        check_formula(model, inner, f.body)
    else:
        raise AlloyTypeError(f"not a formula: {f!r}")


# --------------------------------------------------------------------------
# generic traversal helpers


def free_vars(node: Node, bound: frozenset = frozenset()) -> set[str]:
    if isinstance(node, Var):
        return set() if node.name in bound else {node.name}
    if isinstance(node, (SigRef, FieldRef, NextRef, FirstRef, LastRef, Const)):
        return set()
    if isinstance(node, BinExpr):
        return free_vars(node.left, bound) | free_vars(node.right, bound)
    if isinstance(node, UnExpr):
        return free_vars(node.expr, bound)
    if isinstance(node, Compare):
        return free_vars(node.left, bound) | free_vars(node.right, bound)
    if isinstance(node, MultTest):
        return free_vars(node.expr, bound)
    if isinstance(node, Not):
        return free_vars(node.formula, bound)
    if isinstance(node, BinFormula):
        return free_vars(node.left, bound) | free_vars(node.right, bound)
    if isinstance(node, Block):
        out: set[str] = set()
        for g in node.formulas:
            out |= free_vars(g, bound)
        return out
    if isinstance(node, Quant):
        out = set()
        inner = set(bound)
        for d in node.decls:
            out |= free_vars(d.bound, frozenset(inner))
            inner.update(d.names)
        return out | free_vars(node.body, frozenset(inner))
    raise TypeError(f"unexpected node {node!r}")


def relations_used(node: Node) -> set[tuple]:
    """Relation keys an expression or formula reads.

    Keys are ``("sig", name)``, ``("field", owner, name)`` and ``("next", sig)``;
    ``("univ",)`` stands for every top-level signature.
    """
    out: set[tuple] = set()

    def walk(n):
        if isinstance(n, SigRef):
            out.add(("sig", n.name))
        elif isinstance(n, FieldRef):
            out.add(("field", n.owner, n.name))
        elif isinstance(n, (NextRef, FirstRef, LastRef)):
            out.add(("next", n.sig))
        elif isinstance(n, Const):
            if n.name in ("univ", "iden"):
                out.add(("univ",))
        elif isinstance(n, Var):
            pass
        elif isinstance(n, BinExpr):
            walk(n.left)
            walk(n.right)
        elif isinstance(n, UnExpr):
            walk(n.expr)
        elif isinstance(n, Compare):
            walk(n.left)
            walk(n.right)
        elif isinstance(n, MultTest):
            walk(n.expr)
        elif isinstance(n, Not):
            walk(n.formula)
        elif isinstance(n, BinFormula):
            walk(n.left)
            walk(n.right)
        elif isinstance(n, Block):
            for g in n.formulas:
                walk(g)
        elif isinstance(n, Quant):
            for d in n.decls:
                walk(d.bound)
            walk(n.body)
        else:
            raise TypeError(f"unexpected node {n!r}")

    walk(node)
    return out


def conjuncts(f: Formula) -> list[Formula]:
    """Flatten top-level conjunctions (blocks and ``and``)."""
    if isinstance(f, Block):
        return [g for h in f.formulas for g in conjuncts(h)]
    if isinstance(f, BinFormula) and f.op == "and":
        return conjuncts(f.left) + conjuncts(f.right)
    return [f]


def conjoin(formulas: Iterable[Formula]) -> Formula:
    fs = tuple(formulas)
    if len(fs) == 1:
        return fs[0]
    return Block(fs)
