"""Concrete syntax for AST nodes.

The output is fully parenthesized so that re-parsing yields the same tree.
"""
from __future__ import annotations

from functools import singledispatch

from . import ast as A


@singledispatch
def render(node) -> str:
    raise TypeError(f"cannot render {type(node).__name__}")


@render.register
def _(e: A.Var) -> str:
    return e.name


@render.register
def _(e: A.SigRef) -> str:
    return e.name


@render.register
def _(e: A.FieldRef) -> str:
    return e.name


@render.register
def _(e: A.NextRef) -> str:
    return "next"


@render.register
def _(e: A.FirstRef) -> str:
    return "first"


@render.register
def _(e: A.LastRef) -> str:
    return "last"


@render.register
def _(e: A.Const) -> str:
    return e.name


@render.register
def _(e: A.BinExpr) -> str:
    if e.op == ".":
        return f"({render(e.left)}.{render(e.right)})"
    return f"({render(e.left)} {e.op} {render(e.right)})"


@render.register
def _(e: A.UnExpr) -> str:
    return f"{e.op}{render(e.expr)}"


@render.register
def _(f: A.Compare) -> str:
    return f"{render(f.left)} {f.op} {render(f.right)}"


@render.register
def _(f: A.MultTest) -> str:
    return f"{f.op} {render(f.expr)}"


@render.register
def _(f: A.Not) -> str:
    return f"not ({render(f.formula)})"


@render.register
def _(f: A.BinFormula) -> str:
    return f"(({render(f.left)}) {f.op} ({render(f.right)}))"


@render.register
def _(f: A.Block) -> str:
    if not f.formulas:
        return "{}"
    return "{ " + " ".join(_block_item(g) for g in f.formulas) + " }"


def _block_item(f: A.Formula) -> str:
    if isinstance(f, (A.Compare, A.MultTest, A.Block)):
        return render(f)
    return f"({render(f)})"


def _decl(d: A.Decl) -> str:
    return ("disj " if d.disj else "") + ", ".join(d.names) + " : " + render(d.bound)


@render.register
def _(f: A.Quant) -> str:
    decls = ", ".join(_decl(d) for d in f.decls)
    return f"{f.quant} {decls} | {render(f.body)}"


def _scope(cmd: A.RunCommand) -> str:
    items = [("exactly " if sc.exact else "") + f"{sc.bound} {sig}" for sig, sc in cmd.scopes]
    if cmd.default_bound != A.DEFAULT_BOUND:
        head = f" for {cmd.default_bound}"
        return head + (" but " + ", ".join(items) if items else "")
    return " for " + ", ".join(items) if items else ""


def _as_block(f: A.Formula) -> str:
    return render(f) if isinstance(f, A.Block) else "{ " + _block_item(f) + " }"


@render.register
def _(cmd: A.RunCommand) -> str:
    name = f" {cmd.name}" if cmd.name else ""
    expect = f" expect {cmd.expect}" if cmd.expect is not None else ""
    return f"run{name} {_as_block(cmd.body)}{_scope(cmd)}{expect}"


@render.register
def _(f: A.FieldDecl) -> str:
    if len(f.columns) == 1:
        return f"{f.name} : {f.multiplicity} {f.columns[0]}"
    head = " -> ".join(f.columns[:-1])
    mult = "" if f.multiplicity == "set" else f.multiplicity + " "
    return f"{f.name} : {head} -> {mult}{f.columns[-1]}"


@render.register
def _(s: A.SigDecl) -> str:
    prefix = ("abstract " if s.abstract else "") + (f"{s.multiplicity} " if s.multiplicity else "")
    parent = "" if s.is_top else f" {s.kind} {s.parent}"
    fields = ", ".join(render(f) for f in s.fields)
    return f"{prefix}sig {s.name}{parent} {{ {fields} }}" if fields else f"{prefix}sig {s.name}{parent} {{}}"


def _params(params) -> str:
    return "[" + ", ".join(_decl(d) for d in params) + "]" if params else ""


@render.register
def _(p: A.Fact) -> str:
    name = f" {p.name}" if p.name else ""
    return f"fact{name} {_as_block(p.body)}"


@render.register
def _(p: A.Pred) -> str:
    return f"pred {p.name}{_params(p.params)} {_as_block(p.body)}"


@render.register
def _(p: A.Fun) -> str:
    return f"fun {p.name}{_params(p.params)} : {render(p.result)} {{ {render(p.body)} }}"


@render.register
def _(m: A.Model) -> str:
    lines = []
    if m.name:
        lines.append(f"module {m.name}")
    aliases = {target: alias for alias, target in m.ordering_aliases}
    for s in m.orderings:
        lines.append(f"open util/ordering[{s}]" + (f" as {aliases[s]}" if s in aliases else ""))
    for group in (m.sigs, m.facts, m.preds, m.funs, m.commands):
        for item in group:
            lines.append(render(item))
    return "\n".join(lines) + "\n"
