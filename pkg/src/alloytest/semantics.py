"""Finite relational instances and the evaluator over them."""
from __future__ import annotations

import json
from collections import defaultdict
from dataclasses import dataclass, field
from itertools import product
from typing import Iterable, Mapping, Optional, Union

from . import ast as A

Tuple = tuple  # a tuple of atom ids


@dataclass(frozen=True)
class Atom:
    id: int
    type: str  # owning top-level signature
    label: str = ""

    def __str__(self) -> str:
        return self.label or f"{self.type}${self.id}"


@dataclass(frozen=True)
class RelationValue:
    arity: int
    tuples: frozenset = frozenset()

    def __post_init__(self):
        for t in self.tuples:
            if len(t) != self.arity:
                raise ValueError(f"tuple {t} does not have arity {self.arity}")

    def __len__(self) -> int:
        return len(self.tuples)

    def __iter__(self):
        return iter(sorted(self.tuples))

    def __contains__(self, t) -> bool:
        return t in self.tuples

    @classmethod
    def of(cls, arity: int, tuples: Iterable) -> "RelationValue":
        return cls(arity, frozenset(tuple(t) for t in tuples))


@dataclass(frozen=True)
class Instance:
    universe: tuple[Atom, ...]
    sig_values: Mapping[str, RelationValue] = field(default_factory=dict)
    field_values: Mapping[tuple[str, str], RelationValue] = field(default_factory=dict)
    ordering_next: Mapping[str, RelationValue] = field(default_factory=dict)

    def __hash__(self):
        return hash(self.key())

    def key(self):
        """Hashable identity of the valuation (exact atom identity)."""
        return (
            tuple(sorted((a.id, a.type) for a in self.universe)),
            tuple(sorted((k, v.tuples) for k, v in self.sig_values.items())),
            tuple(sorted((k, v.tuples) for k, v in self.field_values.items())),
            tuple(sorted((k, v.tuples) for k, v in self.ordering_next.items())),
        )

    def atom(self, atom_id: int) -> Atom:
        for a in self.universe:
            if a.id == atom_id:
                return a
        raise KeyError(atom_id)

    def atoms_of(self, top: str) -> frozenset:
        return frozenset((a.id,) for a in self.universe if a.type == top)

    def label(self, atom_id: int) -> str:
        return str(self.atom(atom_id))

    def describe(self) -> str:
        """Readable multi-line valuation, in the style of a `some disj` body."""
        names = {a.id: str(a) for a in self.universe}

        def show(rv: RelationValue) -> str:
            if not rv.tuples:
                return "->".join(["none"] * rv.arity)
            return " + ".join("->".join(names[x] for x in t) for t in sorted(rv.tuples))

        lines = [f"{s} = {show(v)}" for s, v in self.sig_values.items()]
        lines += [f"{o} <: {f} = {show(v)}" for (o, f), v in self.field_values.items()]
        lines += [f"{s} <: next = {show(v)}" for s, v in self.ordering_next.items()]
        return "\n".join(lines)


# --------------------------------------------------------------------------
# relational operators on frozensets of tuples


def join(left: frozenset, right: frozenset) -> frozenset:
    index: dict = defaultdict(list)
    for t in right:
        index[t[0]].append(t[1:])
    return frozenset(a[:-1] + rest for a in left for rest in index.get(a[-1], ()))


def closure(rel: frozenset) -> frozenset:
    """Transitive closure by iterated squaring until a fixpoint."""
    result = rel
    while True:
        nxt = result | join(result, result)
        if nxt == result:
            return result
        result = nxt


def _iden(univ: frozenset) -> frozenset:
    return frozenset((a[0], a[0]) for a in univ)


def _univ(inst: Instance) -> frozenset:
    return frozenset((a.id,) for a in inst.universe)


class UnboundVariable(KeyError):
    pass


def _eval(inst: Instance, env: Mapping[str, int], e: A.Expr) -> frozenset:
    t = type(e)
    if t is A.Var:
        try:
            return frozenset([(env[e.name],)])
        except KeyError:
            raise UnboundVariable(e.name) from None
    if t is A.SigRef:
        return inst.sig_values[e.name].tuples
    if t is A.FieldRef:
        return inst.field_values[(e.owner, e.name)].tuples
    if t is A.BinExpr:
        op = e.op
        left = _eval(inst, env, e.left)
        if op == ".":
            return join(left, _eval(inst, env, e.right))
        right = _eval(inst, env, e.right)
        if op == "+":
            return left | right
        if op == "&":
            return left & right
        if op == "-":
            return left - right
        if op == "->":
            return frozenset(a + b for a in left for b in right)
        if op == "<:":
            dom = {a[0] for a in left}
            return frozenset(b for b in right if b[0] in dom)
        if op == ":>":
            ran = {b[0] for b in right}
            return frozenset(a for a in left if a[-1] in ran)
        raise ValueError(f"unknown operator {op}")
    if t is A.UnExpr:
        inner = _eval(inst, env, e.expr)
        if e.op == "~":
            return frozenset((b, a) for a, b in inner)
        if e.op == "^":
            return closure(inner)
        if e.op == "*":
            return closure(inner) | _iden(_univ(inst))
        raise ValueError(f"unknown operator {e.op}")
    if t is A.Const:
        if e.name == "none":
            return frozenset()
        if e.name == "univ":
            return _univ(inst)
        return _iden(_univ(inst))
    if t is A.NextRef:
        return inst.ordering_next[e.sig].tuples
    if t is A.FirstRef or t is A.LastRef:
        nxt = inst.ordering_next[e.sig].tuples
        members = inst.sig_values[e.sig].tuples
        col = 1 if t is A.FirstRef else 0
        linked = {p[col] for p in nxt}
        return frozenset(a for a in members if a[0] not in linked)
    raise TypeError(f"not an expression: {e!r}")


def static_arity(inst: Instance, e: A.Expr) -> int:
    t = type(e)
    if t in (A.Var, A.SigRef, A.FirstRef, A.LastRef):
        return 1
    if t is A.FieldRef:
        return inst.field_values[(e.owner, e.name)].arity
    if t is A.NextRef:
        return 2
    if t is A.Const:
        return 2 if e.name == "iden" else 1
    if t is A.UnExpr:
        return 2
    if t is A.BinExpr:
        a, b = static_arity(inst, e.left), static_arity(inst, e.right)
        if e.op == "->":
            return a + b
        if e.op == ".":
            return a + b - 2
        if e.op == ":>":
            return a
        if e.op == "<:":
            return b
        return a
    raise TypeError(f"not an expression: {e!r}")


def _env_ids(env: Optional[Mapping]) -> dict:
    return {k: (v.id if isinstance(v, Atom) else v) for k, v in (env or {}).items()}


def eval_expr(inst: Instance, env: Optional[Mapping[str, Union[Atom, int]]], e: A.Expr) -> RelationValue:
    return RelationValue(static_arity(inst, e), _eval(inst, _env_ids(env), e))


def _holds(inst: Instance, env: dict, f: A.Formula) -> bool:
    t = type(f)
    if t is A.Compare:
        left = _eval(inst, env, f.left)
        right = _eval(inst, env, f.right)
        return left == right if f.op == "=" else left <= right
    if t is A.Block:
        for g in f.formulas:
            if not _holds(inst, env, g):
                return False
        return True
    if t is A.MultTest:
        n = len(_eval(inst, env, f.expr))
        op = f.op
        if op == "some":
            return n > 0
        if op == "no":
            return n == 0
        if op == "one":
            return n == 1
        return n <= 1
    if t is A.Not:
        return not _holds(inst, env, f.formula)
    if t is A.BinFormula:
        op = f.op
        if op == "and":
            return _holds(inst, env, f.left) and _holds(inst, env, f.right)
        if op == "or":
            return _holds(inst, env, f.left) or _holds(inst, env, f.right)
        if op == "implies":
            return (not _holds(inst, env, f.left)) or _holds(inst, env, f.right)
        return _holds(inst, env, f.left) == _holds(inst, env, f.right)
    if t is A.Quant:
        return _quant(inst, env, f)
    raise TypeError(f"not a formula: {f!r}")


def _bindings(inst: Instance, env: dict, decls: tuple, k: int = 0):
    """Yield environments for every (disj-respecting) assignment of the declarations."""
    if k == len(decls):
        yield env
        return
    d = decls[k]
    atoms = sorted(a[0] for a in _eval(inst, env, d.bound))

    def assign(env, i, used):
        if i == len(d.names):
            yield from _bindings(inst, env, decls, k + 1)
            return
        for a in atoms:
            if d.disj and a in used:
                continue
            inner = dict(env)
            inner[d.names[i]] = a
            yield from assign(inner, i + 1, used | {a})

    yield from assign(env, 0, frozenset())


def _quant(inst: Instance, env: dict, f: A.Quant) -> bool:
    q = f.quant
    if q == "all":
        return all(_holds(inst, b, f.body) for b in _bindings(inst, env, f.decls))
    if q == "some":
        return any(_holds(inst, b, f.body) for b in _bindings(inst, env, f.decls))
    if q == "no":
        return not any(_holds(inst, b, f.body) for b in _bindings(inst, env, f.decls))
    count = 0
    for b in _bindings(inst, env, f.decls):
        if _holds(inst, b, f.body):
            count += 1
            if count > 1:
                return False
    return count == 1 if q == "one" else True


def eval_formula(inst: Instance, env: Optional[Mapping[str, Union[Atom, int]]], f: A.Formula) -> bool:
    return _holds(inst, _env_ids(env), f)


# --------------------------------------------------------------------------
# structural well-formedness


def check_structure(model: A.Model, inst: Instance) -> list[str]:
    """Violations of the model's declarations; an empty list means the instance is valid."""
    out: list[str] = []
    tops = set(model.top_sigs)
    for a in inst.universe:
        if a.type not in tops:
            out.append(f"atom {a} has unknown type '{a.type}'")
    ids = [a.id for a in inst.universe]
    if len(set(ids)) != len(ids):
        out.append("atom ids are not unique")
    for s in model.sigs:
        if s.name not in inst.sig_values:
            out.append(f"signature '{s.name}' has no value")
    if out:
        return out

    val = {name: rv.tuples for name, rv in inst.sig_values.items()}
    for s in model.sigs:
        v = val[s.name]
        if inst.sig_values[s.name].arity != 1:
            out.append(f"signature '{s.name}' is not a set")
            continue
        if s.is_top:
            if v != inst.atoms_of(s.name):
                out.append(f"top-level signature '{s.name}' does not match its atoms")
        else:
            if not v <= val[s.parent]:
                kind = "subset" if s.kind == "in" else "extension"
                out.append(f"{kind} '{s.name}' not contained in parent '{s.parent}'")
        exts = model.children(s.name, "extends")
        for i, e1 in enumerate(exts):
            for e2 in exts[i + 1 :]:
                if val[e1.name] & val[e2.name]:
                    out.append(f"extensions '{e1.name}' and '{e2.name}' of '{s.name}' overlap")
        if s.abstract:
            covered = frozenset().union(*(val[e.name] for e in exts)) if exts else frozenset()
            if v != covered:
                out.append(f"abstract signature '{s.name}' has atoms outside its extensions")
        n = len(v)
        if s.multiplicity == "one" and n != 1:
            out.append(f"signature '{s.name}' must have exactly one atom, has {n}")
        elif s.multiplicity == "lone" and n > 1:
            out.append(f"signature '{s.name}' must have at most one atom, has {n}")
        elif s.multiplicity == "some" and n < 1:
            out.append(f"signature '{s.name}' must have at least one atom")

    for f in model.fields:
        key = (f.owner, f.name)
        if key not in inst.field_values:
            out.append(f"field '{f.owner}.{f.name}' has no value")
            continue
        out.extend(field_violations(f, inst.field_values[key], val))

    for s in model.orderings:
        if s not in inst.ordering_next:
            out.append(f"ordering on '{s}' has no next relation")
            continue
        out.extend(ordering_violations(s, inst.ordering_next[s], val[s]))
    extra = set(inst.ordering_next) - set(model.orderings)
    for s in sorted(extra):
        out.append(f"next relation given for unordered signature '{s}'")
    return out


def field_violations(f: A.FieldDecl, rv: RelationValue, val: Mapping[str, frozenset]) -> list[str]:
    out = []
    name = f"{f.owner}.{f.name}"
    if rv.arity != f.arity:
        return [f"field '{name}' has arity {rv.arity}, declared {f.arity}"]
    cols = [f.owner, *f.columns]
    sets = [{a[0] for a in val[c]} for c in cols]
    for t in rv.tuples:
        if any(x not in s for x, s in zip(t, sets)):
            out.append(f"field '{name}' tuple outside declared columns")
            break
    if f.multiplicity != "set":
        counts: dict = defaultdict(int)
        for t in rv.tuples:
            counts[t[:-1]] += 1
        for prefix in product(*(sorted(s) for s in sets[:-1])):
            n = counts.get(prefix, 0)
            if (f.multiplicity == "lone" and n > 1) or (f.multiplicity == "one" and n != 1) or (
                f.multiplicity == "some" and n < 1
            ):
                out.append(f"field '{name}' violates multiplicity {f.multiplicity}")
                break
    return out


def ordering_violations(sig: str, rv: RelationValue, members: frozenset) -> list[str]:
    atoms = {a[0] for a in members}
    pairs = rv.tuples
    if rv.arity != 2:
        return [f"ordering on '{sig}' is not binary"]
    if not atoms:
        return [f"ordered signature '{sig}' is empty"]
    if any(a not in atoms or b not in atoms for a, b in pairs):
        return [f"ordering on '{sig}' relates atoms outside the signature"]
    succ: dict = defaultdict(set)
    pred: dict = defaultdict(set)
    for a, b in pairs:
        succ[a].add(b)
        pred[b].add(a)
    if any(len(v) > 1 for v in succ.values()) or any(len(v) > 1 for v in pred.values()):
        return [f"ordering on '{sig}' is not linear"]
    heads = [a for a in atoms if not pred[a]]
    if len(heads) != 1:
        return [f"ordering does not cover signature '{sig}'"]
    seen, cur = [heads[0]], heads[0]
    while succ[cur]:
        cur = next(iter(succ[cur]))
        if cur in seen:
            return [f"ordering on '{sig}' is cyclic"]
        seen.append(cur)
    if len(seen) != len(atoms):
        return [f"ordering does not cover signature '{sig}'"]
    return []


# --------------------------------------------------------------------------
# JSON


def to_json(inst: Instance) -> dict:
    names = {a.id: str(a) for a in inst.universe}

    def rows(rv: RelationValue):
        return [[names[x] for x in t] for t in sorted(rv.tuples)]

    return {
        "universe": [{"id": a.id, "type": a.type, "label": str(a)} for a in inst.universe],
        "sigs": {s: [names[t[0]] for t in sorted(v.tuples)] for s, v in inst.sig_values.items()},
        "fields": {f"{o}.{f}": rows(v) for (o, f), v in inst.field_values.items()},
        "field_arity": {f"{o}.{f}": v.arity for (o, f), v in inst.field_values.items()},
        "orderings": {s: rows(v) for s, v in inst.ordering_next.items()},
    }


def from_json(doc: Union[str, dict]) -> Instance:
    if isinstance(doc, str):
        doc = json.loads(doc)
    universe = tuple(Atom(u["id"], u["type"], u.get("label", "")) for u in doc["universe"])
    ids = {str(a): a.id for a in universe}
    sigs = {s: RelationValue.of(1, [(ids[x],) for x in atoms]) for s, atoms in doc["sigs"].items()}
    fields = {}
    for key, rows in doc["fields"].items():
        owner, _, name = key.partition(".")
        arity = doc.get("field_arity", {}).get(key) or (len(rows[0]) if rows else 2)
        fields[(owner, name)] = RelationValue.of(arity, [tuple(ids[x] for x in r) for r in rows])
    orderings = {s: RelationValue.of(2, [tuple(ids[x] for x in r) for r in rows]) for s, rows in doc["orderings"].items()}
    return Instance(universe, sigs, fields, orderings)


def make_universe(sizes: Mapping[str, int]) -> tuple[Atom, ...]:
    """Atoms numbered consecutively, grouped by top-level signature."""
    out = []
    n = 0
    for sig, k in sizes.items():
        for i in range(k):
            out.append(Atom(n, sig, f"{sig}${i}"))
            n += 1
    return tuple(out)
