"""Bounded satisfiability for run commands.

Two routes decide a command. When the body is a complete ``some disj``
valuation the instance is built directly and checked. Otherwise a
backtracking search assigns signature sizes, existential witnesses and then
relation values, checking every conjunct as soon as the relations it reads
are known. ``enumerate_instances`` is a separate generate-and-test oracle that
shares no search code with ``solve``.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field
from itertools import combinations, permutations, product
from typing import Iterator, Mapping, Optional, Sequence, Union

from . import ast as A
from .semantics import (
    Atom,
    Instance,
    RelationValue,
    _eval,
    _holds,
    check_structure,
    eval_formula,
    field_violations,
    make_universe,
    static_arity,
)

SAT = "SAT"
UNSAT = "UNSAT"
INCONCLUSIVE = "INCONCLUSIVE"


class SolverError(ValueError):
    """The command cannot be solved as posed (for example a bad scope key)."""


@dataclass(frozen=True)
class Budget:
    time_ms: int = 10_000
    candidates: int = 10_000_000


DEFAULT_BUDGET = Budget()


@dataclass
class SolveStats:
    examined: int = 0
    elapsed: float = 0.0
    fast_path: bool = False


@dataclass
class SolveResult:
    outcome: str
    witness: Optional[Instance] = None
    stats: SolveStats = field(default_factory=SolveStats)
    reason: str = ""

    @property
    def sat(self) -> bool:
        return self.outcome == SAT

    @property
    def unsat(self) -> bool:
        return self.outcome == UNSAT

    @property
    def inconclusive(self) -> bool:
        return self.outcome == INCONCLUSIVE


class _OutOfBudget(Exception):
    pass


# --------------------------------------------------------------------------
# scopes


ScopeLike = Union[A.Scope, int]


def _norm_scopes(model: A.Model, scopes: Mapping[str, ScopeLike], default_bound: int) -> dict[str, A.Scope]:
    for s in scopes:
        if not model.has_sig(s):
            raise SolverError(f"scope given for unknown signature '{s}'")
        if not model.sig(s).is_top:
            raise SolverError(f"scope given for non top-level signature '{s}'")
    out = {}
    for t in model.top_sigs:
        sc = scopes.get(t, A.Scope(default_bound))
        if isinstance(sc, int):
            sc = A.Scope(sc)
        if sc.bound < 0:
            raise SolverError(f"negative scope for '{t}'")
        out[t] = sc
    return out


def _size_range(model: A.Model, top: str, sc: A.Scope) -> range:
    """Admissible atom counts for a top-level signature."""
    decl = model.sig(top)
    lo, hi = (sc.bound, sc.bound) if sc.exact or model.is_ordered(top) else (0, sc.bound)
    if model.is_ordered(top):
        lo = max(lo, 1)
    if decl.abstract and not model.children(top, "extends"):
        hi = 0
    if decl.multiplicity == "one":
        lo, hi = max(lo, 1), min(hi, 1)
    elif decl.multiplicity == "lone":
        hi = min(hi, 1)
    elif decl.multiplicity == "some":
        lo = max(lo, 1)
    return range(lo, hi + 1)


def _canonical_next(atoms: Sequence[int]) -> frozenset:
    return frozenset(zip(atoms, atoms[1:]))


# --------------------------------------------------------------------------
# fast path: complete `some disj` valuations


@dataclass(frozen=True)
class Valuation:
    """An instance read off a `some disj` body, plus what is left to check."""

    instance: Instance
    binding: Mapping[str, int]
    bounds: tuple[tuple[str, A.Expr], ...]
    body: A.Formula


def _relation_key(model: A.Model, e: A.Expr) -> Optional[tuple]:
    if isinstance(e, A.SigRef):
        return ("sig", e.name)
    if isinstance(e, A.FieldRef):
        return ("field", e.owner, e.name)
    if isinstance(e, A.NextRef):
        return ("next", e.sig)
    if isinstance(e, A.BinExpr) and e.op == "<:" and isinstance(e.left, A.SigRef):
        inner = _relation_key(model, e.right)
        if inner is None:
            return None
        if inner[0] == "field" and _is_ancestor(model, e.left.name, inner[1]):
            return inner
        if inner[0] == "next" and e.left.name == inner[1]:
            return inner
    return None


def _is_ancestor(model: A.Model, anc: str, sig: str) -> bool:
    s = model.sig(sig)
    while True:
        if s.name == anc:
            return True
        if s.is_top:
            return False
        s = model.sig(s.parent)


def _is_ground(e: A.Expr) -> bool:
    if isinstance(e, A.Var):
        return True
    if isinstance(e, A.Const):
        return e.name == "none"
    if isinstance(e, A.BinExpr):
        return e.op in ("+", "-", "&", "->") and _is_ground(e.left) and _is_ground(e.right)
    if isinstance(e, A.UnExpr):
        return e.op == "~" and _is_ground(e.expr)
    return False


def _peel_some(f: A.Formula) -> Optional[tuple[list[A.Decl], A.Formula]]:
    parts = A.conjuncts(f)
    if len(parts) != 1 or not isinstance(parts[0], A.Quant) or parts[0].quant != "some":
        return None
    decls: list[A.Decl] = []
    q = parts[0]
    while True:
        decls.extend(q.decls)
        inner = A.conjuncts(q.body)
        if len(inner) == 1 and isinstance(inner[0], A.Quant) and inner[0].quant == "some":
            q = inner[0]
            continue
        return decls, q.body


def extract_valuation(cmd: Union[A.RunCommand, A.Formula], model: A.Model) -> Optional[Valuation]:
    """Read a complete instance off a `some disj` body, or None if the body is not one."""
    body = cmd.body if isinstance(cmd, A.RunCommand) else cmd
    peeled = _peel_some(body)
    if peeled is None:
        return None
    decls, inner = peeled

    names: list[str] = []
    tops: dict[str, str] = {}
    groups: dict[str, list[int]] = {}
    for k, d in enumerate(decls):
        if not isinstance(d.bound, A.SigRef) or not model.has_sig(d.bound.name):
            return None
        top = model.top_of(d.bound.name)
        for n in d.names:
            if n in tops:
                return None
            names.append(n)
            tops[n] = top
            groups.setdefault(top, []).append(k if d.disj else -1 - len(names))
    # variables of one type must be pairwise distinct in every model, so they
    # have to come from a single disj declaration
    for top, ks in groups.items():
        if len(ks) > 1 and (len(set(ks)) != 1 or ks[0] < 0):
            return None

    by_top: dict[str, list[str]] = {t: [] for t in model.top_sigs}
    for n in names:
        by_top[tops[n]].append(n)
    universe = []
    binding = {}
    for t in model.top_sigs:
        for n in by_top[t]:
            binding[n] = len(universe)
            universe.append(Atom(len(universe), t, n))
    universe = tuple(universe)

    assigned: dict[tuple, A.Expr] = {}
    for c in A.conjuncts(inner):
        if not isinstance(c, A.Compare) or c.op != "=":
            continue
        for lhs, rhs in ((c.left, c.right), (c.right, c.left)):
            key = _relation_key(model, lhs)
            if key is not None and _is_ground(rhs) and A.free_vars(rhs) <= set(names):
                assigned.setdefault(key, rhs)
                break

    wanted = [("sig", s.name) for s in model.sigs]
    wanted += [("field", f.owner, f.name) for f in model.fields]
    wanted += [("next", s) for s in model.orderings]
    if any(k not in assigned for k in wanted):
        return None

    bare = Instance(universe)

    def value(key, arity):
        return RelationValue(arity, _eval(bare, binding, assigned[key]))

    sigs = {}
    for s in model.sigs:
        rhs = assigned[("sig", s.name)]
        if static_arity(bare, rhs) != 1:
            return None
        sigs[s.name] = value(("sig", s.name), 1)
    fields = {}
    for f in model.fields:
        rhs = assigned[("field", f.owner, f.name)]
        if static_arity(bare, rhs) != f.arity:
            return None
        fields[(f.owner, f.name)] = value(("field", f.owner, f.name), f.arity)
    nexts = {}
    for s in model.orderings:
        if static_arity(bare, assigned[("next", s)]) != 2:
            return None
        nexts[s] = value(("next", s), 2)

    bounds = tuple((n, d.bound) for d in decls for n in d.names)
    return Valuation(Instance(universe, sigs, fields, nexts), binding, bounds, inner)


def _solve_valuation(
    model: A.Model, val: Valuation, facts: Sequence[A.Formula], scopes: dict[str, A.Scope], stats: SolveStats
) -> SolveResult:
    inst = val.instance
    stats.examined = 1
    for t, sc in scopes.items():
        n = len(inst.atoms_of(t))
        if n not in _size_range(model, t, sc):
            return SolveResult(UNSAT, stats=stats, reason=f"valuation has {n} {t} atoms, outside its scope")
    problems = check_structure(model, inst)
    if problems:
        return SolveResult(UNSAT, stats=stats, reason=problems[0])
    env = dict(val.binding)
    for n, bound in val.bounds:
        if not _holds(inst, env, A.Compare("in", A.Var(n), bound)):
            return SolveResult(UNSAT, stats=stats, reason=f"'{n}' is outside its declared bound")
    if not _holds(inst, env, val.body):
        return SolveResult(UNSAT, stats=stats, reason="the command body is false on its own valuation")
    for f in facts:
        if not _holds(inst, {}, f):
            return SolveResult(UNSAT, stats=stats, reason="a fact is false on the command's valuation")
    return SolveResult(SAT, inst, stats=stats)


# --------------------------------------------------------------------------
# general search


def _subst(node, mapping: Mapping[str, str]):
    """Rename free variables; quantifiers shadow."""
    if not mapping:
        return node
    if isinstance(node, A.Var):
        return A.Var(mapping.get(node.name, node.name))
    if isinstance(node, (A.SigRef, A.FieldRef, A.NextRef, A.FirstRef, A.LastRef, A.Const)):
        return node
    if isinstance(node, A.BinExpr):
        return A.BinExpr(node.op, _subst(node.left, mapping), _subst(node.right, mapping))
    if isinstance(node, A.UnExpr):
        return A.UnExpr(node.op, _subst(node.expr, mapping))
    if isinstance(node, A.Compare):
        return A.Compare(node.op, _subst(node.left, mapping), _subst(node.right, mapping))
    if isinstance(node, A.MultTest):
        return A.MultTest(node.op, _subst(node.expr, mapping))
    if isinstance(node, A.Not):
        return A.Not(_subst(node.formula, mapping))
    if isinstance(node, A.BinFormula):
        return A.BinFormula(node.op, _subst(node.left, mapping), _subst(node.right, mapping))
    if isinstance(node, A.Block):
        return A.Block(tuple(_subst(g, mapping) for g in node.formulas))
    if isinstance(node, A.Quant):
        inner = dict(mapping)
        decls = []
        for d in node.decls:
            decls.append(A.Decl(d.names, _subst(d.bound, inner), d.disj))
            for n in d.names:
                inner.pop(n, None)
        return A.Quant(node.quant, tuple(decls), _subst(node.body, inner))
    raise TypeError(f"unexpected node {node!r}")


@dataclass
class _Skolem:
    name: str
    bound: A.Expr
    types: tuple[str, ...]
    disj_with: tuple[str, ...]


@dataclass
class _Check:
    deps: frozenset
    formula: Optional[A.Formula] = None
    abstract: Optional[str] = None  # structural: abstract signature coverage


class _Search:
    def __init__(self, model: A.Model, formulas: Sequence[A.Formula], scopes: dict[str, A.Scope], budget: Budget):
        self.model = model
        self.scopes = scopes
        self.budget = budget
        self.stats = SolveStats()
        self.deadline = time.monotonic() + budget.time_ms / 1000.0
        self.tops = set(model.top_sigs)
        self.fixed = {("sig", t) for t in model.top_sigs} | {("next", s) for s in model.orderings} | {("univ",)}
        self.skolems: list[_Skolem] = []
        self.checks: list[_Check] = []
        self.equalities: dict[tuple, list[tuple[A.Expr, frozenset]]] = {}
        self._skolemize(formulas)
        self._add_structural_checks()
        self._plan()

    # setup ---------------------------------------------------------------

    def _deps(self, f: A.Formula) -> frozenset:
        keys = set()
        for k in A.relations_used(f):
            if k == ("univ",) or k in self.fixed:
                continue
            keys.add(k)
        keys |= {("var", v) for v in A.free_vars(f)}
        return frozenset(keys)

    def _skolemize(self, formulas):
        types: dict[str, A.RelType] = {}
        pending = [g for f in formulas for g in A.conjuncts(f)]
        pending.reverse()
        while pending:
            c = pending.pop()
            if isinstance(c, A.Quant) and c.quant == "some":
                mapping: dict[str, str] = {}
                for d in c.decls:
                    bound = _subst(d.bound, mapping)
                    t = A.type_of(self.model, types, bound)
                    group = []
                    for n in d.names:
                        fresh = f"{n}${len(self.skolems)}"
                        mapping[n] = fresh
                        types[fresh] = t
                        self.skolems.append(
                            _Skolem(fresh, bound, tuple(sorted({x[0] for x in t.tuples})), tuple(group) if d.disj else ())
                        )
                        group.append(fresh)
                        member = A.Compare("in", A.Var(fresh), bound)
                        self.checks.append(_Check(self._deps(member), member))
                body = _subst(c.body, mapping)
                pending.extend(reversed(A.conjuncts(body)))
                continue
            self.checks.append(_Check(self._deps(c), c))
            if isinstance(c, A.Compare) and c.op == "=":
                for lhs, rhs in ((c.left, c.right), (c.right, c.left)):
                    key = _relation_key(self.model, lhs)
                    if key is None or key in self.fixed:
                        continue
                    rdeps = self._deps(A.MultTest("some", rhs))
                    if key not in rdeps:
                        self.equalities.setdefault(key, []).append((rhs, rdeps))

    def _add_structural_checks(self):
        for s in self.model.sigs:
            if s.abstract and not (s.is_top and not self.model.children(s.name, "extends")):
                exts = self.model.children(s.name, "extends")
                deps = {("sig", e.name) for e in exts}
                if not s.is_top:
                    deps.add(("sig", s.name))
                self.checks.append(_Check(frozenset(deps), abstract=s.name))

    def _plan(self):
        m = self.model
        tree = {s.name: m.top_of(s.name) for s in m.sigs}
        keys = [("sig", s) for s in m.sig_order if s not in self.tops]
        keys += [("field", f.owner, f.name) for f in m.fields]

        def trees_of(key):
            if key[0] == "sig":
                return {tree[key[1]]}
            f = m.field(key[1], key[2])
            return {tree[f.owner]} | {tree[c] for c in f.columns}

        used = set()
        for c in self.checks:
            if c.formula is not None:
                used |= {k for k in c.deps if k[0] != "var"}
        relevant_trees = set()
        for k in used:
            relevant_trees |= trees_of(k)
        raw_used = set()
        for c in self.checks:
            if c.formula is not None:
                raw_used |= A.relations_used(c.formula)
        if ("univ",) in raw_used:
            relevant_trees |= self.tops
        relevant_trees |= {k[1] for k in raw_used if k[0] in ("sig", "next") and k[1] in self.tops}
        for sk in self.skolems:
            relevant_trees |= set(sk.types)
        # top-level signatures nothing reads get their size during completion
        self.rel_tops = [t for t in m.top_sigs if t in relevant_trees]
        self.irr_tops = [t for t in m.top_sigs if t not in relevant_trees]
        relevant = {k for k in keys if k in used}
        for k in list(relevant):
            if k[0] == "field":
                f = m.field(k[1], k[2])
                relevant |= {("sig", c) for c in (f.owner, *f.columns) if c not in self.tops}
        # close over the declarations that tie a sig to its relatives
        changed = True
        while changed:
            changed = False
            for s in m.sigs:
                key = ("sig", s.name)
                if s.is_top or key in relevant:
                    continue
                parent_rel = s.parent in self.tops and s.parent in relevant_trees or ("sig", s.parent) in relevant
                child_rel = any(("sig", c.name) in relevant for c in m.children(s.name))
                sibling_rel = s.kind == "extends" and any(
                    ("sig", c.name) in relevant for c in m.children(s.parent, "extends")
                )
                forced = s.multiplicity in ("some", "one") or (s.kind == "extends" and m.sig(s.parent).abstract)
                if child_rel or sibling_rel or (parent_rel and forced):
                    relevant.add(key)
                    changed = True
        self.relevant = [k for k in keys if k in relevant]
        self.irrelevant_sigs = [k for k in keys if k not in relevant and k[0] == "sig"]
        self.irrelevant_fields = [k for k in keys if k not in relevant and k[0] == "field"]
        self.by_key: dict[tuple, list[_Check]] = {}
        self.initial: list[_Check] = []
        self.after_skolem: dict[str, list[_Check]] = {}
        for c in self.checks:
            rel = [k for k in c.deps if k[0] != "var"]
            if rel:
                for k in rel:
                    self.by_key.setdefault(k, []).append(c)
            else:
                vars_ = [k[1] for k in c.deps]
                if not vars_:
                    self.initial.append(c)
                else:
                    last = max(vars_, key=lambda v: self._skolem_index(v))
                    self.after_skolem.setdefault(last, []).append(c)

    def _skolem_index(self, name: str) -> int:
        for i, s in enumerate(self.skolems):
            if s.name == name:
                return i
        raise KeyError(name)

    # state ---------------------------------------------------------------

    def _tick(self, n: int = 1):
        self.stats.examined += n
        if self.stats.examined > self.budget.candidates:
            raise _OutOfBudget(f"more than {self.budget.candidates} candidates")
        if self.stats.examined & 1023 == 0 and time.monotonic() > self.deadline:
            raise _OutOfBudget(f"time budget of {self.budget.time_ms} ms exhausted")

    def _instance(self) -> Instance:
        return Instance(self.universe, self.sig_vals, self.field_vals, self.nexts)

    def _ok(self, checks: Sequence[_Check], assigned: set) -> bool:
        inst = None
        for c in checks:
            if not c.deps <= assigned:
                continue
            if c.abstract is not None:
                exts = self.model.children(c.abstract, "extends")
                covered = frozenset().union(*(self.sig_vals[e.name].tuples for e in exts)) if exts else frozenset()
                if self.sig_vals[c.abstract].tuples != covered:
                    return False
                continue
            if inst is None:
                inst = self._instance()
            if not _holds(inst, self.env, c.formula):
                return False
        return True

    # driver --------------------------------------------------------------

    def _set_tops(self, sizes: Mapping[str, int], start: int) -> list[Atom]:
        atoms = []
        for t, n in sizes.items():
            ids = list(range(start + len(atoms), start + len(atoms) + n))
            atoms.extend(Atom(a, t, f"{t}${k}") for k, a in enumerate(ids))
            self.atoms_by_top[t] = ids
            self.sig_vals[t] = RelationValue(1, frozenset((i,) for i in ids))
            if self.model.is_ordered(t):
                self.nexts[t] = RelationValue(2, _canonical_next(ids))
        return atoms

    def run(self) -> Optional[Instance]:
        ranges = [_size_range(self.model, t, self.scopes[t]) for t in self.rel_tops]
        for sizes in product(*ranges):
            self._tick()
            self.sig_vals, self.field_vals, self.nexts, self.atoms_by_top = {}, {}, {}, {}
            self.universe = tuple(self._set_tops(dict(zip(self.rel_tops, sizes)), 0))
            self.env = {}
            self.assigned = set()
            if not self._ok(self.initial, self.assigned):
                continue
            found = self._skolem(0)
            if found is not None:
                return found
        return None

    def _skolem(self, i: int) -> Optional[Instance]:
        if i == len(self.skolems):
            return self._relations()
        sk = self.skolems[i]
        used_here = {v for v in self.env.values()}
        for t in sk.types:
            atoms = self.atoms_by_top[t]
            if self.model.is_ordered(t):
                limit = len(atoms)
            else:
                # atoms not yet named by a witness are interchangeable
                taken = [a for a in atoms if a in used_here]
                limit = min(len(atoms), (max(atoms.index(a) for a in taken) + 2) if taken else 1)
            for a in atoms[:limit]:
                if any(self.env.get(o) == a for o in sk.disj_with):
                    continue
                self._tick()
                self.env[sk.name] = a
                if self._ok(self.after_skolem.get(sk.name, ()), self.assigned | {("var", s.name) for s in self.skolems[: i + 1]}):
                    found = self._skolem(i + 1)
                    if found is not None:
                        return found
                del self.env[sk.name]
        return None

    def _relations(self) -> Optional[Instance]:
        self.assigned = {("var", s.name) for s in self.skolems}
        return self._assign(list(self.relevant))

    def _prereqs(self, key) -> bool:
        m = self.model
        if key[0] == "sig":
            s = m.sig(key[1])
            return s.parent in self.tops or ("sig", s.parent) in self.assigned
        f = m.field(key[1], key[2])
        return all(c in self.tops or ("sig", c) in self.assigned for c in (f.owner, *f.columns))

    def _forced(self, key) -> Optional[tuple[A.Expr, frozenset]]:
        for rhs, deps in self.equalities.get(key, ()):
            if deps <= self.assigned:
                return rhs
        return None

    def _choose(self, todo: list) -> tuple:
        best, best_cost = None, None
        for key in todo:
            if not self._prereqs(key):
                continue
            if self._forced(key) is not None:
                return key
            cost = self._cost(key)
            if best is None or cost < best_cost:
                best, best_cost = key, cost
        return best

    def _cost(self, key) -> int:
        if key[0] == "sig":
            return 1 << len(self._sig_pool(key[1]))
        f = self.model.field(key[1], key[2])
        cols = [self.sig_vals[c].tuples for c in (f.owner, *f.columns)]
        prefixes = 1
        for c in cols[:-1]:
            prefixes *= len(c)
        per = {"set": 1 << len(cols[-1]), "lone": len(cols[-1]) + 1, "one": len(cols[-1]), "some": (1 << len(cols[-1])) - 1}
        return per[f.multiplicity] ** prefixes

    def _sig_pool(self, name: str) -> list[int]:
        s = self.model.sig(name)
        pool = {t[0] for t in self.sig_vals[s.parent].tuples}
        if s.kind == "extends":
            for sib in self.model.children(s.parent, "extends"):
                if sib.name != name and sib.name in self.sig_vals:
                    pool -= {t[0] for t in self.sig_vals[sib.name].tuples}
        return sorted(pool)

    def _sig_candidates(self, name: str) -> Iterator[frozenset]:
        s = self.model.sig(name)
        pool = self._sig_pool(name)
        sizes = {None: range(len(pool) + 1), "set": range(len(pool) + 1), "lone": range(min(1, len(pool)) + 1),
                 "one": range(1, 2) if pool else range(0), "some": range(1, len(pool) + 1)}[s.multiplicity]
        for k in sizes:
            for combo in combinations(pool, k):
                yield frozenset((a,) for a in combo)

    def _field_candidates(self, key) -> Iterator[frozenset]:
        f = self.model.field(key[1], key[2])
        cols = [sorted(t[0] for t in self.sig_vals[c].tuples) for c in (f.owner, *f.columns)]
        prefixes = list(product(*cols[:-1]))
        last = cols[-1]
        if f.multiplicity == "set":
            options = [c for k in range(len(last) + 1) for c in combinations(last, k)]
        elif f.multiplicity == "lone":
            options = [()] + [(a,) for a in last]
        elif f.multiplicity == "one":
            options = [(a,) for a in last]
        else:
            options = [c for k in range(1, len(last) + 1) for c in combinations(last, k)]
        if not prefixes:
            yield frozenset()
            return
        # vary the last prefix fastest, with small tuple sets first
        for choice in product(options, repeat=len(prefixes)):
            yield frozenset(p + (b,) for p, bs in zip(prefixes, choice) for b in bs)

    def _forced_candidates(self, key, rhs) -> Iterator[frozenset]:
        value = _eval(self._instance(), self.env, rhs)
        m = self.model
        if key[0] == "sig":
            s = m.sig(key[1])
            pool = set(self._sig_pool(key[1]))
            n = len(value)
            if any(len(t) != 1 or t[0] not in pool for t in value):
                return
            if (s.multiplicity == "one" and n != 1) or (s.multiplicity == "lone" and n > 1) or (
                s.multiplicity == "some" and n < 1
            ):
                return
            yield value
            return
        f = m.field(key[1], key[2])
        val = {name: rv.tuples for name, rv in self.sig_vals.items()}
        if any(len(t) != f.arity for t in value):
            return
        if field_violations(f, RelationValue(f.arity, value), val):
            return
        yield value

    def _set(self, key, value: frozenset):
        if key[0] == "sig":
            self.sig_vals[key[1]] = RelationValue(1, value)
        else:
            self.field_vals[(key[1], key[2])] = RelationValue(self.model.field(key[1], key[2]).arity, value)

    def _unset(self, key):
        if key[0] == "sig":
            del self.sig_vals[key[1]]
        else:
            del self.field_vals[(key[1], key[2])]

    def _assign(self, todo: list) -> Optional[Instance]:
        if not todo:
            return self._complete()
        key = self._choose(todo)
        if key is None:
            raise AssertionError("no assignable relation; hierarchy is inconsistent")
        rest = [k for k in todo if k != key]
        rhs = self._forced(key)
        if rhs is not None:
            candidates = self._forced_candidates(key, rhs)
        elif key[0] == "sig":
            candidates = self._sig_candidates(key[1])
        else:
            candidates = self._field_candidates(key)
        self.assigned.add(key)
        for value in candidates:
            self._tick()
            self._set(key, value)
            if self._ok(self.by_key.get(key, ()), self.assigned):
                found = self._assign(rest)
                if found is not None:
                    return found
            self._unset(key)
        self.assigned.discard(key)
        return None

    def _complete(self) -> Optional[Instance]:
        """Fill relations no constraint reads: any structurally valid value will do."""
        base = self.universe
        ranges = [_size_range(self.model, t, self.scopes[t]) for t in self.irr_tops]
        try:
            for sizes in product(*ranges):
                self._tick()
                extra = self._set_tops(dict(zip(self.irr_tops, sizes)), len(base))
                self.universe = base + tuple(extra)
                found = self._complete_sigs(0)
                if found is not None:
                    return found
            return None
        finally:
            self.universe = base
            for t in self.irr_tops:
                self.sig_vals.pop(t, None)
                self.nexts.pop(t, None)
                self.atoms_by_top.pop(t, None)

    def _complete_sigs(self, i: int) -> Optional[Instance]:
        if i == len(self.irrelevant_sigs):
            return self._complete_fields()
        key = self.irrelevant_sigs[i]
        self.assigned.add(key)
        for value in self._sig_candidates(key[1]):
            self._tick()
            self._set(key, value)
            if self._ok(self.by_key.get(key, ()), self.assigned):
                found = self._complete_sigs(i + 1)
                if found is not None:
                    return found
            self._unset(key)
        self.assigned.discard(key)
        return None

    def _complete_fields(self) -> Optional[Instance]:
        done = []
        for key in self.irrelevant_fields:
            self._tick()
            value = next(self._field_candidates(key), None)
            if value is None:
                for k in done:
                    self._unset(k)
                return None
            self._set(key, value)
            done.append(key)
        inst = Instance(self.universe, dict(self.sig_vals), dict(self.field_vals), dict(self.nexts))
        for k in done:
            self._unset(k)
        return inst


# --------------------------------------------------------------------------
# public entry points


def solve_formulas(
    model: A.Model,
    formulas: Sequence[A.Formula],
    scopes: Mapping[str, ScopeLike] = (),
    default_bound: int = A.DEFAULT_BOUND,
    budget: Optional[Budget] = None,
    body: Optional[A.Formula] = None,
) -> SolveResult:
    """Satisfiability of the model's facts plus ``formulas`` (and ``body``) within scopes."""
    budget = budget or DEFAULT_BUDGET
    scopes = _norm_scopes(model, dict(scopes), default_bound)
    facts = [f.body for f in model.facts] + list(formulas)
    stats = SolveStats()
    start = time.monotonic()
    if body is not None:
        val = extract_valuation(body, model)
        if val is not None:
            stats.fast_path = True
            result = _solve_valuation(model, val, facts, scopes, stats)
            stats.elapsed = time.monotonic() - start
            return result
        facts.append(body)
    search = _Search(model, facts, scopes, budget)
    try:
        witness = search.run()
    except _OutOfBudget as exc:
        search.stats.elapsed = time.monotonic() - start
        return SolveResult(INCONCLUSIVE, stats=search.stats, reason=str(exc))
    search.stats.elapsed = time.monotonic() - start
    if witness is None:
        return SolveResult(UNSAT, stats=search.stats, reason="no instance within scope")
    problems = check_structure(model, witness)
    if problems or not all(eval_formula(witness, {}, f) for f in facts):
        raise AssertionError(f"search produced an invalid witness: {problems}")
    return SolveResult(SAT, witness, stats=search.stats)


def solve(
    model: A.Model,
    extra_facts: Sequence[A.Formula],
    cmd: A.RunCommand,
    budget: Optional[Budget] = None,
    fast_path: bool = True,
) -> SolveResult:
    if fast_path:
        return solve_formulas(model, extra_facts, cmd.scope_map, cmd.default_bound, budget, body=cmd.body)
    return solve_formulas(model, [*extra_facts, cmd.body], cmd.scope_map, cmd.default_bound, budget)


# --------------------------------------------------------------------------
# brute-force enumeration


class LimitReached:
    """Yielded last by ``enumerate_instances`` when the limit cut enumeration short."""

    def __repr__(self) -> str:
        return "LimitReached"


LIMIT_REACHED = LimitReached()


def _subsets(items: Sequence) -> Iterator[tuple]:
    for k in range(len(items) + 1):
        yield from combinations(items, k)


def enumerate_instances(
    model: A.Model,
    facts: Sequence[A.Formula],
    scopes: Mapping[str, ScopeLike],
    limit: Optional[int] = None,
    symmetry_breaking: bool = True,
    default_bound: int = A.DEFAULT_BOUND,
) -> Iterator[Union[Instance, LimitReached]]:
    """Every valid instance within scopes that satisfies the facts.

    Plain generate-and-test: all universes, all subsets for every signature
    and field, all linear orders, filtered by ``check_structure`` and the
    facts. With ``symmetry_breaking`` the universe of each top-level
    signature is a prefix of its atom pool and orders follow atom ids;
    without it every sub-pool and every order is produced.
    """
    scopes = _norm_scopes(model, dict(scopes), default_bound)
    formulas = [f.body for f in model.facts] + list(facts)
    tops = list(model.top_sigs)
    pool = make_universe({t: scopes[t].bound for t in tops})
    pool_of = {t: [a for a in pool if a.type == t] for t in tops}

    def universes(t):
        atoms = pool_of[t]
        exact = scopes[t].exact or model.is_ordered(t)
        if symmetry_breaking:
            sizes = [len(atoms)] if exact else range(len(atoms) + 1)
            return [tuple(atoms[:k]) for k in sizes]
        return [c for c in _subsets(atoms) if not exact or len(c) == len(atoms)]

    def orders(atoms):
        ids = [a.id for a in atoms]
        if symmetry_breaking:
            return [_canonical_next(ids)]
        if not ids:
            return [frozenset()]
        return [_canonical_next(list(p)) for p in permutations(ids)]

    count = 0
    sub_sigs = [s for s in model.sig_order if s not in tops]
    for chosen in product(*(universes(t) for t in tops)):
        universe = tuple(a for part in chosen for a in part)
        base = {t: frozenset((a.id,) for a in part) for t, part in zip(tops, chosen)}

        def sig_valuations(i, vals):
            if i == len(sub_sigs):
                yield dict(vals)
                return
            s = model.sig(sub_sigs[i])
            for sub in _subsets(sorted(vals[s.parent])):
                vals[s.name] = frozenset(sub)
                yield from sig_valuations(i + 1, vals)
            del vals[s.name]

        for vals in sig_valuations(0, dict(base)):
            field_spaces = []
            for f in model.fields:
                cols = [sorted(t[0] for t in vals[c]) for c in (f.owner, *f.columns)]
                field_spaces.append(list(_subsets(list(product(*cols)))))
            order_spaces = [orders([a for a in universe if a.type == s]) for s in model.orderings]
            for fvals in product(*field_spaces):
                for nvals in product(*order_spaces):
                    inst = Instance(
                        universe,
                        {s: RelationValue(1, v) for s, v in vals.items()},
                        {(f.owner, f.name): RelationValue(f.arity, frozenset(v)) for f, v in zip(model.fields, fvals)},
                        {s: RelationValue(2, v) for s, v in zip(model.orderings, nvals)},
                    )
                    if check_structure(model, inst):
                        continue
                    if not all(eval_formula(inst, {}, f) for f in formulas):
                        continue
                    if limit is not None and count >= limit:
                        yield LIMIT_REACHED
                        return
                    count += 1
                    yield inst


def is_satisfiable_by_enumeration(
    model: A.Model, facts: Sequence[A.Formula], scopes: Mapping[str, ScopeLike], default_bound: int = A.DEFAULT_BOUND
) -> bool:
    for inst in enumerate_instances(model, facts, scopes, limit=1, default_bound=default_bound):
        return isinstance(inst, Instance)
    return False
