"""Wrong-specification detection by validated test suites."""
from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Optional, Sequence, Union

from . import ast as A
from .parser import parse_command, parse_preds
from .pipeline import TestCase, oracle_formula
from .solver import Budget, SolveResult, solve, solve_formulas


@dataclass(frozen=True)
class WrongSpec:
    requirement: int
    formula: A.Formula
    frequency: Optional[int] = None
    name: Optional[str] = None


_FREQ = re.compile(r"freq\s*:\s*(\d+)")


def parse_wrong_specs(model: A.Model, text: str, requirement: int) -> list[WrongSpec]:
    """One candidate per predicate; a preceding `-- freq: n` comment sets its frequency."""
    out = []
    for pred, comment in parse_preds(model, text):
        if pred.params:
            raise ValueError(f"wrong spec '{pred.name}' must not take parameters")
        m = _FREQ.search(comment or "")
        out.append(WrongSpec(requirement, pred.body, int(m.group(1)) if m else None, pred.name))
    return out


def load_wrong_specs(model: A.Model, path: Union[str, Path], requirement: int) -> list[WrongSpec]:
    return parse_wrong_specs(model, Path(path).read_text(encoding="utf-8"), requirement)


def _command(model: A.Model, t: TestCase) -> A.RunCommand:
    if t.parsed is None:
        t.parsed = parse_command(model, t.raw)
    return t.parsed


@dataclass
class Detection:
    """Outcome of running a suite against one wrong spec."""

    detected: Optional[bool]
    test_index: Optional[int] = None
    result: Optional[SolveResult] = None


def detect_detail(
    model: A.Model,
    reqs: Sequence[A.Requirement],
    i: int,
    suite: Sequence[TestCase],
    w: WrongSpec,
    budget: Optional[Budget] = None,
) -> Detection:
    previous = [oracle_formula(model, r) for r in reqs[:i]]
    unsure = False
    for k, t in enumerate(suite):
        cmd = _command(model, t)
        r = solve(model, [*previous, w.formula], cmd, budget)
        if r.inconclusive:
            unsure = True
            continue
        if r.sat != (cmd.expect == 1):
            return Detection(True, k, r)
    return Detection(None if unsure else False)


def detect(
    model: A.Model,
    reqs: Sequence[A.Requirement],
    i: int,
    suite: Sequence[TestCase],
    w: WrongSpec,
    budget: Optional[Budget] = None,
) -> Optional[bool]:
    """True if some test disagrees with its expectation under ``w``; None if undecided."""
    return detect_detail(model, reqs, i, suite, w, budget).detected


@dataclass
class DetectionRow:
    requirement: Union[int, str]
    complete: bool
    wrong: int = 0
    missed: int = 0
    inconclusive: int = 0

    @property
    def ratio(self) -> Optional[float]:
        decided = self.wrong - self.inconclusive
        return 100.0 * self.missed / decided if decided > 0 else None


@dataclass
class DetectionReport:
    n: int
    rows: list[DetectionRow] = field(default_factory=list)

    @property
    def complete(self) -> int:
        return sum(r.complete for r in self.rows)

    @property
    def wrong(self) -> int:
        return sum(r.wrong for r in self.rows if r.complete)

    @property
    def missed(self) -> int:
        return sum(r.missed for r in self.rows if r.complete)

    @property
    def inconclusive(self) -> int:
        return sum(r.inconclusive for r in self.rows if r.complete)

    @property
    def mean_percent(self) -> float:
        """Mean over complete requirements of the per-requirement miss ratio."""
        ratios = [r.ratio for r in self.rows if r.complete and r.ratio is not None]
        return sum(ratios) / len(ratios) if ratios else 0.0

    def to_json(self) -> dict:
        return {
            "N": self.n,
            "Complete": self.complete,
            "Wrong": self.wrong,
            "Missed": self.missed,
            "Inconclusive": self.inconclusive,
            "Mean %": round(self.mean_percent, 2),
            "rows": [
                {"requirement": r.requirement, "complete": r.complete, "wrong": r.wrong, "missed": r.missed, "inconclusive": r.inconclusive}
                for r in self.rows
            ],
        }

    @classmethod
    def from_rows(cls, n: int, rows: Sequence[Mapping]) -> "DetectionReport":
        return cls(n, [DetectionRow(r["requirement"], bool(r["complete"]), int(r["wrong"]), int(r["missed"]), int(r.get("inconclusive", 0))) for r in rows])

    def markdown(self) -> str:
        head = "| N | Complete | Wrong | Missed | Mean % |\n|---|---|---|---|---|\n"
        return head + f"| {self.n} | {self.complete} | {self.wrong} | {self.missed} | {self.mean_percent:.2f}% |\n"


def detection_report(
    model: A.Model,
    reqs: Sequence[A.Requirement],
    suites: Mapping[int, Sequence[TestCase]],
    wrongs: Mapping[int, Sequence[WrongSpec]],
    n: int,
    budget: Optional[Budget] = None,
) -> DetectionReport:
    """Suites must hold only Valid tests; requirements with fewer than 2N are incomplete."""
    rows = []
    for i in sorted(set(suites) | set(wrongs)):
        suite = list(suites.get(i, ()))
        pool = list(wrongs.get(i, ()))
        row = DetectionRow(i, len(suite) >= 2 * n, len(pool))
        if row.complete:
            for w in pool:
                d = detect(model, reqs, i, suite, w, budget)
                if d is None:
                    row.inconclusive += 1
                elif not d:
                    row.missed += 1
        rows.append(row)
    return DetectionReport(n, rows)


def equivalent(
    model: A.Model,
    assumptions: Sequence[A.Formula],
    f: A.Formula,
    g: A.Formula,
    scopes: Mapping[str, Union[A.Scope, int]] = (),
    budget: Optional[Budget] = None,
) -> Optional[bool]:
    """Bounded equivalence of two closed formulas; None when the budget runs out."""
    r = solve_formulas(model, [*assumptions, A.Not(A.BinFormula("iff", f, g))], dict(scopes), budget=budget)
    if r.inconclusive:
        return None
    return r.unsat


def dedupe_wrong_specs(
    model: A.Model,
    reqs: Sequence[A.Requirement],
    i: int,
    candidates: Sequence[Union[A.Formula, WrongSpec]],
    scopes: Mapping[str, Union[A.Scope, int]] = (),
    budget: Optional[Budget] = None,
) -> list[WrongSpec]:
    """One representative per bounded-equivalence class, minus the oracle's class.

    Frequencies of merged candidates are summed into the representative.
    """
    previous = [oracle_formula(model, r) for r in reqs[:i]]
    oracle = oracle_formula(model, reqs[i])
    reps: list[WrongSpec] = []
    for c in candidates:
        w = c if isinstance(c, WrongSpec) else WrongSpec(i, c)
        if equivalent(model, previous, w.formula, oracle, scopes, budget):
            continue
        for k, rep in enumerate(reps):
            if equivalent(model, previous, w.formula, rep.formula, scopes, budget):
                if w.frequency is not None:
                    reps[k] = WrongSpec(i, rep.formula, (rep.frequency or 0) + w.frequency, rep.name)
                break
        else:
            reps.append(WrongSpec(i, w.formula, w.frequency, w.name))
    return reps
