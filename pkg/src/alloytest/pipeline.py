"""Four-stage classification of test cases and suite-level funnel reports."""
from __future__ import annotations

import csv
import io
import json
import os
import re
import tempfile
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence, Union

import yaml

from . import ast as A
from .errors import ParseError
from .parser import extract_commands, parse_command, parse_model
from .semantics import Instance
from .solver import Budget, SolveResult, extract_valuation, solve

SYNTAX_FAIL = "SyntaxFail"
INCONSISTENT = "Inconsistent"
PREVIOUS_FAIL = "PreviousFail"
ORACLE_FAIL = "OracleFail"
VALID = "Valid"
INCONCLUSIVE = "Inconclusive"

STAGES = (SYNTAX_FAIL, INCONSISTENT, PREVIOUS_FAIL, ORACLE_FAIL, VALID, INCONCLUSIVE)

# how many funnel columns (Syntax, Consistent, Previous, Valid) a result passed
_PASSED = {SYNTAX_FAIL: 0, INCONSISTENT: 1, PREVIOUS_FAIL: 2, ORACLE_FAIL: 3, VALID: 4}

POSITIVE = "positive"
NEGATIVE = "negative"


class PipelineError(Exception):
    pass


@dataclass
class TestCase:
    requirement: int
    raw: str
    polarity: Optional[str] = None
    parsed: Optional[A.RunCommand] = None
    comment: Optional[str] = None

    __test__ = False  # not a pytest class


@dataclass
class StageResult:
    reached: str
    detail: str = ""
    witness: Optional[Instance] = None
    # for Inconclusive: the number of funnel columns passed before the budget ran out
    passed: int = 0
    fully_specified: Optional[bool] = None

    def __post_init__(self):
        if self.reached != INCONCLUSIVE:
            self.passed = _PASSED[self.reached]


def infer_polarity(comment: Optional[str]) -> Optional[str]:
    """Polarity stated in a test's explanatory comment, if unambiguous."""
    if not comment:
        return None
    text = comment.lower()
    pos = re.search(r"\bpositive\b", text) is not None
    neg = re.search(r"\bnegative\b", text) is not None
    if pos != neg:
        return POSITIVE if pos else NEGATIVE
    return None


def oracle_formula(model: A.Model, req: A.Requirement) -> A.Formula:
    try:
        pred = model.pred(req.oracle)
    except KeyError:
        raise PipelineError(f"requirement {req.index}: no oracle predicate '{req.oracle}' in the model") from None
    if pred.params:
        raise PipelineError(f"requirement {req.index}: oracle '{req.oracle}' must not take parameters")
    return pred.body


def classify_test(
    model: A.Model,
    reqs: Sequence[A.Requirement],
    t: TestCase,
    budget: Optional[Budget] = None,
    strict: bool = False,
) -> StageResult:
    i = t.requirement
    if not 0 <= i < len(reqs):
        raise PipelineError(f"test refers to requirement {i}, but there are {len(reqs)}")
    oracles = [oracle_formula(model, r) for r in reqs[: i + 1]]

    cmd = t.parsed
    if cmd is None:
        try:
            cmd = parse_command(model, t.raw)
        except ParseError as exc:
            return StageResult(SYNTAX_FAIL, str(exc))
        t.parsed = cmd

    def inconclusive(r: SolveResult, passed: int) -> StageResult:
        return StageResult(INCONCLUSIVE, r.reason, passed=passed)

    r = solve(model, [], cmd, budget)
    if r.inconclusive:
        return inconclusive(r, 1)
    if r.unsat:
        return StageResult(INCONSISTENT, r.reason)

    if i > 0:
        r = solve(model, oracles[:i], cmd, budget)
        if r.inconclusive:
            return inconclusive(r, 2)
        if r.unsat:
            return StageResult(PREVIOUS_FAIL, r.reason)

    r = solve(model, oracles, cmd, budget)
    if r.inconclusive:
        return inconclusive(r, 3)
    full = extract_valuation(cmd, model) is not None if strict else None
    if cmd.expect is None:
        return StageResult(ORACLE_FAIL, "command has no expect clause", r.witness, fully_specified=full)
    if t.polarity is not None and (t.polarity == POSITIVE) != (cmd.expect == 1):
        return StageResult(ORACLE_FAIL, f"declared {t.polarity} but expects {cmd.expect}", r.witness, fully_specified=full)
    if r.sat == (cmd.expect == 1):
        return StageResult(VALID, "", r.witness, fully_specified=full)
    outcome = "satisfiable" if r.sat else "unsatisfiable"
    return StageResult(ORACLE_FAIL, f"{outcome} under the oracle, expected {cmd.expect}", r.witness, fully_specified=full)


# --------------------------------------------------------------------------
# reports

COLUMNS = ("Tests", "Syntax", "Consistent", "Previous", "Valid", "%", "Cost")


@dataclass
class ReportRow:
    label: str
    tests: int = 0
    syntax: int = 0
    consistent: int = 0
    previous: int = 0
    valid: int = 0
    inconclusive: int = 0
    syntax_before_repair: Optional[int] = None

    @property
    def percent(self) -> float:
        return 100.0 * self.valid / self.tests if self.tests else 0.0

    def add(self, result: StageResult):
        self.tests += 1
        passed = result.passed
        self.syntax += passed >= 1
        self.consistent += passed >= 2
        self.previous += passed >= 3
        self.valid += result.reached == VALID
        self.inconclusive += result.reached == INCONCLUSIVE

    def merge(self, other: "ReportRow"):
        for name in ("tests", "syntax", "consistent", "previous", "valid", "inconclusive"):
            setattr(self, name, getattr(self, name) + getattr(other, name))
        if other.syntax_before_repair is not None:
            self.syntax_before_repair = (self.syntax_before_repair or 0) + other.syntax_before_repair

    def funnel(self) -> tuple[int, int, int, int, int]:
        return (self.tests, self.syntax, self.consistent, self.previous, self.valid)


@dataclass
class SuiteReport:
    label: str = "Total"
    rows: list[ReportRow] = field(default_factory=list)
    cost: Optional[float] = None
    tokens: dict = field(default_factory=dict)
    provenance: dict = field(default_factory=dict)

    @property
    def total(self) -> ReportRow:
        out = ReportRow(self.label)
        for r in self.rows:
            out.merge(r)
        return out

    def to_json(self) -> dict:
        return {
            "label": self.label,
            "rows": [asdict(r) for r in self.rows],
            "cost": self.cost,
            "tokens": self.tokens,
            "provenance": self.provenance,
        }

    @classmethod
    def from_json(cls, doc: Union[str, dict]) -> "SuiteReport":
        if isinstance(doc, str):
            doc = json.loads(doc)
        return cls(doc["label"], [ReportRow(**r) for r in doc["rows"]], doc.get("cost"), doc.get("tokens", {}), doc.get("provenance", {}))


def aggregate(results: Iterable[tuple[int, StageResult]], label: str = "Total") -> SuiteReport:
    """Fold (requirement index, result) pairs into a per-requirement report."""
    rows: dict[int, ReportRow] = {}
    for i, res in results:
        rows.setdefault(i, ReportRow(f"R{i}")).add(res)
    return SuiteReport(label, [rows[i] for i in sorted(rows)])


def _classify_job(args):
    model, reqs, t, budget, strict = args
    return classify_test(model, reqs, t, budget, strict)


def classify_suite(
    model: A.Model,
    reqs: Sequence[A.Requirement],
    suite: Sequence[TestCase],
    budget: Optional[Budget] = None,
    jobs: int = 1,
    strict: bool = False,
) -> list[StageResult]:
    for t in suite:
        if not 0 <= t.requirement < len(reqs):
            raise PipelineError(f"test refers to requirement {t.requirement}, but there are {len(reqs)}")
    if jobs <= 1 or len(suite) < 2:
        return [classify_test(model, reqs, t, budget, strict) for t in suite]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(_classify_job, [(model, reqs, t, budget, strict) for t in suite]))


def validate_suite(
    model: A.Model,
    reqs: Sequence[A.Requirement],
    suite: Sequence[TestCase],
    budget: Optional[Budget] = None,
    jobs: int = 1,
    label: str = "Total",
) -> SuiteReport:
    results = classify_suite(model, reqs, suite, budget, jobs)
    return aggregate(((t.requirement, r) for t, r in zip(suite, results)), label)


def _fmt_percent(row: ReportRow) -> str:
    return f"{row.percent:.0f}%"


def _cells(row: ReportRow, cost: Optional[float]) -> list[str]:
    return [str(x) for x in row.funnel()] + [_fmt_percent(row), "" if cost is None else f"{cost:.2f}"]


def emit_report(report: SuiteReport, fmt: str = "json") -> str:
    """Render a report; funnel columns always come in the order of COLUMNS."""
    if fmt == "json":
        return json.dumps(report.to_json(), indent=2, sort_keys=True) + "\n"
    rows = [(r.label, _cells(r, None), r.inconclusive) for r in report.rows]
    if report.rows:
        t = report.total
        rows.append((t.label, _cells(t, report.cost), t.inconclusive))
    header = ["Run", *COLUMNS, "Inconclusive"]
    if fmt == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(header)
        for label, cells, inc in rows:
            w.writerow([label, *cells, inc])
        return buf.getvalue()
    if fmt in ("md", "markdown"):
        lines = ["| " + " | ".join(header) + " |", "|" + "---|" * len(header)]
        for label, cells, inc in rows:
            lines.append("| " + " | ".join([label, *cells, str(inc)]) + " |")
        return "\n".join(lines) + "\n"
    raise ValueError(f"unknown report format '{fmt}'")


# --------------------------------------------------------------------------
# corpus layout


@dataclass
class Example:
    root: Path
    model_text: str
    model: A.Model
    requirements: list[A.Requirement]

    @property
    def name(self) -> str:
        return self.root.name

    def suite_dir(self, run_id: str) -> Path:
        return self.root / "suites" / run_id


class CorpusError(Exception):
    def __init__(self, problems: list[str]):
        super().__init__("; ".join(problems))
        self.problems = problems


def load_requirements(path: Path) -> list[A.Requirement]:
    doc = yaml.safe_load(path.read_text(encoding="utf-8")) or []
    if isinstance(doc, dict):
        doc = doc.get("requirements", [])
    out = []
    for i, item in enumerate(doc):
        if not isinstance(item, dict) or "text" not in item or "oracle" not in item:
            raise CorpusError([f"{path}: entry {i} needs 'text' and 'oracle'"])
        out.append(A.Requirement(i, str(item["text"]), str(item["oracle"])))
    return out


def load_example(root: Union[str, Path]) -> Example:
    root = Path(root)
    problems = []
    if not (root / "model.als").is_file():
        problems.append(f"{root}: missing model.als")
    if not (root / "requirements.yaml").is_file():
        problems.append(f"{root}: missing requirements.yaml")
    if problems:
        raise CorpusError(problems)
    text = (root / "model.als").read_text(encoding="utf-8")
    model = parse_model(text)
    reqs = load_requirements(root / "requirements.yaml")
    for r in reqs:
        if not model.has_pred(r.oracle):
            problems.append(f"{root}: requirement {r.index} names unknown oracle '{r.oracle}'")
    if problems:
        raise CorpusError(problems)
    return Example(root, text, model, reqs)


def list_examples(corpus: Union[str, Path]) -> list[Path]:
    corpus = Path(corpus)
    if not corpus.is_dir():
        raise CorpusError([f"{corpus}: not a directory"])
    return sorted(p for p in corpus.iterdir() if p.is_dir() and (p / "model.als").exists())


def tests_from_text(text: str, requirement: int) -> list[TestCase]:
    return [TestCase(requirement, raw, infer_polarity(comment), comment=comment) for raw, comment in extract_commands(text)]


def load_suite(example: Example, run_id: str) -> list[TestCase]:
    d = example.suite_dir(run_id)
    if not d.is_dir():
        return []
    tests = []
    problems = []
    for p in sorted(d.glob("*.als"), key=lambda p: (len(p.stem), p.stem)):
        if not p.stem.isdigit():
            problems.append(f"{p}: suite files must be named <requirement index>.als")
            continue
        i = int(p.stem)
        if i >= len(example.requirements):
            problems.append(f"{p}: no requirement {i}")
            continue
        tests.extend(tests_from_text(p.read_text(encoding="utf-8"), i))
    if problems:
        raise CorpusError(problems)
    return tests


def load_suite_meta(example: Example, run_id: str) -> dict:
    p = example.suite_dir(run_id) / "meta.json"
    if not p.is_file():
        return {}
    return json.loads(p.read_text(encoding="utf-8"))


def write_atomic(path: Union[str, Path], text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


# --------------------------------------------------------------------------
# replay of recorded classifications


def replay_classifications(records: Iterable[dict], label: str = "Total") -> SuiteReport:
    """Rebuild a funnel report from stored per-test stage labels.

    Each record needs ``requirement`` and ``stage`` (one of STAGES); an
    inconclusive record may carry ``passed``.
    """
    pairs = []
    for rec in records:
        stage = rec["stage"]
        if stage not in STAGES:
            raise PipelineError(f"unknown stage '{stage}'")
        pairs.append((int(rec["requirement"]), StageResult(stage, passed=int(rec.get("passed", 0)))))
    return aggregate(pairs, label)
