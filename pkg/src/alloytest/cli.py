"""Command-line entry point.

Exit codes: 0 success or expectation match, 1 semantic mismatch or parse
failure, 2 usage or I/O error.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

from . import __version__
from . import ast as A
from .errors import ParseError
from .parser import extract_commands, parse_command, parse_model
from .pipeline import (
    VALID,
    CorpusError,
    Example,
    ReportRow,
    SuiteReport,
    TestCase,
    aggregate,
    classify_suite,
    emit_report,
    list_examples,
    load_example,
    load_suite,
    load_suite_meta,
    write_atomic,
)
from .semantics import to_json
from .solver import DEFAULT_BUDGET, Budget, solve

EXIT_OK, EXIT_MISMATCH, EXIT_USAGE = 0, 1, 2

log = logging.getLogger("alloytest")


class UsageError(Exception):
    pass


@dataclass
class RunConfig:
    corpus: Path
    run_id: str
    prompt: str = "few"
    n: int = 3
    provider: str = "mock"
    repair: bool = False
    jobs: int = 1
    budget: Budget = DEFAULT_BUDGET
    formats: tuple[str, ...] = ("json",)

    def __post_init__(self):
        if self.n < 1:
            raise UsageError("--n must be at least 1")
        if not self.run_id or "/" in self.run_id:
            raise UsageError("--run-id must be a plain name")


def _err(msg: str):
    print(msg, file=sys.stderr)


def _read(path: str) -> str:
    try:
        return Path(path).read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as exc:
        raise UsageError(f"{path}: cannot read file: {exc}") from None


def _split_commands(text: str) -> tuple[str, list[tuple[str, int]]]:
    """Model text with its run commands blanked out, plus each command and its offset."""
    cmds = []
    chars = list(text)
    pos = 0
    for raw, _ in extract_commands(text):
        idx = text.find(raw, pos)
        if idx < 0:
            continue
        cmds.append((raw, idx))
        pos = idx + len(raw)
        for k in range(idx, pos):
            if chars[k] != "\n":
                chars[k] = " "
    return "".join(chars), cmds


def _shift(exc: ParseError, text: str, offset: int) -> str:
    line0 = text.count("\n", 0, offset)
    col0 = offset - (text.rfind("\n", 0, offset) + 1)
    line = exc.span.line + line0
    col = exc.span.col + (col0 if exc.span.line == 1 else 0)
    return f"{line}:{col}: {exc.kind} error: {exc.message}"


# --------------------------------------------------------------------------
# parse / run


def cmd_parse(path: str) -> int:
    text = _read(path)
    model_text, cmds = _split_commands(text)
    try:
        model = parse_model(model_text)
    except ParseError as exc:
        _err(f"{path}:{exc}")
        return EXIT_MISMATCH
    status = EXIT_OK
    for raw, offset in cmds:
        try:
            parse_command(model, raw)
        except ParseError as exc:
            _err(f"{path}:{_shift(exc, text, offset)}")
            status = EXIT_MISMATCH
    if status == EXIT_OK:
        print(f"{path}: ok ({len(model.sigs)} signatures, {len(model.fields)} fields, {len(cmds)} commands)")
    return status


def cmd_run(path: str, name: Optional[str], budget: Budget, witness: bool) -> int:
    text = _read(path)
    try:
        model = parse_model(text)
    except ParseError as exc:
        _err(f"{path}:{exc}")
        return EXIT_MISMATCH
    commands = list(model.commands)
    if name is not None:
        commands = [c for c in commands if c.name == name]
        if not commands:
            _err(f"{path}: no command named '{name}'")
            return EXIT_USAGE
    status = EXIT_OK
    for k, cmd in enumerate(commands):
        r = solve(model, [], cmd, budget)
        label = cmd.name or f"run${k + 1}"
        if r.inconclusive:
            print(f"{label}: INCONCLUSIVE ({r.reason})")
            status = EXIT_MISMATCH
            continue
        if cmd.expect is None:
            verdict = ""
        elif r.sat == (cmd.expect == 1):
            verdict = " (expected)"
        else:
            verdict = " (UNEXPECTED)"
            status = EXIT_MISMATCH
        print(f"{label}: {r.outcome}{verdict}")
        if witness and r.witness is not None:
            print(json.dumps(to_json(r.witness), indent=2))
    return status


# --------------------------------------------------------------------------
# corpus commands


def _examples(cfg: RunConfig) -> list[Example]:
    problems, out = [], []
    for root in list_examples(cfg.corpus):
        try:
            out.append(load_example(root))
        except CorpusError as exc:
            problems.extend(exc.problems)
        except ParseError as exc:
            problems.append(f"{root / 'model.als'}:{exc}")
    if problems:
        raise CorpusError(problems)
    return out


def _repair_suite(model: A.Model, suite: list[TestCase]) -> dict[int, int]:
    """Repair tests in place; returns the per-requirement Syntax count before repair."""
    from .llmgen import repair_syntax

    before: dict[int, int] = {}
    for t in suite:
        try:
            parse_command(model, t.raw)
            before[t.requirement] = before.get(t.requirement, 0) + 1
        except ParseError:
            t.raw, edits = repair_syntax(model, t.raw)
            for e in edits:
                log.info("repair: %s", e)
    return before


def cmd_validate(cfg: RunConfig) -> int:
    examples = _examples(cfg)
    rows: list[ReportRow] = []
    records = []
    cost, tokens, digests = None, {}, set()
    for ex in examples:
        suite = load_suite(ex, cfg.run_id)
        before = _repair_suite(ex.model, suite) if cfg.repair else None
        results = classify_suite(ex.model, ex.requirements, suite, cfg.budget, cfg.jobs)
        pairs = [(t.requirement, r) for t, r in zip(suite, results)]
        part = aggregate(pairs)
        for i, row in zip(sorted({i for i, _ in pairs}), part.rows):
            row.label = f"{ex.name}/{row.label}"
            if before is not None:
                row.syntax_before_repair = before.get(i, 0)
        rows.extend(part.rows)
        for t, r in zip(suite, results):
            records.append({"example": ex.name, "requirement": t.requirement, "stage": r.reached, "passed": r.passed, "detail": r.detail})
        meta = load_suite_meta(ex, cfg.run_id)
        if meta.get("cost") is not None:
            cost = (cost or 0.0) + float(meta["cost"])
        for k, v in meta.get("usage", {}).items():
            tokens[k] = tokens.get(k, 0) + int(v)
        if meta.get("prompt_digest"):
            digests.add(meta["prompt_digest"])
    report = SuiteReport(cfg.run_id, rows, cost, tokens)
    report.provenance = {
        "tool_version": __version__,
        "budget_ms": cfg.budget.time_ms,
        "budget_candidates": cfg.budget.candidates,
        "prompt_digests": sorted(digests),
        "repair": cfg.repair,
    }
    out = cfg.corpus / "reports"
    write_atomic(out / f"{cfg.run_id}.json", emit_report(report, "json"))
    write_atomic(out / f"{cfg.run_id}.tests.json", json.dumps(records, indent=2) + "\n")
    for fmt in cfg.formats:
        if fmt != "json":
            write_atomic(out / f"{cfg.run_id}.{fmt}", emit_report(report, fmt))
    total = report.total
    print(emit_report(report, "md"), end="")
    if cfg.repair:
        print(f"Syntax before repair: {total.syntax_before_repair or 0}, after: {total.syntax}")
    return EXIT_OK


def cmd_detect(cfg: RunConfig) -> int:
    from .mutation import DetectionReport, detection_report, load_wrong_specs

    examples = _examples(cfg)
    combined = DetectionReport(cfg.n)
    for ex in examples:
        suite = load_suite(ex, cfg.run_id)
        results = classify_suite(ex.model, ex.requirements, suite, cfg.budget, cfg.jobs)
        valid: dict[int, list[TestCase]] = {}
        for t, r in zip(suite, results):
            if r.reached == VALID:
                valid.setdefault(t.requirement, []).append(t)
        wrongs = {}
        for i in range(len(ex.requirements)):
            p = ex.root / "wrong_specs" / f"{i}.als"
            if p.is_file():
                try:
                    wrongs[i] = load_wrong_specs(ex.model, p, i)
                except (ParseError, ValueError) as exc:
                    raise CorpusError([f"{p}:{exc}"]) from None
        rep = detection_report(ex.model, ex.requirements, valid, wrongs, cfg.n, cfg.budget)
        for row in rep.rows:
            row.requirement = f"{ex.name}/R{row.requirement}"
            combined.rows.append(row)
    out = cfg.corpus / "reports" / f"{cfg.run_id}.detection.json"
    doc = combined.to_json()
    doc["provenance"] = {"tool_version": __version__, "budget_ms": cfg.budget.time_ms}
    write_atomic(out, json.dumps(doc, indent=2) + "\n")
    print(combined.markdown(), end="")
    return EXIT_OK


def _provider(cfg: RunConfig, args):
    from .llmgen import HTTPProvider, MockProvider, ReplayProvider, load_provider_configs

    if cfg.provider == "replay":
        if not args.replay_dir:
            raise UsageError("--provider replay needs --replay-dir")
        return lambda ex: ReplayProvider(Path(args.replay_dir) / ex.name)
    if cfg.provider == "mock":
        return lambda ex: MockProvider([""])
    if not args.providers:
        raise UsageError(f"provider '{cfg.provider}' needs --providers <toml file>")
    configs = load_provider_configs(args.providers)
    if cfg.provider not in configs:
        raise UsageError(f"provider '{cfg.provider}' is not configured in {args.providers}")
    return lambda ex: HTTPProvider(configs[cfg.provider])


def cmd_generate(cfg: RunConfig, args) -> int:
    from .llmgen import GenerationJob, generate, load_prompt, repair_syntax, save_record, suite_text

    prompt = load_prompt(cfg.prompt)
    make_provider = _provider(cfg, args)
    examples = _examples(cfg)
    for ex in examples:
        if ex.suite_dir(cfg.run_id).exists() and not args.force:
            raise UsageError(f"{ex.suite_dir(cfg.run_id)} already exists (use --force to overwrite)")
    params = {"temperature": args.temperature} if args.temperature is not None else {}
    failures = 0

    def work(ex: Example, i: int):
        job = GenerationJob.of(ex.model_text, ex.requirements, i, cfg.n, cfg.provider, **params)
        record = generate(job, prompt, make_provider(ex))
        d = ex.suite_dir(cfg.run_id)
        save_record(record, d / "records")
        repaired = None
        if cfg.repair:
            repaired = [repair_syntax(ex.model, t.raw)[0] for t in record.tests]
        write_atomic(d / f"{i}.als", suite_text(record, repaired))
        return record

    for ex in examples:
        jobs = range(len(ex.requirements))
        with ThreadPoolExecutor(max_workers=max(1, cfg.jobs)) as pool:
            futures = [pool.submit(work, ex, i) for i in jobs]
        usage: dict = {}
        cost = None
        count = 0
        for f in futures:
            try:
                rec = f.result()
            except Exception as exc:
                failures += 1
                _err(f"{ex.name}: generation failed: {exc}")
                continue
            count += len(rec.tests)
            for k, v in rec.usage.items():
                usage[k] = usage.get(k, 0) + v
            if rec.cost is not None:
                cost = (cost or 0.0) + rec.cost
            if rec.flagged:
                _err(f"{ex.name}: requirement {rec.job.index}: response contained no run command")
        meta = {
            "prompt": prompt.name,
            "prompt_digest": prompt.digest,
            "n": cfg.n,
            "provider": cfg.provider,
            "usage": usage,
            "cost": cost,
            "requested": 2 * cfg.n * len(ex.requirements),
            "extracted": count,
            "repair": cfg.repair,
            "tool_version": __version__,
        }
        write_atomic(ex.suite_dir(cfg.run_id) / "meta.json", json.dumps(meta, indent=2, sort_keys=True) + "\n")
        print(f"{ex.name}: requested {meta['requested']} tests, extracted {count}")
    return EXIT_MISMATCH if failures else EXIT_OK


# --------------------------------------------------------------------------


def _budget(args) -> Budget:
    if getattr(args, "budget_ms", None) is None:
        return DEFAULT_BUDGET
    if args.budget_ms <= 0:
        raise UsageError("--budget-ms must be positive")
    return Budget(time_ms=args.budget_ms, candidates=DEFAULT_BUDGET.candidates)


def _config(args) -> RunConfig:
    formats = tuple(f.strip() for f in args.format.split(",") if f.strip())
    for f in formats:
        if f not in ("json", "csv", "md"):
            raise UsageError(f"unknown report format '{f}'")
    corpus = Path(args.corpus)
    if not corpus.is_dir():
        raise UsageError(f"{corpus}: corpus directory not found")
    return RunConfig(
        corpus=corpus,
        run_id=args.run_id,
        prompt=getattr(args, "prompt", "few"),
        n=getattr(args, "n", 3),
        provider=getattr(args, "provider", "mock"),
        repair=getattr(args, "repair", False),
        jobs=args.jobs,
        budget=_budget(args),
        formats=formats,
    )


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="alloytest", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("parse", help="parse a model file and all of its run commands")
    sp.add_argument("path")

    sp = sub.add_parser("run", help="solve run commands and compare with their expectations")
    sp.add_argument("path")
    sp.add_argument("name", nargs="?", help="command name (default: all commands)")
    sp.add_argument("--budget-ms", type=int)
    sp.add_argument("--witness", action="store_true", help="print witness instances as JSON")

    def corpus_flags(sp):
        sp.add_argument("--corpus", required=True)
        sp.add_argument("--run-id", required=True)
        sp.add_argument("--jobs", type=int, default=1)
        sp.add_argument("--budget-ms", type=int)
        sp.add_argument("--format", default="json", help="comma-separated: json,csv,md")

    sp = sub.add_parser("validate", help="classify a generated suite and write funnel reports")
    corpus_flags(sp)
    sp.add_argument("--repair", action="store_true", help="repair `F = none` arity errors first")

    sp = sub.add_parser("detect", help="measure wrong-spec detection of the valid tests")
    corpus_flags(sp)
    sp.add_argument("--n", type=int, required=True, help="tests per polarity in a complete suite")

    sp = sub.add_parser("generate", help="generate suites with a chat-completion provider")
    corpus_flags(sp)
    sp.add_argument("--prompt", choices=("zero", "one", "few"), default="few")
    sp.add_argument("--n", type=int, default=3)
    sp.add_argument("--provider", default="mock", help="mock, replay, or an id from --providers")
    sp.add_argument("--providers", help="TOML file with provider entries")
    sp.add_argument("--replay-dir", help="stored responses, <dir>/<example>/<i>.txt")
    sp.add_argument("--temperature", type=float)
    sp.add_argument("--repair", action="store_true")
    sp.add_argument("--force", action="store_true", help="overwrite an existing run id")
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        if args.command == "parse":
            return cmd_parse(args.path)
        if args.command == "run":
            return cmd_run(args.path, args.name, _budget(args), args.witness)
        cfg = _config(args)
        if args.command == "validate":
            return cmd_validate(cfg)
        if args.command == "detect":
            return cmd_detect(cfg)
        return cmd_generate(cfg, args)
    except UsageError as exc:
        _err(f"error: {exc}")
        return EXIT_USAGE
    except CorpusError as exc:
        for problem in exc.problems:
            _err(f"corpus error: {problem}")
        return EXIT_USAGE
    except OSError as exc:
        _err(f"error: {exc}")
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
