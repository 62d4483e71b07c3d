"""Acceptance criteria, one test per criterion.

Run with ``pytest tests/test_acceptance.py``; the terminal summary prints one
PASS/FAIL line per criterion.
"""
import itertools
import random
import time

import pytest
from hypothesis import given, settings, strategies as st

from alloytest import ast as A
from alloytest.errors import ParseError
from alloytest.llmgen import load_prompt, repair_syntax
from alloytest.mutation import WrongSpec, detect, detect_detail
from alloytest.parser import extract_commands, parse_command, parse_formula, parse_model
from alloytest.pipeline import (
    INCONCLUSIVE,
    ORACLE_FAIL,
    PREVIOUS_FAIL,
    STAGES,
    SYNTAX_FAIL,
    VALID,
    StageResult,
    aggregate,
    classify_test,
    oracle_formula,
    replay_classifications,
    tests_from_text as parse_suite,
    validate_suite,
)
from alloytest.render import render
from alloytest.solver import SAT, UNSAT, is_satisfiable_by_enumeration, solve

import courses as C
from figures import CARS, COURSES, INSTANCE1, NEGATIVE, ORACLE, POSITIVE, WRONG_1, WRONG_2, courses_with
from randmodels import describe, random_cases

# criterion number -> one-line description, printed by the terminal summary hook
CRITERIA = {
    1: "worked example: golden outcomes and detections, under 1 s",
    2: "solver agrees with enumeration on >= 1000 random cases, under 60 s",
    3: "fixture funnel 6/5/4/3/2 and monotone funnel on random suites",
    4: "seeded `F = none` corpus: 0% Syntax before repair, 100% after",
    5: "table replay (degraded: no per-test data; arithmetic replay plus criteria 1 and 3)",
    6: "detection is monotone over nested suites; the oracle is never detected",
    7: "10^5 random byte strings parse without crashing; figure sources round-trip",
}


def _reqs():
    return [A.Requirement(i, r["text"], r["oracle"]) for i, r in enumerate(C.REQUIREMENTS)]


# --------------------------------------------------------------------------
# 1


def check_worked_example():
    start = time.perf_counter()
    pos_src, neg_src = POSITIVE, NEGATIVE
    with_oracle = parse_model(courses_with(ORACLE))
    assert solve(with_oracle, [], parse_command(with_oracle, pos_src)).outcome == SAT
    assert solve(with_oracle, [], parse_command(with_oracle, neg_src)).outcome == UNSAT

    # both tests are Valid when the oracle is a requirement predicate
    model = parse_model(C.MODEL)
    reqs = _reqs()
    suite = parse_suite(pos_src + neg_src, 0)
    assert [classify_test(model, reqs, t).reached for t in suite] == [VALID, VALID]

    # wrong spec 1 turns the negative test SAT; wrong spec 2 changes nothing
    w1 = parse_model(courses_with(WRONG_1))
    assert solve(w1, [], parse_command(w1, pos_src)).outcome == SAT
    assert solve(w1, [], parse_command(w1, neg_src)).outcome == SAT
    w2 = parse_model(courses_with(WRONG_2))
    assert solve(w2, [], parse_command(w2, pos_src)).outcome == SAT
    assert solve(w2, [], parse_command(w2, neg_src)).outcome == UNSAT

    d1 = detect_detail(model, reqs, 0, suite, WrongSpec(0, parse_formula(model, WRONG_1)))
    assert d1.detected is True and d1.test_index == 1
    assert detect(model, reqs, 0, suite, WrongSpec(0, parse_formula(model, WRONG_2))) is False
    return time.perf_counter() - start


def test_criterion_1_worked_example():
    elapsed = check_worked_example()
    assert elapsed < 1.0, f"{elapsed:.2f}s"


# --------------------------------------------------------------------------
# 2


def test_criterion_2_solver_matches_enumeration():
    start = time.perf_counter()
    cases = random_cases(seed=20240601, count=1000)
    mismatches = []
    for model, cmd in cases:
        expected = is_satisfiable_by_enumeration(model, [cmd.body], cmd.scope_map, cmd.default_bound)
        for fast in (True, False):
            if solve(model, [], cmd, fast_path=fast).sat != expected:
                mismatches.append(describe(model, cmd))
    elapsed = time.perf_counter() - start
    assert len(cases) >= 1000
    assert not mismatches, mismatches[0]
    assert elapsed < 60.0, f"{elapsed:.1f}s"


# --------------------------------------------------------------------------
# 3


_stage = st.sampled_from(STAGES).flatmap(
    lambda s: st.builds(StageResult, st.just(s), passed=st.integers(1, 3)) if s == INCONCLUSIVE else st.just(StageResult(s))
)


def check_funnel():
    model = parse_model(C.MODEL)
    reqs = _reqs()
    report = validate_suite(model, reqs, parse_suite(C.suite_text(), 1))
    assert report.total.funnel() == (6, 5, 4, 3, 2)

    @settings(max_examples=300, database=None)
    @given(st.lists(st.tuples(st.integers(0, 4), _stage), max_size=60))
    def monotone_on_labels(pairs):
        rep = aggregate(pairs)
        for row in [*rep.rows, rep.total]:
            t, s, c, p, v = row.funnel()
            assert t >= s >= c >= p >= v >= 0

    @settings(max_examples=30, deadline=None, database=None)
    @given(st.lists(st.integers(0, len(C.FIXTURE_SUITE) - 1), min_size=1, max_size=10))
    def monotone_on_classified_suites(picks):
        suite = [parse_suite(C.suite_text([C.FIXTURE_SUITE[k]]), 1)[0] for k in picks]
        t, s, c, p, v = validate_suite(model, reqs, suite).total.funnel()
        assert t == len(picks) and t >= s >= c >= p >= v

    monotone_on_labels()
    monotone_on_classified_suites()


def test_criterion_3_funnel():
    check_funnel()


# --------------------------------------------------------------------------
# 4


_EMPTY = {
    "teaches": "none->none",
    "Person <: projects": "none->none",
    "Course <: projects": "none->none",
    "grades": "none->none->none",
}


def _seeded_corpus():
    """(clean, bugged) command pairs: every nonempty subset of the empty fields, in both bug forms."""
    clean = [POSITIVE, NEGATIVE] + [raw for _, raw in C.REQ0_POOL]
    pairs = []
    for src in clean:
        raw = src.split("\n", 1)[1] if src.startswith("//") else src
        present = [f for f, rhs in _EMPTY.items() if f"{f} = {rhs}" in raw]
        for k in range(1, len(present) + 1):
            for subset in itertools.combinations(present, k):
                for no_form in (False, True):
                    bugged = raw
                    for f in subset:
                        rhs = f"no {f.split()[-1]}" if no_form else "none"
                        bugged = bugged.replace(f"{f} = {_EMPTY[f]}", f"{f} = {rhs}")
                    pairs.append((raw, bugged))
    return pairs


def _parses(model, raw):
    try:
        parse_command(model, raw)
        return True
    except ParseError:
        return False


def test_criterion_4_repair():
    model = parse_model(C.MODEL)
    pairs = _seeded_corpus()
    assert len(pairs) >= 50
    before = sum(_parses(model, bugged) for _, bugged in pairs)
    repaired = [repair_syntax(model, bugged)[0] for _, bugged in pairs]
    after = sum(_parses(model, r) for r in repaired)
    assert before == 0, f"{before}/{len(pairs)} seeded commands parsed before repair"
    assert after == len(pairs), f"{after}/{len(pairs)} after repair"
    assert all(r == clean for r, (clean, _) in zip(repaired, pairs))
    assert all(repair_syntax(model, r) == (r, []) for r in repaired)
    for clean, _ in pairs:
        assert repair_syntax(model, clean) == (clean, [])


# --------------------------------------------------------------------------
# 5


def test_criterion_5_table_replay_degraded(capsys):
    with capsys.disabled():
        print(
            "\ncriterion 5: the per-test classification data behind the reference result tables is not"
            " available offline; running the degraded form (criteria 1 and 3) plus an"
            " arithmetic replay of stage labels with the reference few-shot funnel."
        )
    # arithmetic only: labels chosen to have that funnel, not the reference data
    stages = [SYNTAX_FAIL] * 3 + [PREVIOUS_FAIL] * 3 + [ORACLE_FAIL] * 5 + [VALID] * 247
    total = replay_classifications([{"requirement": k % 43, "stage": s} for k, s in enumerate(stages)]).total
    assert total.funnel() == (258, 255, 255, 252, 247)
    assert round(total.percent) == 96
    check_funnel()
    assert check_worked_example() < 1.0


# --------------------------------------------------------------------------
# 6


def test_criterion_6_detection_monotone():
    model = parse_model(C.MODEL)
    reqs = _reqs()
    pool = [parse_suite(C.suite_text([t]), 0)[0] for t in C.REQ0_POOL]
    pool += parse_suite(POSITIVE + NEGATIVE, 0)
    assert all(classify_test(model, reqs, t).reached == VALID for t in pool)
    wrongs = [parse_formula(model, text) for text, _ in C.WRONG_REQ0.values()]
    wrongs += [parse_formula(model, WRONG_1), parse_formula(model, WRONG_2)]
    assert len(wrongs) >= 5

    # single-test detections predict the result on any subset
    hits = [[detect(model, reqs, 0, [t], WrongSpec(0, w)) for t in pool] for w in wrongs]
    subsets = [frozenset(s) for k in range(len(pool) + 1) for s in itertools.combinations(range(len(pool)), k)]
    rng = random.Random(6)
    checked = 0
    for w, row in zip(wrongs, hits):
        for s in rng.sample(subsets, 12):
            suite = [pool[k] for k in sorted(s)]
            got = detect(model, reqs, 0, suite, WrongSpec(0, w))
            assert got == any(row[k] for k in s)
            extra = [pool[k] for k in range(len(pool)) if k not in s and rng.random() < 0.5]
            assert not got or detect(model, reqs, 0, suite + extra, WrongSpec(0, w))
            checked += 1
    oracle = WrongSpec(0, oracle_formula(model, reqs[0]))
    assert detect(model, reqs, 0, pool, oracle) is False
    assert checked > 0


# --------------------------------------------------------------------------
# 7


_TOKENS = b"sig run pred fact open abstract extends in one lone some no all disj none univ iden expect for but exactly {}[]()|:,.-><:+&=!~^*# 0123 abc \n\t//*"


def test_criterion_7_parser_robustness():
    model = parse_model(C.MODEL)
    rng = random.Random(77)
    crashes = []
    for k in range(100_000):
        n = rng.randrange(80)
        if k % 2:
            data = bytes(rng.randrange(256) for _ in range(n))
        else:
            data = bytes(rng.choice(_TOKENS) for _ in range(n))
        text = data.decode("utf-8", "replace")
        for parse in (parse_model, lambda s: parse_command(model, s)):
            try:
                parse(text)
            except ParseError:
                pass
            except Exception as exc:  # anything else is a crash
                crashes.append((data, repr(exc)))
    assert not crashes, crashes[:3]

    for src in (COURSES, CARS):
        m = parse_model(src)
        assert parse_model(render(m)) == m
    courses = parse_model(COURSES)
    for src in (POSITIVE, NEGATIVE):
        cmd = parse_command(courses, src)
        assert parse_command(courses, render(cmd)) == cmd
    cars = parse_model(CARS)
    cmd = parse_command(cars, INSTANCE1)
    assert parse_command(cars, render(cmd)) == cmd
    for variant in ("one", "few"):
        assert extract_commands(load_prompt(variant).system_text)
