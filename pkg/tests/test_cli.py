import json

import pytest
import yaml

from alloytest.cli import EXIT_MISMATCH, EXIT_OK, EXIT_USAGE, main

import courses as C
from figures import COURSES, NEGATIVE, POSITIVE, WRONG_1, courses_with


def run(capsys, *argv):
    rc = main(list(argv))
    out, err = capsys.readouterr()
    return rc, out, err


# --------------------------------------------------------------------------
# parse / run


def test_parse_ok(tmp_path, capsys):
    p = tmp_path / "m.als"
    p.write_text(COURSES + "\n" + POSITIVE + NEGATIVE)
    rc, out, _ = run(capsys, "parse", str(p))
    assert rc == EXIT_OK
    assert out.strip() == f"{p}: ok (6 signatures, 5 fields, 2 commands)"


def test_parse_error_has_line_and_column(tmp_path, capsys):
    p = tmp_path / "m.als"
    src = COURSES + "\n" + POSITIVE.replace("teaches = none->none", "teaches = none")
    p.write_text(src)
    rc, _, err = run(capsys, "parse", str(p))
    assert rc == EXIT_MISMATCH
    line = src.splitlines().index("    teaches = none") + 1
    assert err.startswith(f"{p}:{line}:")
    assert "arity" in err


def test_parse_missing_file(tmp_path, capsys):
    rc, _, err = run(capsys, "parse", str(tmp_path / "nope.als"))
    assert rc == EXIT_USAGE


def test_run_expected(tmp_path, capsys):
    p = tmp_path / "m.als"
    p.write_text(courses_with("all p : Person | some p.enrolled implies p in Student") + "\n" + POSITIVE + NEGATIVE)
    rc, out, _ = run(capsys, "run", str(p))
    assert rc == EXIT_OK
    assert out.splitlines() == ["Positive: SAT (expected)", "Negative: UNSAT (expected)"]


def test_run_unexpected(tmp_path, capsys):
    p = tmp_path / "m.als"
    p.write_text(courses_with(WRONG_1) + "\n" + NEGATIVE)
    rc, out, _ = run(capsys, "run", str(p), "Negative")
    assert rc == EXIT_MISMATCH
    assert out.strip() == "Negative: SAT (UNEXPECTED)"


def test_run_witness(tmp_path, capsys):
    p = tmp_path / "m.als"
    p.write_text(COURSES + "\n" + POSITIVE)
    rc, out, _ = run(capsys, "run", str(p), "Positive", "--witness")
    assert rc == EXIT_OK
    doc = json.loads(out.split("\n", 1)[1])
    assert doc


def test_run_unknown_command(tmp_path, capsys):
    p = tmp_path / "m.als"
    p.write_text(COURSES + "\n" + POSITIVE)
    rc, _, err = run(capsys, "run", str(p), "Nothing")
    assert rc == EXIT_USAGE


def test_bad_usage(capsys):
    assert run(capsys)[0] == EXIT_USAGE
    assert run(capsys, "frobnicate")[0] == EXIT_USAGE
    assert run(capsys, "--version")[0] == EXIT_OK


# --------------------------------------------------------------------------
# validate / detect


@pytest.fixture
def corpus(tmp_path):
    root = tmp_path / "corpus"
    root.mkdir()
    C.write_example(root, run_id="r1", suites={1: C.suite_text()})
    return root


def test_validate_funnel(corpus, capsys):
    rc, out, _ = run(capsys, "validate", "--corpus", str(corpus), "--run-id", "r1", "--format", "json,csv,md")
    assert rc == EXIT_OK
    assert "| courses/R1 | 6 | 5 | 4 | 3 | 2 | 33% |" in out
    doc = json.loads((corpus / "reports" / "r1.json").read_text())
    (row,) = doc["rows"]
    assert [row[k] for k in ("tests", "syntax", "consistent", "previous", "valid")] == [6, 5, 4, 3, 2]
    for suffix in ("json", "csv", "md", "tests.json"):
        assert (corpus / "reports" / f"r1.{suffix}").is_file()
    records = json.loads((corpus / "reports" / "r1.tests.json").read_text())
    assert [r["stage"] for r in records] == C.FIXTURE_STAGES
    assert doc["provenance"]["repair"] is False


def test_validate_with_repair(corpus, capsys):
    rc, out, _ = run(capsys, "validate", "--corpus", str(corpus), "--run-id", "r1", "--repair")
    assert rc == EXIT_OK
    assert "Syntax before repair: 5, after: 6" in out


def test_validate_missing_run(corpus, capsys):
    rc, out, _ = run(capsys, "validate", "--corpus", str(corpus), "--run-id", "absent")
    assert rc == EXIT_OK
    assert len(out.strip().splitlines()) == 2
    assert json.loads((corpus / "reports" / "absent.json").read_text())["rows"] == []


def test_validate_bad_format(corpus, capsys):
    assert run(capsys, "validate", "--corpus", str(corpus), "--run-id", "r1", "--format", "xml")[0] == EXIT_USAGE


def test_validate_missing_corpus(tmp_path, capsys):
    assert run(capsys, "validate", "--corpus", str(tmp_path / "x"), "--run-id", "r1")[0] == EXIT_USAGE


def test_corpus_error(corpus, capsys):
    (corpus / "courses" / "requirements.yaml").write_text(yaml.safe_dump([{"text": "t", "oracle": "ghost"}]))
    rc, _, err = run(capsys, "validate", "--corpus", str(corpus), "--run-id", "r1")
    assert rc == EXIT_USAGE
    assert "ghost" in err


def test_detect(tmp_path, capsys):
    root = tmp_path / "corpus"
    root.mkdir()
    d = C.write_example(root, run_id="r", suites={0: C.suite_text(C.REQ0_POOL[:4])})
    (d / "wrong_specs").mkdir()
    (d / "wrong_specs" / "0.als").write_text(
        "".join(f"pred w_{name} {{ {text} }}\n" for name, (text, _) in C.WRONG_REQ0.items())
    )
    rc, out, _ = run(capsys, "detect", "--corpus", str(root), "--run-id", "r", "--n", "2")
    assert rc == EXIT_OK
    doc = json.loads((root / "reports" / "r.detection.json").read_text())
    missed = sum(1 for _, hits in C.WRONG_REQ0.values() if not hits & {0, 1, 2, 3})
    assert doc["Missed"] == missed
    assert doc["Wrong"] == len(C.WRONG_REQ0)
    assert doc["Mean %"] == pytest.approx(100 * missed / len(C.WRONG_REQ0))


def test_detect_bad_wrong_spec_file(corpus, capsys):
    (corpus / "courses" / "wrong_specs").mkdir()
    (corpus / "courses" / "wrong_specs" / "0.als").write_text("pred w { some ghost }\n")
    rc, _, err = run(capsys, "detect", "--corpus", str(corpus), "--run-id", "r1", "--n", "1")
    assert rc == EXIT_USAGE
    assert "0.als" in err


# --------------------------------------------------------------------------
# generate


def _replay_dir(tmp_path, responses):
    d = tmp_path / "responses" / "courses"
    d.mkdir(parents=True)
    for i, text in responses.items():
        (d / f"{i}.txt").write_text(text)
    return d.parent


def test_generate_replay_is_deterministic(tmp_path, capsys):
    root = tmp_path / "corpus"
    root.mkdir()
    C.write_example(root)
    replay = _replay_dir(tmp_path, {0: POSITIVE + NEGATIVE, 1: "no code here", 2: C.suite_text(C.REQ0_POOL[:1])})
    args = ["generate", "--corpus", str(root), "--provider", "replay", "--replay-dir", str(replay), "--n", "1"]
    rc, out, err = run(capsys, *args, "--run-id", "a")
    assert rc == EXIT_OK
    assert "courses: requested 6 tests, extracted 3" in out
    assert "requirement 1: response contained no run command" in err
    assert run(capsys, *args, "--run-id", "b")[0] == EXIT_OK
    suites = root / "courses" / "suites"
    for i in range(3):
        assert (suites / "a" / f"{i}.als").read_bytes() == (suites / "b" / f"{i}.als").read_bytes()
    meta = json.loads((suites / "a" / "meta.json").read_text())
    assert meta["prompt"] == "few" and meta["requested"] == 6 and meta["extracted"] == 3
    assert (suites / "a" / "records" / "0.record.json").is_file()
    # the generated suite feeds straight into validation
    rc, out, _ = run(capsys, "validate", "--corpus", str(root), "--run-id", "a")
    assert "| courses/R0 | 2 | 2 | 2 | 2 | 2 |" in out


def test_generate_refuses_existing_run(tmp_path, capsys):
    root = tmp_path / "corpus"
    root.mkdir()
    C.write_example(root, run_id="r")
    rc, _, err = run(capsys, "generate", "--corpus", str(root), "--run-id", "r")
    assert rc == EXIT_USAGE
    assert "already exists" in err
    assert run(capsys, "generate", "--corpus", str(root), "--run-id", "r", "--force")[0] == EXIT_OK


def test_generate_with_repair(tmp_path, capsys):
    root = tmp_path / "corpus"
    root.mkdir()
    C.write_example(root)
    broken = POSITIVE.replace("teaches = none->none", "teaches = none")
    replay = _replay_dir(tmp_path, {i: broken for i in range(3)})
    rc, _, _ = run(capsys, "generate", "--corpus", str(root), "--run-id", "r", "--provider", "replay", "--replay-dir", str(replay), "--repair")
    assert rc == EXIT_OK
    text = (root / "courses" / "suites" / "r" / "0.als").read_text()
    assert "teaches = none->none" in text
    # the stored raw response is untouched
    assert (root / "courses" / "suites" / "r" / "records" / "0.response.txt").read_text() == broken


def test_generate_missing_response_fails(tmp_path, capsys):
    root = tmp_path / "corpus"
    root.mkdir()
    C.write_example(root)
    replay = _replay_dir(tmp_path, {0: POSITIVE})
    rc, _, err = run(capsys, "generate", "--corpus", str(root), "--run-id", "r", "--provider", "replay", "--replay-dir", str(replay))
    assert rc == EXIT_MISMATCH
    assert err.count("generation failed") == 2


def test_requested_count_for_a_large_example(tmp_path, capsys):
    root = tmp_path / "corpus"
    root.mkdir()
    d = C.write_example(root)
    (d / "requirements.yaml").write_text(yaml.safe_dump([{"text": f"requirement {k}", "oracle": "inv1"} for k in range(43)]))
    rc, out, _ = run(capsys, "generate", "--corpus", str(root), "--run-id", "big", "--n", "3", "--jobs", "4")
    assert rc == EXIT_OK
    assert json.loads((d / "suites" / "big" / "meta.json").read_text())["requested"] == 258
    assert len(list((d / "suites" / "big").glob("*.als"))) == 43


def test_generate_usage_errors(tmp_path, capsys):
    root = tmp_path / "corpus"
    root.mkdir()
    C.write_example(root)
    base = ["generate", "--corpus", str(root), "--run-id"]
    assert run(capsys, *base, "x", "--provider", "replay")[0] == EXIT_USAGE
    assert run(capsys, *base, "y", "--provider", "remote")[0] == EXIT_USAGE
    assert run(capsys, *base, "z", "--n", "0")[0] == EXIT_USAGE
    assert run(capsys, *base, "../up")[0] == EXIT_USAGE
