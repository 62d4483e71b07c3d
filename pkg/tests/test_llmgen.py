import io
import json
import urllib.error

import pytest
from hypothesis import given, settings, strategies as st

from alloytest import ast as A
from alloytest.parser import extract_commands, parse_command, parse_model
from alloytest.pipeline import NEGATIVE, POSITIVE, SYNTAX_FAIL, VALID, classify_test, tests_from_text as parse_suite
from alloytest.llmgen import (
    GenerationJob,
    GenerationRecord,
    HTTPProvider,
    MockProvider,
    ProviderConfig,
    ProviderError,
    ReplayProvider,
    build_user_prompt,
    generate,
    load_prompt,
    load_provider_configs,
    repair_syntax,
    save_record,
    suite_text,
)
from alloytest.llmgen.providers import price

import courses as C
from figures import NEGATIVE as FIG_NEG
from figures import POSITIVE as FIG_POS

BASIC = """sig Reader {
    borrows : set Book
}
sig Book {}"""

REFINED = """sig Reader {
    borrows : set Book
}
sig Member in Reader {}
abstract sig Book {}
sig Novel, Comic extends Book {}"""

ORDERED = """open util/ordering[Rating]
sig Reader {
    borrows : set Book,
    rates : Book -> lone Rating
}
sig Member in Reader {}
abstract sig Book {}
sig Novel, Comic extends Book {}
sig Rating {}"""

# the example requirements, each with an oracle written here
ONE_BORROWER = ("Every book is borrowed by at most one reader", "all b : Book | lone borrows.b")
MEMBERS = ("Only members borrow comics", "all r : Reader | some r.borrows & Comic implies r in Member")
RATED = ("Every reader who rates a book has borrowed it", "all r : Reader, b : Book | some b.(r.rates) implies b in r.borrows")


def _classify(model_text, req, raw, comment):
    text, oracle = req
    model = parse_model(model_text + f"\npred oracle {{ {oracle} }}\n")
    (t,) = parse_suite(f"// {comment}\n{raw}", 0)
    return t, classify_test(model, [A.Requirement(0, text, "oracle")], t)


# --------------------------------------------------------------------------
# prompt variants


def test_zero_shot_has_no_examples():
    p = load_prompt("zero")
    assert extract_commands(p.system_text) == []
    assert "sig " not in p.system_text


def test_one_shot_example():
    p = load_prompt("one-shot")
    assert p.name == "one"
    assert ORDERED in p.system_text
    ((raw, comment),) = extract_commands(p.system_text)
    assert f'"{RATED[0]}"' in p.system_text
    t, r = _classify(ORDERED, RATED, raw, comment)
    assert t.polarity == POSITIVE
    assert r.reached == VALID


FEW_CLAIMS = [
    ("OneBorrowerEach", BASIC, ONE_BORROWER, POSITIVE),
    ("SharedBook", BASIC, ONE_BORROWER, NEGATIVE),
    ("NothingBorrowed", BASIC, ONE_BORROWER, POSITIVE),
    ("NonMemberComic", REFINED, MEMBERS, NEGATIVE),
    ("RatedAfterBorrowing", ORDERED, RATED, POSITIVE),
]


def test_few_shot_layout():
    p = load_prompt("few")
    for model_text in (BASIC, REFINED, ORDERED):
        assert model_text in p.system_text
    names = [parse_command(parse_model(ORDERED), raw).name for raw, _ in extract_commands(p.system_text)]
    assert names == [c[0] for c in FEW_CLAIMS]


@pytest.mark.parametrize("k", range(len(FEW_CLAIMS)))
def test_few_shot_examples_classify_as_claimed(k):
    name, model_text, req, polarity = FEW_CLAIMS[k]
    raw, comment = extract_commands(load_prompt("few").system_text)[k]
    t, r = _classify(model_text, req, raw, comment)
    assert t.parsed.name == name
    assert t.polarity == polarity
    assert t.parsed.expect == (1 if polarity == POSITIVE else 0)
    assert r.reached == VALID, r.detail


def test_digests_differ():
    digests = {load_prompt(v).digest for v in ("zero", "one", "few")}
    assert len(digests) == 3


def test_unknown_variant():
    with pytest.raises(ValueError):
        load_prompt("many")


# --------------------------------------------------------------------------
# user prompt


REQS = ["All students are enrolled", "Only professors teach", "Grades go to enrolled students"]


def test_user_prompt_first_requirement():
    text = build_user_prompt(GenerationJob.of(C.MODEL, REQS, 0, 3))
    head, model_text = text.split("\n\n", 1)
    assert head == f'Generate 3 positive and 3 negative instances for the requirement "{REQS[0]}" for the following model.'
    assert model_text.strip() == C.MODEL.strip()


def test_user_prompt_second_requirement():
    head = build_user_prompt(GenerationJob.of(C.MODEL, REQS, 1, 2)).split("\n\n", 1)[0]
    assert head.endswith(f'All instances must also satisfy the requirement "{REQS[0]}".')


def test_user_prompt_lists_every_previous_requirement_once():
    head = build_user_prompt(GenerationJob.of(C.MODEL, REQS, 2, 1)).split("\n\n", 1)[0]
    assert head.endswith(f'the requirements "{REQS[0]}", and "{REQS[1]}".')
    for r in REQS:
        assert head.count(f'"{r}"') == 1


def test_job_validation():
    with pytest.raises(ValueError):
        GenerationJob.of(C.MODEL, REQS, 0, 0)
    with pytest.raises(ValueError):
        GenerationJob.of(C.MODEL, REQS, 3, 1)


# --------------------------------------------------------------------------
# generation with offline providers


def test_mock_generation_extracts_both_figures():
    provider = MockProvider(["```alloy\n" + FIG_POS + "\n" + FIG_NEG + "\n```"])
    job = GenerationJob.of(C.MODEL, REQS, 0, 1, temperature=0.0)
    rec = generate(job, load_prompt("few"), provider)
    assert [t.comment for t in rec.tests] == [FIG_POS.splitlines()[0][3:], FIG_NEG.splitlines()[0][3:]]
    # neither comment names a polarity
    assert [t.polarity for t in rec.tests] == [None, None]
    assert not rec.flagged
    system, user, params = provider.calls[0]
    assert system == load_prompt("few").system_text
    assert user == rec.user_prompt
    assert params == {"temperature": 0.0}


def test_prose_response_is_flagged():
    rec = generate(GenerationJob.of(C.MODEL, REQS, 0, 1), load_prompt("zero"), MockProvider(["I cannot run commands here."]))
    assert rec.tests == []
    assert rec.flagged


def test_record_round_trip(tmp_path):
    rec = generate(GenerationJob.of(C.MODEL, REQS, 1, 1, temperature=0.5), load_prompt("one"), MockProvider([FIG_POS]))
    path = save_record(rec, tmp_path)
    assert (tmp_path / "1.response.txt").read_text() == FIG_POS
    doc = json.loads(path.read_text())
    again = GenerationRecord.from_json(doc)
    assert again == rec
    assert doc["flagged"] is False


def test_suite_text_keeps_comments():
    rec = generate(GenerationJob.of(C.MODEL, REQS, 0, 1), load_prompt("few"), MockProvider([FIG_POS + "\n" + FIG_NEG]))
    again = parse_suite(suite_text(rec), 0)
    assert [(t.raw, t.comment) for t in again] == [(t.raw, t.comment) for t in rec.tests]


def test_replay_provider(tmp_path):
    (tmp_path / "2.txt").write_text(FIG_NEG)
    rec = generate(GenerationJob.of(C.MODEL, REQS, 2, 1), load_prompt("zero"), ReplayProvider(tmp_path))
    assert rec.raw_response == FIG_NEG
    with pytest.raises(ProviderError) as exc:
        generate(GenerationJob.of(C.MODEL, REQS, 1, 1), load_prompt("zero"), ReplayProvider(tmp_path))
    assert exc.value.kind == "missing"


# --------------------------------------------------------------------------
# HTTP provider, with a fake transport


class _Resp(io.BytesIO):
    def __enter__(self):
        return self

    def __exit__(self, *exc):
        return False


def _body(text="run {} expect 1", usage=None):
    doc = {"model": "m-1", "choices": [{"message": {"content": text}}]}
    if usage:
        doc["usage"] = usage
    return json.dumps(doc).encode()


def _http_error(code):
    return urllib.error.HTTPError("http://x", code, "err", {}, io.BytesIO(b"details"))


def _config(**kw):
    base = dict(name="p", endpoint="http://x/chat/completions", model="m", prices={"input": 1.0, "output": 2.0, "reasoning": 2.0})
    base.update(kw)
    return ProviderConfig(**base)


def test_http_retries_transient_failures():
    outcomes = [_http_error(429), urllib.error.URLError("reset"), _Resp(_body(usage={"prompt_tokens": 10, "completion_tokens": 5}))]
    sleeps = []
    requests = []

    def opener(req, timeout):
        requests.append(json.loads(req.data))
        out = outcomes.pop(0)
        if isinstance(out, Exception):
            raise out
        return out

    p = HTTPProvider(_config(backoff=1.0), opener=opener, sleep=sleeps.append)
    resp = p.complete("sys", "user", {"temperature": 0.2, "top_k": 3})
    assert resp.text == "run {} expect 1"
    assert sleeps == [1.0, 2.0]
    assert resp.usage == {"input": 10, "output": 5, "reasoning": 0}
    assert resp.cost == pytest.approx(20 / 1_000_000)
    # unsupported parameters are dropped and recorded as such
    assert resp.params_applied == {"temperature": 0.2}
    assert "top_k" not in requests[-1]
    assert requests[-1]["messages"][0] == {"role": "system", "content": "sys"}


def test_http_gives_up_after_retries():
    p = HTTPProvider(_config(max_retries=2), opener=lambda req, timeout: (_ for _ in ()).throw(_http_error(503)), sleep=lambda s: None)
    with pytest.raises(ProviderError) as exc:
        p.complete("s", "u", {})
    assert exc.value.status == 503


def test_http_auth_failure_is_not_retried():
    calls = []

    def opener(req, timeout):
        calls.append(req)
        raise _http_error(401)

    with pytest.raises(ProviderError) as exc:
        HTTPProvider(_config(), opener=opener, sleep=lambda s: None).complete("s", "u", {})
    assert exc.value.kind == "auth"
    assert len(calls) == 1


def test_http_missing_key(monkeypatch):
    monkeypatch.delenv("ALLOYTEST_TEST_KEY", raising=False)
    with pytest.raises(ProviderError) as exc:
        HTTPProvider(_config(api_key_env="ALLOYTEST_TEST_KEY")).complete("s", "u", {})
    assert exc.value.kind == "auth"


def test_http_sends_bearer_key(monkeypatch):
    monkeypatch.setenv("ALLOYTEST_TEST_KEY", "k123")
    seen = []

    def opener(req, timeout):
        seen.append(req.get_header("Authorization"))
        return _Resp(_body())

    HTTPProvider(_config(api_key_env="ALLOYTEST_TEST_KEY"), opener=opener).complete("s", "u", {})
    assert seen == ["Bearer k123"]


def test_http_malformed_response():
    p = HTTPProvider(_config(), opener=lambda req, timeout: _Resp(b'{"choices": []}'))
    with pytest.raises(ProviderError) as exc:
        p.complete("s", "u", {})
    assert exc.value.kind == "malformed"


def test_reasoning_tokens_are_split_out():
    usage = {"prompt_tokens": 100, "completion_tokens": 50, "completion_tokens_details": {"reasoning_tokens": 30}}
    resp = HTTPProvider(_config(), opener=lambda req, timeout: _Resp(_body(usage=usage))).complete("s", "u", {})
    assert resp.usage == {"input": 100, "output": 20, "reasoning": 30}


def test_provider_configs(tmp_path):
    p = tmp_path / "providers.toml"
    p.write_text(
        '[providers.small]\nendpoint = "http://h/v1/chat/completions"\nmodel = "s-1"\n'
        'api_key_env = "KEY"\nsupported_params = []\n[providers.small.prices]\ninput = 0.5\noutput = 1.5\n'
    )
    cfg = load_provider_configs(p)["small"]
    assert cfg.model == "s-1"
    assert cfg.supported_params == ()
    assert price({"input": 2_000_000, "output": 1_000_000}, cfg.prices) == pytest.approx(2.5)
    assert price({"input": 1}, {}) is None


# --------------------------------------------------------------------------
# arity repair


@pytest.fixture(scope="module")
def model():
    return parse_model(C.MODEL)


def test_repair_binary_field(model):
    raw = FIG_POS.split("\n", 1)[1].replace("teaches = none->none", "teaches = none")
    fixed, edits = repair_syntax(model, raw)
    assert "teaches = none->none" in fixed
    assert len(edits) == 1 and "teaches" in edits[0]
    parse_command(model, fixed)


def test_repair_ternary_field(model):
    raw = FIG_POS.split("\n", 1)[1].replace("grades = none->none->none", "grades = none")
    fixed, _ = repair_syntax(model, raw)
    assert "grades = none->none->none" in fixed


def test_repair_no_form(model):
    raw = FIG_POS.split("\n", 1)[1].replace("teaches = none->none", "teaches = no teaches")
    fixed, _ = repair_syntax(model, raw)
    assert "teaches = none->none" in fixed


def test_repair_leaves_signatures_alone(model):
    raw = FIG_POS.split("\n", 1)[1].replace("teaches = none->none", "teaches = none")
    fixed, _ = repair_syntax(model, raw)
    assert "Professor = none" in fixed
    assert "Professor = none->none" not in fixed


def test_repair_is_a_no_op_on_clean_input(model):
    raw = FIG_POS.split("\n", 1)[1]
    assert repair_syntax(model, raw) == (raw, [])


def test_repair_skips_comments(model):
    raw = "// teaches = none\n" + FIG_POS.split("\n", 1)[1].replace("teaches = none->none", "teaches = none")
    fixed, edits = repair_syntax(model, raw)
    assert fixed.startswith("// teaches = none\n")
    assert len(edits) == 1


def test_repaired_figure_is_valid(model):
    reqs = [A.Requirement(i, r["text"], r["oracle"]) for i, r in enumerate(C.REQUIREMENTS)]
    broken = FIG_POS.replace("teaches = none->none", "teaches = none")
    (t,) = parse_suite(broken, 0)
    assert classify_test(model, reqs, t).reached == SYNTAX_FAIL
    fixed, _ = repair_syntax(model, t.raw)
    (t2,) = parse_suite(fixed, 0)
    assert classify_test(model, reqs, t2).reached == VALID


_EMPTY_FIELDS = {
    "teaches": "none->none",
    "Person <: projects": "none->none",
    "Course <: projects": "none->none",
    "grades": "none->none->none",
}


@settings(max_examples=100, deadline=None)
@given(st.sets(st.sampled_from(sorted(_EMPTY_FIELDS))), st.booleans())
def test_repair_is_idempotent(broken, no_form):
    model = parse_model(C.MODEL)
    raw = FIG_POS.split("\n", 1)[1]
    for lhs in broken:
        rhs = f"no {lhs.split()[-1]}" if no_form else "none"
        raw = raw.replace(f"{lhs} = {_EMPTY_FIELDS[lhs]}", f"{lhs} = {rhs}")
    once, edits = repair_syntax(model, raw)
    assert len(edits) == len(broken)
    assert once == FIG_POS.split("\n", 1)[1]
    assert repair_syntax(model, once) == (once, [])
