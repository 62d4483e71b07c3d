"""Recursive-descent parser and name resolver for the Alloy subset.

Parsing happens in two passes.  The first builds a raw tree in which
expressions and formulas share one precedence grammar (as in Alloy itself).
The second resolves names against the declarations, inlines predicate and
function calls, disambiguates overloaded fields and checks arities.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Optional, Union

from . import ast as A
from .ast import AlloyTypeError, RelType, binary_type
from .errors import ParseError, SourceSpan, UNKNOWN_SPAN

__all__ = [
    "ParseError",
    "SourceSpan",
    "lex",
    "parse_model",
    "parse_command",
    "parse_expr",
    "parse_formula",
    "parse_preds",
    "extract_commands",
]

# --------------------------------------------------------------------------
# lexer

KEYWORDS = {
    "abstract", "all", "and", "as", "assert", "but", "check", "disj", "else", "exactly",
    "expect", "extends", "fact", "for", "fun", "iden", "iff", "implies", "in", "let", "lone",
    "module", "no", "none", "not", "one", "open", "or", "pred", "run", "set", "sig", "some",
    "sum", "univ", "seq",
}

SYMBOLS = [
    "<=>", "=>", "->", "<:", ":>", "!=", "&&", "||", "++", ">=", "=<", "<=",
    "{", "}", "(", ")", "[", "]", ",", ":", "|", ".", "+", "-", "&", "~", "^", "*",
    "=", "!", "#", "<", ">", "@",
]

_IDENT = re.compile(r"[A-Za-z_][A-Za-z0-9_'\"]*(?:/[A-Za-z_][A-Za-z0-9_'\"]*)*")
_NUMBER = re.compile(r"[0-9]+")
_WS = re.compile(r"[ \t\r\n\f\v]+")


@dataclass(frozen=True)
class Token:
    kind: str  # ident | kw | num | sym | eof
    text: str
    span: SourceSpan


@dataclass(frozen=True)
class Comment:
    text: str
    span: SourceSpan


class _Positions:
    def __init__(self, text: str):
        self.starts = [0]
        for i, ch in enumerate(text):
            if ch == "\n":
                self.starts.append(i + 1)

    def linecol(self, offset: int) -> tuple[int, int]:
        lo, hi = 0, len(self.starts) - 1
        while lo < hi:
            mid = (lo + hi + 1) // 2
            if self.starts[mid] <= offset:
                lo = mid
            else:
                hi = mid - 1
        return lo + 1, offset - self.starts[lo] + 1

    def span(self, start: int, end: int) -> SourceSpan:
        l1, c1 = self.linecol(start)
        l2, c2 = self.linecol(end)
        return SourceSpan(start, end, l1, c1, l2, c2)


def lex(text: str) -> tuple[list[Token], list[Comment]]:
    """Tokenize ``text``; comments are returned separately."""
    pos = _Positions(text)
    tokens: list[Token] = []
    comments: list[Comment] = []
    i, n = 0, len(text)
    while i < n:
        m = _WS.match(text, i)
        if m:
            i = m.end()
            continue
        if text.startswith("//", i) or text.startswith("--", i):
            j = text.find("\n", i)
            j = n if j < 0 else j
            comments.append(Comment(text[i + 2 : j].strip(), pos.span(i, j)))
            i = j
            continue
        if text.startswith("/*", i):
            j = text.find("*/", i + 2)
            if j < 0:
                raise ParseError("unterminated block comment", pos.span(i, n), "lexical")
            body = text[i + 2 : j].strip().strip("*").strip()
            comments.append(Comment(body, pos.span(i, j + 2)))
            i = j + 2
            continue
        m = _IDENT.match(text, i)
        if m:
            word = m.group()
            kind = "kw" if word in KEYWORDS else "ident"
            tokens.append(Token(kind, word, pos.span(i, m.end())))
            i = m.end()
            continue
        m = _NUMBER.match(text, i)
        if m:
            tokens.append(Token("num", m.group(), pos.span(i, m.end())))
            i = m.end()
            continue
        for sym in SYMBOLS:
            if text.startswith(sym, i):
                tokens.append(Token("sym", sym, pos.span(i, i + len(sym))))
                i += len(sym)
                break
        else:
            raise ParseError(f"unexpected character {text[i]!r}", pos.span(i, i + 1), "lexical")
    tokens.append(Token("eof", "", pos.span(n, n)))
    return tokens, comments


# --------------------------------------------------------------------------
# raw tree


@dataclass
class Raw:
    kind: str
    span: SourceSpan
    text: Optional[str] = None
    kids: tuple = ()
    decls: tuple = ()  # quantifier declarations: RawDecl
    negated: bool = False


@dataclass
class RawDecl:
    names: list[str]
    bound: Raw
    disj: bool
    span: SourceSpan


@dataclass
class RawField:
    names: list[str]
    columns: list[tuple[str, SourceSpan]]
    multiplicity: str
    span: SourceSpan


@dataclass
class RawSig:
    names: list[str]
    abstract: bool
    multiplicity: Optional[str]
    kind: str
    parent: Optional[str]
    fields: list[RawField]
    span: SourceSpan


@dataclass
class RawPara:
    kind: str  # fact | pred | fun | run | open
    name: Optional[str]
    span: SourceSpan
    params: list[RawDecl] = field(default_factory=list)
    body: Optional[Raw] = None
    result: Optional[Raw] = None
    scopes: list = field(default_factory=list)  # (sig, bound, exact, span)
    default_bound: Optional[int] = None
    expect: Optional[int] = None
    comment: Optional[str] = None
    target: Optional[str] = None  # run <pred>, open ... [target]
    alias: Optional[str] = None


QUANTS = ("all", "some", "no", "lone", "one")
MULT_TESTS = ("no", "some", "lone", "one", "set")


class _Parser:
    def __init__(self, text: str):
        self.text = text
        self.tokens, self.comments = lex(text)
        self.i = 0

    # token helpers -----------------------------------------------------

    @property
    def tok(self) -> Token:
        return self.tokens[self.i]

    def peek(self, k: int = 1) -> Token:
        return self.tokens[min(self.i + k, len(self.tokens) - 1)]

    def at(self, *texts: str) -> bool:
        t = self.tok
        return t.kind in ("sym", "kw") and t.text in texts

    def advance(self) -> Token:
        t = self.tok
        if t.kind != "eof":
            self.i += 1
        return t

    def error(self, message: str, tok: Optional[Token] = None) -> ParseError:
        tok = tok or self.tok
        return ParseError(message, tok.span, "syntactic")

    def describe(self, tok: Token) -> str:
        return "end of input" if tok.kind == "eof" else repr(tok.text)

    def expect_sym(self, text: str) -> Token:
        if not self.at(text):
            raise self.error(f"expected {text!r} but found {self.describe(self.tok)}")
        return self.advance()

    def ident(self) -> Token:
        t = self.tok
        if t.kind != "ident":
            raise self.error(f"expected an identifier but found {self.describe(t)}")
        return self.advance()

    def number(self) -> int:
        t = self.tok
        if t.kind != "num":
            raise self.error(f"expected a number but found {self.describe(t)}")
        self.advance()
        return int(t.text)

    def span_from(self, start: SourceSpan) -> SourceSpan:
        prev = self.tokens[max(self.i - 1, 0)]
        end = prev.span if prev.span.end >= start.start else start
        return SourceSpan(start.start, end.end, start.line, start.col, end.end_line, end.end_col)

    def leading_comment(self, tok: Token) -> Optional[str]:
        """Comments directly preceding ``tok`` (only whitespace in between)."""
        prev_end = self.tokens[self.tokens.index(tok) - 1].span.end if self.tokens.index(tok) > 0 else 0
        found = [c for c in self.comments if prev_end <= c.span.start and c.span.end <= tok.span.start]
        if not found:
            return None
        # stop at a blank line gap: keep only the contiguous run nearest the token
        kept = [found[-1]]
        for c in reversed(found[:-1]):
            gap = self.text[c.span.end : kept[0].span.start]
            if gap.count("\n") > 1:
                break
            kept.insert(0, c)
        tail = self.text[kept[-1].span.end : tok.span.start]
        if tail.count("\n") > 1:
            return None
        return "\n".join(c.text for c in kept)

    # paragraphs ----------------------------------------------------------

    def parse_file(self) -> tuple[Optional[str], list]:
        name = None
        if self.at("module"):
            self.advance()
            name = self.ident().text
            if self.at("["):
                raise self.error("parameterized modules are not supported")
        paras: list = []
        while self.tok.kind != "eof":
            paras.append(self.paragraph())
        return name, paras

    def paragraph(self):
        t = self.tok
        if self.at("open"):
            return self.open_decl()
        if self.at("sig", "abstract", "lone", "one", "some"):
            return self.sig_decl()
        if self.at("fact"):
            return self.fact_decl()
        if self.at("pred"):
            return self.pred_decl()
        if self.at("fun"):
            return self.fun_decl()
        if self.at("run"):
            return self.run_decl()
        if self.at("check", "assert"):
            raise self.error(f"'{t.text}' is not supported")
        raise self.error(f"unexpected {self.describe(t)} at top level")

    def open_decl(self) -> RawPara:
        start = self.advance().span
        mod = self.ident()
        if mod.text != "util/ordering":
            raise ParseError(f"only util/ordering can be opened, not '{mod.text}'", mod.span, "resolution")
        self.expect_sym("[")
        target = self.ident().text
        self.expect_sym("]")
        alias = None
        if self.at("as"):
            self.advance()
            alias = self.ident().text
        return RawPara("open", None, self.span_from(start), target=target, alias=alias)

    def sig_decl(self) -> RawSig:
        start = self.tok.span
        abstract, mult = False, None
        while self.at("abstract", "lone", "one", "some"):
            t = self.advance()
            if t.text == "abstract":
                abstract = True
            else:
                if mult is not None:
                    raise self.error("duplicate signature multiplicity", t)
                mult = t.text
        if not self.at("sig"):
            raise self.error(f"expected 'sig' but found {self.describe(self.tok)}")
        self.advance()
        names = [self.ident().text]
        while self.at(","):
            self.advance()
            names.append(self.ident().text)
        kind, parent = "top", None
        if self.at("extends"):
            self.advance()
            kind, parent = "extends", self.ident().text
        elif self.at("in"):
            self.advance()
            kind, parent = "in", self.ident().text
            if self.at("+"):
                raise self.error("subset signatures of unions are not supported")
        self.expect_sym("{")
        fields: list[RawField] = []
        while not self.at("}"):
            fields.append(self.field_decl())
            if self.at(","):
                self.advance()
            elif not self.at("}"):
                raise self.error(f"expected ',' or '}}' but found {self.describe(self.tok)}")
        self.advance()
        if self.at("{"):
            raise self.error("signature facts are not supported")
        return RawSig(names, abstract, mult, kind, parent, fields, self.span_from(start))

    def field_decl(self) -> RawField:
        start = self.tok.span
        if self.at("disj"):
            raise self.error("disjoint field declarations are not supported")
        names = [self.ident().text]
        while self.at(","):
            self.advance()
            names.append(self.ident().text)
        self.expect_sym(":")
        mult = None
        if self.at(*A.MULTIPLICITIES):
            mult = self.advance().text
        first = self.ident()
        columns = [(first.text, first.span)]
        final_mult = None
        while self.at("->"):
            arrow = self.advance()
            if self.at(*A.MULTIPLICITIES):
                final_mult = self.advance().text
            nxt = self.ident()
            columns.append((nxt.text, nxt.span))
            if final_mult is not None and self.at("->"):
                raise self.error("multiplicities are only supported on the last column", arrow)
        if len(columns) == 1:
            multiplicity = mult or "one"
        else:
            if mult not in (None, "set"):
                raise self.error("multiplicities are only supported on the last column")
            multiplicity = final_mult or "set"
        if self.at("+", "-", "&", "<:", ":>", "."):
            raise self.error("field columns must be signature names")
        return RawField(names, columns, multiplicity, self.span_from(start))

    def fact_decl(self) -> RawPara:
        start = self.advance().span
        name = None
        if self.tok.kind == "ident":
            name = self.advance().text
        body = self.block()
        return RawPara("fact", name, self.span_from(start), body=body)

    def params(self) -> list[RawDecl]:
        if not self.at("[", "("):
            return []
        close = "]" if self.advance().text == "[" else ")"
        decls: list[RawDecl] = []
        while not self.at(close):
            decls.append(self.decl())
            if self.at(","):
                self.advance()
            elif not self.at(close):
                raise self.error(f"expected ',' or {close!r} but found {self.describe(self.tok)}")
        self.advance()
        return decls

    def pred_decl(self) -> RawPara:
        start = self.advance().span
        first = self.ident()
        params: list[RawDecl] = []
        name = first.text
        if self.at("."):
            self.advance()
            name = self.ident().text
            params.append(RawDecl(["this"], Raw("name", first.span, first.text), False, first.span))
        params += self.params()
        body = self.block()
        return RawPara("pred", name, self.span_from(start), params=params, body=body)

    def fun_decl(self) -> RawPara:
        start = self.advance().span
        name = self.ident().text
        params = self.params()
        self.expect_sym(":")
        if self.at(*A.MULTIPLICITIES):
            self.advance()
        result = self.expr()
        self.expect_sym("{")
        body = self.expr()
        self.expect_sym("}")
        return RawPara("fun", name, self.span_from(start), params=params, body=body, result=result)

    def run_decl(self) -> RawPara:
        run_tok = self.advance()
        start = run_tok.span
        comment = self.leading_comment(run_tok)
        name, target, body = None, None, None
        if self.tok.kind == "ident":
            ident = self.advance()
            if self.at("{"):
                name = ident.text
            else:
                name = target = ident.text
        if self.at("{"):
            body = self.block()
        elif target is None:
            raise self.error(f"expected a command body but found {self.describe(self.tok)}")
        para = RawPara("run", name, start, body=body, target=target, comment=comment)
        if self.at("for"):
            self.advance()
            self.scope(para)
        if self.at("expect"):
            self.advance()
            t = self.tok
            value = self.number()
            if value not in (0, 1):
                raise self.error("expect must be 0 or 1", t)
            para.expect = value
        para.span = self.span_from(start)
        return para

    def scope(self, para: RawPara) -> None:
        if self.tok.kind == "num" and not (self.peek().kind == "ident" or self.peek().text == "exactly"):
            para.default_bound = self.number()
            if not self.at("but"):
                return
            self.advance()
        while True:
            start = self.tok.span
            exact = False
            if self.at("exactly"):
                self.advance()
                exact = True
            bound = self.number()
            if self.at("seq", "int"):
                raise self.error("integer and sequence scopes are not supported")
            sig = self.ident()
            para.scopes.append((sig.text, bound, exact, self.span_from(start)))
            if not self.at(","):
                break
            self.advance()

    # formulas and expressions -----------------------------------------------

    def block(self) -> Raw:
        start = self.expect_sym("{").span
        items = []
        while not self.at("}"):
            if self.tok.kind == "eof":
                raise self.error("unterminated block, expected '}'")
            items.append(self.expr())
        self.advance()
        return Raw("block", self.span_from(start), kids=tuple(items))

    def is_decl_start(self) -> bool:
        t = self.tok
        if t.kind == "kw" and t.text == "disj":
            return True
        if t.kind == "ident":
            nxt = self.peek()
            return nxt.kind == "sym" and nxt.text in (",", ":")
        return False

    def decl(self) -> RawDecl:
        start = self.tok.span
        disj = False
        if self.at("disj"):
            self.advance()
            disj = True
        names = [self.ident().text]
        while self.at(","):
            self.advance()
            names.append(self.ident().text)
        self.expect_sym(":")
        if self.at("disj"):
            self.advance()
            disj = True
        if self.at("set", "lone", "some"):
            raise self.error("higher-order declarations are not supported")
        if self.at("one"):
            self.advance()
        bound = self.union()
        return RawDecl(names, bound, disj, self.span_from(start))

    def quant(self) -> Raw:
        q = self.advance()
        decls = [self.decl()]
        while self.at(","):
            self.advance()
            decls.append(self.decl())
        if self.at("|"):
            self.advance()
            body = self.expr()
        elif self.at("{"):
            body = self.block()
        else:
            raise self.error(f"expected '|' or '{{' but found {self.describe(self.tok)}")
        return Raw("quant", self.span_from(q.span), q.text, (body,), tuple(decls))

    def expr(self) -> Raw:
        if self.at("let"):
            raise self.error("'let' is not supported")
        if self.at(*QUANTS) and self.peek().kind != "eof":
            save = self.i
            self.advance()
            if self.is_decl_start():
                self.i = save
                return self.quant()
            self.i = save
        return self.or_expr()

    def _logic(self, ops: tuple, sub, name: str) -> Raw:
        left = sub()
        while self.at(*ops):
            self.advance()
            right = sub()
            left = Raw("logic", _join(left.span, right.span), name, (left, right))
        return left

    def or_expr(self) -> Raw:
        return self._logic(("or", "||"), self.iff_expr, "or")

    def iff_expr(self) -> Raw:
        return self._logic(("iff", "<=>"), self.implies_expr, "iff")

    def implies_expr(self) -> Raw:
        cond = self.and_expr()
        if self.at("implies", "=>"):
            self.advance()
            then = self.operand(self.implies_expr)
            if self.at("else"):
                self.advance()
                other = self.operand(self.implies_expr)
                return Raw("ite", _join(cond.span, other.span), None, (cond, then, other))
            return Raw("logic", _join(cond.span, then.span), "implies", (cond, then))
        return cond

    def operand(self, sub) -> Raw:
        # a quantifier may appear as the right operand and extends to the right
        if self.at(*QUANTS) or self.at("let"):
            save = self.i
            self.advance()
            decl = self.is_decl_start()
            self.i = save
            if decl or self.at("let"):
                return self.expr()
        return sub()

    def and_expr(self) -> Raw:
        left = self.not_expr()
        while self.at("and", "&&"):
            self.advance()
            right = self.operand(self.not_expr)
            left = Raw("logic", _join(left.span, right.span), "and", (left, right))
        return left

    def not_expr(self) -> Raw:
        if self.at("not", "!"):
            t = self.advance()
            inner = self.operand(self.not_expr)
            return Raw("not", _join(t.span, inner.span), None, (inner,))
        return self.compare()

    def compare(self) -> Raw:
        left = self.mult()
        negated = False
        if self.at("not", "!") and self.peek().text in ("in", "=") and self.peek().kind in ("kw", "sym"):
            self.advance()
            negated = True
        if self.at("!="):
            self.advance()
            right = self.mult()
            return Raw("cmp", _join(left.span, right.span), "=", (left, right), negated=True)
        if self.at("in", "="):
            op = self.advance().text
            right = self.mult()
            return Raw("cmp", _join(left.span, right.span), op, (left, right), negated=negated)
        if self.at("<", ">", "<=", ">=", "=<"):
            raise self.error("integer comparisons are not supported")
        if negated:
            raise self.error("expected 'in' or '='")
        return left

    def mult(self) -> Raw:
        if self.at(*MULT_TESTS):
            save = self.i
            t = self.advance()
            if t.text != "set" and self.is_decl_start():
                self.i = save
                return self.quant()
            inner = self.union()
            return Raw("mult", _join(t.span, inner.span), t.text, (inner,))
        return self.union()

    def union(self) -> Raw:
        left = self.intersect()
        while self.at("+", "-"):
            op = self.advance().text
            right = self.intersect()
            left = Raw("bin", _join(left.span, right.span), op, (left, right))
        if self.at("++"):
            raise self.error("relational override is not supported")
        return left

    def intersect(self) -> Raw:
        left = self.arrow()
        while self.at("&"):
            self.advance()
            right = self.arrow()
            left = Raw("bin", _join(left.span, right.span), "&", (left, right))
        return left

    def arrow(self) -> Raw:
        left = self.dom_restrict()
        while self.at("->"):
            self.advance()
            if self.at(*A.MULTIPLICITIES):
                raise self.error("arrow multiplicities are only allowed in field declarations")
            right = self.dom_restrict()
            left = Raw("bin", _join(left.span, right.span), "->", (left, right))
        return left

    def dom_restrict(self) -> Raw:
        left = self.ran_restrict()
        while self.at("<:"):
            self.advance()
            right = self.ran_restrict()
            left = Raw("bin", _join(left.span, right.span), "<:", (left, right))
        return left

    def ran_restrict(self) -> Raw:
        left = self.join()
        while self.at(":>"):
            self.advance()
            right = self.join()
            left = Raw("bin", _join(left.span, right.span), ":>", (left, right))
        return left

    def join(self) -> Raw:
        left = self.unary()
        while self.at(".", "["):
            if self.advance().text == ".":
                right = self.unary()
                left = Raw("bin", _join(left.span, right.span), ".", (left, right))
            else:
                args = []
                while not self.at("]"):
                    args.append(self.expr())
                    if self.at(","):
                        self.advance()
                    elif not self.at("]"):
                        raise self.error(f"expected ',' or ']' but found {self.describe(self.tok)}")
                end = self.advance()
                left = Raw("box", _join(left.span, end.span), None, (left, *args))
        return left

    def unary(self) -> Raw:
        if self.at("~", "^", "*"):
            t = self.advance()
            inner = self.unary()
            return Raw("un", _join(t.span, inner.span), t.text, (inner,))
        if self.at("#"):
            raise self.error("cardinality '#' is not supported")
        return self.primary()

    def primary(self) -> Raw:
        t = self.tok
        if t.kind == "ident":
            self.advance()
            return Raw("name", t.span, t.text)
        if t.kind == "kw" and t.text in ("none", "univ", "iden"):
            self.advance()
            return Raw("const", t.span, t.text)
        if t.kind == "num":
            raise self.error("integer expressions are not supported")
        if self.at("("):
            self.advance()
            inner = self.expr()
            self.expect_sym(")")
            return inner
        if self.at("{"):
            save = self.i
            self.advance()
            if self.is_decl_start():
                raise self.error("set comprehensions are not supported")
            self.i = save
            return self.block()
        if self.at(*QUANTS):
            save = self.i
            self.advance()
            decl = self.is_decl_start()
            self.i = save
            if decl:
                return self.quant()
            if t.text == "all":
                raise self.error("expected declarations after 'all'")
            return self.mult()
        if self.at("@"):
            raise ParseError("'@' references are not supported", t.span, "lexical")
        raise self.error(f"unexpected {self.describe(t)}")


def _join(a: SourceSpan, b: SourceSpan) -> SourceSpan:
    if b.end < a.start:
        a, b = b, a
    return SourceSpan(a.start, b.end, a.line, a.col, b.end_line, b.end_col)


# --------------------------------------------------------------------------
# resolution


class _Ambiguous(ParseError):
    pass


@dataclass
class _Binding:
    expr: A.Expr
    type: RelType


ORDERING_RELATIONS = ("next", "prev", "first", "last")
ORDERING_FUNCTIONS = ("nexts", "prevs")


class _Resolver:
    def __init__(self, model_name, paras: list, base: Optional[A.Model] = None):
        self.model_name = model_name
        self.paras = paras
        self.base = base
        self.model: A.Model = base or A.Model()
        self.raw_preds: dict[str, RawPara] = {}
        self.raw_funs: dict[str, RawPara] = {}
        self.expanding: list[str] = []
        self.avoid: set[str] = set()
        self.fresh = 0

    # declarations --------------------------------------------------------

    def build(self, require_expect: bool = False) -> A.Model:
        sigs = self.build_sigs([p for p in self.paras if isinstance(p, RawSig)])
        orderings, aliases = [], []
        for p in self.paras:
            if isinstance(p, RawPara) and p.kind == "open":
                if p.target not in {s.name for s in sigs}:
                    raise ParseError(f"unknown signature '{p.target}' in ordering", p.span, "resolution")
                if p.target in orderings:
                    raise ParseError(f"signature '{p.target}' is already ordered", p.span, "resolution")
                orderings.append(p.target)
                if p.alias:
                    aliases.append((p.alias, p.target))
        self.model = A.Model(self.model_name, tuple(orderings), tuple(sigs), ordering_aliases=tuple(aliases))
        for s in sigs:
            if s.name in orderings and not s.is_top:
                raise ParseError(f"ordered signature '{s.name}' must be top-level", UNKNOWN_SPAN, "resolution")
        self.collect_callables(self.paras)
        facts = tuple(
            A.Fact(p.name, self.formula(p.body, {}))
            for p in self.paras
            if isinstance(p, RawPara) and p.kind == "fact"
        )
        preds = tuple(self.pred(p) for p in self.raw_preds.values())
        funs = tuple(self.fun(p) for p in self.raw_funs.values())
        commands = tuple(
            self.command(p, require_expect) for p in self.paras if isinstance(p, RawPara) and p.kind == "run"
        )
        return A.Model(
            self.model_name, tuple(orderings), tuple(sigs), facts, preds, funs, commands, tuple(aliases)
        )

    def build_sigs(self, raws: list[RawSig]) -> list[A.SigDecl]:
        names: dict[str, RawSig] = {}
        for r in raws:
            for n in r.names:
                if n in names:
                    raise ParseError(f"duplicate signature '{n}'", r.span, "resolution")
                if n in ("Int", "int", "String", "seq/Int"):
                    raise ParseError(f"'{n}' cannot be declared here", r.span, "resolution")
                names[n] = r
        sigs: list[A.SigDecl] = []
        for r in raws:
            if r.parent is not None:
                if r.parent in ("Int", "int"):
                    raise ParseError("integers are not supported", r.span, "resolution")
                if r.parent not in names:
                    raise ParseError(f"unknown parent signature '{r.parent}'", r.span, "resolution")
                if r.kind == "extends" and names[r.parent].kind == "in":
                    raise ParseError(f"cannot extend subset signature '{r.parent}'", r.span, "resolution")
            for n in r.names:
                if r.parent == n:
                    raise ParseError(f"signature '{n}' cannot be its own parent", r.span, "resolution")
                fields = []
                seen = set()
                for rf in r.fields:
                    cols = []
                    for col, span in rf.columns:
                        col = col[5:] if col.startswith("this/") else col
                        if col in ("Int", "int"):
                            raise ParseError("integers are not supported", span, "resolution")
                        if col not in names:
                            raise ParseError(f"unknown signature '{col}' in field", span, "resolution")
                        cols.append(col)
                    for fname in rf.names:
                        if fname in seen:
                            raise ParseError(f"duplicate field '{fname}' in '{n}'", rf.span, "resolution")
                        seen.add(fname)
                        fields.append(A.FieldDecl(fname, n, tuple(cols), rf.multiplicity))
                sigs.append(A.SigDecl(n, r.kind, r.parent, r.abstract, r.multiplicity, tuple(fields)))
        model = A.Model(sigs=tuple(sigs))
        try:
            model.sig_order
        except AlloyTypeError as exc:
            raise ParseError(str(exc), UNKNOWN_SPAN, "resolution") from None
        return sigs

    def collect_callables(self, paras: list) -> None:
        for p in paras:
            if not isinstance(p, RawPara):
                continue
            if p.kind in ("pred", "fun"):
                if p.name in self.raw_preds or p.name in self.raw_funs:
                    raise ParseError(f"duplicate definition of '{p.name}'", p.span, "resolution")
                (self.raw_preds if p.kind == "pred" else self.raw_funs)[p.name] = p

    def bind_params(self, params: list[RawDecl]) -> tuple[dict, tuple]:
        env: dict[str, _Binding] = {}
        decls = []
        for d in params:
            bound, t = self.expr(d.bound, env)
            for n in d.names:
                if n in env:
                    raise ParseError(f"duplicate parameter '{n}'", d.span, "resolution")
                env[n] = _Binding(A.Var(n), t)
            decls.append(A.Decl(tuple(d.names), bound, d.disj))
        return env, tuple(decls)

    def pred(self, p: RawPara) -> A.Pred:
        env, decls = self.bind_params(p.params)
        self.expanding.append(p.name)
        try:
            body = self.formula(p.body, env)
        finally:
            self.expanding.pop()
        return A.Pred(p.name, decls, body)

    def fun(self, p: RawPara) -> A.Fun:
        env, decls = self.bind_params(p.params)
        result, rt = self.expr(p.result, env)
        self.expanding.append(p.name)
        try:
            body, bt = self.expr(p.body, env)
        finally:
            self.expanding.pop()
        if bt.arity != rt.arity:
            raise ParseError(
                f"function '{p.name}' body has arity {bt.arity}, declared {rt.arity}", p.span, "arity"
            )
        return A.Fun(p.name, decls, result, body)

    def command(self, p: RawPara, require_expect: bool) -> A.RunCommand:
        if p.target is not None:
            if p.target not in self.raw_preds:
                raise ParseError(f"unknown predicate '{p.target}'", p.span, "resolution")
            pred = self.raw_preds[p.target]
            if pred.params:
                body = Raw("quant", p.span, "some", (self._call_raw(p.target, pred.params, p.span),), tuple(pred.params))
            else:
                body = Raw("name", p.span, p.target)
        else:
            body = p.body
        formula = self.formula(body, {})
        if not isinstance(formula, A.Block):
            formula = A.Block((formula,))
        scopes = []
        seen = set()
        for sig, bound, exact, span in p.scopes:
            sig = sig[5:] if sig.startswith("this/") else sig
            if sig in ("Int", "int"):
                raise ParseError("integer scopes are not supported", span, "resolution")
            if not self.model.has_sig(sig):
                raise ParseError(f"unknown signature '{sig}' in scope", span, "resolution")
            if not self.model.sig(sig).is_top:
                raise ParseError(f"scope must name a top-level signature, not '{sig}'", span, "resolution")
            if sig in seen:
                raise ParseError(f"duplicate scope for '{sig}'", span, "resolution")
            seen.add(sig)
            scopes.append((sig, A.Scope(bound, exact)))
        if require_expect and p.expect is None:
            raise ParseError("missing expect clause", p.span, "syntactic")
        default = A.DEFAULT_BOUND if p.default_bound is None else p.default_bound
        return A.RunCommand(p.name, formula, tuple(scopes), p.expect, default)

    @staticmethod
    def _call_raw(name: str, params: list[RawDecl], span: SourceSpan) -> Raw:
        args = tuple(Raw("name", span, n) for d in params for n in d.names)
        return Raw("box", span, None, (Raw("name", span, name), *args))

    # formulas ------------------------------------------------------------

    def formula(self, r: Raw, env: dict) -> A.Formula:
        k = r.kind
        if k == "block":
            return A.Block(tuple(self.formula(x, env) for x in r.kids))
        if k == "logic":
            return A.BinFormula(r.text, self.formula(r.kids[0], env), self.formula(r.kids[1], env))
        if k == "ite":
            c = self.formula(r.kids[0], env)
            t = self.formula(r.kids[1], env)
            e = self.formula(r.kids[2], env)
            return A.BinFormula("and", A.BinFormula("implies", c, t), A.BinFormula("implies", A.Not(c), e))
        if k == "not":
            return A.Not(self.formula(r.kids[0], env))
        if k == "mult":
            if r.text == "set":
                raise ParseError("'set' is not a formula", r.span, "syntactic")
            e, _ = self.expr(r.kids[0], env)
            return A.MultTest(r.text, e)
        if k == "cmp":
            (left, lt), (right, rt) = self.pair(r.text, r.kids[0], r.kids[1], env, r.span)
            if lt.arity != rt.arity:
                raise ParseError(
                    f"operands of '{r.text}' have different arities {lt.arity} and {rt.arity}"
                    f" ({_snippet(r.kids[0])} vs {_snippet(r.kids[1])})",
                    r.span,
                    "arity",
                )
            f = A.Compare(r.text, left, right)
            return A.Not(f) if r.negated else f
        if k == "quant":
            return self.quant(r, env)
        call = self.call_target(r, env)
        if call is not None:
            name, args, span = call
            if name in self.raw_preds:
                return self.expand_pred(name, args, env, span)
            raise ParseError(f"'{name}' is a function, not a predicate", span, "syntactic")
        if k in ("name", "const", "bin", "un", "box"):
            raise ParseError(f"expected a formula but found expression {_snippet(r)}", r.span, "syntactic")
        raise ParseError(f"unexpected construct {k}", r.span, "syntactic")

    def quant(self, r: Raw, env: dict) -> A.Formula:
        inner = dict(env)
        decls = []
        seen: set[str] = set()
        for d in r.decls:
            bound, t = self.expr(d.bound, inner)
            if t.arity != 1:
                raise ParseError(
                    f"quantifier bound {_snippet(d.bound)} must be a set, got arity {t.arity}", d.span, "arity"
                )
            names = []
            for n in d.names:
                if n in seen:
                    raise ParseError(f"variable '{n}' declared twice", d.span, "resolution")
                seen.add(n)
                var = n
                if n in self.avoid:
                    self.fresh += 1
                    var = f"{n}_{self.fresh}"
                names.append(var)
                inner[n] = _Binding(A.Var(var), t)
            decls.append(A.Decl(tuple(names), bound, d.disj))
        body = self.formula(r.kids[0], inner)
        return A.Quant(r.text, tuple(decls), body)

    def call_target(self, r: Raw, env: dict):
        """Recognize predicate/function calls: ``p``, ``p[a, b]``, ``a.p``, ``a.p[b]``."""
        if r.kind == "name" and r.text not in env and (r.text in self.raw_preds or r.text in self.raw_funs):
            return r.text, [], r.span
        if r.kind == "box":
            target, args = r.kids[0], list(r.kids[1:])
            if target.kind == "name" and target.text not in env and (
                target.text in self.raw_preds or target.text in self.raw_funs
            ):
                return target.text, args, r.span
            if target.kind == "bin" and target.text == ".":
                fn = target.kids[1]
                if fn.kind == "name" and fn.text not in env and (
                    fn.text in self.raw_preds or fn.text in self.raw_funs
                ):
                    return fn.text, [target.kids[0]] + args, r.span
        if r.kind == "bin" and r.text == ".":
            fn = r.kids[1]
            if fn.kind == "name" and fn.text not in env and (fn.text in self.raw_preds or fn.text in self.raw_funs):
                callee = self.raw_preds.get(fn.text) or self.raw_funs.get(fn.text)
                if sum(len(d.names) for d in callee.params) >= 1:
                    return fn.text, [r.kids[0]], r.span
        return None

    def _bind_args(self, name: str, para: RawPara, args: list, env: dict, span: SourceSpan) -> dict:
        names = [(n, d) for d in para.params for n in d.names]
        if len(names) != len(args):
            raise ParseError(
                f"'{name}' expects {len(names)} argument(s) but got {len(args)}", span, "resolution"
            )
        if name in self.expanding:
            raise ParseError(f"recursive call to '{name}'", span, "resolution")
        callee_env: dict[str, _Binding] = {}
        for (n, d), a in zip(names, args):
            e, t = self.expr(a, env)
            _, pt = self.expr(d.bound, callee_env)
            if pt.arity != t.arity:
                raise ParseError(
                    f"argument {_snippet(a)} of '{name}' has arity {t.arity}, expected {pt.arity}", a.span, "arity"
                )
            callee_env[n] = _Binding(e, t)
        return callee_env

    def _expand(self, name: str, para: RawPara, args: list, env: dict, span: SourceSpan, how):
        callee_env = self._bind_args(name, para, args, env, span)
        saved = set(self.avoid)
        for b in callee_env.values():
            self.avoid |= A.free_vars(b.expr)
        self.expanding.append(name)
        try:
            return how(callee_env)
        finally:
            self.expanding.pop()
            self.avoid = saved

    def expand_pred(self, name: str, args: list, env: dict, span: SourceSpan) -> A.Formula:
        para = self.raw_preds[name]
        return self._expand(name, para, args, env, span, lambda cenv: self.formula(para.body, cenv))

    def expand_fun(self, name: str, args: list, env: dict, span: SourceSpan):
        para = self.raw_funs[name]
        return self._expand(name, para, args, env, span, lambda cenv: self.expr(para.body, cenv))

    # expressions -----------------------------------------------------------

    def expr(self, r: Raw, env: dict, hint=None) -> tuple[A.Expr, RelType]:
        k = r.kind
        if k == "name":
            call = self.call_target(r, env)
            if call is not None:
                return self._call_expr(call, env)
            return self.name(r, env, hint)
        if k == "const":
            e = A.Const(r.text)
            return e, self.typeof(e, r.span)
        if k == "un":
            inner, t = self.expr(r.kids[0], env)
            try:
                ut = A.type_of(self.model, {"_": t}, A.UnExpr(r.text, A.Var("_")))
            except AlloyTypeError:
                raise ParseError(
                    f"operator {r.text} requires a binary relation but {_snippet(r.kids[0])} has arity {t.arity}",
                    r.span,
                    "arity",
                ) from None
            return A.UnExpr(r.text, inner), ut
        if k == "bin":
            call = self.call_target(r, env)
            if call is not None:
                return self._call_expr(call, env)
            (left, lt), (right, rt) = self.pair(r.text, r.kids[0], r.kids[1], env, r.span)
            try:
                t = binary_type(r.text, lt, rt)
            except AlloyTypeError as exc:
                raise ParseError(
                    f"{exc} ({_snippet(r.kids[0])} {r.text} {_snippet(r.kids[1])})", r.span, "arity"
                ) from None
            return A.BinExpr(r.text, left, right), t
        if k == "box":
            call = self.call_target(r, env)
            if call is not None:
                return self._call_expr(call, env)
            target, args = r.kids[0], list(r.kids[1:])
            if target.kind == "name" and target.text in ORDERING_FUNCTIONS and target.text not in env:
                if len(args) != 1:
                    raise ParseError(f"'{target.text}' expects one argument", r.span, "resolution")
                return self.ordering_function(target, args[0], env)
            # e[a, b] == b.(a.e)
            cur = target
            for a in args:
                cur = Raw("bin", r.span, ".", (a, cur))
            return self.expr(cur, env, hint)
        if k in ("block", "logic", "ite", "not", "mult", "cmp", "quant"):
            raise ParseError(f"expected an expression but found a formula", r.span, "syntactic")
        raise ParseError(f"unexpected construct {k}", r.span, "syntactic")

    def _call_expr(self, call, env):
        name, args, span = call
        if name in self.raw_funs:
            return self.expand_fun(name, args, env, span)
        raise ParseError(f"predicate '{name}' used as an expression", span, "syntactic")

    def ordering_function(self, fn: Raw, arg: Raw, env: dict):
        e, t = self.expr(arg, env)
        sigs = [s for s in self.model.orderings if self.model.top_of(s) in {c[0] for c in t.tuples}]
        if len(sigs) != 1:
            sigs = list(self.model.orderings) if len(self.model.orderings) == 1 else []
        if len(sigs) != 1:
            raise ParseError(f"cannot determine the ordering for '{fn.text}'", fn.span, "resolution")
        rel: A.Expr = A.NextRef(sigs[0])
        if fn.text == "prevs":
            rel = A.UnExpr("~", rel)
        closure = A.UnExpr("^", rel)
        try:
            t = binary_type(".", t, A.type_of(self.model, {}, closure))
        except AlloyTypeError as exc:
            raise ParseError(str(exc), fn.span, "arity") from None
        return A.BinExpr(".", e, closure), t

    def typeof(self, e: A.Expr, span: SourceSpan) -> RelType:
        try:
            return A.type_of(self.model, {}, e)
        except AlloyTypeError as exc:
            raise ParseError(str(exc), span, "arity") from None

    def pair(self, op: str, lraw: Raw, rraw: Raw, env: dict, span: SourceSpan):
        try:
            left = self.expr(lraw, env)
        except _Ambiguous:
            right = self.expr(rraw, env)
            left = self.expr(lraw, env, _hint(op, right[1], "left"))
            return left, right
        right = self.expr(rraw, env, _hint(op, left[1], "right"))
        return left, right

    def name(self, r: Raw, env: dict, hint) -> tuple[A.Expr, RelType]:
        n = r.text
        if n in env:
            b = env[n]
            return b.expr, b.type
        if n.startswith("this/"):
            n = n[5:]
        m = self.model
        if n in ("Int", "int", "String"):
            raise ParseError(f"'{n}' is not supported", r.span, "resolution")
        if "/" in n:
            alias, _, member = n.partition("/")
            target = dict(m.ordering_aliases).get(alias)
            if target is None or member not in ORDERING_RELATIONS:
                raise ParseError(f"unknown name '{r.text}'", r.span, "resolution")
            return self.ordering_ref(member, target, r.span)
        candidates: list[A.Expr] = []
        if m.has_sig(n):
            candidates.append(A.SigRef(n))
        candidates += [A.FieldRef(f.owner, f.name) for f in m.fields_named(n)]
        if n in ORDERING_RELATIONS:
            candidates += [self.ordering_ref(n, s, r.span)[0] for s in m.orderings]
        if not candidates:
            if n in ORDERING_RELATIONS or n in ORDERING_FUNCTIONS:
                raise ParseError(f"'{n}' requires an ordered signature", r.span, "resolution")
            raise ParseError(f"unknown name '{n}'", r.span, "resolution")
        typed = [(c, A.type_of(m, {}, c)) for c in candidates]
        if len(typed) == 1:
            return typed[0]
        if hint is not None:
            kept = [ct for ct in typed if hint(ct[1])]
            if len(kept) == 1:
                return kept[0]
            if not kept:
                raise ParseError(f"no declaration of '{n}' type-checks here", r.span, "resolution")
        raise _Ambiguous(
            f"ambiguous reference '{n}' ({len(typed)} candidates); disambiguate with <:", r.span, "resolution"
        )

    def ordering_ref(self, member: str, sig: str, span: SourceSpan):
        if member == "next":
            e: A.Expr = A.NextRef(sig)
        elif member == "prev":
            e = A.UnExpr("~", A.NextRef(sig))
        elif member == "first":
            e = A.FirstRef(sig)
        else:
            e = A.LastRef(sig)
        return e, A.type_of(self.model, {}, e)


def _hint(op: str, other: RelType, side: str):
    """Candidate filter for an overloaded name given the other operand's type."""
    if op == "<:":
        if side == "right":
            return lambda t: bool(t.first_columns() & other.first_columns())
        return lambda t: t.arity == 1 and bool(t.first_columns() & other.first_columns())
    if op == ":>":
        if side == "left":
            return lambda t: bool(t.last_columns() & other.first_columns())
        return lambda t: t.arity == 1 and bool(t.first_columns() & other.last_columns())
    if op == ".":
        if side == "right":
            return lambda t: bool(t.first_columns() & other.last_columns())
        return lambda t: bool(t.last_columns() & other.first_columns())
    if op in ("+", "-", "&", "=", "in"):
        return lambda t: t.arity == other.arity and bool(t.tuples & other.tuples)
    return None


def _snippet(r: Raw) -> str:
    k = r.kind
    if k in ("name", "const"):
        return r.text
    if k == "bin":
        return f"{_snippet(r.kids[0])}{r.text}{_snippet(r.kids[1])}"
    if k == "un":
        return f"{r.text}{_snippet(r.kids[0])}"
    if k == "box":
        return f"{_snippet(r.kids[0])}[...]"
    return k


# --------------------------------------------------------------------------
# public entry points


def _decode(text: Union[str, bytes]) -> str:
    if isinstance(text, bytes):
        try:
            return text.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise ParseError(f"input is not valid UTF-8: {exc.reason}", UNKNOWN_SPAN, "lexical") from None
    return text


def _guard(fn):
    try:
        return fn()
    except RecursionError:
        raise ParseError("input nested too deeply", UNKNOWN_SPAN, "syntactic") from None


def parse_model(text: Union[str, bytes], require_expect: bool = False) -> A.Model:
    """Parse and resolve a model file (signatures, facts, predicates, commands)."""
    text = _decode(text)

    def go():
        p = _Parser(text)
        name, paras = p.parse_file()
        return _Resolver(name, paras).build(require_expect)

    return _guard(go)


def _resolver_for(model: A.Model, paras: list = ()) -> _Resolver:
    res = _Resolver(model.name, list(paras), base=model)
    # callables of the base model are re-parsed lazily from their resolved form
    for pred in model.preds:
        res.raw_preds[pred.name] = _raw_from_pred(pred)
    for fun in model.funs:
        res.raw_funs[fun.name] = _raw_from_fun(fun)
    return res


def _raw_from_pred(pred: A.Pred) -> RawPara:
    from .render import render

    src = render(pred)
    para = _Parser(src).paragraph()
    return para


def _raw_from_fun(fun: A.Fun) -> RawPara:
    from .render import render

    return _Parser(render(fun)).paragraph()


def parse_command(model: A.Model, text: Union[str, bytes], require_expect: bool = False) -> A.RunCommand:
    """Parse a single ``run`` command against an already resolved model."""
    text = _decode(text)

    def go():
        p = _Parser(text)
        if not p.at("run"):
            raise p.error(f"expected 'run' but found {p.describe(p.tok)}")
        para = p.run_decl()
        if p.tok.kind != "eof":
            raise p.error(f"unexpected {p.describe(p.tok)} after command")
        res = _resolver_for(model)
        return res.command(para, require_expect)

    return _guard(go)


def parse_expr(model: A.Model, text: str, env: Optional[dict] = None) -> A.Expr:
    """Parse an expression; ``env`` maps free variable names to signature names."""
    e, _ = _parse_typed_expr(model, text, env)
    return e


def _parse_typed_expr(model: A.Model, text: str, env: Optional[dict] = None):
    def go():
        p = _Parser(text)
        raw = p.expr()
        if p.tok.kind != "eof":
            raise p.error(f"unexpected {p.describe(p.tok)}")
        res = _resolver_for(model)
        return res.expr(raw, _var_env(model, env))

    return _guard(go)


def parse_formula(model: A.Model, text: str, env: Optional[dict] = None) -> A.Formula:
    def go():
        p = _Parser(text)
        items = [p.expr()]
        while p.tok.kind != "eof":
            items.append(p.expr())
        # several juxtaposed formulas form an implicit block
        raw = items[0] if len(items) == 1 else Raw("block", items[0].span, kids=tuple(items))
        res = _resolver_for(model)
        return res.formula(raw, _var_env(model, env))

    return _guard(go)


def parse_preds(model: A.Model, text: str) -> list[tuple[A.Pred, Optional[str]]]:
    """Parse standalone predicate declarations against ``model``.

    Returns each predicate with the comment text immediately preceding it.
    """

    def go():
        p = _Parser(text)
        out = []
        while p.tok.kind != "eof":
            if not p.at("pred"):
                raise p.error(f"expected 'pred' but found {p.describe(p.tok)}")
            tok = p.tok
            comment = p.leading_comment(tok)
            out.append((p.pred_decl(), comment))
        res = _resolver_for(model)
        resolved = []
        for para, comment in out:
            if para.name in res.raw_preds or para.name in res.raw_funs:
                raise ParseError(f"'{para.name}' is already defined", para.span, "resolution")
            resolved.append((res.pred(para), comment))
        return resolved

    return _guard(go)


def _var_env(model: A.Model, env: Optional[dict]) -> dict:
    out = {}
    for name, sig in (env or {}).items():
        if isinstance(sig, RelType):
            out[name] = _Binding(A.Var(name), sig)
        else:
            if not model.has_sig(sig):
                raise ParseError(f"unknown signature '{sig}'", UNKNOWN_SPAN, "resolution")
            out[name] = _Binding(A.Var(name), A.type_of(model, {}, A.SigRef(sig)))
    return out


# --------------------------------------------------------------------------
# extracting commands from free-form text

_FENCE = re.compile(r"^[ \t]*(```|~~~)[^\n]*$", re.MULTILINE)
_SCAN = re.compile(
    r"(?P<lc>(?://|--)[^\n]*)|(?P<bc>/\*.*?(?:\*/|\Z))|(?P<word>[A-Za-z_][A-Za-z0-9_'\"]*)|(?P<open>\{)|(?P<close>\})",
    re.DOTALL,
)
_STOP_WORDS = {"sig", "fact", "pred", "fun", "open", "check", "assert", "module", "abstract"}


def strip_fences(text: str) -> str:
    """Keep only fenced code when the text contains markdown fences."""
    fences = list(_FENCE.finditer(text))
    if len(fences) < 2:
        return _FENCE.sub("", text)
    parts = []
    for a, b in zip(fences[0::2], fences[1::2]):
        parts.append(text[a.end() : b.start()])
    return "\n".join(parts)


_RUN_HEAD = re.compile(r"run\s*(?:\{|[A-Za-z_][A-Za-z0-9_'\"]*\s*(?:\{|for\b|expect\b|$))", re.MULTILINE)
_TAIL_LINE = re.compile(r"\s*(?:for|expect|exactly|but|\d|,)")


def _command_start(text: str, pos: int) -> bool:
    """`run` opens a command only at the start of a line and in command shape."""
    line_start = text.rfind("\n", 0, pos) + 1
    if text[line_start:pos].strip():
        return False
    return _RUN_HEAD.match(text, pos) is not None


def _command_end(text: str, close: int) -> int:
    """End of a command whose body closes at ``close``: the scope may continue over lines."""
    end = text.find("\n", close)
    end = len(text) if end < 0 else end
    while end < len(text):
        nxt = text.find("\n", end + 1)
        nxt = len(text) if nxt < 0 else nxt
        line = text[end + 1 : nxt]
        if not line.strip():
            break
        if not (text[:end].rstrip().endswith(",") or _TAIL_LINE.match(line)):
            break
        end = nxt
    return end


def extract_commands(response_text: str) -> list[tuple[str, Optional[str]]]:
    """Split free-form text into raw ``run`` commands and their leading comments."""
    text = strip_fences(response_text or "")
    depth = 0
    starts: list[int] = []
    stops: list[int] = []
    closes: dict[int, int] = {}  # command start -> offset of its body's closing brace
    comments: list[tuple[int, int, str]] = []
    for m in _SCAN.finditer(text):
        kind = m.lastgroup
        if kind == "lc":
            comments.append((m.start(), m.end(), m.group()[2:].strip()))
        elif kind == "bc":
            body = m.group()[2:]
            body = body[:-2] if body.endswith("*/") else body
            comments.append((m.start(), m.end(), body.strip().strip("*").strip()))
        elif kind == "open":
            depth += 1
        elif kind == "close":
            depth = max(depth - 1, 0)
            if depth == 0 and starts and starts[-1] not in closes and not (stops and stops[-1] > starts[-1]):
                closes[starts[-1]] = m.end()
        elif depth == 0:
            word = m.group()
            if word == "run" and _command_start(text, m.start()):
                starts.append(m.start())
            elif word in _STOP_WORDS or (word == "run" and starts and starts[-1] in closes):
                stops.append(m.start())
    result = []
    for k, s in enumerate(starts):
        # leading comments: contiguous comment lines directly above the command
        lead: list[str] = []
        lead_start = s
        for cs, ce, ctext in reversed([c for c in comments if c[1] <= s]):
            gap = text[ce:lead_start]
            if gap.strip() or gap.count("\n") > 1:
                break
            lead.insert(0, ctext)
            lead_start = cs
        end = len(text)
        later = [x for x in starts[k + 1 :] + stops if x > s]
        if later:
            end = min(later)
        if s in closes and closes[s] <= end:
            end = min(end, _command_end(text, closes[s]))
        # do not swallow the next command's leading comment
        body = text[s:end]
        trimmed = _drop_trailing_comments(body)
        result.append((trimmed.strip(), "\n".join(lead) if lead else None))
    return result


def _drop_trailing_comments(body: str) -> str:
    lines = body.rstrip().split("\n")
    while len(lines) > 1:
        last = lines[-1].strip()
        if not last or last.startswith("//") or last.startswith("--"):
            lines.pop()
            continue
        if last.endswith("*/") and "/*" in body:
            idx = body.rfind("/*")
            tail = body[idx:].strip()
            if tail.endswith("*/") and "\n" + lines[-1] in "\n" + body:
                body = body[:idx]
                lines = body.rstrip().split("\n")
                continue
        break
    return "\n".join(lines)
