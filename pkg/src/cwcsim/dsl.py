"""The ``.cwc`` model language.

Grammar (``#`` starts a comment, ``;`` may separate statements)::

    model      := statement*
    statement  := "param" NAME "=" expr
                | "for" NAME "in" expr ".." expr "{" statement* "}"
                | "rule" [ident] "@" ident ":" term "->" "[" expr "]" term
                | "init" ":" term
                | "observe" ident ":" "count" ident "in" glob scope ["scale" expr]
                | "sim" (NAME "=" expr)*
    term       := simple*
    simple     := [count "*"] (ident | compartment) | "~" NAME | "$" NAME
    compartment:= "(" simple* "|" term ")" "^" ident
    count      := NUMBER | "{" expr "}"
    ident      := identifier with "{expr}" segments, e.g. e_{i} or k{i}{j}
    glob       := globseg ("/" globseg)*      globseg := ident ["*"] | "*"
    scope      := "content" | "wrap" | "both"
    expr       := arithmetic over numbers, parameters and loop indices with
                  + - * / % and the helpers wrap5(x), wrap(x, n), min, max

Rules are sugared: the unmatched rest of the context content is implicit.
Compartment patterns on the left need one ``~x`` and one ``$X`` each.
Several ``init`` statements accumulate.  Rules whose rate evaluates to zero
are dropped.
"""

from __future__ import annotations

import difflib
import math
import re
from dataclasses import dataclass, field
from pathlib import Path

from .model import Model, Observable
from .patterns import (
    CompartmentPattern,
    OpenCompartment,
    OpenTerm,
    Pattern,
    Rule,
    validate_rule,
)
from .terms import IDENTIFIER, SCOPES, TOP, Compartment, Term, canonicalize_in_place

KEYWORDS = {"rule", "param", "for", "init", "observe", "sim"}
SIM_KEYS = {"t_end", "dt", "seed", "max_events"}


@dataclass(frozen=True)
class Diagnostic:
    line: int
    col: int
    kind: str
    message: str
    origin: str = "<model>"

    def __str__(self):
        return f"{self.origin}:{self.line}:{self.col}: {self.kind}: {self.message}"


class ModelError(Exception):
    def __init__(self, diagnostics: list[Diagnostic]):
        self.diagnostics = list(diagnostics)
        super().__init__("\n".join(str(d) for d in self.diagnostics))


@dataclass(frozen=True)
class ModelSource:
    text: str
    origin: str = "<model>"

    @classmethod
    def from_path(cls, path) -> ModelSource:
        path = Path(path)
        return cls(path.read_text(encoding="utf-8"), str(path))


# -- lexer ---------------------------------------------------------------

@dataclass
class Token:
    kind: str
    value: object
    line: int
    col: int
    end: int = 0  # offset one past the token in the source text

    @property
    def pos(self):
        return (self.line, self.col)


_PUNCT = ["->", "..", "(", ")", "|", "^", ":", "@", "[", "]", "{", "}", "*", "=",
          ",", "/", "+", "-", "%", ";"]
_NUMBER = re.compile(r"\d+(?:\.\d+)?(?:[eE][+-]?\d+)?")
_WORD = re.compile(r"[A-Za-z0-9_]")


class _Lexer:
    def __init__(self, source: ModelSource):
        self.text = source.text
        self.origin = source.origin
        self.diagnostics: list[Diagnostic] = []
        line_starts = [0]
        for i, ch in enumerate(self.text):
            if ch == "\n":
                line_starts.append(i + 1)
        self._line_starts = line_starts

    def where(self, offset: int) -> tuple[int, int]:
        lo, hi = 0, len(self._line_starts) - 1
        while lo < hi:
            mid = (lo + hi + 1) // 2
            if self._line_starts[mid] <= offset:
                lo = mid
            else:
                hi = mid - 1
        return lo + 1, offset - self._line_starts[lo] + 1

    def error(self, offset: int, kind: str, message: str) -> None:
        line, col = self.where(offset)
        self.diagnostics.append(Diagnostic(line, col, kind, message, self.origin))

    def tokens(self, start: int = 0, stop: int | None = None) -> list[Token]:
        text = self.text
        stop = len(text) if stop is None else stop
        out: list[Token] = []
        i = start
        while i < stop:
            ch = text[i]
            if ch in " \t\r\n•":
                i += 1
                continue
            if ch == "#":
                while i < stop and text[i] != "\n":
                    i += 1
                continue
            line, col = self.where(i)
            if ch.isdigit():
                m = _NUMBER.match(text, i, stop)
                lit = m.group()
                value = float(lit) if any(c in lit for c in ".eE") else int(lit)
                out.append(Token("NUMBER", value, line, col, m.end()))
                i = m.end()
                if i < stop and (text[i].isalpha() or text[i] == "_"):
                    self.error(i, "BadToken", f"identifier may not start with a digit: {lit}{text[i]}...")
                continue
            if ch.isalpha() or ch == "_":
                i = self._ident(i, stop, out, line, col)
                continue
            if ch in "~$":
                j = i + 1
                while j < stop and _WORD.match(text[j]):
                    j += 1
                name = text[i + 1:j]
                if not IDENTIFIER.match(name):
                    self.error(i, "BadVariable", f"malformed variable {text[i:j]!r}")
                out.append(Token("WVAR" if ch == "~" else "TVAR", name, line, col, j))
                i = j
                continue
            for p in _PUNCT:
                if text.startswith(p, i):
                    out.append(Token(p, p, line, col, i + len(p)))
                    i += len(p)
                    break
            else:
                self.error(i, "BadToken", f"unexpected character {ch!r}")
                i += 1
        return out

    def _ident(self, i: int, stop: int, out: list, line: int, col: int) -> int:
        text = self.text
        segments: list = []
        buf = []
        while i < stop:
            ch = text[i]
            if _WORD.match(ch):
                buf.append(ch)
                i += 1
            elif ch == "{" and (buf or segments):
                close = text.find("}", i, stop)
                if close < 0 or "\n" in text[i:close]:
                    self.error(i, "UnterminatedInterpolation", "missing '}' in identifier")
                    i = stop if close < 0 else close
                    break
                if buf:
                    segments.append("".join(buf))
                    buf = []
                inner = self.tokens(i + 1, close)
                segments.append(inner if inner else [])
                if not inner:
                    self.error(i, "EmptyInterpolation", "empty '{}' in identifier")
                i = close + 1
            else:
                break
        if buf:
            segments.append("".join(buf))
        out.append(Token("IDENT", tuple(segments), line, col, i))
        return i


# -- AST -----------------------------------------------------------------

@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Ref:
    name: Name


@dataclass(frozen=True)
class Neg:
    arg: object


@dataclass(frozen=True)
class BinOp:
    op: str
    left: object
    right: object
    pos: tuple = field(default=(0, 0), compare=False)


@dataclass(frozen=True)
class Call:
    func: str
    args: tuple
    pos: tuple = field(default=(0, 0), compare=False)


@dataclass(frozen=True)
class Name:
    """Identifier made of literal text and ``{expr}`` segments."""

    segments: tuple
    pos: tuple = field(default=(0, 0), compare=False)

    @property
    def plain(self) -> str | None:
        if all(isinstance(s, str) for s in self.segments):
            return "".join(self.segments)
        return None


@dataclass
class AtomItem:
    name: Name
    count: object = None
    pos: tuple = (0, 0)


@dataclass
class VarItem:
    kind: str  # "wrap" or "term"
    name: str
    pos: tuple = (0, 0)
    count: object = None


@dataclass
class CompItem:
    wrap: list
    content: list
    label: Name
    count: object = None
    pos: tuple = (0, 0)


@dataclass
class ParamStmt:
    name: str
    expr: object
    pos: tuple


@dataclass
class ForStmt:
    var: str
    lo: object
    hi: object
    body: list
    pos: tuple


@dataclass
class RuleStmt:
    name: Name | None
    context: Name
    lhs: list
    rate: object
    rhs: list
    pos: tuple


@dataclass
class InitStmt:
    term: list
    pos: tuple


@dataclass
class ObserveStmt:
    name: Name
    atom: Name
    glob: list  # [(Name | None, star)]
    scope: str
    scale: object
    pos: tuple


@dataclass
class SimStmt:
    settings: list  # [(key, expr, pos)]
    pos: tuple


@dataclass
class Ast:
    statements: list
    origin: str = "<model>"

    def walk(self):
        """All statements, descending into loop bodies."""
        stack = list(reversed(self.statements))
        while stack:
            st = stack.pop()
            yield st
            if isinstance(st, ForStmt):
                stack.extend(reversed(st.body))


# -- parser --------------------------------------------------------------

class _Abort(Exception):
    pass


class _Parser:
    def __init__(self, source: ModelSource):
        self.lexer = _Lexer(source)
        self.origin = source.origin
        self.toks = self.lexer.tokens()
        self.diagnostics = self.lexer.diagnostics
        self.i = 0
        self._top_ok = False

    # token helpers
    def peek(self, k: int = 0) -> Token | None:
        j = self.i + k
        return self.toks[j] if j < len(self.toks) else None

    def at(self, kind: str) -> bool:
        tok = self.peek()
        return tok is not None and tok.kind == kind

    def at_keyword(self, *words) -> bool:
        tok = self.peek()
        return tok is not None and tok.kind == "IDENT" and tok.value in [(w,) for w in (words or KEYWORDS)]

    def fail(self, tok: Token | None, kind: str, message: str):
        if tok is None:
            line, col = self.lexer.where(len(self.lexer.text))
        else:
            line, col = tok.pos
        self.diagnostics.append(Diagnostic(line, col, kind, message, self.origin))
        raise _Abort

    def fail_at(self, pos, kind: str, message: str):
        self.diagnostics.append(Diagnostic(pos[0], pos[1], kind, message, self.origin))
        raise _Abort

    def expect(self, kind: str, what: str, error: str = "Syntax") -> Token:
        tok = self.peek()
        if tok is None or tok.kind != kind:
            found = "end of input" if tok is None else repr(self._text(tok))
            self.fail(tok, error, f"expected {what}, found {found}")
        self.i += 1
        return tok

    def _text(self, tok: Token) -> str:
        if tok.kind == "IDENT":
            return _name_text(tok.value)
        if tok.kind in ("WVAR", "TVAR"):
            return ("~" if tok.kind == "WVAR" else "$") + tok.value
        return str(tok.value)

    # statements
    def parse(self) -> Ast:
        stmts = self.statements(top=True)
        return Ast(stmts, self.origin)

    def statements(self, top: bool) -> list:
        out = []
        while True:
            while self.at(";"):
                self.i += 1
            tok = self.peek()
            if tok is None or (tok.kind == "}" and not top):
                return out
            try:
                out.append(self.statement())
            except _Abort:
                self.recover()

    def recover(self) -> None:
        self.i += 1
        while self.peek() is not None and not self.at_keyword() and not self.at("}"):
            self.i += 1
        if self.at("}") and self._depth == 0:
            self.i += 1

    _depth = 0

    def statement(self):
        tok = self.peek()
        word = tok.value[0] if tok.kind == "IDENT" and len(tok.value) == 1 else None
        if word not in KEYWORDS or tok.kind != "IDENT":
            self.fail(tok, "Syntax", f"expected a statement, found {self._text(tok)!r}")
        self.i += 1
        return getattr(self, f"st_{word}")(tok.pos)

    def st_param(self, pos):
        name = self.plain_name("parameter name")
        self.expect("=", "'='")
        return ParamStmt(name, self.expr(), pos)

    def st_for(self, pos):
        var = self.plain_name("loop variable")
        tok = self.expect("IDENT", "'in'")
        if tok.value != ("in",):
            self.fail(tok, "Syntax", "expected 'in'")
        lo = self.expr()
        self.expect("..", "'..'")
        hi = self.expr()
        self.expect("{", "'{'")
        self._depth += 1
        try:
            body = self.statements(top=False)
        finally:
            self._depth -= 1
        self.expect("}", "'}' closing the loop", "UnterminatedLoop")
        return ForStmt(var, lo, hi, body, pos)

    def st_rule(self, pos):
        name = None
        if self.at("IDENT"):
            name = self.name()
        self.expect("@", "'@' before the rule context")
        context = self.name()
        self.expect(":", "':' after the rule context")
        lhs = self.term({"->"})
        self.expect("->", "'->'")
        opening = self.expect("[", "'[' opening the rate", "MissingRate")
        rate = self.expr()
        tok = self.peek()
        if tok is None or tok.kind != "]":
            self.fail(tok, "UnterminatedRate",
                      f"rate opened at {opening.line}:{opening.col} is not closed by ']'")
        self.i += 1
        rhs = self.term(set())
        return RuleStmt(name, context, lhs, rate, rhs, pos)

    def st_init(self, pos):
        self.expect(":", "':' after init")
        self._top_ok = True  # only the first item, checked below
        term = self.term(set())
        self._top_ok = False
        tops = [it for it in term if isinstance(it, CompItem) and it.label.plain == TOP]
        if tops and (len(term) > 1 or tops[0].count is not None or tops[0].wrap):
            self.fail_at(tops[0].pos, "ReservedLabel", "'top' labels only the outermost compartment")
        if (len(term) == 1 and isinstance(term[0], CompItem) and term[0].label.plain == TOP
                and term[0].count is None and not term[0].wrap):
            term = term[0].content
        return InitStmt(term, pos)

    def st_observe(self, pos):
        name = self.name()
        self.expect(":", "':' after the observable name")
        tok = self.expect("IDENT", "'count'")
        if tok.value != ("count",):
            self.fail(tok, "Syntax", "expected 'count'")
        atom = self.name()
        tok = self.expect("IDENT", "'in'")
        if tok.value != ("in",):
            self.fail(tok, "Syntax", "expected 'in'")
        glob = [self.glob_segment()]
        while self.at("/"):
            self.i += 1
            glob.append(self.glob_segment())
        tok = self.expect("IDENT", "a scope (content, wrap or both)", "BadScope")
        scope = _name_text(tok.value)
        if scope not in SCOPES:
            self.fail(tok, "BadScope", f"scope must be content, wrap or both, not {scope!r}")
        scale = None
        if self.at_keyword("scale") or (self.at("IDENT") and self.peek().value == ("scale",)):
            self.i += 1
            scale = self.expr()
        return ObserveStmt(name, atom, glob, scope, scale, pos)

    def glob_segment(self):
        if self.at("*"):
            self.i += 1
            return (None, True)
        name = self.name()
        star = False
        if self.at("*"):
            self.i += 1
            star = True
        return (name, star)

    def st_sim(self, pos):
        settings = []
        while self.at("IDENT") and not self.at_keyword():
            tok = self.peek()
            key = self.plain_name("setting")
            self.expect("=", "'='")
            settings.append((key, self.expr(), tok.pos))
        return SimStmt(settings, pos)

    # names
    def name(self) -> Name:
        tok = self.expect("IDENT", "an identifier")
        segs = []
        for seg in tok.value:
            if isinstance(seg, str):
                segs.append(seg)
            else:
                segs.append(_Parser._sub(self, seg, tok))
        return Name(tuple(segs), tok.pos)

    def _sub(self, tokens: list, owner: Token):
        saved = self.toks, self.i
        self.toks, self.i = tokens + [Token("EOF", None, owner.line, owner.col)], 0
        try:
            e = self.expr()
            if not self.at("EOF"):
                self.fail(self.peek(), "Syntax", "unexpected input inside '{}'")
            return e
        finally:
            self.toks, self.i = saved

    def plain_name(self, what: str) -> str:
        tok = self.expect("IDENT", what)
        text = _name_text(tok.value)
        if not all(isinstance(s, str) for s in tok.value):
            self.fail(tok, "Syntax", f"{what} cannot be interpolated")
        return text

    # terms
    def term(self, stops: set) -> list:
        items = []
        while True:
            tok = self.peek()
            if tok is None or tok.kind in ("}", "|", ")", "]", "->", ";", "EOF") or tok.kind in stops:
                return items
            if self.at_keyword():
                return items
            items.append(self.simple(allow_comp=True))

    def simple(self, allow_comp: bool):
        top_ok, self._top_ok = self._top_ok, False
        tok = self.peek()
        count = None
        if tok.kind == "NUMBER" and self.peek(1) is not None and self.peek(1).kind == "*":
            if not isinstance(tok.value, int):
                self.fail(tok, "BadCount", f"repetition count must be an integer, not {tok.value}")
            count = Num(tok.value)
            self.i += 2
        elif tok.kind == "{":
            self.i += 1
            count = self.expr()
            self.expect("}", "'}'")
            self.expect("*", "'*' after a repetition count")
        tok = self.peek()
        if tok is None:
            self.fail(tok, "Syntax", "unexpected end of input in a term")
        if tok.kind == "IDENT":
            return AtomItem(self.name(), count, tok.pos)
        if tok.kind in ("WVAR", "TVAR"):
            self.i += 1
            return VarItem("wrap" if tok.kind == "WVAR" else "term", tok.value, tok.pos, count)
        if tok.kind == "(" and allow_comp:
            self.i += 1
            wrap = []
            while not self.at("|"):
                t = self.peek()
                if t is None or t.kind in (")", "->", "]", "^") or self.at_keyword():
                    self.fail(t or tok, "UnterminatedCompartment",
                              f"compartment opened at {tok.line}:{tok.col} has no '|'")
                if t.kind == "(":
                    self.fail(t, "WrapContainsCompartment", "a wrap may only hold atoms and ~variables")
                wrap.append(self.simple(allow_comp=False))
            self.i += 1
            content = self.term(set())
            t = self.peek()
            if t is None or t.kind != ")":
                self.fail(t or tok, "UnterminatedCompartment",
                          f"compartment opened at {tok.line}:{tok.col} is not closed by ')'")
            self.i += 1
            self.expect("^", "'^label' after a compartment", "MissingLabel")
            label = self.name()
            if label.plain == TOP and not top_ok:
                self.fail(self.toks[self.i - 1], "ReservedLabel", "'top' labels only the outermost compartment")
            return CompItem(wrap, content, label, count, tok.pos)
        self.fail(tok, "Syntax", f"unexpected {self._text(tok)!r} in a term")

    # expressions
    def expr(self):
        node = self.product()
        while self.at("+") or self.at("-"):
            op = self.peek()
            self.i += 1
            node = BinOp(op.kind, node, self.product(), op.pos)
        return node

    def product(self):
        node = self.unary()
        while self.at("*") or self.at("/") or self.at("%"):
            op = self.peek()
            self.i += 1
            node = BinOp(op.kind, node, self.unary(), op.pos)
        return node

    def unary(self):
        if self.at("-"):
            self.i += 1
            return Neg(self.unary())
        if self.at("+"):
            self.i += 1
            return self.unary()
        return self.primary()

    def primary(self):
        tok = self.peek()
        if tok is None or tok.kind == "EOF":
            self.fail(tok, "BadExpression", "expected a number or name")
        if tok.kind == "NUMBER":
            self.i += 1
            return Num(tok.value)
        if tok.kind == "(":
            self.i += 1
            e = self.expr()
            self.expect(")", "')'")
            return e
        if tok.kind == "IDENT":
            if self.peek(1) is not None and self.peek(1).kind == "(" and len(tok.value) == 1 \
                    and isinstance(tok.value[0], str):
                self.i += 2
                args = [self.expr()]
                while self.at(","):
                    self.i += 1
                    args.append(self.expr())
                self.expect(")", "')' closing the call")
                return Call(tok.value[0], tuple(args), tok.pos)
            return Ref(self.name())
        self.fail(tok, "BadExpression", f"unexpected {self._text(tok)!r} in an expression")


def _name_text(segments) -> str:
    return "".join(s if isinstance(s, str) else "{...}" for s in segments)


def parse(source: ModelSource | str) -> Ast:
    """Parse model text; raises :class:`ModelError` listing every problem."""
    if isinstance(source, str):
        source = ModelSource(source)
    parser = _Parser(source)
    ast = parser.parse()
    if parser.diagnostics:
        raise ModelError(parser.diagnostics)
    return ast


# -- expansion -----------------------------------------------------------

class _ExpandError(Exception):
    def __init__(self, pos, kind, message):
        self.pos, self.kind, self.message = pos, kind, message


def _wrap(x, n):
    return (x - 1) % n + 1


_FUNCS = {
    "wrap5": (1, lambda x: _wrap(x, 5)),
    "wrap": (2, _wrap),
    "min": (2, min),
    "max": (2, max),
}


class _Expander:
    def __init__(self, ast: Ast, overrides: dict):
        self.ast = ast
        self.origin = ast.origin
        self.overrides = dict(overrides or {})
        self.params: dict[str, float] = {}
        self.diagnostics: list[Diagnostic] = []
        self.rules: list[Rule] = []
        self.rule_pos: dict[str, tuple] = {}
        self.init = Term()
        self.observables: list[Observable] = []
        self.defaults: dict[str, float] = {}

    def diag(self, pos, kind, message):
        self.diagnostics.append(Diagnostic(pos[0], pos[1], kind, message, self.origin))

    # evaluation
    def value(self, node, env):
        if isinstance(node, Num):
            return node.value
        if isinstance(node, Ref):
            key = self.name(node.name, env)
            if key in env:
                return env[key]
            if key in self.params:
                return self.params[key]
            raise _ExpandError(node.name.pos, "UnboundIdentifier", f"{key!r} is not a parameter or loop index")
        if isinstance(node, Neg):
            return -self.value(node.arg, env)
        if isinstance(node, BinOp):
            a, b = self.value(node.left, env), self.value(node.right, env)
            if node.op == "+":
                return a + b
            if node.op == "-":
                return a - b
            if node.op == "*":
                return a * b
            if b == 0:
                raise _ExpandError(node.pos, "DivisionByZero", "division by zero")
            if node.op == "%":
                return a % b
            q = a / b
            if isinstance(a, int) and isinstance(b, int) and q == int(q):
                return int(q)
            return q
        if isinstance(node, Call):
            if node.func not in _FUNCS:
                raise _ExpandError(node.pos, "UnknownFunction", f"unknown function {node.func!r}")
            arity, fn = _FUNCS[node.func]
            if len(node.args) != arity:
                raise _ExpandError(node.pos, "BadArity", f"{node.func} takes {arity} argument(s)")
            args = [self.integer(a, env, node.pos) for a in node.args]
            if node.func == "wrap" and args[1] <= 0:
                raise _ExpandError(node.pos, "DivisionByZero", "wrap modulus must be positive")
            return fn(*args)
        raise TypeError(node)

    def integer(self, node, env, pos) -> int:
        v = self.value(node, env)
        if isinstance(v, float):
            if not v.is_integer():
                raise _ExpandError(pos, "NonIntegerIndex", f"index expression evaluates to {v}")
            v = int(v)
        return v

    def name(self, name: Name, env) -> str:
        out = []
        for seg in name.segments:
            out.append(seg if isinstance(seg, str) else str(self.integer(seg, env, name.pos)))
        return "".join(out)

    def ident(self, name: Name, env, what: str) -> str:
        text = self.name(name, env)
        if not IDENTIFIER.match(text):
            raise _ExpandError(name.pos, "InvalidIdentifier", f"{what} {text!r} is not a valid identifier")
        return text

    def label(self, name: Name, env) -> str:
        text = self.ident(name, env, "label")
        if text == TOP:
            raise _ExpandError(name.pos, "ReservedLabel", "'top' labels only the outermost compartment")
        return text

    def count(self, item, env) -> int:
        if item.count is None:
            return 1
        n = self.integer(item.count, env, item.pos)
        if n < 0:
            raise _ExpandError(item.pos, "BadCount", f"negative repetition count {n}")
        return n

    # statements
    def run(self) -> Model:
        self.block(self.ast.statements, {})
        for key in sorted(set(self.overrides) - set(self.params)):
            near = suggest(key, self.params)
            hint = f"; did you mean {', '.join(near)}?" if near else ""
            self.diagnostics.append(Diagnostic(1, 1, "UnknownParameter",
                                               f"override for undeclared parameter {key!r}{hint}", self.origin))
        if self.diagnostics:
            raise ModelError(self.diagnostics)
        canonicalize_in_place(self.init)
        return Model(Path(self.origin).stem, self.rules, self.init, self.observables,
                     self.defaults, dict(self.params))

    def block(self, statements, env):
        for st in statements:
            try:
                getattr(self, "do_" + type(st).__name__)(st, env)
            except _ExpandError as exc:
                self.diag(exc.pos, exc.kind, exc.message)

    def do_ParamStmt(self, st, env):
        if st.name in self.params:
            raise _ExpandError(st.pos, "DuplicateParameter", f"parameter {st.name!r} declared twice")
        if st.name in self.overrides:
            self.params[st.name] = float(self.overrides[st.name])
        else:
            self.params[st.name] = float(self.value(st.expr, env))

    def do_ForStmt(self, st, env):
        lo = self.integer(st.lo, env, st.pos)
        hi = self.integer(st.hi, env, st.pos)
        for i in range(lo, hi + 1):
            self.block(st.body, {**env, st.var: i})

    def do_InitStmt(self, st, env):
        term = self.ground(st.term, env)
        for a, n in term.atoms.items():
            self.init.atoms[a] = self.init.atoms.get(a, 0) + n
        self.init.compartments.extend(term.compartments)

    def do_SimStmt(self, st, env):
        for key, expr, pos in st.settings:
            if key not in SIM_KEYS:
                raise _ExpandError(pos, "UnknownSetting", f"unknown sim setting {key!r}; "
                                   f"expected one of {sorted(SIM_KEYS)}")
            v = self.value(expr, env)
            self.defaults[key] = int(v) if key in ("seed", "max_events") else float(v)

    def do_ObserveStmt(self, st, env):
        name = self.ident(st.name, env, "observable name")
        if any(o.name == name for o in self.observables):
            raise _ExpandError(st.pos, "DuplicateObservable", f"observable {name!r} defined twice")
        segs = []
        for seg, star in st.glob:
            text = "" if seg is None else self.name(seg, env)
            segs.append(text + ("*" if star else ""))
        scale = 1.0 if st.scale is None else float(self.value(st.scale, env))
        atom = self.ident(st.atom, env, "atom")
        self.observables.append(Observable(name, atom, "/".join(segs), st.scope, scale))

    def do_RuleStmt(self, st, env):
        rate = float(self.value(st.rate, env))
        name = (self.ident(st.name, env, "rule name") if st.name is not None
                else f"r{len(self.rules) + 1}")
        context = self.ident(st.context, env, "context label")
        if rate == 0:
            return
        lhs, rest = self.pattern(st.lhs, env, top=True)
        rhs_items = list(st.rhs)
        if rest is not None:
            for k, item in enumerate(rhs_items):
                if isinstance(item, VarItem) and item.kind == "term" and item.name == rest:
                    del rhs_items[k]
                    break
            else:
                raise _ExpandError(st.pos, "UnboundVariable",
                                   f"rule {name}: the context rest ${rest} must reappear on the right")
        rhs = self.open_term(rhs_items, env)
        rule = Rule(name, context, lhs, rhs, rate)
        if name in self.rule_pos:
            raise _ExpandError(st.pos, "DuplicateRule", f"rule name {name!r} already used at "
                               f"line {self.rule_pos[name][0]}")
        for v in validate_rule(rule):
            self.diag(st.pos, v.kind, v.message)
        self.rule_pos[name] = st.pos
        self.rules.append(rule)

    # term conversion
    def pattern(self, items, env, top=False):
        atoms: dict[str, int] = {}
        comps = []
        tvars = []
        for item in items:
            n = self.count(item, env)
            if isinstance(item, AtomItem):
                a = self.ident(item.name, env, "atom")
                atoms[a] = atoms.get(a, 0) + n
            elif isinstance(item, VarItem):
                if item.kind == "wrap":
                    raise _ExpandError(item.pos, "MisplacedVariable", f"wrap variable ~{item.name} in a content")
                if item.count is not None:
                    raise _ExpandError(item.pos, "BadCount", "a variable cannot be repeated")
                tvars.append(item.name)
            else:
                for _ in range(n):
                    comps.append(self.comp_pattern(item, env))
        pattern = Pattern(tuple(atoms.items()), tuple(comps))
        if top:
            if len(tvars) > 1:
                raise _ExpandError(items[0].pos, "Linearity", "at most one rest variable in a rule context")
            return pattern, (tvars[0] if tvars else None)
        return pattern, tvars

    def comp_pattern(self, item: CompItem, env) -> CompartmentPattern:
        wrap_atoms: dict[str, int] = {}
        wrap_vars = []
        for w in item.wrap:
            if isinstance(w, VarItem):
                if w.kind == "term":
                    raise _ExpandError(w.pos, "MisplacedVariable", f"term variable ${w.name} on a wrap")
                wrap_vars.append(w.name)
            else:
                a = self.ident(w.name, env, "atom")
                wrap_atoms[a] = wrap_atoms.get(a, 0) + self.count(w, env)
        content, tvars = self.pattern(item.content, env)
        return CompartmentPattern(self.label(item.label, env), tuple(wrap_atoms.items()),
                                  tuple(wrap_vars), content, tuple(tvars))

    def open_term(self, items, env) -> OpenTerm:
        atoms: dict[str, int] = {}
        tvars = []
        comps = []
        for item in items:
            if isinstance(item, VarItem):
                if item.kind == "wrap":
                    raise _ExpandError(item.pos, "MisplacedVariable", f"wrap variable ~{item.name} in a content")
                tvars.extend([item.name] * self.count(item, env))
                continue
            n = self.count(item, env)
            if isinstance(item, AtomItem):
                a = self.ident(item.name, env, "atom")
                atoms[a] = atoms.get(a, 0) + n
            else:
                comps.extend([self.open_comp(item, env)] * n)
        return OpenTerm(tuple(atoms.items()), tuple(tvars), tuple(comps))

    def open_comp(self, item: CompItem, env) -> OpenCompartment:
        wrap_atoms: dict[str, int] = {}
        wrap_vars = []
        for w in item.wrap:
            if isinstance(w, VarItem):
                if w.kind == "term":
                    raise _ExpandError(w.pos, "MisplacedVariable", f"term variable ${w.name} on a wrap")
                wrap_vars.append(w.name)
            else:
                a = self.ident(w.name, env, "atom")
                wrap_atoms[a] = wrap_atoms.get(a, 0) + self.count(w, env)
        return OpenCompartment(self.label(item.label, env), tuple(wrap_atoms.items()),
                               tuple(wrap_vars), self.open_term(item.content, env))

    def ground(self, items, env) -> Term:
        term = Term()
        for item in items:
            if isinstance(item, VarItem):
                raise _ExpandError(item.pos, "VariableInInit", "the initial term cannot contain variables")
            n = self.count(item, env)
            if isinstance(item, AtomItem):
                a = self.ident(item.name, env, "atom")
                if n:
                    term.atoms[a] = term.atoms.get(a, 0) + n
                continue
            wrap: dict[str, int] = {}
            for w in item.wrap:
                if isinstance(w, VarItem):
                    raise _ExpandError(w.pos, "VariableInInit", "the initial term cannot contain variables")
                a = self.ident(w.name, env, "atom")
                k = self.count(w, env)
                if k:
                    wrap[a] = wrap.get(a, 0) + k
            label = self.label(item.label, env)
            content = self.ground(item.content, env)
            for _ in range(n):
                term.compartments.append(Compartment(label, wrap, _copy(content)))
        return term


def _copy(term: Term) -> Term:
    return Term(term.atoms, [Compartment(c.label, c.wrap, _copy(c.content)) for c in term.compartments])


def expand(ast: Ast, params: dict | None = None) -> Model:
    """Unroll loops, evaluate names and rates, validate every rule.

    ``params`` overrides ``param`` declarations by name.
    """
    return _Expander(ast, params or {}).run()


def load(source, params: dict | None = None) -> Model:
    if isinstance(source, (str, Path)) and not isinstance(source, ModelSource) and Path(str(source)).suffix == ".cwc" \
            and "\n" not in str(source):
        source = ModelSource.from_path(source)
    return expand(parse(source), params)


def suggest(name: str, choices) -> list[str]:
    """Close spellings of ``name``, case-insensitive matches first."""
    choices = list(choices)
    same = [c for c in choices if c.lower() == name.lower() and c != name]
    near = difflib.get_close_matches(name, choices, n=5, cutoff=0.5)
    return same + [c for c in near if c not in same]


# -- printing ------------------------------------------------------------

def _fmt_atoms(pairs) -> list[str]:
    return [a if n == 1 else f"{n}*{a}" for a, n in pairs]


def format_pattern(p: Pattern) -> str:
    parts = _fmt_atoms(p.atoms)
    for cp in p.compartments:
        wrap = " ".join(_fmt_atoms(cp.wrap_atoms) + [f"~{v}" for v in cp.wrap_vars])
        inner = " ".join(filter(None, [format_pattern(cp.content)] + [f"${v}" for v in cp.content_vars]))
        parts.append(f"({wrap} | {inner})^{cp.label}")
    return " ".join(parts)


def format_open(o: OpenTerm) -> str:
    parts = _fmt_atoms(o.atoms) + [f"${v}" for v in o.vars]
    for oc in o.compartments:
        wrap = " ".join(_fmt_atoms(oc.wrap_atoms) + [f"~{v}" for v in oc.wrap_vars])
        parts.append(f"({wrap} | {format_open(oc.content)})^{oc.label}")
    return " ".join(parts)


def format_rule(rule: Rule) -> str:
    return f"rule {rule.name} @{rule.context}: {format_pattern(rule.lhs)} -> [{rule.rate!r}] {format_open(rule.rhs)}".rstrip()


def format_model(model: Model) -> str:
    """Surface syntax for an expanded model; re-parsing yields an equal model."""
    from .terms import format_term
    lines = [f"# {model.name} (expanded)"]
    for k, v in model.params.items():
        lines.append(f"param {k} = {v!r}")
    if model.defaults:
        lines.append("sim " + " ".join(f"{k}={v!r}" for k, v in model.defaults.items()))
    for o in model.observables:
        scale = "" if o.scale == 1.0 else f" scale {o.scale!r}"
        lines.append(f"observe {o.name} : count {o.atom} in {o.label_glob} {o.scope}{scale}")
    lines.extend(format_rule(r) for r in model.rules)
    lines.append(f"init: {format_term(model.init)}".rstrip())
    return "\n".join(lines) + "\n"
