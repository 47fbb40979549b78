"""Text format for multimode models.

::

    model cup_and_ball;
    param L = 1;
    param g = 981/100;
    var x, y, lambda;
    mode free {
      eq e1: der(x,2) + lambda*x = 0;
      ...
    }
    transition free -> straight on up(x^2 + y^2 - L^2);
    transition straight -> free exogenous;

Other statements: ``input u;`` declares a variable whose values are given
from outside; ``function f(2);`` declares an opaque smooth function of two
arguments.  ``fact EXPR`` clauses after ``on up(...)`` add known facts.
Comments start with ``#`` or ``//``.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from fractions import Fraction

from .errors import MdaeError, ModelError
from .expr import Expr, VarKey, differentiate, shift
from .graph import dm_decompose
from .mcarray import ModeChange
from .sigma import DAESystem, solve_sigma

BUILTIN_FUNCTIONS = {"sin": 1, "cos": 1, "exp": 1}
_RESERVED = {"der", "shift", "pre", "post", "scaled", "eps"} | set(BUILTIN_FUNCTIONS)

_TOKEN = re.compile(r"""
    (?P<ws>[ \t\r]+) | (?P<nl>\n) | (?P<comment>(\#|//)[^\n]*)
  | (?P<num>\d+(\.\d+)?([eE][-+]?\d+)?)
  | (?P<name>[A-Za-z_][A-Za-z_0-9]*)
  | (?P<arrow>->)
  | (?P<op>[-+*/^(){},;:=])
""", re.VERBOSE)


@dataclass(frozen=True)
class Token:
    kind: str
    text: str
    line: int
    col: int


def tokenize(text: str) -> list[Token]:
    out, line, start, pos = [], 1, 0, 0
    while pos < len(text):
        mt = _TOKEN.match(text, pos)
        if not mt:
            raise ModelError(f"unexpected character {text[pos]!r}",
                             [(line, pos - start + 1, f"unexpected character {text[pos]!r}")])
        kind = mt.lastgroup
        if kind == "nl":
            line += 1
            start = mt.end()
        elif kind not in ("ws", "comment"):
            out.append(Token(kind, mt.group(), line, pos - start + 1))
        pos = mt.end()
    out.append(Token("eof", "", line, pos - start + 1))
    return out


@dataclass(frozen=True)
class Transition:
    source: str
    target: str
    zero_crossing: Expr | None
    facts: tuple[Expr, ...] = ()

    @property
    def exogenous(self) -> bool:
        return self.zero_crossing is None


@dataclass
class Model:
    name: str
    params: dict[str, Fraction | None] = field(default_factory=dict)
    variables: list[str] = field(default_factory=list)
    inputs: list[str] = field(default_factory=list)
    functions: dict[str, int] = field(default_factory=dict)
    modes: dict[str, list[tuple[str, Expr]]] = field(default_factory=dict)
    transitions: list[Transition] = field(default_factory=list)

    def param_values(self) -> dict[str, Fraction]:
        return {k: v for k, v in self.params.items() if v is not None}

    def system(self, mode: str) -> DAESystem:
        if mode not in self.modes:
            raise ModelError(f"unknown mode {mode}")
        eqs = dict(self.modes[mode])
        return DAESystem(mode, eqs, tuple(self.variables), tuple(self.inputs))

    def transition(self, source: str, target: str) -> Transition:
        for t in self.transitions:
            if t.source == source and t.target == target:
                return t
        raise ModelError(f"no transition {source} -> {target}")

    def mode_change(self, source: str, target: str) -> ModeChange:
        t = self.transition(source, target)
        return ModeChange(self.system(source), self.system(target), t.zero_crossing, t.facts,
                          f"{source}->{target}")


class _Parser:
    def __init__(self, text: str, model: Model | None = None, lenient: bool = False):
        self.toks = tokenize(text)
        self.i = 0
        self.model = model or Model("")
        self.lenient = lenient

    # token helpers ----------------------------------------------------
    @property
    def tok(self) -> Token:
        return self.toks[self.i]

    def error(self, msg: str, tok: Token | None = None) -> ModelError:
        t = tok or self.tok
        return ModelError(f"line {t.line}, column {t.col}: {msg}", [(t.line, t.col, msg)])

    def accept(self, text: str) -> bool:
        if self.tok.text == text and self.tok.kind in ("op", "arrow", "name"):
            self.i += 1
            return True
        return False

    def expect(self, text: str) -> Token:
        t = self.tok
        if not self.accept(text):
            raise self.error(f"expected {text!r}, found {t.text or 'end of file'!r}")
        return t

    def name(self) -> str:
        t = self.tok
        if t.kind != "name":
            raise self.error(f"expected a name, found {t.text or 'end of file'!r}")
        self.i += 1
        return t.text

    def integer(self) -> int:
        neg = self.accept("-")
        t = self.tok
        if t.kind != "num" or not t.text.isdigit():
            raise self.error("expected an integer")
        self.i += 1
        return -int(t.text) if neg else int(t.text)

    # declarations -----------------------------------------------------
    def declared(self, name: str, tok: Token) -> None:
        m = self.model
        if name in _RESERVED:
            raise self.error(f"{name} is reserved", tok)
        if name in m.params or name in m.variables or name in m.inputs or name in m.functions:
            raise self.error(f"{name} is already declared", tok)

    def parse_model(self) -> Model:
        m = self.model
        if self.tok.kind == "eof":
            raise self.error("empty model")
        self.expect("model")
        m.name = self.name()
        self.accept(";")
        while self.tok.kind != "eof":
            t = self.tok
            if self.accept("param"):
                tok = self.tok
                n = self.name()
                self.declared(n, tok)
                value = None
                if self.accept("="):
                    e = self.expr()
                    if not e.is_constant:
                        raise self.error("parameter values must be numbers", tok)
                    value = e.constant_value()
                m.params[n] = value
                self.expect(";")
            elif t.text in ("var", "input"):
                self.i += 1
                target = m.variables if t.text == "var" else m.inputs
                while True:
                    tok = self.tok
                    n = self.name()
                    self.declared(n, tok)
                    target.append(n)
                    if not self.accept(","):
                        break
                self.expect(";")
            elif self.accept("function"):
                tok = self.tok
                n = self.name()
                self.declared(n, tok)
                self.expect("(")
                m.functions[n] = self.integer()
                self.expect(")")
                self.expect(";")
            elif self.accept("mode"):
                tok = self.tok
                n = self.name()
                if n in m.modes:
                    raise self.error(f"mode {n} is already declared", tok)
                self.expect("{")
                eqs = []
                while not self.accept("}"):
                    self.expect("eq")
                    label = self.name()
                    self.expect(":")
                    lhs = self.expr()
                    self.expect("=")
                    rhs = self.expr()
                    self.expect(";")
                    eqs.append((label, lhs - rhs))
                m.modes[n] = eqs
            elif self.accept("transition"):
                src_tok = self.tok
                src = self.name()
                self.expect("->")
                dst_tok = self.tok
                dst = self.name()
                for name_, tk in ((src, src_tok), (dst, dst_tok)):
                    if name_ not in m.modes:
                        raise self.error(f"unknown mode {name_}", tk)
                if self.accept("exogenous"):
                    m.transitions.append(Transition(src, dst, None))
                else:
                    self.expect("on")
                    self.expect("up")
                    self.expect("(")
                    g = self.expr()
                    self.expect(")")
                    facts = []
                    while self.accept("fact"):
                        facts.append(self.expr())
                    m.transitions.append(Transition(src, dst, g, tuple(facts)))
                self.expect(";")
            else:
                raise self.error(f"unexpected {t.text!r}")
        return m

    # expressions ------------------------------------------------------
    def expr(self) -> Expr:
        e = self.term()
        while True:
            if self.accept("+"):
                e = e + self.term()
            elif self.accept("-"):
                e = e - self.term()
            else:
                return e

    def term(self) -> Expr:
        e = self.unary()
        while True:
            if self.accept("*"):
                e = e * self.unary()
            elif self.accept("/"):
                tok = self.tok
                d = self.unary()
                if not d.is_constant or d.is_zero:
                    raise self.error("division is only allowed by nonzero numbers", tok)
                e = e / d
            else:
                return e

    def unary(self) -> Expr:
        if self.accept("-"):
            return -self.unary()
        if self.accept("+"):
            return self.unary()
        return self.power()

    def power(self) -> Expr:
        base = self.atom()
        if self.accept("^"):
            if self.accept("("):
                n = self.integer()
                self.expect(")")
            else:
                n = self.integer()
            if base == Expr.atom(_EPS_MARK):
                return Expr.eps_pow(n)
            if n < 0:
                raise self.error("negative powers are not supported")
            return base ** n
        if base == Expr.atom(_EPS_MARK):
            return Expr.eps_pow(1)
        return base

    def atom(self) -> Expr:
        t = self.tok
        if t.kind == "num":
            self.i += 1
            return Expr.const(Fraction(t.text))
        if self.accept("("):
            e = self.expr()
            self.expect(")")
            return e
        n = self.name()
        m = self.model
        if n == "eps":
            return Expr.atom(_EPS_MARK)
        if n in ("der", "shift"):
            self.expect("(")
            e = self.expr()
            k = 1
            if self.accept(","):
                k = self.integer()
            self.expect(")")
            if n == "der":
                if k < 0:
                    raise self.error("derivative order must be nonnegative", t)
                return differentiate(e, k)
            return shift(e, k)
        if n in ("pre", "post", "scaled"):
            self.expect("(")
            e = self.expr()
            self.expect(")")
            tag = {"pre": "-", "post": "+", "scaled": "r"}[n]
            return e.substitute(lambda v: Expr.var(v.with_tag(tag)))
        if self.tok.text == "(" and self.tok.kind == "op":
            if n not in m.functions and n not in BUILTIN_FUNCTIONS and not self.lenient:
                raise self.error(f"unknown function {n}", t)
            self.expect("(")
            args = [self.expr()]
            while self.accept(","):
                args.append(self.expr())
            self.expect(")")
            arity = m.functions.get(n, BUILTIN_FUNCTIONS.get(n))
            if arity is not None and arity != len(args):
                raise self.error(f"{n} expects {arity} arguments, got {len(args)}", t)
            return Expr.apply(n, args)
        if n in m.params:
            return Expr.param(n)
        if n in m.variables or n in m.inputs:
            return Expr.var(n)
        if self.lenient:
            return Expr.var(n)
        raise self.error(f"unknown identifier {n}", t)


# a private marker atom so that eps^(p) can be read back from printed output
_EPS_MARK = VarKey("__eps__")


def parse_model(text: str) -> Model:
    return _Parser(text).parse_model()


def load_model(path) -> Model:
    try:
        with open(path, encoding="utf-8") as fh:
            return parse_model(fh.read())
    except OSError as exc:
        raise ModelError(f"cannot read {path}: {exc.strerror}") from exc


def parse_expr(text: str, model: Model | None = None) -> Expr:
    """Parse one expression; without a model, unknown names are variables."""
    p = _Parser(text, model, lenient=model is None)
    e = p.expr()
    if p.tok.kind != "eof":
        raise p.error(f"unexpected {p.tok.text!r}")
    return e


def _fmt_fraction(v: Fraction) -> str:
    return str(v.numerator) if v.denominator == 1 else f"{v.numerator}/{v.denominator}"


def print_model(m: Model) -> str:
    lines = [f"model {m.name};"]
    for n, v in m.params.items():
        lines.append(f"param {n};" if v is None else f"param {n} = {_fmt_fraction(v)};")
    if m.variables:
        lines.append("var " + ", ".join(m.variables) + ";")
    if m.inputs:
        lines.append("input " + ", ".join(m.inputs) + ";")
    for n, a in m.functions.items():
        lines.append(f"function {n}({a});")
    for mode, eqs in m.modes.items():
        lines.append(f"mode {mode} {{")
        for label, e in eqs:
            lines.append(f"  eq {label}: {e} = 0;")
        lines.append("}")
    for t in m.transitions:
        if t.exogenous:
            lines.append(f"transition {t.source} -> {t.target} exogenous;")
        else:
            facts = "".join(f" fact {f}" for f in t.facts)
            lines.append(f"transition {t.source} -> {t.target} on up({t.zero_crossing}){facts};")
    return "\n".join(lines) + "\n"


# ----------------------------------------------------------------------
# validation


@dataclass(frozen=True)
class Finding:
    kind: str
    mode: str | None
    message: str
    certificate: dict | None = None

    def to_json(self) -> dict:
        out = {"kind": self.kind, "mode": self.mode, "message": self.message}
        if self.certificate is not None:
            out["certificate"] = self.certificate
        return out


@dataclass
class ValidationReport:
    findings: list[Finding]
    offsets: dict[str, dict]

    @property
    def ok(self) -> bool:
        return not self.findings

    def to_json(self) -> dict:
        return {"ok": self.ok, "findings": [f.to_json() for f in self.findings],
                "modes": self.offsets}


def validate_model(m: Model) -> ValidationReport:
    findings, offsets = [], {}
    for mode, eqs in m.modes.items():
        labels = [label for label, _ in eqs]
        dupes = sorted({x for x in labels if labels.count(x) > 1})
        if dupes:
            findings.append(Finding("duplicate-label", mode,
                                    f"duplicate equation labels: {', '.join(dupes)}"))
            continue
        s = m.system(mode)
        if not s.is_square:
            kind = "under-determined" if len(eqs) < len(m.variables) else "over-determined"
            findings.append(Finding(kind, mode,
                                    f"{len(eqs)} equations for {len(m.variables)} variables",
                                    dm_decompose(s.incidence()).to_json()))
            continue
        try:
            so = solve_sigma(s)
        except MdaeError as exc:
            cert = exc.certificate.to_json() if hasattr(exc.certificate, "to_json") else None
            findings.append(Finding("structurally-singular", mode, str(exc), cert))
            continue
        offsets[mode] = so.to_json()
    known = set(m.variables) | set(m.inputs)
    for t in m.transitions:
        for e in ([t.zero_crossing] if t.zero_crossing is not None else []) + list(t.facts):
            bad = sorted(str(v) for v in e.variables if v.base not in known or v.k or v.tag)
            if bad:
                findings.append(Finding("guard-scope", t.source,
                                        f"transition {t.source} -> {t.target} uses {', '.join(bad)}"))
    return ValidationReport(findings, offsets)
