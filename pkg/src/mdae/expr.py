"""Symbolic kernel.

Expressions are kept in expanded form: a finite sum of terms
``coeff * eps**p * prod(atom**power)``.  Atoms are variables (:class:`VarKey`),
named parameters (:class:`Param`) and applications of opaque smooth functions
(:class:`Apply`).  Because every expression is stored already expanded with
exact rational coefficients, normalization is the identity and structural
equality is plain dictionary equality.

The exponent ``p`` is the power of epsilon itself, so the factor
``eps**-n`` is stored with ``p = -n``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from functools import cached_property
from typing import Callable, Iterable, Mapping, Union

from .errors import EpsilonSingularity, MissingVariable

Number = Union[int, Fraction]

TAGS = ("", "-", "+", "r")
_TAG_WRAP = {"-": "pre", "+": "post", "r": "scaled"}


@dataclass(frozen=True)
class VarKey:
    """Variable ``base`` differentiated ``m`` times and shifted ``k`` steps.

    ``tag`` selects a namespace: ``""`` for array variables, ``"-"`` for
    left limits, ``"+"`` for restart values and ``"r"`` for rescaled
    auxiliaries.
    """

    base: str
    m: int = 0
    k: int = 0
    tag: str = ""

    def __post_init__(self):
        if self.m < 0:
            raise ValueError(f"negative differentiation order for {self.base}")
        if self.tag not in TAGS:
            raise ValueError(f"unknown tag {self.tag!r}")

    @property
    def total_degree(self) -> int:
        return self.m + self.k

    def related(self, other: "VarKey") -> bool:
        """The ~ relation: same base, same namespace, same total degree."""
        return (self.base == other.base and self.tag == other.tag
                and self.total_degree == other.total_degree)

    def precedes(self, other: "VarKey") -> bool:
        return (self.base == other.base and self.tag == other.tag
                and self.total_degree <= other.total_degree)

    def shifted(self, k: int) -> "VarKey":
        return VarKey(self.base, self.m, self.k + k, self.tag)

    def differentiated(self, n: int = 1) -> "VarKey":
        return VarKey(self.base, self.m + n, self.k, self.tag)

    def with_tag(self, tag: str) -> "VarKey":
        return VarKey(self.base, self.m, self.k, tag)

    @property
    def sort_key(self):
        return (0, self.base, TAGS.index(self.tag), self.m, self.k)

    def __lt__(self, other: "VarKey") -> bool:
        return self.sort_key < other.sort_key

    def __str__(self) -> str:
        s = self.base
        if self.m == 1:
            s = f"der({s})"
        elif self.m > 1:
            s = f"der({s},{self.m})"
        if self.k:
            s = f"shift({s},{self.k})"
        if self.tag:
            s = f"{_TAG_WRAP[self.tag]}({s})"
        return s

    def pretty(self) -> str:
        return _pretty_var(self)

    __repr__ = __str__


@dataclass(frozen=True)
class Param:
    """A named model constant; time-invariant, never a dependent variable."""

    name: str

    @property
    def sort_key(self):
        return (1, self.name)

    def __str__(self) -> str:
        return self.name


@dataclass(frozen=True)
class Apply:
    """Opaque smooth function ``name`` applied to ``args``.

    ``derivs[i]`` counts partial derivatives taken in argument ``i``; a
    derivative of an opaque function is itself opaque.
    """

    name: str
    args: tuple["Expr", ...]
    derivs: tuple[int, ...]

    @cached_property
    def sort_key(self):
        return (2, self.name, self.derivs, tuple(a.key for a in self.args))

    @cached_property
    def variables(self) -> frozenset[VarKey]:
        out: set[VarKey] = set()
        for a in self.args:
            out |= a.variables
        return frozenset(out)

    def __str__(self) -> str:
        name = self.name
        if any(self.derivs):
            if len(self.derivs) == 1:
                name += "'" * self.derivs[0] if self.derivs[0] <= 3 else f"_d{self.derivs[0]}"
            else:
                name += "_d" + "_".join(str(d) for d in self.derivs)
        return f"{name}({', '.join(str(a) for a in self.args)})"


Atom = Union[VarKey, Param, Apply]
Monomial = tuple  # tuple[(Atom, int), ...] sorted by atom sort key
TermKey = tuple  # (eps exponent p, Monomial)


def _mono_mul(a: Monomial, b: Monomial) -> Monomial:
    if not a:
        return b
    if not b:
        return a
    powers: dict = dict(a)
    for atom, p in b:
        powers[atom] = powers.get(atom, 0) + p
    return tuple(sorted(powers.items(), key=lambda ap: ap[0].sort_key))


def _mono_from(powers: Mapping) -> Monomial:
    return tuple(sorted(((a, p) for a, p in powers.items() if p), key=lambda ap: ap[0].sort_key))


class Expr:
    """Immutable expanded polynomial over atoms with an epsilon exponent per term."""

    def __init__(self, terms: Mapping[TermKey, Fraction] | None = None):
        self._terms: dict[TermKey, Fraction] = (
            {k: Fraction(v) for k, v in terms.items() if v != 0} if terms else {})

    # construction -----------------------------------------------------
    @staticmethod
    def const(c: Number) -> "Expr":
        return Expr({(0, ()): Fraction(c)})

    @staticmethod
    def atom(a: Atom, power: int = 1) -> "Expr":
        return Expr({(0, ((a, power),)): Fraction(1)})

    @staticmethod
    def var(base: str | VarKey, m: int = 0, k: int = 0, tag: str = "") -> "Expr":
        v = base if isinstance(base, VarKey) else VarKey(base, m, k, tag)
        return Expr.atom(v)

    @staticmethod
    def param(name: str) -> "Expr":
        return Expr.atom(Param(name))

    @staticmethod
    def eps(n: int = 1) -> "Expr":
        """The factor eps**-n."""
        return Expr({(-n, ()): Fraction(1)})

    @staticmethod
    def eps_pow(p: int) -> "Expr":
        """The factor eps**p."""
        return Expr({(p, ()): Fraction(1)})

    @staticmethod
    def apply(name: str, args: Iterable["Expr"], derivs: Iterable[int] | None = None) -> "Expr":
        args = tuple(args)
        d = tuple(derivs) if derivs is not None else (0,) * len(args)
        return Expr.atom(Apply(name, args, d))

    # protocol ---------------------------------------------------------
    def items(self):
        return self._terms.items()

    def __iter__(self):
        return iter(self._terms.items())

    def __len__(self) -> int:
        return len(self._terms)

    def __eq__(self, other) -> bool:
        if isinstance(other, (int, Fraction)):
            other = Expr.const(other)
        return isinstance(other, Expr) and self._terms == other._terms

    def __hash__(self) -> int:
        return hash(self.key)

    @cached_property
    def key(self) -> tuple:
        """Canonical, totally ordered representation."""
        rows = []
        for (p, mono), c in self._terms.items():
            rows.append(((p, tuple((a.sort_key, e) for a, e in mono)), (c.numerator, c.denominator)))
        rows.sort()
        return tuple(rows)

    def sorted_terms(self) -> list[tuple[TermKey, Fraction]]:
        order = {}
        for (p, mono), c in self._terms.items():
            order[(p, mono)] = (-_degree(mono), tuple((a.sort_key, -e) for a, e in mono), p)
        return sorted(self._terms.items(), key=lambda kv: order[kv[0]])

    @property
    def is_zero(self) -> bool:
        return not self._terms

    @property
    def is_constant(self) -> bool:
        return all(p == 0 and not mono for p, mono in self._terms)

    def constant_value(self) -> Fraction:
        return self._terms.get((0, ()), Fraction(0))

    # arithmetic -------------------------------------------------------
    @staticmethod
    def _lift(x) -> "Expr":
        if isinstance(x, Expr):
            return x
        if isinstance(x, (int, Fraction)):
            return Expr.const(x)
        if isinstance(x, VarKey):
            return Expr.atom(x)
        raise TypeError(f"cannot use {type(x).__name__} in an expression")

    def __add__(self, other) -> "Expr":
        other = Expr._lift(other)
        out = dict(self._terms)
        for k, c in other._terms.items():
            out[k] = out.get(k, 0) + c
        return Expr(out)

    __radd__ = __add__

    def __neg__(self) -> "Expr":
        return Expr({k: -c for k, c in self._terms.items()})

    def __sub__(self, other) -> "Expr":
        return self + (-Expr._lift(other))

    def __rsub__(self, other) -> "Expr":
        return Expr._lift(other) - self

    def __mul__(self, other) -> "Expr":
        other = Expr._lift(other)
        out: dict = {}
        for (p1, m1), c1 in self._terms.items():
            for (p2, m2), c2 in other._terms.items():
                key = (p1 + p2, _mono_mul(m1, m2))
                out[key] = out.get(key, 0) + c1 * c2
        return Expr(out)

    __rmul__ = __mul__

    def __truediv__(self, other) -> "Expr":
        if isinstance(other, Expr):
            if not other.is_constant or other.is_zero:
                raise ZeroDivisionError("division is only defined by nonzero constants")
            other = other.constant_value()
        return self * (Fraction(1) / Fraction(other))

    def __pow__(self, n: int) -> "Expr":
        if not isinstance(n, int) or n < 0:
            raise ValueError("only nonnegative integer powers are supported")
        out = Expr.const(1)
        base = self
        while n:
            if n & 1:
                out = out * base
            base = base * base
            n >>= 1
        return out

    # inspection -------------------------------------------------------
    @cached_property
    def variables(self) -> frozenset[VarKey]:
        out: set[VarKey] = set()
        for (_, mono) in self._terms:
            for a, _ in mono:
                if isinstance(a, VarKey):
                    out.add(a)
                elif isinstance(a, Apply):
                    out |= a.variables
        return frozenset(out)

    def eps_exponents(self) -> set[int]:
        return {p for p, _ in self._terms}

    def max_eps_order(self) -> int:
        """Largest n such that a term carries eps**-n (0 if none)."""
        return max([0] + [-p for p, _ in self._terms])

    # transformations --------------------------------------------------
    def substitute(self, fn: Callable[[VarKey], "Expr | None"]) -> "Expr":
        """Replace each variable ``v`` by ``fn(v)`` (``None`` keeps ``v``)."""
        cache: dict = {}

        def atom_image(a):
            if a in cache:
                return cache[a]
            if isinstance(a, VarKey):
                r = fn(a)
                img = Expr.atom(a) if r is None else Expr._lift(r)
            elif isinstance(a, Apply):
                img = Expr.atom(Apply(a.name, tuple(x.substitute(fn) for x in a.args), a.derivs))
            else:
                img = Expr.atom(a)
            cache[a] = img
            return img

        out = Expr()
        for (p, mono), c in self._terms.items():
            t = Expr({(p, ()): c})
            for a, e in mono:
                t = t * (atom_image(a) ** e)
            out = out + t
        return out

    def map_params(self, values: Mapping[str, Number]) -> "Expr":
        out = Expr()
        for (p, mono), c in self._terms.items():
            t = Expr({(p, ()): c})
            for a, e in mono:
                if isinstance(a, Param) and a.name in values:
                    t = t * (Fraction(values[a.name]) ** e)
                elif isinstance(a, Apply):
                    t = t * Expr.atom(Apply(a.name, tuple(x.map_params(values) for x in a.args), a.derivs)) ** e
                else:
                    t = t * Expr.atom(a, e)
            out = out + t
        return out

    def __str__(self) -> str:
        return render(self)

    def __repr__(self) -> str:
        return f"Expr({render(self)!r})"

    def pretty(self) -> str:
        return render(self, pretty=True)


def _degree(mono: Monomial) -> int:
    return sum(e for _, e in mono)


# ----------------------------------------------------------------------
# calculus


def _atom_time_derivative(a: Atom) -> Expr:
    if isinstance(a, VarKey):
        return Expr.atom(a.differentiated())
    if isinstance(a, Param):
        return Expr()
    out = Expr()
    for i, arg in enumerate(a.args):
        da = differentiate(arg)
        if da.is_zero:
            continue
        d = list(a.derivs)
        d[i] += 1
        out = out + Expr.atom(Apply(a.name, a.args, tuple(d))) * da
    return out


def _product_rule(expr: Expr, atom_derivative: Callable[[Atom], Expr]) -> Expr:
    out = Expr()
    for (p, mono), c in expr.items():
        for i, (a, e) in enumerate(mono):
            da = atom_derivative(a)
            if da.is_zero:
                continue
            rest = list(mono)
            if e == 1:
                rest.pop(i)
            else:
                rest[i] = (a, e - 1)
            out = out + Expr({(p, tuple(rest)): c * e}) * da
    return out


def differentiate(e: Expr, n: int = 1) -> Expr:
    """Time derivative: every variable (b, m, k) becomes (b, m+1, k)."""
    for _ in range(n):
        e = _product_rule(e, _atom_time_derivative)
    return e


def partial_derivative(e: Expr, v: VarKey) -> Expr:
    """Partial derivative with respect to the atom ``v``."""

    def atom_partial(a: Atom) -> Expr:
        if a == v:
            return Expr.const(1)
        if isinstance(a, Apply) and v in a.variables:
            out = Expr()
            for i, arg in enumerate(a.args):
                da = partial_derivative(arg, v)
                if da.is_zero:
                    continue
                d = list(a.derivs)
                d[i] += 1
                out = out + Expr.atom(Apply(a.name, a.args, tuple(d))) * da
            return out
        return Expr()

    return _product_rule(e, atom_partial)


def shift(e: Expr, k: int) -> Expr:
    """Snapshot at ``k`` steps later: (b, m, j) becomes (b, m, j+k)."""
    if k == 0:
        return e
    return e.substitute(lambda v: Expr.atom(v.shifted(k)))


def normalize(e: Expr) -> Expr:
    """Expressions are stored expanded; normalization is the identity."""
    return Expr(dict(e.items()))


def equal_up_to_constant(e1: Expr, e2: Expr) -> Fraction | None:
    """Return ``c`` with ``e1 == c * e2`` (c nonzero), else ``None``."""
    if e1.is_zero and e2.is_zero:
        return Fraction(1)
    if e1.is_zero or e2.is_zero or len(e1) != len(e2):
        return None
    t1 = dict(e1.items())
    ratio = None
    for k, c2 in e2.items():
        c1 = t1.get(k)
        if c1 is None:
            return None
        r = c1 / c2
        if ratio is None:
            ratio = r
        elif r != ratio:
            return None
    return ratio


def primitive(e: Expr) -> Expr:
    """Divide out the rational content and make the first canonical term positive."""
    if e.is_zero:
        return e
    coeffs = [c for _, c in e.items()]
    num = 0
    den = 1
    for c in coeffs:
        num = math.gcd(num, c.numerator)
        den = den * c.denominator // math.gcd(den, c.denominator)
    content = Fraction(num, den)
    if e.sorted_terms()[0][1] < 0:
        content = -content
    return e / content


# ----------------------------------------------------------------------
# numeric evaluation

_BUILTINS: dict[str, Callable[[int, float], float]] = {
    "sin": lambda n, x: [math.sin, math.cos, lambda t: -math.sin(t), lambda t: -math.cos(t)][n % 4](x),
    "cos": lambda n, x: [math.cos, lambda t: -math.sin(t), lambda t: -math.cos(t), math.sin][n % 4](x),
    "exp": lambda n, x: math.exp(x),
}


def _eval_apply(a: Apply, args: list[float], functions: Mapping | None) -> float:
    functions = functions or {}
    if (a.name, a.derivs) in functions:
        return float(functions[(a.name, a.derivs)](*args))
    if not any(a.derivs) and a.name in functions:
        return float(functions[a.name](*args))
    if a.name in _BUILTINS and len(args) == 1:
        return _BUILTINS[a.name](a.derivs[0], args[0])
    if a.name in functions:
        # central differences for derivatives of a user callable
        f = functions[a.name]
        h = 1e-5

        def deriv(point, orders):
            i = next((j for j, o in enumerate(orders) if o), None)
            if i is None:
                return f(*point)
            lower = list(orders)
            lower[i] -= 1
            up, dn = list(point), list(point)
            up[i] += h
            dn[i] -= h
            return (deriv(up, lower) - deriv(dn, lower)) / (2 * h)

        return float(deriv(list(args), list(a.derivs)))
    raise MissingVariable(f"no numeric definition for function {a.name}")


def evaluate(e: Expr, valuation: Mapping[VarKey, float], eps: float = 0.0,
             params: Mapping[str, float] | None = None,
             functions: Mapping | None = None) -> float:
    """Numeric value of ``e``; at ``eps == 0`` positive powers vanish."""
    params = params or {}
    total = 0.0
    for (p, mono), c in e.items():
        if eps == 0:
            if p > 0:
                continue
            if p < 0:
                raise EpsilonSingularity(f"eps**{p} cannot be evaluated at eps = 0")
            factor = 1.0
        else:
            factor = float(eps) ** p
        v = float(c) * factor
        for a, pw in mono:
            if isinstance(a, VarKey):
                if a not in valuation:
                    raise MissingVariable(f"no value for {a}")
                x = float(valuation[a])
            elif isinstance(a, Param):
                if a.name not in params:
                    raise MissingVariable(f"no value for parameter {a.name}")
                x = float(params[a.name])
            else:
                args = [evaluate(arg, valuation, eps, params, functions) for arg in a.args]
                x = _eval_apply(a, args, functions)
            v *= x ** pw
        total += v
    return total


# ----------------------------------------------------------------------
# monomial view


@dataclass(frozen=True)
class Term:
    """One monomial: coeff * eps**-n * prod(var**mult) * prod(opaque) * prod(param)."""

    n: int
    vars: tuple[tuple[VarKey, int], ...]
    opaque: tuple[tuple[Apply, int], ...]
    params: tuple[tuple[Param, int], ...]
    coeff: Fraction

    def multiplicity(self, v: VarKey) -> int:
        for x, e in self.vars:
            if x == v:
                return e
        return 0

    @property
    def opaque_variables(self) -> frozenset[VarKey]:
        out: set[VarKey] = set()
        for a, _ in self.opaque:
            out |= a.variables
        return frozenset(out)

    @property
    def variables(self) -> frozenset[VarKey]:
        return frozenset(v for v, _ in self.vars) | self.opaque_variables

    def contains(self, v: VarKey) -> bool:
        return v in self.variables

    def to_expr(self) -> Expr:
        mono = _mono_from({**dict(self.vars), **dict(self.opaque), **dict(self.params)})
        return Expr({(-self.n, mono): self.coeff})


@dataclass(frozen=True)
class MonomialForm:
    terms: tuple[Term, ...]

    def lin(self) -> frozenset[VarKey]:
        """Variables occurring with multiplicity one, outside opaque factors, in some term."""
        out = set()
        for t in self.terms:
            inside = t.opaque_variables
            for v, e in t.vars:
                if e == 1 and v not in inside:
                    out.add(v)
        return frozenset(out)

    def restrict(self, x: VarKey) -> "MonomialForm":
        return MonomialForm(tuple(t for t in self.terms if t.contains(x)))

    def variables(self) -> frozenset[VarKey]:
        out: set[VarKey] = set()
        for t in self.terms:
            out |= t.variables
        return frozenset(out)

    def reassemble(self) -> Expr:
        out = Expr()
        for t in self.terms:
            out = out + t.to_expr()
        return out


def monomial_decompose(e: Expr) -> MonomialForm:
    terms = []
    for (p, mono), c in e.sorted_terms():
        vs = tuple((a, k) for a, k in mono if isinstance(a, VarKey))
        op = tuple((a, k) for a, k in mono if isinstance(a, Apply))
        ps = tuple((a, k) for a, k in mono if isinstance(a, Param))
        terms.append(Term(-p, vs, op, ps, c))
    return MonomialForm(tuple(terms))


# ----------------------------------------------------------------------
# rendering

_GREEK = {"lambda": "λ", "tau": "τ", "omega": "ω", "mu": "μ", "sigma": "σ",
          "theta": "θ", "phi": "φ", "gamma": "γ"}
_SUP = str.maketrans("0123456789-", "⁰¹²³⁴⁵⁶⁷⁸⁹⁻")


def _pretty_var(v: VarKey) -> str:
    head, tail = v.base, ""
    for g, sym in _GREEK.items():
        if v.base.startswith(g):
            head, tail = sym, v.base[len(g):]
            break
    else:
        head, tail = v.base[0], v.base[1:]
    if v.m == 1:
        head += "̇"
    elif v.m == 2:
        head += "̈"
    elif v.m > 2:
        tail += f"⁽{str(v.m).translate(_SUP)}⁾"
    s = head + tail
    if v.k == 1:
        s = "◦" + s
    elif v.k > 1:
        s = f"◦{str(v.k).translate(_SUP)}" + s
    elif v.k < 0:
        s = f"◦{str(v.k).translate(_SUP)}" + s
    return s + {"": "", "-": "⁻", "+": "⁺", "r": "↓"}[v.tag]


def _render_atom(a: Atom, pretty: bool) -> str:
    if isinstance(a, VarKey):
        return a.pretty() if pretty else str(a)
    if isinstance(a, Param):
        return a.name
    name = a.name
    if any(a.derivs):
        if len(a.derivs) == 1 and a.derivs[0] <= 3:
            name += "'" * a.derivs[0]
        else:
            name += "_d" + "_".join(str(d) for d in a.derivs)
    return f"{name}({', '.join(render(x, pretty) for x in a.args)})"


def render(e: Expr, pretty: bool = False) -> str:
    if e.is_zero:
        return "0"
    mul = "·" if pretty else "*"
    pieces = []
    for (p, mono), c in e.sorted_terms():
        factors = []
        if p:
            factors.append(f"ε{str(p).translate(_SUP)}" if pretty else f"eps^({p})")
        for a, k in mono:
            s = _render_atom(a, pretty)
            if k > 1:
                s += str(k).translate(_SUP) if pretty else f"^{k}"
            factors.append(s)
        mag = abs(c)
        coeff = "" if (mag == 1 and factors) else str(mag)
        body = mul.join(([coeff] if coeff else []) + factors)
        pieces.append(("-" if c < 0 else "+", body))
    sign, body = pieces[0]
    out = ("-" if sign == "-" else "") + body
    for sign, body in pieces[1:]:
        out += f" {sign} {body}"
    return out
