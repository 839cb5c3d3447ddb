"""Polynomial rate expressions.

Grammar (whitespace ignored)::

    expr   := ['+'|'-'] term (('+'|'-') term)*
    term   := factor ('*' factor)*
    factor := number | ident | ident '^' posint | '(' expr ')'

Identifiers resolve to a compartment variable or a named parameter.  The
parsed expression is expanded into a canonical sparse polynomial whose
coefficients stay symbolic in the parameters; numeric values are
substituted only at evaluation time, so a parameter sweep never reparses.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .errors import (
    DivisionUnsupported,
    RateSyntaxError,
    UnboundParameter,
    UnknownIdentifier,
)

MAX_DEGREE = 6

_TOKEN = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<ident>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<op>[-+*^()/]))"
)

# A polynomial is a dict {(var_exponents, param_exponents): coefficient}.
_Key = tuple


def _tokenize(text):
    tokens = []
    pos = 0
    n = len(text)
    while pos < n:
        if text[pos].isspace():
            pos += 1
            continue
        m = _TOKEN.match(text, pos)
        if m is None or m.end() == pos:
            raise RateSyntaxError(f"unexpected character {text[pos]!r}", pos, text)
        start = m.start(m.lastgroup)
        kind = m.lastgroup
        value = m.group(kind)
        if kind == "op" and value == "/":
            raise DivisionUnsupported(start, text)
        tokens.append((kind, value, start))
        pos = m.end()
    tokens.append(("end", "", n))
    return tokens


class _Parser:
    def __init__(self, text, compartments, params):
        self.text = text
        self.tokens = _tokenize(text)
        self.i = 0
        self.var_index = {name: k for k, name in enumerate(compartments)}
        self.par_index = {name: k for k, name in enumerate(params)}
        self.nv = len(compartments)
        self.np = len(params)

    def peek(self):
        return self.tokens[self.i]

    def advance(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def fail(self, tok, what):
        kind, value, pos = tok
        found = "end of input" if kind == "end" else repr(value)
        raise RateSyntaxError(f"expected {what}, found {found}", pos, self.text)

    def const(self, c):
        return {((0,) * self.nv, (0,) * self.np): float(c)}

    def parse(self):
        poly = self.expr()
        tok = self.peek()
        if tok[0] != "end":
            self.fail(tok, "operator or end of input")
        return poly

    def expr(self):
        sign = 1.0
        tok = self.peek()
        if tok[0] == "op" and tok[1] in "+-":
            self.advance()
            sign = -1.0 if tok[1] == "-" else 1.0
        poly = _scale(self.term(), sign)
        while True:
            tok = self.peek()
            if tok[0] == "op" and tok[1] in "+-":
                self.advance()
                rhs = self.term()
                poly = _add(poly, _scale(rhs, -1.0) if tok[1] == "-" else rhs)
            else:
                return poly

    def term(self):
        poly = self.factor()
        while True:
            tok = self.peek()
            if tok[0] == "op" and tok[1] == "*":
                self.advance()
                poly = _mul(poly, self.factor())
            else:
                return poly

    def factor(self):
        tok = self.advance()
        kind, value, pos = tok
        if kind == "num":
            return self.const(float(value))
        if kind == "ident":
            base = self.ident(value, pos)
            nxt = self.peek()
            if nxt[0] == "op" and nxt[1] == "^":
                self.advance()
                ptok = self.advance()
                if ptok[0] != "num" or not ptok[1].isdigit() or int(ptok[1]) < 1:
                    self.fail(ptok, "positive integer exponent")
                return _power(base, int(ptok[1]))
            return base
        if kind == "op" and value == "(":
            poly = self.expr()
            close = self.advance()
            if close[0] != "op" or close[1] != ")":
                self.fail(close, "')'")
            return poly
        self.fail(tok, "number, identifier or '('")

    def ident(self, name, pos):
        if name in self.var_index:
            e = [0] * self.nv
            e[self.var_index[name]] = 1
            return {(tuple(e), (0,) * self.np): 1.0}
        if name in self.par_index:
            e = [0] * self.np
            e[self.par_index[name]] = 1
            return {((0,) * self.nv, tuple(e)): 1.0}
        raise UnknownIdentifier(name, pos, self.text)


def _scale(p, c):
    return {k: c * v for k, v in p.items()}


def _add(p, q):
    out = dict(p)
    for k, v in q.items():
        out[k] = out.get(k, 0.0) + v
    return out


def _mul(p, q):
    out = {}
    for (va, pa), ca in p.items():
        for (vb, pb), cb in q.items():
            key = (tuple(x + y for x, y in zip(va, vb)), tuple(x + y for x, y in zip(pa, pb)))
            out[key] = out.get(key, 0.0) + ca * cb
    return out


def _power(p, n):
    out = p
    for _ in range(n - 1):
        out = _mul(out, p)
    return out


@dataclass(frozen=True)
class BoundPolynomial:
    """A rate polynomial with parameter values substituted.

    ``coef`` has shape (T,), ``exps`` shape (T, d); identical exponent rows
    are merged.
    """

    coef: np.ndarray
    exps: np.ndarray

    def __call__(self, z):
        return _eval(self.coef, self.exps, np.asarray(z, dtype=float))

    def gradient(self, z):
        return _grad(self.coef, self.exps, np.asarray(z, dtype=float))


def _eval(coef, exps, z):
    # z (..., d) -> (...)
    if coef.size == 0:
        return np.zeros(z.shape[:-1])
    mon = np.prod(z[..., None, :] ** exps, axis=-1)
    return mon @ coef


def _grad(coef, exps, z):
    d = z.shape[-1]
    out = np.zeros(z.shape)
    if coef.size == 0:
        return out
    for i in range(d):
        e = exps[:, i]
        mask = e > 0
        if not mask.any():
            continue
        de = exps[mask].copy()
        de[:, i] -= 1
        mon = np.prod(z[..., None, :] ** de, axis=-1)
        out[..., i] = mon @ (coef[mask] * e[mask])
    return out


@dataclass(frozen=True)
class RateExpr:
    """Canonical sparse polynomial in the compartment variables.

    ``terms`` holds ``(coefficient, var_exponents, param_exponents)`` with
    unique exponent pairs, sorted; the numeric coefficient of a monomial is
    ``coefficient * prod(params ** param_exponents)``.
    """

    terms: tuple
    compartments: tuple
    params: tuple
    source: str = ""

    @property
    def d(self):
        return len(self.compartments)

    @property
    def degree(self):
        return max((sum(v) for _, v, _ in self.terms), default=0)

    def referenced_params(self):
        used = set()
        for _, _, pe in self.terms:
            used.update(name for name, e in zip(self.params, pe) if e)
        return sorted(used)

    def bind(self, values: Mapping[str, float]) -> BoundPolynomial:
        merged = {}
        for c, ve, pe in self.terms:
            val = c
            for name, e in zip(self.params, pe):
                if e:
                    if name not in values:
                        raise UnboundParameter(name)
                    val *= float(values[name]) ** e
            merged[ve] = merged.get(ve, 0.0) + val
        keys = sorted(merged)
        coef = np.array([merged[k] for k in keys], dtype=float)
        exps = np.array(keys, dtype=np.int64).reshape(len(keys), self.d)
        return BoundPolynomial(coef, exps)

    def unparse(self) -> str:
        if not self.terms:
            return "0"
        parts = []
        for c, ve, pe in self.terms:
            factors = []
            for name, e in list(zip(self.params, pe)) + list(zip(self.compartments, ve)):
                if e == 1:
                    factors.append(name)
                elif e > 1:
                    factors.append(f"{name}^{e}")
            mag = abs(c)
            if mag != 1.0 or not factors:
                factors.insert(0, repr(mag))
            body = "*".join(factors)
            if not parts:
                parts.append(("-" if c < 0 else "") + body)
            else:
                parts.append((" - " if c < 0 else " + ") + body)
        return "".join(parts)

    def __str__(self):
        return self.unparse()


def parse_rate(
    text: str,
    compartments: Sequence[str],
    params: Sequence[str] = (),
    max_degree: int = MAX_DEGREE,
) -> RateExpr:
    """Parse ``text`` into a canonical :class:`RateExpr`.

    Raises :class:`RateSyntaxError` (with ``position``),
    :class:`UnknownIdentifier` or :class:`DivisionUnsupported`.
    """
    if not text or not text.strip():
        raise RateSyntaxError("empty rate expression", 0, text)
    compartments = tuple(compartments)
    params = tuple(params)
    clash = set(compartments) & set(params)
    if clash:
        raise RateSyntaxError(f"names used both as compartment and parameter: {sorted(clash)}")
    poly = _Parser(text, compartments, params).parse()
    terms = tuple(
        (c, ve, pe) for (ve, pe), c in sorted(poly.items()) if c != 0.0
    )
    expr = RateExpr(terms, compartments, params, text)
    if expr.degree > max_degree:
        raise RateSyntaxError(f"degree {expr.degree} exceeds the maximum {max_degree}")
    return expr


def eval_rate(expr: RateExpr, z, params: Mapping[str, float]):
    """Evaluate ``expr`` at ``z`` (shape (d,) or (..., d))."""
    return expr.bind(params)(z)


def grad_rate(expr: RateExpr, z, params: Mapping[str, float]):
    """Exact gradient of ``expr`` with respect to the compartment variables."""
    return expr.bind(params).gradient(z)
