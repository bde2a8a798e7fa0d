"""Scalar functions of time defined by a small expression language.

Grammar::

    expr   := term (('+'|'-') term)*
    term   := factor (('*'|'/') factor)*
    factor := number | 't' | func '(' expr ')' | '(' expr ')' | factor '^' integer
    func   := sin | cos | exp | log

Two conveniences on top of the grammar: a leading unary minus on a term and
the constant ``pi``.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, ParseError

_TOKEN = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)|(?P<name>[A-Za-z_]+)|(?P<op>[-+*/^()]))"
)

_FUNCS = {"sin": np.sin, "cos": np.cos, "exp": np.exp, "log": np.log}


def _tokenize(text):
    pos = 0
    out = []
    text = text.rstrip()
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if m is None or m.end() == pos:
            raise ParseError(f"unexpected character {text[pos]!r} at {pos} in {text!r}")
        kind = m.lastgroup
        out.append((kind, m.group(kind), m.start(kind)))
        pos = m.end()
    return out


# Expression tree. Nodes are tuples so trees hash and compare structurally:
#   ("num", value) | ("t",) | ("neg", a) | (op, a, b) for op in + - * /
#   ("pow", a, k) | ("call", name, a)


class _Parser:
    def __init__(self, text):
        self.text = text
        self.toks = _tokenize(text)
        self.i = 0

    def peek(self):
        return self.toks[self.i] if self.i < len(self.toks) else (None, None, len(self.text))

    def take(self, value=None):
        tok = self.peek()
        if tok[0] is None:
            raise ParseError(f"unexpected end of expression {self.text!r}")
        if value is not None and tok[1] != value:
            raise ParseError(f"expected {value!r} at {tok[2]} in {self.text!r}, got {tok[1]!r}")
        self.i += 1
        return tok

    def parse(self):
        node = self.expr()
        if self.i != len(self.toks):
            tok = self.peek()
            raise ParseError(f"trailing input {tok[1]!r} at {tok[2]} in {self.text!r}")
        return node

    def expr(self):
        node = self.signed_term()
        while self.peek()[1] in ("+", "-"):
            op = self.take()[1]
            node = (op, node, self.term())
        return node

    def signed_term(self):
        if self.peek()[1] == "-":
            self.take()
            return ("neg", self.term())
        return self.term()

    def term(self):
        node = self.factor()
        while self.peek()[1] in ("*", "/"):
            op = self.take()[1]
            node = (op, node, self.factor())
        return node

    def factor(self):
        kind, val, pos = self.peek()
        if kind == "num":
            self.take()
            node = ("num", float(val))
        elif kind == "name":
            self.take()
            if val == "t":
                node = ("t",)
            elif val == "pi":
                node = ("num", math.pi)
            elif val in _FUNCS:
                self.take("(")
                arg = self.expr()
                self.take(")")
                node = ("call", val, arg)
            else:
                raise ParseError(f"unknown name {val!r} at {pos} in {self.text!r}")
        elif val == "(":
            self.take()
            node = self.expr()
            self.take(")")
        else:
            raise ParseError(f"unexpected token {val!r} at {pos} in {self.text!r}")
        while self.peek()[1] == "^":
            self.take()
            sign = 1
            if self.peek()[1] == "-":
                self.take()
                sign = -1
            kind, val, pos = self.take()
            if kind != "num" or not re.fullmatch(r"\d+", val):
                raise ParseError(f"exponent must be an integer at {pos} in {self.text!r}")
            node = ("pow", node, sign * int(val))
        return node


def _eval(node, t):
    tag = node[0]
    if tag == "num":
        return node[1]
    if tag == "t":
        return t
    if tag == "neg":
        return -_eval(node[1], t)
    if tag == "+":
        return _eval(node[1], t) + _eval(node[2], t)
    if tag == "-":
        return _eval(node[1], t) - _eval(node[2], t)
    if tag == "*":
        return _eval(node[1], t) * _eval(node[2], t)
    if tag == "/":
        den = _eval(node[2], t)
        if np.any(np.asarray(den) == 0):
            raise DomainError("division by zero")
        return _eval(node[1], t) / den
    if tag == "pow":
        base = _eval(node[1], t)
        if node[2] < 0 and np.any(np.asarray(base) == 0):
            raise DomainError("zero raised to a negative power")
        return base ** node[2] if node[2] >= 0 else 1.0 / base ** (-node[2])
    if tag == "call":
        arg = _eval(node[2], t)
        if node[1] == "log" and np.any(np.asarray(arg) <= 0):
            raise DomainError("log of a nonpositive argument")
        return _FUNCS[node[1]](arg)
    raise AssertionError(node)


def _has_t(node):
    if node[0] == "t":
        return True
    return any(isinstance(c, tuple) and _has_t(c) for c in node[1:])


def _check_div(den):
    if np.any(np.asarray(den) == 0):
        raise DomainError("division by zero")
    return den


def _check_log(arg):
    if np.any(np.asarray(arg) <= 0):
        raise DomainError("log of a nonpositive argument")
    return np.log(arg)


def _check_base(base):
    if np.any(np.asarray(base) == 0):
        raise DomainError("zero raised to a negative power")
    return base


def _source(node):
    tag = node[0]
    if tag == "num":
        return repr(node[1])
    if tag == "t":
        return "t"
    if tag == "neg":
        return f"(-{_source(node[1])})"
    if tag in "+-*":
        return f"({_source(node[1])} {tag} {_source(node[2])})"
    if tag == "/":
        return f"({_source(node[1])} / _check_div({_source(node[2])}))"
    if tag == "pow":
        if node[2] >= 0:
            return f"({_source(node[1])} ** {node[2]})"
        return f"(1.0 / _check_base({_source(node[1])}) ** {-node[2]})"
    if tag == "call":
        if node[1] == "log":
            return f"_check_log({_source(node[2])})"
        return f"_np.{node[1]}({_source(node[2])})"
    raise AssertionError(node)


_NAMESPACE = {"_np": np, "_check_div": _check_div, "_check_log": _check_log,
              "_check_base": _check_base}


def _compile(tree):
    return eval(f"lambda t: {_source(tree)}", dict(_NAMESPACE))  # noqa: S307 - source built from a parsed tree


def parse(text: str):
    """Parse ``text`` into an expression tree (nested tuples)."""
    return _Parser(text).parse()


@dataclass(frozen=True)
class TimeFunction:
    """A real function of time given by an expression string.

    Calling the object evaluates it; ``t`` may be a float or a numpy array.
    """

    expr: str
    domain_lo: float = -math.inf
    domain_hi: float = math.inf
    tree: tuple = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        tree = parse(str(self.expr))
        object.__setattr__(self, "tree", tree)
        const = not _has_t(tree)
        object.__setattr__(self, "_const", const)
        object.__setattr__(self, "_func", _compile(tree))
        value = None
        if const:
            with np.errstate(all="ignore"):
                value = float(self._func(0.0))
        object.__setattr__(self, "_value", value)
        object.__setattr__(self, "_bounded", math.isfinite(self.domain_lo) or math.isfinite(self.domain_hi))

    @classmethod
    def const(cls, value: float) -> "TimeFunction":
        return cls(repr(float(value)))

    @property
    def is_constant(self) -> bool:
        return self._const

    @property
    def is_zero(self) -> bool:
        return self._const and self._value == 0.0

    def __call__(self, t):
        if self._bounded:
            arr = np.asarray(t, dtype=float)
            if np.any(arr < self.domain_lo) or np.any(arr > self.domain_hi):
                raise DomainError(f"t outside [{self.domain_lo}, {self.domain_hi}] for {self.expr!r}")
        if isinstance(t, (float, int)):
            if self._const:
                return self._value
            with np.errstate(all="ignore"):
                return float(self._func(float(t)))
        arr = np.asarray(t, dtype=float)
        if arr.ndim == 0:
            return self(float(arr))
        if self._const:
            return np.full(arr.shape, self._value)
        with np.errstate(all="ignore"):
            return np.asarray(self._func(arr), dtype=float)


def as_time_function(obj) -> TimeFunction:
    if isinstance(obj, TimeFunction):
        return obj
    if isinstance(obj, (int, float)):
        return TimeFunction.const(obj)
    return TimeFunction(str(obj))


def eval_time_function(f: TimeFunction, t: float) -> float:
    return as_time_function(f)(t)
