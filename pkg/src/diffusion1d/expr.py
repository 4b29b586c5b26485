"""A small recursive-descent parser for drift/potential formulas in one variable.

Grammar (standard precedence, ^ right-associative and binding tighter than
unary minus):

    expr   := term (('+' | '-') term)*
    term   := factor (('*' | '/') factor)*
    factor := '-' factor | power
    power  := atom ('^' factor)?
    atom   := NUMBER | 'x' | ('exp' | 'ln') '(' expr ')' | '(' expr ')'

Parsing failures carry the offending position; evaluation failures (division
by zero, ln of a non-positive value, fractional power of a negative base)
surface at call time with the offending x.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Callable

import numpy as np

__all__ = ["ExprSyntaxError", "ExprEvalError", "parse_expression"]

_TOKEN = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)|(?P<name>[A-Za-z_]\w*)|(?P<op>[-+*/^()]))"
)
_FUNCTIONS = ("exp", "ln")


class ExprSyntaxError(ValueError):
    def __init__(self, message: str, pos: int):
        self.pos = pos
        super().__init__(f"{message} (at position {pos})")


class ExprEvalError(ArithmeticError):
    def __init__(self, message: str, x):
        self.x = x
        super().__init__(f"{message} at x = {x}")


@dataclass
class _Token:
    kind: str  # "num" | "name" | "op" | "end"
    text: str
    pos: int


def _tokenize(text: str) -> list[_Token]:
    tokens = []
    pos = 0
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if m is None or m.end() == pos:
            stripped = text[pos:].lstrip()
            if not stripped:
                break
            raise ExprSyntaxError(f"unexpected character {stripped[0]!r}", len(text) - len(stripped))
        for kind in ("num", "name", "op"):
            if m.group(kind) is not None:
                tokens.append(_Token(kind, m.group(kind), m.start(kind)))
                break
        pos = m.end()
    tokens.append(_Token("end", "", len(text)))
    return tokens


def _first_bad(x, mask):
    xs = np.broadcast_to(np.asarray(x, dtype=float), np.asarray(mask).shape)
    return float(xs[mask][0]) if xs.ndim else float(xs)


class _Node:
    def __call__(self, x):
        raise NotImplementedError


@dataclass
class _Num(_Node):
    value: float

    def __call__(self, x):
        return np.full_like(np.asarray(x, dtype=float), self.value)


class _Var(_Node):
    def __call__(self, x):
        return np.asarray(x, dtype=float)


@dataclass
class _Neg(_Node):
    arg: _Node

    def __call__(self, x):
        return -self.arg(x)


@dataclass
class _BinOp(_Node):
    op: str
    left: _Node
    right: _Node

    def __call__(self, x):
        a = self.left(x)
        b = self.right(x)
        if self.op == "+":
            return a + b
        if self.op == "-":
            return a - b
        if self.op == "*":
            return a * b
        if self.op == "/":
            bad = b == 0.0
            if np.any(bad):
                raise ExprEvalError("division by zero", _first_bad(x, bad))
            return a / b
        # power
        with np.errstate(all="ignore"):
            out = np.power(a, b)
        bad = ~np.isfinite(out)
        if np.any(bad):
            raise ExprEvalError("power is undefined or overflows", _first_bad(x, bad))
        return out


@dataclass
class _Func(_Node):
    name: str
    arg: _Node

    def __call__(self, x):
        v = self.arg(x)
        if self.name == "exp":
            with np.errstate(over="ignore"):
                out = np.exp(v)
            bad = ~np.isfinite(out)
            if np.any(bad):
                raise ExprEvalError("exp overflows", _first_bad(x, bad))
            return out
        bad = v <= 0.0
        if np.any(bad):
            raise ExprEvalError("ln of a non-positive value", _first_bad(x, bad))
        return np.log(v)


class _Parser:
    def __init__(self, text: str):
        self.text = text
        self.tokens = _tokenize(text)
        self.i = 0

    @property
    def cur(self) -> _Token:
        return self.tokens[self.i]

    def eat(self, text: str | None = None) -> _Token:
        tok = self.cur
        if text is not None and tok.text != text:
            raise ExprSyntaxError(f"expected {text!r}, found {tok.text or 'end of input'!r}", tok.pos)
        self.i += 1
        return tok

    def parse(self) -> _Node:
        node = self.expr()
        if self.cur.kind != "end":
            raise ExprSyntaxError(f"unexpected trailing input {self.cur.text!r}", self.cur.pos)
        return node

    def expr(self) -> _Node:
        node = self.term()
        while self.cur.text in ("+", "-"):
            op = self.eat().text
            node = _BinOp(op, node, self.term())
        return node

    def term(self) -> _Node:
        node = self.factor()
        while self.cur.text in ("*", "/"):
            op = self.eat().text
            node = _BinOp(op, node, self.factor())
        return node

    def factor(self) -> _Node:
        if self.cur.text == "-":
            self.eat()
            return _Neg(self.factor())
        return self.power()

    def power(self) -> _Node:
        base = self.atom()
        if self.cur.text == "^":
            self.eat()
            return _BinOp("^", base, self.factor())
        return base

    def atom(self) -> _Node:
        tok = self.cur
        if tok.kind == "num":
            self.eat()
            return _Num(float(tok.text))
        if tok.kind == "name":
            self.eat()
            if tok.text == "x":
                return _Var()
            if tok.text in _FUNCTIONS:
                self.eat("(")
                arg = self.expr()
                self.eat(")")
                return _Func(tok.text, arg)
            raise ExprSyntaxError(f"unknown name {tok.text!r}", tok.pos)
        if tok.text == "(":
            self.eat()
            node = self.expr()
            self.eat(")")
            return node
        raise ExprSyntaxError(f"expected a value, found {tok.text or 'end of input'!r}", tok.pos)


class Expression:
    """Compiled formula; calling it evaluates on scalars or arrays."""

    def __init__(self, source: str, root: _Node):
        self.source = source
        self._root = root

    def __call__(self, x):
        scalar = np.isscalar(x) or (isinstance(x, np.ndarray) and x.ndim == 0)
        out = self._root(np.asarray(x, dtype=float))
        return float(out) if scalar else out

    def __repr__(self) -> str:
        return f"Expression({self.source!r})"


def parse_expression(text: str) -> Expression:
    """Parse a formula in x into an evaluable function."""
    if not text or not text.strip():
        raise ExprSyntaxError("empty expression", 0)
    return Expression(text, _Parser(text).parse())
