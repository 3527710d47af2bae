"""
Scalar and vector field expressions
===================================

A small infix expression language used to define drifts, noise matrices,
Hamiltonians, reaction rates and similar fields from configuration text.

The grammar is the usual one::

    expr   := term (('+' | '-') term)*
    term   := unary (('*' | '/') unary)*
    unary  := '-' unary | power
    power  := atom ('^' unary)?          # right associative
    atom   := NUMBER | NAME | NAME '(' expr (',' expr)* ')' | '(' expr ')'

so that ``^`` binds tighter than unary minus (``-x^2 == -(x^2)``), which binds
tighter than ``*`` and ``/``, which bind tighter than ``+`` and ``-``.

Expressions are immutable trees. They can be evaluated on scalars
(:func:`evaluate`, strict domain checking), compiled to vectorised numpy
callables (:class:`FieldDef`), printed back to source (:func:`to_source`) and
differentiated symbolically (:func:`diff`, :func:`grad`).
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

__all__ = [
    "Expr", "Num", "Var", "BinOp", "Neg", "Call",
    "FieldError", "ParseError", "EvalError", "DomainError", "UnboundVariableError",
    "NonDifferentiableError",
    "parse", "evaluate", "to_source", "diff", "grad", "simplify", "free_variables",
    "FieldDef", "DEFAULT_VARIABLES",
]

FUNCTIONS = {
    "sin": 1, "cos": 1, "exp": 1, "log": 1, "sqrt": 1, "abs": 1, "tanh": 1,
    "min": 2, "max": 2,
}

DEFAULT_VARIABLES = tuple(f"x{i}" for i in range(1, 10)) + ("x", "t", "u", "y", "z")

MAX_EXPANDED_POWER = 8


class FieldError(Exception):
    """Base class for every error raised by the expression language."""


class ParseError(FieldError):
    def __init__(self, message, line, column):
        super().__init__(f"{message} (line {line}, column {column})")
        self.line = line
        self.column = column


class EvalError(FieldError):
    pass


class UnboundVariableError(EvalError):
    pass


class DomainError(EvalError):
    pass


class NonDifferentiableError(FieldError):
    pass


# ---------------------------------------------------------------------------
# AST

class Expr:
    """Base node. Subclasses are frozen dataclasses."""

    def __add__(self, other):
        return BinOp("+", self, _lift(other))

    def __radd__(self, other):
        return BinOp("+", _lift(other), self)

    def __sub__(self, other):
        return BinOp("-", self, _lift(other))

    def __rsub__(self, other):
        return BinOp("-", _lift(other), self)

    def __mul__(self, other):
        return BinOp("*", self, _lift(other))

    def __rmul__(self, other):
        return BinOp("*", _lift(other), self)

    def __truediv__(self, other):
        return BinOp("/", self, _lift(other))

    def __neg__(self):
        return Neg(self)

    def __str__(self):
        return to_source(self)


@dataclass(frozen=True, eq=True)
class Num(Expr):
    value: float


@dataclass(frozen=True, eq=True)
class Var(Expr):
    name: str


@dataclass(frozen=True, eq=True)
class BinOp(Expr):
    op: str
    left: Expr
    right: Expr


@dataclass(frozen=True, eq=True)
class Neg(Expr):
    operand: Expr


@dataclass(frozen=True, eq=True)
class Call(Expr):
    func: str
    args: tuple


def _lift(value):
    if isinstance(value, Expr):
        return value
    return Num(float(value))


# ---------------------------------------------------------------------------
# Parsing

_TOKEN = re.compile(r"""
    (?P<ws>[ \t\r\n]+)
  | (?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)
  | (?P<name>[A-Za-z_][A-Za-z_0-9]*)
  | (?P<op>[-+*/^(),])
""", re.VERBOSE)


@dataclass
class _Token:
    kind: str
    text: str
    line: int
    column: int


def _tokenize(source):
    tokens = []
    pos = 0
    line, line_start = 1, 0
    while pos < len(source):
        m = _TOKEN.match(source, pos)
        col = pos - line_start + 1
        if m is None:
            ch = source[pos]
            if ch.isdigit() or ch == ".":
                raise ParseError(f"malformed number near {source[pos:pos + 8]!r}", line, col)
            raise ParseError(f"unexpected character {ch!r}", line, col)
        kind = m.lastgroup
        text = m.group()
        if kind == "num":
            end = m.end()
            # reject things like "1.2.3" or "3x"
            if end < len(source) and (source[end] == "." or source[end].isalpha() or source[end] == "_"):
                raise ParseError(f"malformed number near {source[pos:end + 1]!r}", line, col)
        if kind == "ws":
            for i, ch in enumerate(text):
                if ch == "\n":
                    line += 1
                    line_start = pos + i + 1
        else:
            tokens.append(_Token(kind, text, line, col))
        pos = m.end()
    tokens.append(_Token("end", "", line, pos - line_start + 1))
    return tokens


class _Parser:
    def __init__(self, source, variables):
        self.tokens = _tokenize(source)
        self.i = 0
        self.variables = variables
        self.open_parens = []

    @property
    def tok(self):
        return self.tokens[self.i]

    def advance(self):
        t = self.tokens[self.i]
        self.i += 1
        return t

    def expect(self, text):
        t = self.tok
        if t.text != text:
            if text == ")" and self.open_parens:
                raise ParseError("unbalanced parenthesis: missing ')'", t.line, t.column)
            found = repr(t.text) if t.kind != "end" else "end of input"
            raise ParseError(f"expected {text!r}, found {found}", t.line, t.column)
        return self.advance()

    def parse(self):
        if self.tok.kind == "end":
            raise ParseError("empty expression", self.tok.line, self.tok.column)
        node = self.expr()
        if self.tok.kind != "end":
            t = self.tok
            if t.text == ")":
                raise ParseError("unbalanced parenthesis: unexpected ')'", t.line, t.column)
            raise ParseError(f"unexpected token {t.text!r}", t.line, t.column)
        return node

    def expr(self):
        node = self.term()
        while self.tok.text in ("+", "-"):
            op = self.advance().text
            node = BinOp(op, node, self.term())
        return node

    def term(self):
        node = self.unary()
        while self.tok.text in ("*", "/"):
            op = self.advance().text
            node = BinOp(op, node, self.unary())
        return node

    def unary(self):
        if self.tok.text == "-":
            self.advance()
            return Neg(self.unary())
        if self.tok.text == "+":
            self.advance()
            return self.unary()
        return self.power()

    def power(self):
        base = self.atom()
        if self.tok.text == "^":
            self.advance()
            return BinOp("^", base, self.unary())
        return base

    def atom(self):
        t = self.tok
        if t.kind == "num":
            self.advance()
            return Num(float(t.text))
        if t.kind == "name":
            self.advance()
            if self.tok.text == "(":
                if t.text not in FUNCTIONS:
                    raise ParseError(f"unknown function {t.text!r}", t.line, t.column)
                self.open_parens.append(self.advance())
                args = [self.expr()]
                while self.tok.text == ",":
                    self.advance()
                    args.append(self.expr())
                self.expect(")")
                self.open_parens.pop()
                if len(args) != FUNCTIONS[t.text]:
                    raise ParseError(
                        f"{t.text} takes {FUNCTIONS[t.text]} argument(s), got {len(args)}",
                        t.line, t.column)
                return Call(t.text, tuple(args))
            if t.text in FUNCTIONS:
                raise ParseError(f"function {t.text!r} used without arguments", t.line, t.column)
            if t.text == "pi":
                return Num(math.pi)
            if self.variables is not None and t.text not in self.variables:
                raise ParseError(f"unknown identifier {t.text!r}", t.line, t.column)
            return Var(t.text)
        if t.text == "(":
            self.open_parens.append(self.advance())
            node = self.expr()
            self.expect(")")
            self.open_parens.pop()
            return node
        if t.kind == "end":
            if self.open_parens:
                raise ParseError("unbalanced parenthesis: missing ')'", t.line, t.column)
            raise ParseError("unexpected end of input", t.line, t.column)
        raise ParseError(f"unexpected token {t.text!r}", t.line, t.column)


def parse(source: str, variables: Sequence[str] | None = DEFAULT_VARIABLES) -> Expr:
    """Parse infix source text into an expression tree.

    ``variables`` restricts the identifiers that may appear; pass ``None`` to
    accept any identifier. ``pi`` is always available as a constant.
    """
    if not isinstance(source, str):
        raise TypeError("source must be text")
    allowed = None if variables is None else frozenset(variables)
    return _Parser(source, allowed).parse()


def free_variables(expr: Expr) -> set:
    if isinstance(expr, Var):
        return {expr.name}
    if isinstance(expr, Num):
        return set()
    if isinstance(expr, Neg):
        return free_variables(expr.operand)
    if isinstance(expr, BinOp):
        return free_variables(expr.left) | free_variables(expr.right)
    out = set()
    for a in expr.args:
        out |= free_variables(a)
    return out


# ---------------------------------------------------------------------------
# Scalar evaluation

def _int_exponent(value):
    if float(value).is_integer() and abs(value) <= MAX_EXPANDED_POWER:
        return int(value)
    return None


def _ipow(base, k):
    out = 1.0
    for _ in range(abs(k)):
        out = out * base
    if k < 0:
        if out == 0:
            raise DomainError("zero raised to a negative power")
        out = 1.0 / out
    return out


def evaluate(expr: Expr, bindings: Mapping[str, float]) -> float:
    """Evaluate on scalar bindings in double precision with strict domain checks."""
    if isinstance(expr, Num):
        return expr.value
    if isinstance(expr, Var):
        try:
            return float(bindings[expr.name])
        except KeyError:
            raise UnboundVariableError(f"unbound variable {expr.name!r}") from None
    if isinstance(expr, Neg):
        return -evaluate(expr.operand, bindings)
    if isinstance(expr, BinOp):
        a = evaluate(expr.left, bindings)
        b = evaluate(expr.right, bindings)
        op = expr.op
        if op == "+":
            return a + b
        if op == "-":
            return a - b
        if op == "*":
            return a * b
        if op == "/":
            if b == 0:
                raise DomainError("division by zero")
            return a / b
        k = _int_exponent(b)
        if k is not None:
            return _ipow(a, k)
        if float(b).is_integer():
            if a == 0 and b < 0:
                raise DomainError("zero raised to a negative power")
            return a ** int(b)
        if a <= 0:
            raise DomainError(f"non-integer power {b} of non-positive base {a}")
        return a ** b
    args = [evaluate(a, bindings) for a in expr.args]
    f = expr.func
    x = args[0]
    if f == "log":
        if x <= 0:
            raise DomainError(f"log of non-positive value {x}")
        return math.log(x)
    if f == "sqrt":
        if x < 0:
            raise DomainError(f"sqrt of negative value {x}")
        return math.sqrt(x)
    if f == "exp":
        try:
            return math.exp(x)
        except OverflowError:
            raise DomainError(f"exp overflow at {x}") from None
    if f == "min":
        return min(args)
    if f == "max":
        return max(args)
    return {"sin": math.sin, "cos": math.cos, "abs": abs, "tanh": math.tanh}[f](x)


# ---------------------------------------------------------------------------
# Printing

_PREC = {"+": 1, "-": 1, "*": 2, "/": 2, "neg": 3, "^": 4}


def _num_source(v):
    if v == math.pi:
        return "pi"
    text = repr(float(v))
    if text in ("inf", "-inf", "nan"):
        raise FieldError(f"cannot print non-finite literal {text}")
    return text


def to_source(expr: Expr) -> str:
    """Print an expression as source text that parses back to an equal value."""
    return _src(expr)[0]


def _src(e):
    if isinstance(e, Num):
        if e.value < 0:
            return "(" + _num_source(e.value) + ")", 5
        return _num_source(e.value), 5
    if isinstance(e, Var):
        return e.name, 5
    if isinstance(e, Call):
        return f"{e.func}(" + ", ".join(_src(a)[0] for a in e.args) + ")", 5
    if isinstance(e, Neg):
        inner, p = _src(e.operand)
        if p < _PREC["^"]:
            inner = f"({inner})"
        return "-" + inner, _PREC["neg"]
    p = _PREC[e.op]
    left, lp = _src(e.left)
    right, rp = _src(e.right)
    if e.op == "^":
        if lp <= p:
            left = f"({left})"
        if rp < _PREC["neg"]:
            right = f"({right})"
    else:
        if lp < p:
            left = f"({left})"
        if rp <= p:
            right = f"({right})"
    return f"{left} {e.op} {right}", p


# ---------------------------------------------------------------------------
# Simplification and symbolic differentiation

def _is_num(e, value=None):
    return isinstance(e, Num) and (value is None or e.value == value)


def simplify(e: Expr) -> Expr:
    """Constant folding and the obvious algebraic identities."""
    if isinstance(e, (Num, Var)):
        return e
    if isinstance(e, Neg):
        a = simplify(e.operand)
        if isinstance(a, Num):
            return Num(-a.value)
        if isinstance(a, Neg):
            return a.operand
        return Neg(a)
    if isinstance(e, Call):
        args = tuple(simplify(a) for a in e.args)
        if all(isinstance(a, Num) for a in args):
            try:
                return Num(evaluate(Call(e.func, args), {}))
            except EvalError:
                pass
        return Call(e.func, args)
    a, b = simplify(e.left), simplify(e.right)
    op = e.op
    if isinstance(a, Num) and isinstance(b, Num):
        try:
            return Num(evaluate(BinOp(op, a, b), {}))
        except EvalError:
            return BinOp(op, a, b)
    if op == "+":
        if _is_num(a, 0.0):
            return b
        if _is_num(b, 0.0):
            return a
        if isinstance(b, Neg):
            return simplify(BinOp("-", a, b.operand))
    elif op == "-":
        if _is_num(b, 0.0):
            return a
        if _is_num(a, 0.0):
            return simplify(Neg(b))
    elif op == "*":
        if _is_num(a, 0.0) or _is_num(b, 0.0):
            return Num(0.0)
        if _is_num(a, 1.0):
            return b
        if _is_num(b, 1.0):
            return a
        if _is_num(a, -1.0):
            return simplify(Neg(b))
        if _is_num(b, -1.0):
            return simplify(Neg(a))
        if isinstance(a, Neg) and isinstance(b, Neg):
            return simplify(BinOp("*", a.operand, b.operand))
    elif op == "/":
        if _is_num(a, 0.0):
            return Num(0.0)
        if _is_num(b, 1.0):
            return a
    elif op == "^":
        if _is_num(b, 1.0):
            return a
        if _is_num(b, 0.0):
            return Num(1.0)
    return BinOp(op, a, b)


def diff(expr: Expr, var: str) -> Expr:
    """Symbolic partial derivative with respect to ``var`` (simplified)."""
    return simplify(_d(expr, var))


def _d(e, v):
    if isinstance(e, Num):
        return Num(0.0)
    if isinstance(e, Var):
        return Num(1.0 if e.name == v else 0.0)
    if isinstance(e, Neg):
        return Neg(_d(e.operand, v))
    if isinstance(e, BinOp):
        a, b = e.left, e.right
        if e.op in "+-":
            return BinOp(e.op, _d(a, v), _d(b, v))
        if e.op == "*":
            return BinOp("+", BinOp("*", _d(a, v), b), BinOp("*", a, _d(b, v)))
        if e.op == "/":
            num = BinOp("-", BinOp("*", _d(a, v), b), BinOp("*", a, _d(b, v)))
            return BinOp("/", num, BinOp("^", b, Num(2.0)))
        # power
        if v not in free_variables(b):
            # d(a^k) = k a^(k-1) a'
            kb = simplify(b)
            if isinstance(kb, Num):
                return BinOp("*", BinOp("*", kb, BinOp("^", a, Num(kb.value - 1.0))), _d(a, v))
            return BinOp("*", BinOp("*", kb, BinOp("^", a, BinOp("-", kb, Num(1.0)))), _d(a, v))
        # general a^b = exp(b log a)
        return BinOp("*", e, BinOp("+", BinOp("*", _d(b, v), Call("log", (a,))),
                                   BinOp("/", BinOp("*", b, _d(a, v)), a)))
    f, args = e.func, e.args
    if f in ("abs", "min", "max"):
        if all(v not in free_variables(a) for a in args):
            return Num(0.0)
        raise NonDifferentiableError(f"{f} is not differentiable")
    x = args[0]
    dx = _d(x, v)
    if f == "sin":
        outer = Call("cos", (x,))
    elif f == "cos":
        outer = Neg(Call("sin", (x,)))
    elif f == "exp":
        outer = e
    elif f == "log":
        outer = BinOp("/", Num(1.0), x)
    elif f == "sqrt":
        outer = BinOp("/", Num(0.5), e)
    elif f == "tanh":
        outer = BinOp("-", Num(1.0), BinOp("^", e, Num(2.0)))
    else:  # pragma: no cover
        raise NonDifferentiableError(f)
    return BinOp("*", outer, dx)


def grad(expr: Expr, variables: Sequence[str]) -> list:
    """Symbolic gradient: one derivative tree per variable."""
    return [diff(expr, v) for v in variables]


# ---------------------------------------------------------------------------
# Vectorised compilation

def _code(e):
    if isinstance(e, Num):
        return repr(e.value)
    if isinstance(e, Var):
        return f"_v_{e.name}"
    if isinstance(e, Neg):
        return f"(-{_code(e.operand)})"
    if isinstance(e, BinOp):
        a, b = _code(e.left), _code(e.right)
        if e.op != "^":
            return f"({a} {e.op} {b})"
        if isinstance(e.right, Num):
            k = _int_exponent(e.right.value)
            if k is not None:
                if k == 0:
                    return f"(0.0 * {a} + 1.0)"
                prod = " * ".join([f"_b"] * abs(k))
                body = f"(lambda _b: {prod})({a})"
                return body if k > 0 else f"(1.0 / {body})"
        return f"_pow({a}, {b})"
    names = {"sin": "_np.sin", "cos": "_np.cos", "exp": "_np.exp", "log": "_np.log",
             "sqrt": "_np.sqrt", "abs": "_np.abs", "tanh": "_np.tanh",
             "min": "_np.minimum", "max": "_np.maximum"}
    return f"{names[e.func]}(" + ", ".join(_code(a) for a in e.args) + ")"


def _pow(a, b):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    ib = np.round(b)
    is_int = ib == b
    with np.errstate(invalid="ignore", divide="ignore"):
        out = np.where(is_int, np.power(a, ib), np.where(a > 0, np.power(np.abs(a), b), np.nan))
    return out


def _compile(expr, variables):
    src = "lambda " + ", ".join(f"_v_{v}" for v in variables) + ": " + _code(expr)
    return eval(src, {"_np": np, "_pow": _pow})  # noqa: S307 - generated from a parsed tree


@dataclass(frozen=True)
class FieldDef:
    """A field R^arity -> R^dim defined by one expression per output component.

    Instances are callable on an array whose last axis holds the input
    coordinates, returning an array whose last axis holds the components.
    Non-finite outputs raise :class:`DomainError`.
    """

    name: str
    variables: tuple
    components: tuple
    shape: tuple = ()
    _fns: tuple = field(default=(), repr=False, compare=False)

    @classmethod
    def from_sources(cls, name, variables, sources, shape=None):
        if isinstance(sources, str):
            sources = [sources]
        flat = list(np.ravel(np.asarray(sources, dtype=object)))
        if not flat:
            raise FieldError(f"field {name!r} needs at least one component")
        exprs = [s if isinstance(s, Expr) else parse(str(s), variables) for s in flat]
        if shape is None:
            shape = np.asarray(sources, dtype=object).shape
        return cls.from_exprs(name, variables, exprs, shape)

    @classmethod
    def from_exprs(cls, name, variables, exprs, shape=None):
        variables = tuple(variables)
        exprs = tuple(exprs)
        for e in exprs:
            extra = free_variables(e) - set(variables)
            if extra:
                raise FieldError(f"field {name!r} uses undeclared variable(s) {sorted(extra)}")
        if shape is None:
            shape = (len(exprs),)
        shape = tuple(shape)
        if int(np.prod(shape)) != len(exprs):
            raise FieldError(f"field {name!r}: {len(exprs)} components do not fill shape {shape}")
        fns = tuple(_compile(e, variables) for e in exprs)
        return cls(name, variables, exprs, shape, fns)

    @property
    def arity(self):
        return len(self.variables)

    @property
    def dim(self):
        return len(self.components)

    def __call__(self, x, strict=True):
        x = np.asarray(x, dtype=float)
        if self.arity == 1 and (x.ndim == 0 or x.shape[-1] != 1):
            x = x[..., None]
        if x.shape[-1] != self.arity:
            raise FieldError(f"field {self.name!r} expects {self.arity} inputs, got {x.shape[-1]}")
        cols = [x[..., i] for i in range(self.arity)]
        base = x.shape[:-1]
        with np.errstate(all="ignore"):
            out = np.stack([np.broadcast_to(f(*cols), base).astype(float) for f in self._fns], axis=-1)
        if strict and not np.all(np.isfinite(out)):
            raise DomainError(f"field {self.name!r} is not finite at some evaluation point")
        return out.reshape(base + self.shape)

    def scalar(self, x):
        """Evaluate a scalar field and drop the trailing component axis."""
        out = self(x)
        return out.reshape(out.shape[: out.ndim - len(self.shape)]) if self.shape == (1,) else out

    def jacobian(self, name=None):
        """Field of partial derivatives, shape ``self.shape + (arity,)``."""
        exprs = [diff(c, v) for c in self.components for v in self.variables]
        return FieldDef.from_exprs(name or f"d{self.name}", self.variables, exprs,
                                   self.shape + (self.arity,))

    def evaluate_at(self, **bindings):
        vals = [evaluate(c, bindings) for c in self.components]
        return np.asarray(vals).reshape(self.shape)

    def sources(self):
        return [to_source(c) for c in self.components]


def scalar_field(source, variables, name="f") -> FieldDef:
    return FieldDef.from_sources(name, variables, [source], shape=(1,))


def vector_field(sources, variables, name="F") -> FieldDef:
    return FieldDef.from_sources(name, variables, list(sources), shape=(len(sources),))


def matrix_field(rows, variables, name="M") -> FieldDef:
    return FieldDef.from_sources(name, variables, rows)

