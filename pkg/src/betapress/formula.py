"""Predictor formulas: parsing, printing, symbolic derivatives, evaluation.

Grammar (``^`` binds tighter than unary minus, and is right-associative)::

    expr    := term (('+' | '-') term)*
    term    := unary (('*' | '/') unary)*
    unary   := ('-' | '+') unary | power
    power   := atom ('^' unary)?
    atom    := NUMBER | PARAM | COVARIATE | FUNC '(' expr ')' | '(' expr ')'
    FUNC    := log | exp | sqrt
    PARAM   := <prefix><index>, e.g. b1..bK for the mean, g1..gQ for precision

A minus sign directly in front of a number literal (and not followed by
``^``) is folded into a negative constant, which keeps printing and
re-parsing structurally stable.
"""

import re
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .errors import (
    EvaluationDomainError,
    FormulaError,
    FormulaSyntaxError,
    ParameterGapError,
    UnknownCovariateError,
)

__all__ = [
    "Binary",
    "Const",
    "Covariate",
    "Expression",
    "Param",
    "PredictorSpec",
    "Unary",
    "differentiate",
    "eval_jacobian_row",
    "eval_predictor",
    "parse_expression",
    "parse_formula",
]

FUNCTIONS = ("log", "exp", "sqrt")


class Expression:
    """Base class of the immutable expression tree."""

    __slots__ = ()

    def __str__(self):
        return _format(self)

    def params(self):
        return set(_walk(self, Param))

    def covariates(self):
        return {node.name for node in _walk(self, Covariate)}


@dataclass(frozen=True, eq=True, repr=True)
class Const(Expression):
    value: float

    def __post_init__(self):
        object.__setattr__(self, "value", float(self.value))


@dataclass(frozen=True)
class Param(Expression):
    prefix: str
    index: int  # zero-based


@dataclass(frozen=True)
class Covariate(Expression):
    name: str


@dataclass(frozen=True)
class Unary(Expression):
    op: str  # neg | log | exp | sqrt
    arg: Expression


@dataclass(frozen=True)
class Binary(Expression):
    op: str  # add | sub | mul | div | pow
    left: Expression
    right: Expression


def _walk(node, kind):
    if isinstance(node, kind):
        yield node
    if isinstance(node, Unary):
        yield from _walk(node.arg, kind)
    elif isinstance(node, Binary):
        yield from _walk(node.left, kind)
        yield from _walk(node.right, kind)


# ---------------------------------------------------------------------------
# tokenizer and parser

_TOKEN = re.compile(
    r"\s*(?:"
    r"(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<name>[A-Za-z_][A-Za-z0-9_]*)"
    r"|(?P<op>[-+*/^()])"
    r")"
)


@dataclass
class _Token:
    kind: str
    text: str
    offset: int


def _byte_offset(text, pos):
    return len(text[:pos].encode("utf-8"))


def _tokenize(text):
    tokens = []
    pos = 0
    stripped_end = len(text.rstrip())
    while pos < stripped_end:
        m = _TOKEN.match(text, pos)
        if m is None or m.end() == pos:
            while text[pos].isspace():
                pos += 1
            raise FormulaSyntaxError(f"unexpected character {text[pos]!r}", _byte_offset(text, pos))
        kind = m.lastgroup
        start = m.start(kind)
        tokens.append(_Token(kind, m.group(kind), _byte_offset(text, start)))
        pos = m.end()
    tokens.append(_Token("end", "", _byte_offset(text, len(text))))
    return tokens


class _Parser:
    def __init__(self, text, prefix, schema):
        self.text = text
        self.prefix = prefix
        self.schema = None if schema is None else set(schema)
        self.tokens = _tokenize(text)
        self.pos = 0
        self.param_re = re.compile(rf"^{re.escape(prefix)}([1-9][0-9]*)$")

    @property
    def tok(self):
        return self.tokens[self.pos]

    def _peek(self, k=1):
        return self.tokens[min(self.pos + k, len(self.tokens) - 1)]

    def _advance(self):
        tok = self.tokens[self.pos]
        self.pos += 1
        return tok

    def _expect(self, text):
        if self.tok.text != text or self.tok.kind == "end":
            found = self.tok.text or "end of input"
            raise FormulaSyntaxError(f"expected {text!r}, found {found!r}", self.tok.offset)
        return self._advance()

    def parse(self):
        if self.tok.kind == "end":
            raise FormulaSyntaxError("empty formula", 0)
        node = self.expr()
        if self.tok.kind != "end":
            raise FormulaSyntaxError(f"unexpected {self.tok.text!r}", self.tok.offset)
        return node

    def expr(self):
        node = self.term()
        while self.tok.kind == "op" and self.tok.text in "+-":
            op = "add" if self._advance().text == "+" else "sub"
            node = Binary(op, node, self.term())
        return node

    def term(self):
        node = self.unary()
        while self.tok.kind == "op" and self.tok.text in "*/":
            op = "mul" if self._advance().text == "*" else "div"
            node = Binary(op, node, self.unary())
        return node

    def unary(self):
        if self.tok.kind == "op" and self.tok.text in "+-":
            sign = self._advance().text
            if (
                sign == "-"
                and self.tok.kind == "num"
                and not (self._peek().kind == "op" and self._peek().text == "^")
            ):
                return Const(-float(self._advance().text))
            operand = self.unary()
            return Unary("neg", operand) if sign == "-" else operand
        return self.power()

    def power(self):
        base = self.atom()
        if self.tok.kind == "op" and self.tok.text == "^":
            self._advance()
            return Binary("pow", base, self.unary())
        return base

    def atom(self):
        tok = self.tok
        if tok.kind == "num":
            self._advance()
            return Const(float(tok.text))
        if tok.kind == "name":
            self._advance()
            if tok.text in FUNCTIONS:
                if not (self.tok.kind == "op" and self.tok.text == "("):
                    raise FormulaSyntaxError(f"expected '(' after {tok.text}", self.tok.offset)
                self._advance()
                arg = self.expr()
                self._expect(")")
                return Unary(tok.text, arg)
            if self.tok.kind == "op" and self.tok.text == "(":
                raise FormulaSyntaxError(f"unknown function {tok.text!r}", tok.offset)
            m = self.param_re.match(tok.text)
            if m and (self.schema is None or tok.text not in self.schema):
                return Param(self.prefix, int(m.group(1)) - 1)
            if self.schema is not None and tok.text not in self.schema:
                raise UnknownCovariateError(tok.text, tok.offset)
            return Covariate(tok.text)
        if tok.kind == "op" and tok.text == "(":
            self._advance()
            node = self.expr()
            self._expect(")")
            return node
        found = tok.text or "end of input"
        raise FormulaSyntaxError(f"unexpected {found!r}", tok.offset)


def parse_expression(text, prefix="b", schema=None):
    """Parse ``text`` into an :class:`Expression` without building a spec."""
    return _Parser(text, prefix, schema).parse()


# ---------------------------------------------------------------------------
# printing

_PREC = {"add": 1, "sub": 1, "mul": 2, "div": 2, "pow": 4}
_SYMBOL = {"add": " + ", "sub": " - ", "mul": " * ", "div": " / ", "pow": "^"}


def _prec(node):
    if isinstance(node, Binary):
        return _PREC[node.op]
    if isinstance(node, Unary) and node.op == "neg":
        return 3
    return 5


def _number(value):
    if value.is_integer() and abs(value) < 1e15:
        text = str(int(value))
    else:
        text = repr(value)
    return f"({text})" if value < 0 or text.startswith("-") else text


def _format(node):
    if isinstance(node, Const):
        return _number(node.value)
    if isinstance(node, Param):
        return f"{node.prefix}{node.index + 1}"
    if isinstance(node, Covariate):
        return node.name
    if isinstance(node, Unary):
        if node.op == "neg":
            inner = _format(node.arg)
            if _prec(node.arg) < 3 or (isinstance(node.arg, Const) and node.arg.value >= 0):
                inner = f"({inner})"
            return f"-{inner}"
        return f"{node.op}({_format(node.arg)})"
    p = _PREC[node.op]
    left = _format(node.left)
    right = _format(node.right)
    if node.op == "pow":
        if _prec(node.left) <= 4:
            left = f"({left})"
        if _prec(node.right) < 3:
            right = f"({right})"
    else:
        if _prec(node.left) < p:
            left = f"({left})"
        if _prec(node.right) <= p:
            right = f"({right})"
    return f"{left}{_SYMBOL[node.op]}{right}"


# ---------------------------------------------------------------------------
# simplifying constructors and symbolic differentiation

ZERO = Const(0.0)
ONE = Const(1.0)


def _is(node, value):
    return isinstance(node, Const) and node.value == value


def _neg(a):
    if isinstance(a, Const):
        return Const(-a.value)
    if isinstance(a, Unary) and a.op == "neg":
        return a.arg
    return Unary("neg", a)


def _add(a, b):
    if _is(a, 0):
        return b
    if _is(b, 0):
        return a
    if isinstance(a, Const) and isinstance(b, Const):
        return Const(a.value + b.value)
    if isinstance(b, Unary) and b.op == "neg":
        return Binary("sub", a, b.arg)
    return Binary("add", a, b)


def _sub(a, b):
    if _is(b, 0):
        return a
    if _is(a, 0):
        return _neg(b)
    if isinstance(a, Const) and isinstance(b, Const):
        return Const(a.value - b.value)
    if isinstance(b, Unary) and b.op == "neg":
        return Binary("add", a, b.arg)
    return Binary("sub", a, b)


def _mul(a, b):
    if _is(a, 0) or _is(b, 0):
        return ZERO
    if _is(a, 1):
        return b
    if _is(b, 1):
        return a
    if isinstance(a, Const) and isinstance(b, Const):
        return Const(a.value * b.value)
    if _is(a, -1):
        return _neg(b)
    if _is(b, -1):
        return _neg(a)
    return Binary("mul", a, b)


def _div(a, b):
    if _is(a, 0):
        return ZERO
    if _is(b, 1):
        return a
    if isinstance(a, Const) and isinstance(b, Const) and b.value != 0:
        return Const(a.value / b.value)
    if isinstance(a, Const) and a.value < 0:
        return _neg(_div(Const(-a.value), b))
    return Binary("div", a, b)


def _pow(a, b):
    if _is(b, 1):
        return a
    if _is(b, 0):
        return ONE
    return Binary("pow", a, b)


def _derive(node, target):
    if isinstance(node, (Const, Covariate)):
        return ZERO
    if isinstance(node, Param):
        return ONE if node == target else ZERO
    if isinstance(node, Unary):
        du = _derive(node.arg, target)
        if _is(du, 0):
            return ZERO
        if node.op == "neg":
            return _neg(du)
        if node.op == "log":
            return _div(du, node.arg)
        if node.op == "exp":
            return _mul(node, du)
        if node.op == "sqrt":
            return _div(du, _mul(Const(2.0), node))
        raise FormulaError(f"unknown unary operator {node.op!r}")
    u, v = node.left, node.right
    du = _derive(u, target)
    dv = _derive(v, target)
    if node.op == "add":
        return _add(du, dv)
    if node.op == "sub":
        return _sub(du, dv)
    if node.op == "mul":
        return _add(_mul(du, v), _mul(u, dv))
    if node.op == "div":
        if _is(dv, 0):
            return _div(du, v)
        if _is(du, 0):
            return _div(_neg(_mul(u, dv)), _pow(v, Const(2.0)))
        return _div(_sub(_mul(du, v), _mul(u, dv)), _pow(v, Const(2.0)))
    if node.op == "pow":
        if _is(du, 0) and _is(dv, 0):
            return ZERO
        if _is(dv, 0):
            if isinstance(v, Const):
                exponent = Const(v.value - 1.0)
            else:
                exponent = _sub(v, ONE)
            return _mul(_mul(v, _pow(u, exponent)), du)
        if _is(du, 0):
            return _mul(_mul(node, Unary("log", u)), dv)
        return _mul(node, _add(_mul(dv, Unary("log", u)), _div(_mul(v, du), u)))
    raise FormulaError(f"unknown binary operator {node.op!r}")


# ---------------------------------------------------------------------------
# compiled evaluation


def _fail(values, bad, node, reason):
    bad = np.broadcast_to(bad, np.shape(values)) if np.ndim(values) else bad
    row = int(np.flatnonzero(np.atleast_1d(bad))[0]) if np.ndim(bad) else 0
    raise EvaluationDomainError(row, str(node), reason)


def _checked(node, result):
    finite = np.isfinite(result)
    if not np.all(finite):
        _fail(result, ~finite, node, "non-finite value")
    return result


def _compile(node):
    """Turn a tree into a closure ``f(params, columns) -> float | ndarray``."""
    if isinstance(node, Const):
        value = node.value
        return lambda p, c: value
    if isinstance(node, Param):
        idx = node.index
        return lambda p, c: p[idx]
    if isinstance(node, Covariate):
        name = node.name
        return lambda p, c: c[name]
    if isinstance(node, Unary):
        arg = _compile(node.arg)
        if node.op == "neg":
            return lambda p, c: -arg(p, c)
        if node.op == "exp":

            def f(p, c):
                with np.errstate(over="ignore"):
                    return _checked(node, np.exp(arg(p, c)))

            return f
        if node.op == "log":

            def f(p, c):
                x = arg(p, c)
                bad = ~(np.asarray(x) > 0)
                if np.any(bad):
                    _fail(x, bad, node, "log of a non-positive value")
                return np.log(x)

            return f
        if node.op == "sqrt":

            def f(p, c):
                x = arg(p, c)
                bad = ~(np.asarray(x) >= 0)
                if np.any(bad):
                    _fail(x, bad, node, "sqrt of a negative value")
                return np.sqrt(x)

            return f
        raise FormulaError(f"unknown unary operator {node.op!r}")
    left = _compile(node.left)
    right = _compile(node.right)
    if node.op == "add":
        return lambda p, c: left(p, c) + right(p, c)
    if node.op == "sub":
        return lambda p, c: left(p, c) - right(p, c)
    if node.op == "mul":

        def f(p, c):
            with np.errstate(over="ignore", invalid="ignore"):
                return _checked(node, left(p, c) * right(p, c))

        return f
    if node.op == "div":

        def f(p, c):
            den = right(p, c)
            bad = np.asarray(den) == 0
            if np.any(bad):
                _fail(den, bad, node, "division by zero")
            with np.errstate(over="ignore", invalid="ignore"):
                return _checked(node, left(p, c) / den)

        return f
    if node.op == "pow":

        def f(p, c):
            base = left(p, c)
            expo = right(p, c)
            with np.errstate(all="ignore"):
                return _checked(node, np.power(np.asarray(base, dtype=float), expo))

        return f
    raise FormulaError(f"unknown binary operator {node.op!r}")


# ---------------------------------------------------------------------------
# predictor specs


@dataclass(frozen=True)
class PredictorSpec:
    """A parsed predictor with its parameter count and covariate list.

    ``derivatives[j]`` is the symbolic partial derivative with respect to
    parameter ``j`` (zero-based).
    """

    expression: Expression
    param_count: int
    covariate_names: tuple
    prefix: str = "b"
    text: str = ""
    derivatives: tuple = field(init=False, repr=False, compare=False)
    is_linear: bool = field(init=False, repr=False, compare=False)
    _value_fn: object = field(init=False, repr=False, compare=False)
    _deriv_fns: tuple = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        derivs = tuple(differentiate(self, j) for j in range(self.param_count))
        object.__setattr__(self, "derivatives", derivs)
        object.__setattr__(self, "is_linear", all(not d.params() for d in derivs))
        object.__setattr__(self, "_value_fn", _compile(self.expression))
        object.__setattr__(self, "_deriv_fns", tuple(_compile(d) for d in derivs))

    @property
    def covariate_count(self):
        return len(self.covariate_names)

    def __str__(self):
        return str(self.expression)

    def evaluate(self, params, columns, n):
        """Predictor values for all ``n`` rows of ``columns``."""
        p = np.asarray(params, dtype=float)
        out = self._value_fn(p, columns)
        return np.broadcast_to(np.asarray(out, dtype=float), (n,)).copy()

    def jacobian(self, params, columns, n):
        """``n x param_count`` matrix of partial derivatives."""
        p = np.asarray(params, dtype=float)
        jac = np.empty((n, self.param_count))
        for j, fn in enumerate(self._deriv_fns):
            jac[:, j] = fn(p, columns)
        return jac


def parse_formula(text, schema=None, prefix="b"):
    """Parse a predictor formula against a covariate schema.

    Parameters
    ----------
    text : str
        Formula such as ``"b1 + x2^b2 + b3*log(x3 - b4) + x3/b5"``.
    schema : sequence of str, optional
        Covariate names available in the data.  ``None`` skips the
        unknown-covariate check (used when a config is read without data).
    prefix : str
        Parameter prefix, ``"b"`` for the mean and ``"g"`` for precision.
    """
    expr = parse_expression(text, prefix=prefix, schema=schema)
    indices = {p.index for p in expr.params()}
    if not indices:
        raise FormulaError(f"formula {text!r} has no {prefix}-parameters")
    count = max(indices) + 1
    missing = [i + 1 for i in range(count) if i not in indices]
    if missing:
        raise ParameterGapError(prefix, missing)
    used = expr.covariates()
    if schema is not None:
        names = tuple(name for name in schema if name in used)
    else:
        names = tuple(sorted(used))
    return PredictorSpec(expr, count, names, prefix, text)


def differentiate(spec, param_index):
    """Symbolic partial derivative of ``spec`` w.r.t. parameter ``param_index``."""
    if not 0 <= param_index < spec.param_count:
        raise FormulaError(f"parameter index {param_index} out of range")
    return _derive(spec.expression, Param(spec.prefix, param_index))


def _row_columns(row):
    return {name: np.asarray([float(v)]) for name, v in row.items()}


def eval_predictor(spec, params, row: Mapping[str, float]):
    """Predictor value at a single covariate row."""
    _check_len(spec, params)
    return float(spec.evaluate(params, _row_columns(row), 1)[0])


def eval_jacobian_row(spec, params, row: Mapping[str, float]):
    """Gradient of the predictor w.r.t. its parameters at one row."""
    _check_len(spec, params)
    return spec.jacobian(params, _row_columns(row), 1)[0]


def _check_len(spec, params: Sequence[float]):
    if len(params) != spec.param_count:
        raise FormulaError(
            f"expected {spec.param_count} parameters, got {len(params)}"
        )
