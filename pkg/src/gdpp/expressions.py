"""Coefficient expression language.

A tiny arithmetic language used for every coefficient of a control problem::

    expr   := term (('+' | '-') term)*
    term   := unary (('*' | '/') unary)*
    unary  := '-' unary | power
    power  := atom ('^' signed)*
    signed := '-' signed | atom
    atom   := number | name | name '(' expr (',' expr)* ')' | '(' expr ')'

so ``-2^2`` is ``-(2^2)`` and ``2^3^2`` is ``(2^3)^2``.  Evaluation is
vectorised: variables may be bound to numpy arrays of a common shape.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Callable, Iterable, Mapping

import numpy as np

from .errors import EvaluationError, ParseError

MAX_SOURCE_BYTES = 64 * 1024

_VAR_RE = re.compile(r"^(s|y|x[1-9][0-9]*|u[1-9][0-9]*)$")

FUNCTIONS: dict[str, int] = {
    "sin": 1,
    "cos": 1,
    "exp": 1,
    "tanh": 1,
    "abs": 1,
    "sqrt": 1,
    "min": 2,
    "max": 2,
}


# --------------------------------------------------------------------- AST


@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Var:
    name: str


@dataclass(frozen=True)
class Neg:
    operand: "Node"


@dataclass(frozen=True)
class BinOp:
    op: str
    left: "Node"
    right: "Node"


@dataclass(frozen=True)
class Call:
    func: str
    args: tuple


Node = Num | Var | Neg | BinOp | Call

_PREC = {"+": 1, "-": 1, "*": 2, "/": 2, "^": 4}
_UNARY_PREC = 3
_ATOM_PREC = 5


# ------------------------------------------------------------------- lexer

_TOKEN_RE = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.\d*|\.\d+|\d+)(?:[eE][-+]?\d+)?)"
    r"|(?P<name>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<op>[-+*/^(),]))"
)


@dataclass(frozen=True)
class _Token:
    kind: str  # 'num', 'name', 'op', 'end'
    text: str
    pos: int


def _tokenize(text: str) -> list[_Token]:
    tokens = []
    pos = 0
    n = len(text)
    while pos < n:
        if text[pos].isspace():
            pos += 1
            continue
        m = _TOKEN_RE.match(text, pos)
        if m is None or m.end() == pos:
            raise ParseError(f"unexpected character {text[pos]!r}", _byte_offset(text, pos))
        kind = m.lastgroup
        tokens.append(_Token(kind, m.group(kind), m.start(kind)))
        pos = m.end()
    tokens.append(_Token("end", "", n))
    return tokens


def _byte_offset(text: str, pos: int) -> int:
    return len(text[:pos].encode("utf-8"))


# ------------------------------------------------------------------ parser


class _Parser:
    def __init__(self, text: str, variables: frozenset[str] | None):
        self.text = text
        self.tokens = _tokenize(text)
        self.i = 0
        self.variables = variables

    @property
    def tok(self) -> _Token:
        return self.tokens[self.i]

    def fail(self, message, expected=(), kind="syntax"):
        raise ParseError(message, _byte_offset(self.text, self.tok.pos), expected, kind)

    def eat(self, text):
        if self.tok.kind == "op" and self.tok.text == text:
            self.i += 1
            return True
        return False

    def expect(self, text):
        if not self.eat(text):
            found = self.tok.text or "end of input"
            self.fail(f"unexpected {found!r}", expected=(repr(text),))

    def parse(self) -> Node:
        node = self.expr()
        if self.tok.kind != "end":
            self.fail(f"unexpected {self.tok.text!r}", expected=("operator", "end of input"))
        return node

    def expr(self) -> Node:
        node = self.term()
        while self.tok.kind == "op" and self.tok.text in "+-":
            op = self.tok.text
            self.i += 1
            node = BinOp(op, node, self.term())
        return node

    def term(self) -> Node:
        node = self.unary()
        while self.tok.kind == "op" and self.tok.text in "*/":
            op = self.tok.text
            self.i += 1
            node = BinOp(op, node, self.unary())
        return node

    def unary(self) -> Node:
        if self.eat("-"):
            return Neg(self.unary())
        return self.power()

    def power(self) -> Node:
        node = self.atom()
        while self.eat("^"):
            node = BinOp("^", node, self.signed())
        return node

    def signed(self) -> Node:
        if self.eat("-"):
            return Neg(self.signed())
        return self.atom()

    def atom(self) -> Node:
        tok = self.tok
        if tok.kind == "num":
            self.i += 1
            return Num(float(tok.text))
        if tok.kind == "name":
            self.i += 1
            if self.tok.kind == "op" and self.tok.text == "(":
                return self.call(tok)
            if tok.text in FUNCTIONS:
                self.i -= 1
                self.fail(f"function {tok.text!r} used without arguments", expected=("'('",))
            if not self._known_variable(tok.text):
                self.i -= 1
                self.fail(f"unknown variable {tok.text!r}", kind="name")
            return Var(tok.text)
        if self.eat("("):
            node = self.expr()
            self.expect(")")
            return node
        found = tok.text or "end of input"
        self.fail(f"unexpected {found!r}", expected=("number", "name", "'('", "'-'"))

    def call(self, name_tok: _Token) -> Node:
        fname = name_tok.text
        if fname not in FUNCTIONS:
            raise ParseError(f"unknown function {fname!r}", _byte_offset(self.text, name_tok.pos),
                             kind="name")
        self.expect("(")
        args = [self.expr()]
        while self.eat(","):
            args.append(self.expr())
        self.expect(")")
        if len(args) != FUNCTIONS[fname]:
            raise ParseError(
                f"function {fname!r} takes {FUNCTIONS[fname]} argument(s), got {len(args)}",
                _byte_offset(self.text, name_tok.pos), kind="arity",
            )
        return Call(fname, tuple(args))

    def _known_variable(self, name: str) -> bool:
        if self.variables is not None:
            return name in self.variables
        return bool(_VAR_RE.match(name))


# ----------------------------------------------------------------- printer


def _fmt_num(v: float) -> str:
    if v.is_integer() and abs(v) < 1e15:
        return str(int(v))
    return repr(v)


def _prec(node: Node) -> int:
    if isinstance(node, BinOp):
        return _PREC[node.op]
    if isinstance(node, Neg) or (isinstance(node, Num) and math.copysign(1.0, node.value) < 0):
        return _UNARY_PREC
    return _ATOM_PREC


def to_text(node: Node) -> str:
    """Render ``node`` with the minimal parentheses the grammar needs."""
    if isinstance(node, Num):
        if math.copysign(1.0, node.value) < 0:
            return "-" + _fmt_num(-node.value)
        return _fmt_num(node.value)
    if isinstance(node, Var):
        return node.name
    if isinstance(node, Call):
        return f"{node.func}({', '.join(to_text(a) for a in node.args)})"
    if isinstance(node, Neg):
        inner = to_text(node.operand)
        if _prec(node.operand) < _UNARY_PREC:
            inner = f"({inner})"
        return "-" + inner
    p = _PREC[node.op]
    left = to_text(node.left)
    if _prec(node.left) < p:
        left = f"({left})"
    right = to_text(node.right)
    if node.op == "^":
        # the exponent is a (signed) atom in the grammar
        if not _signed_atom(node.right):
            right = f"({right})"
        return f"{left}^{right}"
    if _prec(node.right) <= p:
        right = f"({right})"
    return f"{left} {node.op} {right}"


def _signed_atom(node: Node) -> bool:
    while isinstance(node, Neg):
        node = node.operand
    return _prec(node) == _ATOM_PREC or isinstance(node, Num)


# --------------------------------------------------------------- evaluator


def _guard_div(a, b):
    if np.any(np.asarray(b) == 0):
        raise EvaluationError("division by zero")
    return np.divide(a, b)


def _guard_sqrt(a):
    if np.any(np.asarray(a) < 0):
        raise EvaluationError("sqrt of a negative number")
    return np.sqrt(a)


def _guard_pow(a, b):
    with np.errstate(all="ignore"):
        out = np.power(np.asarray(a, dtype=float), b)
    if not np.all(np.isfinite(out)):
        raise EvaluationError("power produced a non-finite value")
    return out


_BIN_IMPL: dict[str, Callable] = {
    "+": np.add,
    "-": np.subtract,
    "*": np.multiply,
    "/": _guard_div,
    "^": _guard_pow,
}

_FUNC_IMPL: dict[str, Callable] = {
    "sin": np.sin,
    "cos": np.cos,
    "exp": np.exp,
    "tanh": np.tanh,
    "abs": np.abs,
    "sqrt": _guard_sqrt,
    "min": np.minimum,
    "max": np.maximum,
}


def _compile(node: Node) -> Callable[[Mapping], object]:
    if isinstance(node, Num):
        v = node.value
        return lambda env: v
    if isinstance(node, Var):
        name = node.name

        def var(env):
            try:
                return env[name]
            except KeyError:
                raise EvaluationError(f"variable {name!r} is not bound") from None

        return var
    if isinstance(node, Neg):
        inner = _compile(node.operand)
        return lambda env: np.negative(inner(env))
    if isinstance(node, BinOp):
        fn = _BIN_IMPL[node.op]
        left, right = _compile(node.left), _compile(node.right)
        return lambda env: fn(left(env), right(env))
    fn = _FUNC_IMPL[node.func]
    args = [_compile(a) for a in node.args]
    return lambda env: fn(*(a(env) for a in args))


def _free_variables(node: Node, acc: set[str]) -> set[str]:
    if isinstance(node, Var):
        acc.add(node.name)
    elif isinstance(node, Neg):
        _free_variables(node.operand, acc)
    elif isinstance(node, BinOp):
        _free_variables(node.left, acc)
        _free_variables(node.right, acc)
    elif isinstance(node, Call):
        for a in node.args:
            _free_variables(a, acc)
    return acc


class Expression:
    """A parsed coefficient formula, callable on scalars or numpy arrays."""

    def __init__(self, node: Node, name: str = ""):
        self.node = node
        self.name = name
        self.variables = frozenset(_free_variables(node, set()))
        self._fn = _compile(node)

    def __repr__(self):
        label = f"{self.name}=" if self.name else ""
        return f"Expression({label}{to_text(self.node)!r})"

    def __str__(self):
        return to_text(self.node)

    def __eq__(self, other):
        return isinstance(other, Expression) and self.node == other.node

    def __hash__(self):
        return hash(self.node)

    @property
    def is_constant(self) -> bool:
        return not self.variables

    def evaluate(self, env: Mapping | None = None, **kwargs):
        """Evaluate with variables bound from ``env`` and keyword arguments.

        Returns a float for scalar bindings, otherwise an array broadcast over
        the bound arrays.  Raises :class:`EvaluationError` on undefined
        operations or non-finite results.
        """
        scope = dict(env or {})
        scope.update(kwargs)
        try:
            with np.errstate(all="ignore"):
                out = self._fn(scope)
        except EvaluationError as exc:
            where = f" in {self.name}" if self.name else ""
            raise EvaluationError(f"{exc}{where}") from None
        out = np.asarray(out, dtype=float)
        if not np.all(np.isfinite(out)):
            where = f" in {self.name}" if self.name else ""
            raise EvaluationError(f"non-finite value{where}")
        if out.ndim == 0:
            return float(out)
        return out

    __call__ = evaluate

    def derivative(self, var: str) -> "Expression":
        return Expression(differentiate(self.node, var), name=f"d{self.name}/d{var}")


def parse_expression(text: str, variables: Iterable[str] | None = None, name: str = "") -> Expression:
    """Parse ``text`` into an :class:`Expression`.

    ``variables`` restricts the admissible names; by default ``s``, ``y``,
    ``x1``, ``x2``, ... and ``u1``, ``u2``, ... are accepted.
    """
    if not isinstance(text, str):
        raise ParseError("expression must be a string", 0)
    if len(text.encode("utf-8")) > MAX_SOURCE_BYTES:
        raise ParseError("expression exceeds 64 KiB", MAX_SOURCE_BYTES, kind="size")
    if not text.strip():
        raise ParseError("empty expression", 0, expected=("expression",))
    allowed = frozenset(variables) if variables is not None else None
    return Expression(_Parser(text, allowed).parse(), name=name)


# ---------------------------------------------------------- differentiation


def _is_num(node, value=None):
    return isinstance(node, Num) and (value is None or node.value == value)


def _add(a, b):
    if _is_num(a, 0.0):
        return b
    if _is_num(b, 0.0):
        return a
    if _is_num(a) and _is_num(b):
        return Num(a.value + b.value)
    return BinOp("+", a, b)


def _sub(a, b):
    if _is_num(b, 0.0):
        return a
    if _is_num(a, 0.0):
        return _neg(b)
    if _is_num(a) and _is_num(b):
        return Num(a.value - b.value)
    return BinOp("-", a, b)


def _mul(a, b):
    if _is_num(a, 0.0) or _is_num(b, 0.0):
        return Num(0.0)
    if _is_num(a, 1.0):
        return b
    if _is_num(b, 1.0):
        return a
    if _is_num(a) and _is_num(b):
        return Num(a.value * b.value)
    return BinOp("*", a, b)


def _div(a, b):
    if _is_num(a, 0.0):
        return Num(0.0)
    if _is_num(b, 1.0):
        return a
    return BinOp("/", a, b)


def _neg(a):
    if _is_num(a):
        return Num(-a.value)
    if isinstance(a, Neg):
        return a.operand
    return Neg(a)


def differentiate(node: Node, var: str) -> Node:
    """Symbolic partial derivative of ``node`` with respect to ``var``.

    ``min``/``max`` and powers with a variable exponent are rejected because
    their derivatives are not expressible in the language.
    """
    if isinstance(node, Num):
        return Num(0.0)
    if isinstance(node, Var):
        return Num(1.0 if node.name == var else 0.0)
    if var not in _free_variables(node, set()):
        return Num(0.0)
    if isinstance(node, Neg):
        return _neg(differentiate(node.operand, var))
    if isinstance(node, BinOp):
        a, b = node.left, node.right
        da, db = differentiate(a, var), differentiate(b, var)
        if node.op == "+":
            return _add(da, db)
        if node.op == "-":
            return _sub(da, db)
        if node.op == "*":
            return _add(_mul(da, b), _mul(a, db))
        if node.op == "/":
            return _div(_sub(_mul(da, b), _mul(a, db)), BinOp("^", b, Num(2.0)))
        if var in _free_variables(b, set()):
            raise ValueError("cannot differentiate a power with a variable exponent")
        lowered = _sub(b, Num(1.0))
        return _mul(_mul(b, BinOp("^", a, lowered) if not _is_num(lowered, 1.0) else a), da)
    arg = node.args[0]
    darg = differentiate(arg, var)
    if node.func == "sin":
        outer = Call("cos", (arg,))
    elif node.func == "cos":
        outer = _neg(Call("sin", (arg,)))
    elif node.func == "exp":
        outer = node
    elif node.func == "tanh":
        outer = _sub(Num(1.0), BinOp("^", node, Num(2.0)))
    elif node.func == "abs":
        outer = _div(arg, node)
    elif node.func == "sqrt":
        outer = _div(Num(0.5), node)
    else:
        raise ValueError(f"{node.func} is not differentiable in closed form")
    return _mul(outer, darg)
