"""Small arithmetic expression language for agent nonlinearities.

Scenario files give each regressor component as a string like
``"0.5*x^2+1"`` or ``"sin(x)*cos(v)"``.  This module provides the
recursive-descent parser, an AST interpreter, a pretty-printer and a
compiler to fast scalar callables used inside the integration loop.

Grammar (decreasing precedence)::

    atom   := NUMBER | IDENT | IDENT '(' expr ')' | '(' expr ')'
    power  := atom ('^' unary)?          # right-associative
    unary  := '-' unary | power          # so -x^2 == -(x^2)
    term   := unary (('*' | '/') unary)*
    expr   := term (('+' | '-') term)*

Numbers accept decimal and scientific notation; whitespace is ignored.
Known unary functions: sin, cos, tan, exp, sqrt, abs.  The only named
constant is ``pi``.  Evaluation is IEEE double precision: division by
zero, sqrt of a negative, overflow etc. yield inf/nan rather than
raising, so non-finite values propagate to the caller.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Callable, Iterable, Mapping, Union


class ExprError(ValueError):
    """Base class for everything the expression language can complain about."""


class LexicalError(ExprError):
    def __init__(self, source, pos):
        super().__init__(f"bad character {source[pos]!r} at position {pos}")
        self.pos = pos


class ExprSyntaxError(ExprError):
    def __init__(self, message, pos):
        super().__init__(f"{message} at position {pos}")
        self.pos = pos


class UnknownIdentifierError(ExprError):
    def __init__(self, name, pos, allowed):
        allowed = ", ".join(sorted(allowed)) or "(none)"
        super().__init__(f"unknown identifier {name!r} at position {pos}; declared variables: {allowed}")
        self.name = name
        self.pos = pos


class UnknownFunctionError(ExprError):
    def __init__(self, name, pos):
        super().__init__(f"unknown function {name!r} at position {pos}")
        self.name = name
        self.pos = pos


class UnboundVariableError(ExprError):
    def __init__(self, name):
        super().__init__(f"variable {name!r} is not bound")
        self.name = name


# --- AST -----------------------------------------------------------------

@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Var:
    name: str


@dataclass(frozen=True)
class Const:
    name: str  # only 'pi' for now


@dataclass(frozen=True)
class Neg:
    operand: "ExprAst"


@dataclass(frozen=True)
class Bin:
    op: str  # one of + - * / ^
    left: "ExprAst"
    right: "ExprAst"


@dataclass(frozen=True)
class Call:
    func: str
    arg: "ExprAst"


ExprAst = Union[Num, Var, Const, Neg, Bin, Call]

CONSTANTS = {"pi": math.pi}


# --- IEEE-style primitives -----------------------------------------------
# Python raises where C would return inf/nan; these wrappers restore the
# propagate-non-finite contract.  Both the interpreter and compiled
# callables use the same primitives, so the two routes agree bit for bit.

def _div(a, b):
    try:
        return a / b
    except ZeroDivisionError:
        if a == 0.0 or math.isnan(a):
            return math.nan
        return math.copysign(math.inf, a) * math.copysign(1.0, b)


def _pow(a, b):
    try:
        return math.pow(a, b)
    except ValueError:  # negative base with fractional exponent
        return math.nan
    except OverflowError:
        neg = a < 0 and float(b).is_integer() and int(b) % 2 == 1
        return -math.inf if neg else math.inf


def _wrap_domain(f):
    def g(x):
        try:
            return f(x)
        except ValueError:  # e.g. sin(inf), sqrt(-1)
            return math.nan
        except OverflowError:  # e.g. exp(1000)
            return math.inf

    return g


FUNCTIONS: dict[str, Callable[[float], float]] = {
    "sin": _wrap_domain(math.sin),
    "cos": _wrap_domain(math.cos),
    "tan": _wrap_domain(math.tan),
    "exp": _wrap_domain(math.exp),
    "sqrt": _wrap_domain(math.sqrt),
    "abs": math.fabs,
}


# --- Tokenizer ------------------------------------------------------------

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)
  | (?P<ident>[A-Za-z_][A-Za-z_0-9]*)
  | (?P<op>[-+*/^()])
    """,
    re.VERBOSE,
)


def _tokenize(source):
    tokens = []
    pos = 0
    while pos < len(source):
        m = _TOKEN_RE.match(source, pos)
        if m is None:
            raise LexicalError(source, pos)
        if m.lastgroup != "ws":
            tokens.append((m.lastgroup, m.group(), pos))
        pos = m.end()
    tokens.append(("end", "", len(source)))
    return tokens


# --- Parser ---------------------------------------------------------------

class _Parser:
    def __init__(self, source, allowed_vars):
        self.tokens = _tokenize(source)
        self.allowed = frozenset(allowed_vars)
        self.i = 0

    def peek(self):
        return self.tokens[self.i]

    def advance(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect_op(self, op):
        kind, text, pos = self.peek()
        if kind != "op" or text != op:
            raise ExprSyntaxError(f"expected {op!r}, found {text!r}" if text else f"expected {op!r}", pos)
        return self.advance()

    def parse(self):
        node = self.expr()
        kind, text, pos = self.peek()
        if kind != "end":
            raise ExprSyntaxError(f"unexpected {text!r}", pos)
        return node

    def expr(self):
        node = self.term()
        while self.peek()[:2] in (("op", "+"), ("op", "-")):
            op = self.advance()[1]
            node = Bin(op, node, self.term())
        return node

    def term(self):
        node = self.unary()
        while self.peek()[:2] in (("op", "*"), ("op", "/")):
            op = self.advance()[1]
            node = Bin(op, node, self.unary())
        return node

    def unary(self):
        if self.peek()[:2] == ("op", "-"):
            self.advance()
            return Neg(self.unary())
        return self.power()

    def power(self):
        node = self.atom()
        if self.peek()[:2] == ("op", "^"):
            self.advance()
            node = Bin("^", node, self.unary())  # right-assoc, signed exponent ok
        return node

    def atom(self):
        kind, text, pos = self.advance()
        if kind == "num":
            return Num(float(text))
        if kind == "ident":
            if self.peek()[:2] == ("op", "("):
                if text not in FUNCTIONS:
                    raise UnknownFunctionError(text, pos)
                self.advance()
                arg = self.expr()
                self.expect_op(")")
                return Call(text, arg)
            if text in FUNCTIONS:
                raise ExprSyntaxError(f"function {text!r} requires a parenthesized argument", pos)
            if text in CONSTANTS:
                return Const(text)
            if text not in self.allowed:
                raise UnknownIdentifierError(text, pos, self.allowed)
            return Var(text)
        if (kind, text) == ("op", "("):
            node = self.expr()
            self.expect_op(")")
            return node
        raise ExprSyntaxError(f"unexpected {text!r}" if text else "unexpected end of input", pos)


def parse(source: str, allowed_vars: Iterable[str] = ("x", "v", "t")) -> ExprAst:
    """Parse ``source`` into an AST, allowing only the given variable names."""
    if not source or not source.strip():
        raise ExprSyntaxError("empty expression", 0)
    return _Parser(source, allowed_vars).parse()


# --- Interpreter ----------------------------------------------------------

def evaluate(ast: ExprAst, bindings: Mapping[str, float]) -> float:
    """Evaluate an AST with the given variable bindings (IEEE semantics)."""
    if isinstance(ast, Num):
        return ast.value
    if isinstance(ast, Var):
        try:
            return float(bindings[ast.name])
        except KeyError:
            raise UnboundVariableError(ast.name) from None
    if isinstance(ast, Const):
        return CONSTANTS[ast.name]
    if isinstance(ast, Neg):
        return -evaluate(ast.operand, bindings)
    if isinstance(ast, Bin):
        a = evaluate(ast.left, bindings)
        b = evaluate(ast.right, bindings)
        if ast.op == "+":
            return a + b
        if ast.op == "-":
            return a - b
        if ast.op == "*":
            return a * b
        if ast.op == "/":
            return _div(a, b)
        return _pow(a, b)
    return FUNCTIONS[ast.func](evaluate(ast.arg, bindings))


# --- Pretty-printer -------------------------------------------------------

_PREC = {"+": 1, "-": 1, "*": 2, "/": 2, "neg": 3, "^": 4}


def _prec(node):
    if isinstance(node, Bin):
        return _PREC[node.op]
    if isinstance(node, Neg):
        return _PREC["neg"]
    return 5


def to_source(ast: ExprAst) -> str:
    """Render an AST back to a string that reparses to an identical tree."""
    if isinstance(ast, Num):
        return f"({ast.value!r})" if ast.value < 0 else repr(ast.value)
    if isinstance(ast, (Var, Const)):
        return ast.name
    if isinstance(ast, Neg):
        inner = to_source(ast.operand)
        if _prec(ast.operand) < _PREC["neg"]:
            inner = f"({inner})"
        return f"-{inner}"
    if isinstance(ast, Call):
        return f"{ast.func}({to_source(ast.arg)})"
    p = _PREC[ast.op]
    left, right = to_source(ast.left), to_source(ast.right)
    if ast.op == "^":
        # right-assoc: parenthesize an exponentiation on the left
        if _prec(ast.left) <= p:
            left = f"({left})"
        if _prec(ast.right) < _PREC["neg"]:
            right = f"({right})"
    else:
        if _prec(ast.left) < p:
            left = f"({left})"
        # left-assoc: equal precedence on the right needs parens (a-(b-c))
        if _prec(ast.right) < p or (isinstance(ast.right, Bin) and _PREC[ast.right.op] == p):
            right = f"({right})"
    return f"{left}{ast.op}{right}" if ast.op == "^" else f"{left} {ast.op} {right}"


# --- Compiler -------------------------------------------------------------

_COMPILE_ENV = {"__builtins__": {}, "div": _div, "pw": _pow, "pi": math.pi, **FUNCTIONS}


def _gen(ast):
    if isinstance(ast, Num):
        return f"({ast.value!r})"
    if isinstance(ast, (Var, Const)):
        return ast.name
    if isinstance(ast, Neg):
        return f"(-{_gen(ast.operand)})"
    if isinstance(ast, Call):
        return f"{ast.func}({_gen(ast.arg)})"
    if ast.op == "/":
        return f"div({_gen(ast.left)}, {_gen(ast.right)})"
    if ast.op == "^":
        return f"pw({_gen(ast.left)}, {_gen(ast.right)})"
    return f"({_gen(ast.left)} {ast.op} {_gen(ast.right)})"


def compile_expr(ast: ExprAst, args: tuple[str, ...]) -> Callable[..., float]:
    """Compile an AST to a fast positional-argument callable.

    The generated code calls the same primitives as :func:`evaluate`, so
    both routes produce identical floats.  Hot loops use the compiled
    form; ``evaluate`` stays the reference implementation.
    """
    return eval(f"lambda {', '.join(args)}: {_gen(ast)}", dict(_COMPILE_ENV))
