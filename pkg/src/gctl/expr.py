"""Small arithmetic expression language over (t, x1..xn, v1..vm).

Grammar (exact):

    expr   := term (('+'|'-') term)*
    term   := factor (('*'|'/') factor)*
    factor := '-'? power
    power  := atom ('^' factor)?
    atom   := number | ident | func '(' expr (',' expr)* ')' | '(' expr ')'
    ident  in {t, x1..xn, v1..vm}
    func   in {min, max, abs, exp, log, sqrt, sin, cos, tanh, pos, neg}

pos(a) is the positive part max(a, 0), neg(a) the negative part max(-a, 0).
Coefficients of control problems are defined in this language so that a
problem instance is fully reproducible from its JSON config.
"""

import re
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    ArityError,
    DomainError,
    ExprSyntaxError,
    NonDifferentiable,
    UnknownIdentifier,
)

# arity per function name; min/max take exactly two arguments
FUNCTIONS = {
    "min": 2,
    "max": 2,
    "abs": 1,
    "exp": 1,
    "log": 1,
    "sqrt": 1,
    "sin": 1,
    "cos": 1,
    "tanh": 1,
    "pos": 1,
    "neg": 1,
}

_MAX_DEPTH = 200


@dataclass(frozen=True)
class Num:
    value: float
    pos: int = field(default=0, compare=False)


@dataclass(frozen=True)
class Var:
    kind: str  # 't', 'x' or 'v'
    index: int  # 0-based; unused for 't'
    pos: int = field(default=0, compare=False)


@dataclass(frozen=True)
class Neg:
    operand: "Expr"
    pos: int = field(default=0, compare=False)


@dataclass(frozen=True)
class Bin:
    op: str  # '+', '-', '*', '/', '^'
    left: "Expr"
    right: "Expr"
    pos: int = field(default=0, compare=False)


@dataclass(frozen=True)
class Call:
    func: str
    args: tuple
    pos: int = field(default=0, compare=False)


Expr = (Num, Var, Neg, Bin, Call)

_TOKEN_RE = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<ident>[A-Za-z_][A-Za-z0-9_]*)"
    r"|(?P<op>[-+*/^(),]))"
)


def _tokenize(source):
    tokens = []
    i = 0
    n = len(source)
    while i < n:
        m = _TOKEN_RE.match(source, i)
        if m is None or m.end() == i:
            # skip over pure whitespace tail
            rest = source[i:]
            if rest.strip() == "":
                break
            bad = i + len(rest) - len(rest.lstrip())
            raise ExprSyntaxError(f"unexpected character {source[bad]!r}", bad)
        kind = m.lastgroup
        text = m.group(kind)
        tokens.append((kind, text, m.start(kind)))
        i = m.end()
    tokens.append(("eof", "", n))
    return tokens


class _Parser:
    def __init__(self, tokens, n, m, state_prefix):
        self.tokens = tokens
        self.k = 0
        self.n = n
        self.m = m
        self.state_prefix = state_prefix
        self.depth = 0

    def peek(self):
        return self.tokens[self.k]

    def take(self):
        tok = self.tokens[self.k]
        self.k += 1
        return tok

    def expect_op(self, op):
        kind, text, pos = self.peek()
        if kind != "op" or text != op:
            raise ExprSyntaxError(f"expected {op!r}", pos)
        return self.take()

    def parse(self):
        node = self.expr()
        kind, text, pos = self.peek()
        if kind != "eof":
            raise ExprSyntaxError(f"unexpected trailing input {text!r}", pos)
        return node

    def expr(self):
        self.depth += 1
        if self.depth > _MAX_DEPTH:
            raise ExprSyntaxError("expression too deeply nested", self.peek()[2])
        node = self.term()
        while True:
            kind, text, pos = self.peek()
            if kind == "op" and text in "+-":
                self.take()
                node = Bin(text, node, self.term(), pos)
            else:
                break
        self.depth -= 1
        return node

    def term(self):
        node = self.factor()
        while True:
            kind, text, pos = self.peek()
            if kind == "op" and text in "*/":
                self.take()
                node = Bin(text, node, self.factor(), pos)
            else:
                break
        return node

    def factor(self):
        kind, text, pos = self.peek()
        if kind == "op" and text == "-":
            self.take()
            return Neg(self.power(), pos)
        return self.power()

    def power(self):
        node = self.atom()
        kind, text, pos = self.peek()
        if kind == "op" and text == "^":
            self.take()
            node = Bin("^", node, self.factor(), pos)
        return node

    def atom(self):
        kind, text, pos = self.take()
        if kind == "num":
            return Num(float(text), pos)
        if kind == "ident":
            if text in FUNCTIONS:
                nxt_kind, nxt_text, nxt_pos = self.peek()
                if nxt_kind != "op" or nxt_text != "(":
                    raise ExprSyntaxError(f"function {text!r} requires arguments", pos)
                self.take()
                args = [self.expr()]
                while True:
                    k2, t2, p2 = self.peek()
                    if k2 == "op" and t2 == ",":
                        self.take()
                        args.append(self.expr())
                    else:
                        break
                self.expect_op(")")
                if len(args) != FUNCTIONS[text]:
                    raise ArityError(
                        f"{text} takes {FUNCTIONS[text]} argument(s), got {len(args)}", pos
                    )
                return Call(text, tuple(args), pos)
            return self._variable(text, pos)
        if kind == "op" and text == "(":
            node = self.expr()
            self.expect_op(")")
            return node
        raise ExprSyntaxError(f"unexpected token {text!r}" if text else "unexpected end of input", pos)

    def _variable(self, text, pos):
        if text == "t":
            return Var("t", 0, pos)
        for prefix, kind, count in ((self.state_prefix, "x", self.n), ("v", "v", self.m)):
            if text.startswith(prefix) and text[len(prefix):].isdigit():
                idx = int(text[len(prefix):])
                if 1 <= idx <= count:
                    return Var(kind, idx - 1, pos)
                raise UnknownIdentifier(
                    f"{text!r} out of range (have {count} {kind!r} variable(s))", pos
                )
        raise UnknownIdentifier(f"unknown identifier {text!r}", pos)


def parse_expr(source, n, m, *, state_prefix="x"):
    """Parse `source` into an AST with n state and m control variables.

    `state_prefix` renames the state family (e.g. 'y' for payoff expressions
    over Brownian increments); the resulting AST is identical either way.
    """
    if not isinstance(source, str) or source.strip() == "":
        raise ExprSyntaxError("empty expression", 0)
    return _Parser(_tokenize(source), n, m, state_prefix).parse()


def _check(cond_bad, node, message):
    if cond_bad:
        raise DomainError(message, node.pos)


def _ev(node, t, xcols, vcols):
    """Recursive evaluator over scalars or broadcastable numpy arrays."""
    if isinstance(node, Num):
        return node.value
    if isinstance(node, Var):
        if node.kind == "t":
            return t
        cols = xcols if node.kind == "x" else vcols
        return cols[node.index]
    if isinstance(node, Neg):
        return -_ev(node.operand, t, xcols, vcols)
    if isinstance(node, Bin):
        a = _ev(node.left, t, xcols, vcols)
        b = _ev(node.right, t, xcols, vcols)
        if node.op == "+":
            return a + b
        if node.op == "-":
            return a - b
        if node.op == "*":
            return a * b
        if node.op == "/":
            _check(np.any(b == 0), node, "division by zero")
            return a / b
        # power
        with np.errstate(invalid="ignore", divide="ignore", over="ignore"):
            r = np.power(a, b)
        _check(
            np.any(np.isnan(r) & ~(np.isnan(a) | np.isnan(b))),
            node,
            "fractional power of negative base",
        )
        _check(np.any(np.isinf(r) & (a == 0)), node, "zero base with negative exponent")
        return r
    # Call
    args = [_ev(a, t, xcols, vcols) for a in node.args]
    f = node.func
    if f == "min":
        return np.minimum(args[0], args[1])
    if f == "max":
        return np.maximum(args[0], args[1])
    if f == "abs":
        return np.abs(args[0])
    if f == "exp":
        with np.errstate(over="ignore"):
            return np.exp(args[0])
    if f == "log":
        _check(np.any(args[0] <= 0), node, "log of non-positive value")
        return np.log(args[0])
    if f == "sqrt":
        _check(np.any(args[0] < 0), node, "sqrt of negative value")
        return np.sqrt(args[0])
    if f == "sin":
        return np.sin(args[0])
    if f == "cos":
        return np.cos(args[0])
    if f == "tanh":
        return np.tanh(args[0])
    if f == "pos":
        return np.maximum(args[0], 0.0)
    # neg
    return np.maximum(-np.asarray(args[0]), 0.0)


def eval_expr(ast, t, x, v):
    """Evaluate at a single point; x and v are sequences of scalars."""
    return float(_ev(ast, t, [float(c) for c in x], [float(c) for c in v]))


def eval_vec(ast, t, xcols, vcols):
    """Vectorized evaluation; entries of xcols/vcols broadcast together.

    Returns an array of the broadcast shape (scalars stay scalar until the
    caller asks otherwise).
    """
    return _ev(ast, t, xcols, vcols)


def unparse(ast, state_prefix="x"):
    """Deterministic, fully parenthesized rendering; parses back to an equal AST."""
    if isinstance(ast, Num):
        return repr(ast.value)
    if isinstance(ast, Var):
        if ast.kind == "t":
            return "t"
        prefix = state_prefix if ast.kind == "x" else "v"
        return f"{prefix}{ast.index + 1}"
    if isinstance(ast, Neg):
        return f"(-{unparse(ast.operand, state_prefix)})"
    if isinstance(ast, Bin):
        return f"({unparse(ast.left, state_prefix)}{ast.op}{unparse(ast.right, state_prefix)})"
    args = ",".join(unparse(a, state_prefix) for a in ast.args)
    return f"{ast.func}({args})"


def free_vars(ast):
    """Set of (kind, index) pairs referenced by the expression."""
    out = set()

    def walk(node):
        if isinstance(node, Var):
            out.add((node.kind, node.index))
        elif isinstance(node, Neg):
            walk(node.operand)
        elif isinstance(node, Bin):
            walk(node.left)
            walk(node.right)
        elif isinstance(node, Call):
            for a in node.args:
                walk(a)

    walk(ast)
    return out


def uses_t(ast):
    return ("t", 0) in free_vars(ast)


def _is_const(node, value=None):
    return isinstance(node, Num) and (value is None or node.value == value)


def _simplify(node):
    """Constant folding just strong enough to keep derivatives small."""
    if isinstance(node, Neg):
        a = _simplify(node.operand)
        if _is_const(a):
            return Num(-a.value)
        return Neg(a, node.pos)
    if isinstance(node, Bin):
        a = _simplify(node.left)
        b = _simplify(node.right)
        if _is_const(a) and _is_const(b) and node.op in "+-*":
            return Num({"+": a.value + b.value, "-": a.value - b.value, "*": a.value * b.value}[node.op])
        if node.op == "+":
            if _is_const(a, 0.0):
                return b
            if _is_const(b, 0.0):
                return a
        if node.op == "-" and _is_const(b, 0.0):
            return a
        if node.op == "*":
            if _is_const(a, 0.0) or _is_const(b, 0.0):
                return Num(0.0)
            if _is_const(a, 1.0):
                return b
            if _is_const(b, 1.0):
                return a
        if node.op == "/" and _is_const(a, 0.0) and not _is_const(b, 0.0):
            return Num(0.0)
        if node.op == "^" and _is_const(b, 1.0):
            return a
        return Bin(node.op, a, b, node.pos)
    if isinstance(node, Call):
        return Call(node.func, tuple(_simplify(a) for a in node.args), node.pos)
    return node


def diff(ast, kind, index=0):
    """Symbolic derivative with respect to t ('t') or a state variable ('x', i).

    Raises NonDifferentiable through kinked primitives; smooth closed forms
    (the benchmark registry's) never hit those.
    """

    def d(node):
        if isinstance(node, Num):
            return Num(0.0)
        if isinstance(node, Var):
            hit = node.kind == kind and (kind == "t" or node.index == index)
            return Num(1.0 if hit else 0.0)
        if isinstance(node, Neg):
            return Neg(d(node.operand))
        if isinstance(node, Bin):
            a, b = node.left, node.right
            da, db = d(a), d(b)
            if node.op == "+":
                return Bin("+", da, db)
            if node.op == "-":
                return Bin("-", da, db)
            if node.op == "*":
                return Bin("+", Bin("*", da, b), Bin("*", a, db))
            if node.op == "/":
                num = Bin("-", Bin("*", da, b), Bin("*", a, db))
                return Bin("/", num, Bin("^", b, Num(2.0)))
            # power: constant exponent gets the plain rule
            if isinstance(b, Num):
                return Bin(
                    "*",
                    Bin("*", Num(b.value), Bin("^", a, Num(b.value - 1.0))),
                    da,
                )
            # general u^w = exp(w log u)
            term = Bin(
                "+",
                Bin("*", db, Call("log", (a,))),
                Bin("/", Bin("*", b, da), a),
            )
            return Bin("*", Bin("^", a, b), term)
        f = node.func
        if f in ("min", "max", "abs", "pos", "neg"):
            raise NonDifferentiable(f"cannot differentiate through {f}()")
        (u,) = node.args
        du = d(u)
        if f == "exp":
            return Bin("*", Call("exp", (u,)), du)
        if f == "log":
            return Bin("/", du, u)
        if f == "sqrt":
            return Bin("/", du, Bin("*", Num(2.0), Call("sqrt", (u,))))
        if f == "sin":
            return Bin("*", Call("cos", (u,)), du)
        if f == "cos":
            return Neg(Bin("*", Call("sin", (u,)), du))
        # tanh
        return Bin(
            "*",
            Bin("-", Num(1.0), Bin("^", Call("tanh", (u,)), Num(2.0))),
            du,
        )

    return _simplify(d(_simplify(ast)))


def constant_expr(value):
    return Num(float(value))
