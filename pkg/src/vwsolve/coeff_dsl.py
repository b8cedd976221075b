"""Textual coefficient definitions.

A coefficient is a closed-form smooth expression plus a list of
distributional atoms (Heaviside jumps and derivatives of Dirac masses)
living in a single variable.  Grammar::

    expr   := term (('+'|'-') term)*
    term   := factor (('*'|'/') factor)*
    factor := '-' factor | base ('^' integer)?
    base   := number | 't' | 'x' | 'x1'..'xn' | func '(' args ')' | '(' expr ')'
    func   := sin | cos | exp | bump | H | delta | ddelta

``bump(arg, center=0, radius=1)`` is the smooth compactly supported
function ``e * exp(-1/(1-u^2))`` with ``u = (arg-center)/radius`` (peak 1).
``ddelta(arg, k=1)`` is the k-th derivative of the Dirac mass.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from typing import Union

import numpy as np

__all__ = [
    "DSLError",
    "Num",
    "Var",
    "BinOp",
    "Pow",
    "Call",
    "Atom",
    "CoeffExpr",
    "parse_expr",
    "print_expr",
    "print_node",
    "eval_node",
    "eval_smooth",
    "support_interval",
    "support_radius",
    "is_zero",
    "variables",
]

SMOOTH_FUNCS = ("sin", "cos", "exp", "bump")
ATOM_FUNCS = ("H", "delta", "ddelta")


class DSLError(ValueError):
    """Raised for malformed or unsupported coefficient text."""

    def __init__(self, message: str, offset: int | None = None):
        self.offset = offset
        if offset is not None:
            message = f"{message} (at byte {offset})"
        super().__init__(message)


# ---------------------------------------------------------------------------
# AST


@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Var:
    name: str


@dataclass(frozen=True)
class BinOp:
    op: str
    left: "Node"
    right: "Node"


@dataclass(frozen=True)
class Pow:
    base: "Node"
    exponent: int


@dataclass(frozen=True)
class Call:
    func: str
    args: tuple


Node = Union[Num, Var, BinOp, Pow, Call]


@dataclass(frozen=True)
class Atom:
    """A Heaviside jump (``kind='H'``) or Dirac derivative (``kind='delta'``)."""

    kind: str
    variable: str
    location: float
    coefficient: complex = 1.0
    order: int = 0

    def scaled(self, c: complex) -> "Atom":
        return Atom(self.kind, self.variable, self.location, self.coefficient * c, self.order)


@dataclass(frozen=True)
class CoeffExpr:
    smooth: Node = field(default_factory=lambda: Num(0.0))
    atoms: tuple = ()
    source: str = field(default="", compare=False)

    @property
    def singular_variable(self) -> str | None:
        return self.atoms[0].variable if self.atoms else None

    @property
    def has_dirac(self) -> bool:
        return any(a.kind == "delta" for a in self.atoms)

    def __str__(self) -> str:
        return print_expr(self)


# ---------------------------------------------------------------------------
# tokenizer / parser

_TOKEN_RE = re.compile(
    r"\s*(?:(?P<num>\d+\.?\d*(?:[eE][+-]?\d+)?|\.\d+(?:[eE][+-]?\d+)?)"
    r"|(?P<name>[A-Za-z_][A-Za-z0-9_]*)|(?P<op>[-+*/^(),]))"
)
_VAR_RE = re.compile(r"^(t|x|x[1-9])$")


def _tokenize(text: str) -> list[tuple[str, str, int]]:
    tokens = []
    pos = 0
    raw = text.encode("utf-8")
    if len(raw) != len(text):
        # offsets are reported in bytes; keep the mapping simple
        bad = next(i for i, ch in enumerate(text) if ord(ch) > 127)
        raise DSLError(f"unexpected character {text[bad]!r}", len(text[:bad].encode()))
    while pos < len(text):
        if text[pos:].strip() == "":
            break
        m = _TOKEN_RE.match(text, pos)
        if m is None or m.end() == pos:
            off = pos + (len(text[pos:]) - len(text[pos:].lstrip()))
            raise DSLError(f"unexpected character {text[off]!r}", off)
        kind = m.lastgroup
        start = m.start(kind)
        tokens.append((kind, m.group(kind), start))
        pos = m.end()
    tokens.append(("end", "", len(text)))
    return tokens


class _Parser:
    def __init__(self, text: str):
        self.text = text
        self.tokens = _tokenize(text)
        self.i = 0

    def peek(self):
        return self.tokens[self.i]

    def take(self, value: str | None = None):
        tok = self.tokens[self.i]
        if value is not None and tok[1] != value:
            what = tok[1] or "end of input"
            raise DSLError(f"expected {value!r}, got {what!r}", tok[2])
        self.i += 1
        return tok

    def parse(self) -> Node:
        node = self.expr()
        tok = self.peek()
        if tok[0] != "end":
            raise DSLError(f"unexpected token {tok[1]!r}", tok[2])
        return node

    def expr(self) -> Node:
        node = self.term()
        while self.peek()[1] in ("+", "-") and self.peek()[0] == "op":
            op = self.take()[1]
            node = BinOp(op, node, self.term())
        return node

    def term(self) -> Node:
        node = self.factor()
        while self.peek()[1] in ("*", "/") and self.peek()[0] == "op":
            op = self.take()[1]
            node = BinOp(op, node, self.factor())
        return node

    def factor(self) -> Node:
        if self.peek()[1] == "-" and self.peek()[0] == "op":
            self.take()
            inner = self.factor()
            if isinstance(inner, Num):
                return Num(-inner.value)
            return BinOp("*", Num(-1.0), inner)
        base = self.base()
        if self.peek()[1] == "^":
            self.take()
            sign = 1
            if self.peek()[1] == "-":
                self.take()
                sign = -1
            tok = self.take()
            if tok[0] != "num" or not re.fullmatch(r"\d+", tok[1]):
                raise DSLError("exponent must be an integer literal", tok[2])
            return Pow(base, sign * int(tok[1]))
        return base

    def base(self) -> Node:
        kind, value, off = self.peek()
        if kind == "num":
            self.take()
            return Num(float(value))
        if kind == "name":
            self.take()
            if self.peek()[1] == "(":
                if value not in SMOOTH_FUNCS + ATOM_FUNCS:
                    raise DSLError(f"unknown function {value!r}", off)
                self.take("(")
                args = [self.expr()]
                while self.peek()[1] == ",":
                    self.take()
                    args.append(self.expr())
                self.take(")")
                return Call(value, tuple(args))
            if _VAR_RE.match(value):
                return Var("x1" if value == "x" else value)
            raise DSLError(f"unknown name {value!r}", off)
        if value == "(":
            self.take()
            node = self.expr()
            self.take(")")
            return node
        raise DSLError(f"unexpected token {value or 'end of input'!r}", off)


# ---------------------------------------------------------------------------
# splitting into smooth part + atoms


def _const_value(node: Node) -> float | None:
    """Numeric value of a variable-free, atom-free subtree, else None."""
    if isinstance(node, Num):
        return node.value
    if isinstance(node, Var):
        return None
    if isinstance(node, Call):
        if node.func in ATOM_FUNCS:
            return None
        vals = [_const_value(a) for a in node.args]
        if any(v is None for v in vals):
            return None
        return float(np.real(eval_node(node, {})))
    if isinstance(node, Pow):
        v = _const_value(node.base)
        return None if v is None else v**node.exponent
    left, right = _const_value(node.left), _const_value(node.right)
    if left is None or right is None:
        return None
    return {"+": left + right, "-": left - right, "*": left * right, "/": left / right}[node.op]


def _atom_argument(node: Node) -> tuple[str, float]:
    if isinstance(node, Var):
        return node.name, 0.0
    if isinstance(node, BinOp) and node.op in "+-" and isinstance(node.left, Var):
        c = _const_value(node.right)
        if c is not None:
            return node.left.name, (c if node.op == "-" else -c)
    raise DSLError("distribution argument must have the form 'var', 'var - a' or 'var + a'")


def _split(node: Node) -> tuple[Node | None, list[Atom]]:
    if isinstance(node, (Num, Var)):
        return node, []
    if isinstance(node, Call):
        if node.func in ATOM_FUNCS:
            var, loc = _atom_argument(node.args[0])
            if node.func == "H":
                if len(node.args) != 1:
                    raise DSLError("H takes exactly one argument")
                return None, [Atom("H", var, loc)]
            if node.func == "delta":
                if len(node.args) != 1:
                    raise DSLError("delta takes exactly one argument")
                return None, [Atom("delta", var, loc)]
            order = 1
            if len(node.args) == 2:
                k = _const_value(node.args[1])
                if k is None or k != int(k) or k < 0:
                    raise DSLError("ddelta order must be a non-negative integer")
                order = int(k)
            elif len(node.args) > 2:
                raise DSLError("ddelta takes at most two arguments")
            return None, [Atom("delta", var, loc, 1.0, order)]
        for a in node.args:
            _, atoms = _split(a)
            if atoms:
                raise DSLError(f"distribution inside {node.func}() is not defined")
        if node.func == "bump" and len(node.args) > 3:
            raise DSLError("bump takes at most three arguments")
        if node.func != "bump" and len(node.args) != 1:
            raise DSLError(f"{node.func} takes exactly one argument")
        return node, []
    if isinstance(node, Pow):
        smooth, atoms = _split(node.base)
        if atoms:
            raise DSLError("a distribution cannot be raised to a power")
        return node, []
    ls, la = _split(node.left)
    rs, ra = _split(node.right)
    if node.op in "+-":
        if node.op == "-":
            ra = [a.scaled(-1.0) for a in ra]
        if ls is None:
            smooth = rs if node.op == "+" or rs is None else BinOp("*", Num(-1.0), rs)
        elif rs is None:
            smooth = ls
        else:
            smooth = BinOp(node.op, ls, rs)
        return smooth, la + ra
    if node.op == "*":
        if la and ra:
            raise DSLError("product of distributions is not defined")
        if not la and not ra:
            return node, []
        atoms, other_s, other_a_side = (la, rs, node.right) if la else (ra, ls, node.left)
        own_s = ls if la else rs
        c = _const_value(other_a_side) if other_s is not None else None
        if c is None:
            raise DSLError("distributions may only be multiplied by constants")
        smooth = None if own_s is None else BinOp("*", own_s, other_s) if la else BinOp("*", other_s, own_s)
        return smooth, [a.scaled(c) for a in atoms]
    # division
    if ra:
        raise DSLError("division by a distribution is not defined")
    if not la:
        return node, []
    c = _const_value(node.right)
    if c is None:
        raise DSLError("distributions may only be divided by constants")
    smooth = None if ls is None else BinOp("/", ls, rs)
    return smooth, [a.scaled(1.0 / c) for a in la]


def parse_expr(text: str) -> CoeffExpr:
    """Parse coefficient text into a :class:`CoeffExpr`."""
    tree = _Parser(text).parse()
    smooth, atoms = _split(tree)
    atoms = [a for a in atoms if a.coefficient != 0]
    if len({a.variable for a in atoms}) > 1:
        raise DSLError("distributional atoms in two different variables")
    return CoeffExpr(smooth if smooth is not None else Num(0.0), tuple(atoms), source=text)


# ---------------------------------------------------------------------------
# printing


def _fmt_num(v: float) -> str:
    s = repr(float(v))
    return f"({s})" if v < 0 else s


def print_node(node: Node) -> str:
    if isinstance(node, Num):
        return _fmt_num(node.value)
    if isinstance(node, Var):
        return node.name
    if isinstance(node, BinOp):
        return f"({print_node(node.left)}{node.op}{print_node(node.right)})"
    if isinstance(node, Pow):
        base = print_node(node.base)
        if base.startswith("-"):
            # '-a^k' would parse as -(a^k)
            base = f"({base})"
        return f"({base}^{node.exponent})" if node.exponent >= 0 else f"({base}^-{-node.exponent})"
    return f"{node.func}({','.join(print_node(a) for a in node.args)})"


def _print_atom(a: Atom) -> str:
    if a.location == 0:
        arg = a.variable
    elif a.location > 0:
        arg = f"{a.variable}-{float(a.location)!r}"
    else:
        arg = f"{a.variable}+{float(-a.location)!r}"
    if a.kind == "H":
        body = f"H({arg})"
    elif a.order == 0:
        body = f"delta({arg})"
    else:
        body = f"ddelta({arg},{a.order})"
    c = complex(a.coefficient)
    if c.imag != 0:
        raise DSLError("complex atom coefficients have no textual form")
    return f"{_fmt_num(c.real)}*{body}"


def print_expr(e: CoeffExpr) -> str:
    """Canonical text; ``parse_expr(print_expr(e)) == e``."""
    parts = []
    if not (isinstance(e.smooth, Num) and e.smooth.value == 0 and e.atoms):
        parts.append(print_node(e.smooth))
    parts.extend(_print_atom(a) for a in e.atoms)
    return " + ".join(parts)


# ---------------------------------------------------------------------------
# evaluation


def _bump(u):
    u = np.asarray(u, dtype=float)
    inside = np.abs(u) < 1
    out = np.zeros_like(u)
    ui = u[inside]
    out[inside] = np.exp(1.0 - 1.0 / (1.0 - ui * ui))
    return out if out.ndim else float(out)


def eval_node(node: Node, env: dict):
    """Direct recursive evaluation of an atom-free tree."""
    if isinstance(node, Num):
        return node.value
    if isinstance(node, Var):
        if node.name not in env:
            raise DSLError(f"no value for variable {node.name!r}")
        return env[node.name]
    if isinstance(node, BinOp):
        a, b = eval_node(node.left, env), eval_node(node.right, env)
        if node.op == "+":
            return a + b
        if node.op == "-":
            return a - b
        if node.op == "*":
            return a * b
        return a / b
    if isinstance(node, Pow):
        base = eval_node(node.base, env)
        if node.exponent < 0:
            return 1.0 / base ** (-node.exponent)
        return base**node.exponent
    args = [eval_node(a, env) for a in node.args]
    if node.func == "sin":
        return np.sin(args[0])
    if node.func == "cos":
        return np.cos(args[0])
    if node.func == "exp":
        return np.exp(args[0])
    if node.func == "bump":
        center = args[1] if len(args) > 1 else 0.0
        radius = args[2] if len(args) > 2 else 1.0
        return _bump((np.asarray(args[0]) - center) / radius)
    raise DSLError(f"{node.func}() is not pointwise evaluable")


def _env(t, x, n: int = 1) -> dict:
    env = {"t": t}
    if n == 1:
        env["x1"] = x
    else:
        xs = np.asarray(x, dtype=float)
        for j in range(n):
            env[f"x{j + 1}"] = xs[..., j]
    return env


def eval_smooth(e: CoeffExpr, t, x, n: int = 1):
    """Pointwise value of ``e`` at ``(t, x)``; Heaviside atoms use H(0)=1.

    For ``n >= 2`` the last axis of ``x`` holds the coordinates.
    """
    for a in e.atoms:
        if a.kind != "H":
            raise DSLError("Dirac atoms are not pointwise evaluable")
    env = _env(t, x, n)
    value = np.asarray(eval_node(e.smooth, env), dtype=complex)
    for a in e.atoms:
        arg = np.asarray(env[a.variable], dtype=float) - a.location
        value = value + a.coefficient * (arg >= 0)
    return complex(value) if value.ndim == 0 else value


def variables(node: Node) -> set[str]:
    if isinstance(node, Num):
        return set()
    if isinstance(node, Var):
        return {node.name}
    if isinstance(node, BinOp):
        return variables(node.left) | variables(node.right)
    if isinstance(node, Pow):
        return variables(node.base)
    return set().union(*(variables(a) for a in node.args))


def is_zero(e: CoeffExpr) -> bool:
    return not e.atoms and _const_value(e.smooth) == 0


# ---------------------------------------------------------------------------
# support analysis

_FULL = (-math.inf, math.inf)


def _hull(a, b):
    if a is None:
        return b
    if b is None:
        return a
    return (min(a[0], b[0]), max(a[1], b[1]))


def _meet(a, b):
    if a is None or b is None:
        return None
    lo, hi = max(a[0], b[0]), min(a[1], b[1])
    return (lo, hi) if lo <= hi else None


def _node_support(node: Node, var: str):
    """Interval outside which the subtree vanishes for every value of the other variables."""
    if isinstance(node, Num):
        return None if node.value == 0 else _FULL
    if isinstance(node, Var):
        return _FULL
    if isinstance(node, BinOp):
        ls, rs = _node_support(node.left, var), _node_support(node.right, var)
        if node.op in "+-":
            return _hull(ls, rs)
        if node.op == "*":
            return _meet(ls, rs)
        return ls
    if isinstance(node, Pow):
        return _node_support(node.base, var) if node.exponent > 0 else _FULL
    if node.func == "sin":
        return _node_support(node.args[0], var)
    if node.func == "bump":
        arg = node.args[0]
        if isinstance(arg, Var) and arg.name == var:
            c = _const_value(node.args[1]) if len(node.args) > 1 else 0.0
            r = _const_value(node.args[2]) if len(node.args) > 2 else 1.0
            if c is not None and r is not None:
                return (c - abs(r), c + abs(r))
        return _FULL
    return _FULL


def support_interval(e: CoeffExpr, var: str = "x1"):
    """Hull of the support of ``e`` in variable ``var`` (None when identically zero)."""
    sup = _node_support(e.smooth, var)
    for a in e.atoms:
        if a.variable != var:
            sup = _hull(sup, _FULL)
        elif a.kind == "H":
            sup = _hull(sup, (a.location, math.inf) if a.coefficient != 0 else None)
        else:
            sup = _hull(sup, (a.location, a.location))
    return sup


def support_radius(e: CoeffExpr, window: float | None = None, n: int = 1) -> float:
    """R with ``e`` vanishing for ``|x_j| > R`` (after truncation to ``window``)."""
    radius = 0.0
    for j in range(1, n + 1):
        sup = support_interval(e, f"x{j}")
        if sup is None:
            continue
        radius = max(radius, abs(sup[0]), abs(sup[1]))
    if window is not None:
        radius = min(radius, float(window))
    return radius
