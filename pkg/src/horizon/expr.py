"""Function DSL: parsing, printing, vectorized evaluation and forward-mode gradients.

Grammar::

    expr   := term (('+'|'-') term)*
    term   := factor (('*'|'/') factor)*
    factor := '-' factor | atom ('^' INT)?
    atom   := NUMBER | 'x'INT | '(' expr ')' | exp(e) | log(e) | abs(e) | sqrt(e)
            | norm(e, ...) | max(e, e) | min(e, e)
            | piecewise(guard: e; guard: e; ...) | indicator(setref)
    guard  := affine inequality conjunction, e.g. 'x1>=0 & x2<=1'

Values outside the effective domain evaluate to +inf. Inside the domain, float
overflow saturates to +/-1.7976e308 so that +inf keeps its meaning.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Any, Iterable, Mapping, Sequence

import numpy as np

from .errors import DSLSyntaxError, NotDifferentiable, SemanticError

SMOOTH = "Smooth"
CONVEX = "Convex"
PIECEWISE_LINEAR = "PiecewiseLinear"
PIECEWISE_SMOOTH = "PiecewiseSmooth"
EXTENDED_VALUED = "ExtendedValued"

FLOAT_MAX = np.finfo(float).max
KINK_TOL = 1e-7

_UNARY = ("exp", "log", "abs", "sqrt")
_NONSMOOTH = {"abs", "max", "min", "norm", "piecewise", "indicator"}


# ---------------------------------------------------------------------------
# tree
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Ineq:
    """Affine inequality c.x + d <= 0 (or < 0 when strict)."""

    coeffs: tuple
    const: float
    strict: bool = False


@dataclass(frozen=True)
class Node:
    op: str
    args: tuple = ()
    value: Any = None


def const(c: float) -> Node:
    return Node("const", (), float(c))


def var(i: int) -> Node:
    """Variable x_{i+1} (0-based index)."""
    return Node("var", (), int(i))


class GuardRegion:
    """Polyhedral region {x : A x + d <= 0} with optional strict rows."""

    def __init__(self, ineqs: Sequence[Ineq], name: str | None = None):
        self.ineqs = tuple(ineqs)
        self.name = name
        if self.ineqs:
            self.A = np.array([q.coeffs for q in self.ineqs], dtype=float)
            self.d = np.array([q.const for q in self.ineqs], dtype=float)
        else:
            self.A = np.zeros((0, 0))
            self.d = np.zeros(0)
        self.strict = np.array([q.strict for q in self.ineqs], dtype=bool)

    def values(self, X):
        return X @ self.A.T + self.d

    def _scale(self, X):
        """Magnitude of the terms in each row, the size of its rounding error."""
        return np.abs(X) @ np.abs(self.A).T + np.abs(self.d)

    def contains_batch(self, X, tol=1e-12):
        if not self.ineqs:
            return np.ones(X.shape[0], dtype=bool)
        V = self.values(X)
        ok = np.where(self.strict, V < 0.0, V <= tol * self._scale(X))
        return ok.all(axis=1)

    def on_boundary_batch(self, X, tol=1e-9):
        if not self.ineqs:
            return np.zeros(X.shape[0], dtype=bool)
        V = self.values(X)
        return (np.abs(V) <= tol * self._scale(X)).any(axis=1)

    def is_convex(self):
        return True

    def text(self):
        return guard_text(self.ineqs)

    def __eq__(self, other):
        return isinstance(other, GuardRegion) and self.ineqs == other.ineqs

    def __hash__(self):
        return hash(self.ineqs)


@dataclass(frozen=True)
class FunctionSpec:
    dim: int
    root: Node
    class_tags: frozenset = field(default_factory=frozenset)
    text: str = ""

    def __post_init__(self):
        if self.dim < 1:
            raise SemanticError("dimension must be positive")

    def eval_batch(self, X):
        return eval_batch(self, X)

    def __str__(self):
        return self.text or to_text(self)


# ---------------------------------------------------------------------------
# tokenizer / parser
# ---------------------------------------------------------------------------

_TOKEN_RE = re.compile(
    r"\s*(?:"
    r"(?P<num>(?:\d+\.\d*|\.\d+|\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<var>x\d+)"
    r"|(?P<name>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<op><=|>=|<|>|[-+*/^(),;:&{}=])"
    r")"
)


def _tokenize(text: str):
    pos = 0
    toks = []
    text = text.rstrip()
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None or m.end() == pos:
            raise DSLSyntaxError(f"unexpected character {text[pos]!r} at {pos}")
        kind = m.lastgroup
        toks.append((kind, m.group(kind), m.start(kind)))
        pos = m.end()
    toks.append(("end", "", len(text)))
    return toks


class _Parser:
    def __init__(self, text, dim, sets):
        self.text = text
        self.toks = _tokenize(text)
        self.i = 0
        self.dim = dim
        self.sets = sets or {}

    # token helpers
    def peek(self):
        return self.toks[self.i]

    def take(self):
        t = self.toks[self.i]
        self.i += 1
        return t

    def expect(self, value):
        kind, val, pos = self.take()
        if val != value:
            raise DSLSyntaxError(f"expected {value!r} at {pos}, got {val!r}")

    def at(self, value):
        return self.peek()[1] == value and self.peek()[0] in ("op", "name")

    # grammar
    def parse(self):
        node = self.expr()
        if self.peek()[0] != "end":
            kind, val, pos = self.peek()
            raise DSLSyntaxError(f"trailing input {val!r} at {pos}")
        return node

    def expr(self):
        node = self.term()
        while self.at("+") or self.at("-"):
            op = self.take()[1]
            rhs = self.term()
            node = Node("add" if op == "+" else "sub", (node, rhs))
        return node

    def term(self):
        node = self.factor()
        while self.at("*") or self.at("/"):
            op = self.take()[1]
            rhs = self.factor()
            node = Node("mul" if op == "*" else "div", (node, rhs))
        return node

    def factor(self):
        if self.at("-"):
            self.take()
            return Node("neg", (self.factor(),))
        node = self.atom()
        if self.at("^"):
            self.take()
            kind, val, pos = self.take()
            if kind != "num" or not val.isdigit():
                raise DSLSyntaxError(f"integer exponent expected at {pos}")
            node = Node("pow", (node,), int(val))
        return node

    def atom(self):
        kind, val, pos = self.take()
        if kind == "num":
            return const(float(val))
        if kind == "var":
            idx = int(val[1:])
            if idx < 1:
                raise DSLSyntaxError(f"variables are 1-based, got {val} at {pos}")
            if idx > self.dim:
                raise SemanticError(f"{val} exceeds dimension {self.dim}")
            return var(idx - 1)
        if val == "(":
            node = self.expr()
            self.expect(")")
            return node
        if kind == "name":
            if val in _UNARY:
                self.expect("(")
                arg = self.expr()
                self.expect(")")
                return Node(val, (arg,))
            if val == "norm":
                self.expect("(")
                args = [self.expr()]
                while self.at(","):
                    self.take()
                    args.append(self.expr())
                self.expect(")")
                return Node("norm", tuple(args))
            if val in ("max", "min"):
                self.expect("(")
                a = self.expr()
                self.expect(",")
                b = self.expr()
                self.expect(")")
                return Node(val, (a, b))
            if val == "piecewise":
                return self.piecewise()
            if val == "indicator":
                return self.indicator()
        raise DSLSyntaxError(f"unexpected token {val!r} at {pos}")

    def guard(self):
        ineqs = [self.inequality()]
        while self.at("&"):
            self.take()
            ineqs.append(self.inequality())
        return tuple(ineqs)

    def inequality(self):
        lhs = self.expr()
        kind, op, pos = self.take()
        if op not in ("<=", ">=", "<", ">"):
            raise DSLSyntaxError(f"comparison expected at {pos}, got {op!r}")
        rhs = self.expr()
        if op in ("<=", "<"):
            diff = Node("sub", (lhs, rhs))
        else:
            diff = Node("sub", (rhs, lhs))
        form = affine_form(diff, self.dim)
        if form is None:
            raise SemanticError(f"guard near {pos} is not affine")
        c, d = form
        return Ineq(tuple(float(v) for v in c), float(d), op in ("<", ">"))

    def piecewise(self):
        self.expect("(")
        guards, exprs = [], []
        while True:
            guards.append(self.guard())
            self.expect(":")
            exprs.append(self.expr())
            if self.at(";"):
                self.take()
                continue
            break
        self.expect(")")
        return Node("piecewise", tuple(exprs), tuple(guards))

    def indicator(self):
        self.expect("(")
        kind, val, pos = self.peek()
        if kind == "name" and val in self.sets and self.toks[self.i + 1][1] == ")":
            self.take()
            region = self.sets[val]
        else:
            region = GuardRegion(self.guard())
        self.expect(")")
        return Node("indicator", (), region)


def parse_expr(text: str, dim: int, sets: Mapping[str, Any] | None = None) -> Node:
    """Parse DSL text into an expression tree without validation."""
    return _Parser(text, dim, sets).parse()


def parse_function(text: str, dim: int, sets: Mapping[str, Any] | None = None,
                   validate: bool = True) -> FunctionSpec:
    """Parse, validate and classify a DSL function on R^dim.

    Parameters
    ----------
    text : str
        Expression in the function DSL.
    dim : int
        Ambient dimension n.
    sets : mapping, optional
        Named sets usable as ``indicator(name)``.

    Returns
    -------
    FunctionSpec
    """
    if not isinstance(dim, (int, np.integer)) or dim < 1:
        raise SemanticError("dimension must be a positive integer")
    root = parse_expr(text, int(dim), sets)
    return make_function(root, int(dim), text=text.strip(), validate=validate)


def make_function(root: Node, dim: int, text: str = "", validate: bool = True) -> FunctionSpec:
    """Wrap a tree as a FunctionSpec, inferring class tags."""
    if _max_var(root) >= dim:
        raise SemanticError("expression references a variable beyond the dimension")
    if validate:
        _validate(root, dim)
    tags = infer_tags(root, dim)
    return FunctionSpec(dim, root, frozenset(tags), text)


def _max_var(node: Node) -> int:
    if node.op == "var":
        return node.value
    if node.op == "compose":
        return max((_max_var(a) for a in node.args), default=-1)
    return max((_max_var(a) for a in node.args), default=-1)


# ---------------------------------------------------------------------------
# structural analysis
# ---------------------------------------------------------------------------

def _walk(node: Node):
    yield node
    for a in node.args:
        yield from _walk(a)
    if node.op == "compose":
        yield from _walk(node.value)


def is_constant(node: Node) -> bool:
    return all(n.op not in ("var", "indicator") for n in _walk(node)) and node.op != "compose"


def constant_value(node: Node) -> float:
    v, dom = _eval(node, np.zeros((1, 1)))
    return float(v[0]) if dom[0] else np.inf


def affine_form(node: Node, dim: int):
    """Return (c, d) with node == c.x + d, or None if not affine."""
    op = node.op
    if op == "const":
        return np.zeros(dim), node.value
    if op == "var":
        c = np.zeros(dim)
        c[node.value] = 1.0
        return c, 0.0
    if op in ("add", "sub"):
        a = affine_form(node.args[0], dim)
        b = affine_form(node.args[1], dim)
        if a is None or b is None:
            return None
        s = 1.0 if op == "add" else -1.0
        return a[0] + s * b[0], a[1] + s * b[1]
    if op == "neg":
        a = affine_form(node.args[0], dim)
        return None if a is None else (-a[0], -a[1])
    if op == "mul":
        l, r = node.args
        if is_constant(l):
            a = affine_form(r, dim)
            k = constant_value(l)
        elif is_constant(r):
            a = affine_form(l, dim)
            k = constant_value(r)
        else:
            return None
        if a is None or not np.isfinite(k):
            return None
        return k * a[0], k * a[1]
    if op == "div":
        l, r = node.args
        if not is_constant(r):
            return None
        k = constant_value(r)
        a = affine_form(l, dim)
        if a is None or k == 0 or not np.isfinite(k):
            return None
        return a[0] / k, a[1] / k
    if op == "pow":
        if node.value == 1:
            return affine_form(node.args[0], dim)
        if node.value == 0:
            return np.zeros(dim), 1.0
        return None
    if is_constant(node):
        v = constant_value(node)
        if np.isfinite(v):
            return np.zeros(dim), v
    return None


def sign_of(node: Node):
    """Conservative sign: 'pos' (> 0), 'nonneg' (>= 0) or None."""
    op = node.op
    if op == "const":
        return "pos" if node.value > 0 else ("nonneg" if node.value == 0 else None)
    if op == "exp":
        return "pos"
    if op in ("abs", "norm"):
        return "nonneg"
    if op == "sqrt":
        s = sign_of(node.args[0])
        return s
    if op == "pow":
        s = sign_of(node.args[0])
        if node.value == 0:
            return "pos"
        if node.value % 2 == 0:
            return "pos" if s == "pos" else "nonneg"
        return s
    if op in ("add", "mul"):
        a, b = sign_of(node.args[0]), sign_of(node.args[1])
        if a is None or b is None:
            return None
        if op == "add":
            return "pos" if "pos" in (a, b) else "nonneg"
        return "pos" if a == b == "pos" else "nonneg"
    if op == "div":
        a, b = sign_of(node.args[0]), sign_of(node.args[1])
        if b == "pos" and a is not None:
            return a
        return None
    if op == "max":
        a, b = sign_of(node.args[0]), sign_of(node.args[1])
        if "pos" in (a, b):
            return "pos"
        return "nonneg" if "nonneg" in (a, b) else None
    if op == "min":
        a, b = sign_of(node.args[0]), sign_of(node.args[1])
        if a is None or b is None:
            return None
        return "pos" if a == b == "pos" else "nonneg"
    if op == "piecewise":
        signs = [sign_of(a) for a in node.args]
        if all(s == "pos" for s in signs):
            return "pos"
        if all(s in ("pos", "nonneg") for s in signs):
            return "nonneg"
    if op == "indicator":
        return "nonneg"
    return None


_FLIP = {"convex": "concave", "concave": "convex", "affine": "affine", "const": "const", None: None}


def _curv_add(a, b):
    if a is None or b is None:
        return None
    if a == "const":
        return b
    if b == "const":
        return a
    if a == "affine":
        return b
    if b == "affine":
        return a
    return a if a == b else None


def curvature(node: Node):
    """Disciplined-convexity style curvature: const/affine/convex/concave/None."""
    op = node.op
    if op == "const":
        return "const"
    if op == "var":
        return "affine"
    if op == "add":
        return _curv_add(curvature(node.args[0]), curvature(node.args[1]))
    if op == "sub":
        return _curv_add(curvature(node.args[0]), _FLIP[curvature(node.args[1])])
    if op == "neg":
        return _FLIP[curvature(node.args[0])]
    if op in ("mul", "div"):
        l, r = node.args
        if op == "mul" and is_constant(l):
            k, c = constant_value(l), curvature(r)
        elif is_constant(r):
            k, c = constant_value(r), curvature(l)
        else:
            return None
        if not np.isfinite(k):
            return None
        if k == 0:
            return "const"
        return c if k > 0 else _FLIP[c]
    if op == "pow":
        c = curvature(node.args[0])
        k = node.value
        if k == 0:
            return "const"
        if k == 1:
            return c
        if c == "const":
            return "const"
        if c == "affine" and k % 2 == 0:
            return "convex"
        if c in ("convex", "affine") and sign_of(node.args[0]) in ("pos", "nonneg"):
            return "convex"
        return None
    if op == "exp":
        c = curvature(node.args[0])
        return "convex" if c in ("const", "affine", "convex") else None
    if op in ("log", "sqrt"):
        c = curvature(node.args[0])
        return "concave" if c in ("const", "affine", "concave") else None
    if op == "abs":
        c = curvature(node.args[0])
        if c in ("const", "affine"):
            return "convex" if c == "affine" else "const"
        if c == "convex" and sign_of(node.args[0]) in ("pos", "nonneg"):
            return "convex"
        return None
    if op == "norm":
        cs = [curvature(a) for a in node.args]
        return "convex" if all(c in ("const", "affine") for c in cs) else None
    if op == "max":
        cs = [curvature(a) for a in node.args]
        return "convex" if all(c in ("const", "affine", "convex") for c in cs) else None
    if op == "min":
        cs = [curvature(a) for a in node.args]
        return "concave" if all(c in ("const", "affine", "concave") for c in cs) else None
    if op == "indicator":
        return "convex" if getattr(node.value, "is_convex", lambda: False)() else None
    return None


def _is_pl(node: Node, dim: int) -> bool:
    op = node.op
    if affine_form(node, dim) is not None:
        return True
    if op in ("add", "sub", "max", "min"):
        return all(_is_pl(a, dim) for a in node.args)
    if op in ("neg", "abs"):
        return _is_pl(node.args[0], dim)
    if op == "mul":
        l, r = node.args
        return (is_constant(l) and _is_pl(r, dim)) or (is_constant(r) and _is_pl(l, dim))
    if op == "div":
        return is_constant(node.args[1]) and _is_pl(node.args[0], dim)
    if op == "pow":
        return node.value == 1 and _is_pl(node.args[0], dim)
    if op == "piecewise":
        return all(_is_pl(a, dim) for a in node.args)
    return False


def _smooth_ok(node: Node) -> bool:
    """True when every domain-restricting primitive has a provably positive argument."""
    for n in _walk(node):
        if n.op in ("log", "sqrt") and sign_of(n.args[0]) != "pos":
            return False
        if n.op == "div" and sign_of(n.args[1]) != "pos" and not (
                is_constant(n.args[1]) and constant_value(n.args[1]) != 0):
            return False
    return True


def _domain_full(node: Node) -> bool:
    """True when no primitive can leave its domain."""
    for n in _walk(node):
        if n.op == "log" and sign_of(n.args[0]) != "pos":
            return False
        if n.op == "sqrt" and sign_of(n.args[0]) not in ("pos", "nonneg"):
            return False
        if n.op == "div" and sign_of(n.args[1]) != "pos" and not (
                is_constant(n.args[1]) and constant_value(n.args[1]) != 0):
            return False
    return True


def infer_tags(root: Node, dim: int) -> set:
    ops = {n.op for n in _walk(root)}
    tags = set()
    smooth = not (ops & _NONSMOOTH) and _smooth_ok(root)
    if smooth:
        tags.add(SMOOTH)
    if curvature(root) in ("const", "affine", "convex"):
        tags.add(CONVEX)
    if "compose" not in ops and "indicator" not in ops and _is_pl(root, dim):
        tags.add(PIECEWISE_LINEAR)
    if (not smooth and PIECEWISE_LINEAR not in tags and "indicator" not in ops
            and "compose" not in ops and all(
                n.op != "sqrt" or sign_of(n.args[0]) == "pos" for n in _walk(root))):
        tags.add(PIECEWISE_SMOOTH)
    if "indicator" in ops or not _domain_full(root) or _piecewise_uncovered(root, dim):
        tags.add(EXTENDED_VALUED)
    return tags


def _piecewise_uncovered(root: Node, dim: int) -> bool:
    if all(n.op != "piecewise" for n in _walk(root)):
        return False
    X = _validation_points(dim)
    _, dom = _eval(root, X)
    return not bool(dom.all())


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------

def _guard_sat(guard, X, tol=1e-12):
    return GuardRegion(guard).contains_batch(X, tol) if guard else np.ones(X.shape[0], bool)


def _eval(node: Node, X):
    """Vectorized evaluation: returns (values, in_domain)."""
    m = X.shape[0]
    op = node.op
    with np.errstate(all="ignore"):
        if op == "const":
            return np.full(m, node.value), np.ones(m, bool)
        if op == "var":
            return X[:, node.value].astype(float), np.ones(m, bool)
        if op in ("add", "sub", "mul", "div", "max", "min"):
            a, da = _eval(node.args[0], X)
            b, db = _eval(node.args[1], X)
            dom = da & db
            if op == "add":
                v = a + b
            elif op == "sub":
                v = a - b
            elif op == "mul":
                v = a * b
            elif op == "div":
                dom = dom & (b != 0)
                v = a / np.where(b == 0, 1.0, b)
            elif op == "max":
                v = np.maximum(a, b)
            else:
                v = np.minimum(a, b)
            return v, dom
        if op == "neg":
            a, da = _eval(node.args[0], X)
            return -a, da
        if op == "pow":
            a, da = _eval(node.args[0], X)
            return a ** node.value, da
        if op == "exp":
            a, da = _eval(node.args[0], X)
            return np.exp(a), da
        if op == "log":
            a, da = _eval(node.args[0], X)
            ok = a > 0
            return np.log(np.where(ok, a, 1.0)), da & ok
        if op == "sqrt":
            a, da = _eval(node.args[0], X)
            ok = a >= 0
            return np.sqrt(np.where(ok, a, 0.0)), da & ok
        if op == "abs":
            a, da = _eval(node.args[0], X)
            return np.abs(a), da
        if op == "norm":
            vals = [_eval(a, X) for a in node.args]
            dom = np.logical_and.reduce([d for _, d in vals])
            v = np.sqrt(sum(a * a for a, _ in vals))
            big = ~np.isfinite(v)
            if big.any():
                stack = np.abs(np.array([a for a, _ in vals]))
                v = np.where(big, np.hypot.reduce(stack, axis=0) if stack.shape[0] > 1
                             else stack[0], v)
            return v, dom
        if op == "piecewise":
            best = np.full(m, np.inf)
            dom = np.zeros(m, bool)
            for guard, expr in zip(node.value, node.args):
                sat = _guard_sat(guard, X)
                v, d = _eval(expr, X)
                ok = sat & d
                better = ok & (~dom | (v < best))
                best = np.where(better, v, best)
                dom = dom | ok
            return best, dom
        if op == "indicator":
            inside = node.value.contains_batch(X)
            return np.zeros(m), inside
        if op == "compose":
            Y, dy = _eval_inner(node.args, X)
            v, dv = _eval(node.value, Y)
            return v, dv & dy
    raise SemanticError(f"unknown node {op}")


def _eval_inner(args, X):
    cols, doms = [], []
    for a in args:
        v, d = _eval(a, X)
        cols.append(v)
        doms.append(d)
    return np.stack(cols, axis=1), np.logical_and.reduce(doms)


def _finalize(v, dom):
    v = np.where(dom, np.clip(np.nan_to_num(v, nan=np.nan), -FLOAT_MAX, FLOAT_MAX), np.inf)
    return v


def eval_batch(f: FunctionSpec, X) -> np.ndarray:
    """Evaluate f on the rows of X; +inf outside dom f, NaN on numeric breakdown."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    v, dom = _eval(f.root, X)
    return _finalize(v, dom)


def evaluate(f: FunctionSpec, x) -> float:
    """Evaluate f at a single point; +inf outside the effective domain."""
    x = np.asarray(x, dtype=float).reshape(-1)
    if x.shape[0] != f.dim:
        raise SemanticError(f"point has dimension {x.shape[0]}, expected {f.dim}")
    v = float(eval_batch(f, x[None, :])[0])
    if np.isnan(v):
        raise OverflowError("numeric breakdown while evaluating")
    return v


# ---------------------------------------------------------------------------
# forward-mode gradients
# ---------------------------------------------------------------------------

def _fwd(node: Node, X):
    """Returns (value, gradient (m, n), in_domain, kink)."""
    m, n = X.shape
    op = node.op
    zeros_g = np.zeros((m, n))
    nok = np.zeros(m, bool)
    with np.errstate(all="ignore"):
        if op == "const":
            return np.full(m, node.value), zeros_g, np.ones(m, bool), nok
        if op == "var":
            G = zeros_g.copy()
            G[:, node.value] = 1.0
            return X[:, node.value].astype(float), G, np.ones(m, bool), nok
        if op in ("add", "sub", "mul", "div"):
            a, ga, da, ka = _fwd(node.args[0], X)
            b, gb, db, kb = _fwd(node.args[1], X)
            dom, kink = da & db, ka | kb
            if op == "add":
                return a + b, ga + gb, dom, kink
            if op == "sub":
                return a - b, ga - gb, dom, kink
            if op == "mul":
                return a * b, _times(ga, b) + _times(gb, a), dom, kink
            dom = dom & (b != 0)
            bs = np.where(b == 0, 1.0, b)
            return a / bs, (_times(ga, bs) - _times(gb, a)) / (bs * bs)[:, None], dom, kink
        if op == "neg":
            a, ga, da, ka = _fwd(node.args[0], X)
            return -a, -ga, da, ka
        if op == "pow":
            a, ga, da, ka = _fwd(node.args[0], X)
            k = node.value
            if k == 0:
                return np.ones(m), zeros_g, da, ka
            return a ** k, _times(ga, k * a ** (k - 1)), da, ka
        if op == "exp":
            a, ga, da, ka = _fwd(node.args[0], X)
            e = np.exp(a)
            return e, _times(ga, e), da, ka
        if op == "log":
            a, ga, da, ka = _fwd(node.args[0], X)
            ok = a > 0
            a_s = np.where(ok, a, 1.0)
            return np.log(a_s), ga / a_s[:, None], da & ok, ka
        if op == "sqrt":
            a, ga, da, ka = _fwd(node.args[0], X)
            ok = a >= 0
            s = np.sqrt(np.where(ok, a, 0.0))
            flat = np.abs(ga).max(axis=1) == 0
            kink = ka | ((s == 0) & ~flat)
            ss = np.where(s == 0, 1.0, s)
            g = np.where((s == 0)[:, None], 0.0, ga / (2 * ss)[:, None])
            return s, g, da & ok, kink
        if op == "abs":
            a, ga, da, ka = _fwd(node.args[0], X)
            flat = np.abs(ga).max(axis=1) == 0
            return np.abs(a), _times(ga, np.sign(a)), da, ka | ((a == 0) & ~flat)
        if op == "norm":
            parts = [_fwd(a, X) for a in node.args]
            v = np.sqrt(sum(p[0] ** 2 for p in parts))
            dom = np.logical_and.reduce([p[2] for p in parts])
            kink = np.logical_or.reduce([p[3] for p in parts])
            vs = np.where(v == 0, 1.0, v)
            g = sum(p[0][:, None] * p[1] for p in parts) / vs[:, None]
            flat = np.logical_and.reduce([np.abs(p[1]).max(axis=1) == 0 for p in parts])
            return v, g, dom, kink | ((v == 0) & ~flat)
        if op in ("max", "min"):
            a, ga, da, ka = _fwd(node.args[0], X)
            b, gb, db, kb = _fwd(node.args[1], X)
            pick_a = a >= b if op == "max" else a <= b
            v = np.where(pick_a, a, b)
            g = np.where(pick_a[:, None], ga, gb)
            gap = np.abs(a - b)
            # an overflowed branch is never tied: inf <= inf would say so
            tie = np.isfinite(gap) & (gap <= 1e-12 * (1 + np.abs(a) + np.abs(b)))
            differ = np.abs(ga - gb).max(axis=1) > KINK_TOL
            kink = np.where(tie, ka | kb | differ, np.where(pick_a, ka, kb))
            return v, g, da & db, kink
        if op == "piecewise":
            best = np.full(m, np.inf)
            grad = zeros_g.copy()
            dom = np.zeros(m, bool)
            kink = np.zeros(m, bool)
            count = np.zeros(m, int)
            for guard, expr in zip(node.value, node.args):
                region = GuardRegion(guard)
                sat = region.contains_batch(X) if guard else np.ones(m, bool)
                v, g, d, k = _fwd(expr, X)
                ok = sat & d
                better = ok & (~dom | (v < best))
                on_edge = region.on_boundary_batch(X) if guard else np.zeros(m, bool)
                best = np.where(better, v, best)
                grad = np.where(better[:, None], g, grad)
                kink = np.where(better, k | on_edge, kink | (ok & on_edge))
                count += ok
                dom = dom | ok
            kink = kink | (count > 1)
            return best, grad, dom, kink
        if op == "indicator":
            region = node.value
            inside = region.contains_batch(X)
            edge = region.on_boundary_batch(X) if hasattr(region, "on_boundary_batch") else nok
            return np.zeros(m), zeros_g, inside, edge
        if op == "compose":
            k = len(node.args)
            vals, jac, doms, kinks = [], [], [], []
            for a in node.args:
                v, g, d, kk = _fwd(a, X)
                vals.append(v)
                jac.append(g)
                doms.append(d)
                kinks.append(kk)
            Y = np.stack(vals, axis=1)
            J = np.stack(jac, axis=1)  # (m, k, n)
            v, gy, d, kk = _fwd(node.value, Y)
            g = np.einsum("mk,mkn->mn", gy, J)
            return v, g, d & np.logical_and.reduce(doms), kk | np.logical_or.reduce(kinks)
    raise SemanticError(f"unknown node {op}")


def _times(G, v):
    """G * v[:, None] with exact zeros kept (a constant factor times an overflowed value)."""
    return np.where(G == 0, 0.0, G * v[:, None])


def grad_batch(f: FunctionSpec, X):
    """Values, gradients, domain mask and kink mask on the rows of X."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    v, g, dom, kink = _fwd(f.root, X)
    return _finalize(v, dom), g, dom, kink


def gradient_exact(f: FunctionSpec, x) -> np.ndarray:
    """Exact gradient at a point interior to a smooth piece."""
    x = np.asarray(x, dtype=float).reshape(-1)
    if x.shape[0] != f.dim:
        raise SemanticError(f"point has dimension {x.shape[0]}, expected {f.dim}")
    v, g, dom, kink = grad_batch(f, x[None, :])
    if not dom[0]:
        raise NotDifferentiable("point outside the effective domain")
    if kink[0]:
        raise NotDifferentiable(f"f is not differentiable at {x.tolist()}")
    return g[0]


# ---------------------------------------------------------------------------
# printing
# ---------------------------------------------------------------------------

def _num(v: float) -> str:
    s = repr(float(v))
    if s in ("inf", "-inf", "nan"):
        raise SemanticError("cannot print non-finite constant")
    return s if v >= 0 else f"(-{repr(-float(v))})"


def _affine_text(c, d) -> str:
    terms = []
    for i, ci in enumerate(c):
        if ci != 0:
            terms.append(f"{_num(ci)}*x{i + 1}")
    terms.append(_num(d))
    return " + ".join(terms)


def guard_text(ineqs) -> str:
    parts = []
    for q in ineqs:
        parts.append(f"{_affine_text(q.coeffs, q.const)} {'<' if q.strict else '<='} 0")
    return " & ".join(parts)


def node_text(node: Node) -> str:
    op = node.op
    if op == "const":
        return _num(node.value)
    if op == "var":
        return f"x{node.value + 1}"
    if op in ("add", "sub", "mul", "div"):
        sym = {"add": "+", "sub": "-", "mul": "*", "div": "/"}[op]
        return f"({node_text(node.args[0])} {sym} {node_text(node.args[1])})"
    if op == "neg":
        return f"(-{node_text(node.args[0])})"
    if op == "pow":
        return f"({node_text(node.args[0])})^{node.value}"
    if op in _UNARY:
        return f"{op}({node_text(node.args[0])})"
    if op in ("norm", "max", "min"):
        return f"{op}({', '.join(node_text(a) for a in node.args)})"
    if op == "piecewise":
        pieces = [f"{guard_text(g)}: {node_text(e)}" for g, e in zip(node.value, node.args)]
        return f"piecewise({'; '.join(pieces)})"
    if op == "indicator":
        region = node.value
        if isinstance(region, GuardRegion):
            return f"indicator({region.text()})"
        name = getattr(region, "name", None)
        if name:
            return f"indicator({name})"
        raise SemanticError("indicator of an unnamed set cannot be printed")
    if op == "compose":
        # readable but not parseable: outer in y-variables, then the inner maps
        inner = ", ".join(node_text(a) for a in node.args)
        outer = node_text(node.value).replace("x", "y")
        return f"[{outer}] o ({inner})"
    raise SemanticError(f"unknown node {op}")


def to_text(f: FunctionSpec) -> str:
    """Print f back to DSL text (fully parenthesized; compositions print in a display-only form)."""
    return node_text(f.root)


# ---------------------------------------------------------------------------
# builders
# ---------------------------------------------------------------------------

def add(f1: FunctionSpec, f2: FunctionSpec) -> FunctionSpec:
    _same_dim(f1, f2)
    return make_function(Node("add", (f1.root, f2.root)), f1.dim, validate=False,
                         text=f"({f1}) + ({f2})" if f1.text and f2.text else "")


def scale(f: FunctionSpec, lam: float) -> FunctionSpec:
    return make_function(Node("mul", (const(lam), f.root)), f.dim, validate=False,
                         text=f"{_num(lam)}*({f})" if f.text else "")


def negate(f: FunctionSpec) -> FunctionSpec:
    return make_function(Node("neg", (f.root,)), f.dim, validate=False,
                         text=f"-({f})" if f.text else "")


def fmax(f1: FunctionSpec, f2: FunctionSpec) -> FunctionSpec:
    _same_dim(f1, f2)
    return make_function(Node("max", (f1.root, f2.root)), f1.dim, validate=False,
                         text=f"max({f1}, {f2})" if f1.text and f2.text else "")


def fmin(f1: FunctionSpec, f2: FunctionSpec) -> FunctionSpec:
    _same_dim(f1, f2)
    return make_function(Node("min", (f1.root, f2.root)), f1.dim, validate=False,
                         text=f"min({f1}, {f2})" if f1.text and f2.text else "")


def linear(a: Sequence[float]) -> FunctionSpec:
    """The linear function x -> <a, x>."""
    a = [float(v) for v in a]
    node = const(0.0)
    for i, ai in enumerate(a):
        if ai != 0:
            node = Node("add", (node, Node("mul", (const(ai), var(i)))))
    return make_function(node, len(a), validate=False, text=_affine_text(a, 0.0))


def tilt(f: FunctionSpec, u: Sequence[float]) -> FunctionSpec:
    """f - <u, .>."""
    return make_function(Node("sub", (f.root, linear(u).root)), f.dim, validate=False)


def compose(f: FunctionSpec, gs: Sequence[FunctionSpec]) -> FunctionSpec:
    """x -> f(g_1(x), ..., g_k(x))."""
    if len(gs) != f.dim:
        raise SemanticError(f"outer function expects {f.dim} inner maps, got {len(gs)}")
    dims = {g.dim for g in gs}
    if len(dims) != 1:
        raise SemanticError("inner maps must share a dimension")
    node = Node("compose", tuple(g.root for g in gs), f.root)
    return make_function(node, dims.pop(), validate=False)


def embed(f: FunctionSpec, dim: int, offset: int = 0) -> FunctionSpec:
    """View f as a function on R^dim reading coordinates offset..offset+f.dim-1."""
    gs = [make_function(var(offset + i), dim, validate=False) for i in range(f.dim)]
    return compose(f, gs)


def _same_dim(f1, f2):
    if f1.dim != f2.dim:
        raise SemanticError("dimension mismatch")


# ---------------------------------------------------------------------------
# validation
# ---------------------------------------------------------------------------

def _validation_points(dim: int) -> np.ndarray:
    rng = np.random.default_rng(20240611)
    pts = [rng.uniform(-s, s, size=(400, dim)) for s in (1.0, 10.0, 1e3)]
    pts.append(np.zeros((1, dim)))
    eye = np.eye(dim)
    for s in (1.0, 1e2, 1e4):
        pts.append(s * eye)
        pts.append(-s * eye)
    return np.vstack(pts)


def _facet_points(guard, dim, rng, k=60):
    """Points on each facet of the guard that satisfy the remaining rows."""
    out = []
    region = GuardRegion(guard)
    for j, q in enumerate(guard):
        c = np.asarray(q.coeffs)
        nc = c @ c
        if nc == 0:
            continue
        for s in (1.0, 10.0, 1e3):
            P = rng.uniform(-s, s, size=(k, dim))
            P = P - ((P @ c + q.const) / nc)[:, None] * c
            others = [g for i, g in enumerate(guard) if i != j]
            if others:
                P = P[GuardRegion(others).contains_batch(P, 1e-9)]
            out.append((j, P))
    return region, out


def _validate(root: Node, dim: int) -> None:
    rng = np.random.default_rng(7)
    _check_domain_args(root, dim, None, rng)
    for n in _walk(root):
        if n.op == "piecewise":
            _check_piecewise_lsc(n, dim, rng)
    if not _domain_unbounded(root, dim):
        raise SemanticError("effective domain appears bounded")


def _check_domain_args(node, dim, guard, rng):
    """log arguments must stay positive wherever the node is active."""
    if node.op == "piecewise":
        for g, e in zip(node.value, node.args):
            _check_domain_args(e, dim, g, rng)
        return
    if node.op == "log":
        X = _validation_points(dim)
        if guard:
            X = X[_guard_sat(guard, X)]
            _, facets = _facet_points(guard, dim, rng)
            inner = [P for _, P in facets if len(P)]
            if inner:
                F = np.vstack(inner)
                # nudge slightly into the guard's interior
                A = np.array([q.coeffs for q in guard])
                direction = -A.sum(axis=0)
                nrm = np.linalg.norm(direction)
                if nrm > 0:
                    F = F + 1e-6 * (1 + np.abs(F).max(axis=1))[:, None] * direction / nrm
                X = np.vstack([X, F[_guard_sat(guard, F)]])
        if len(X):
            a, dom = _eval(node.args[0], X)
            bad = dom & ~(a > 0)
            if bad.any():
                raise SemanticError(
                    f"log argument is nonpositive at {X[bad][0].tolist()} inside its active region")
    for a in node.args:
        _check_domain_args(a, dim, guard, rng)


def _check_piecewise_lsc(node, dim, rng):
    """At facets of strict guards, the piece's limit must not undercut the value used there."""
    for g, e in zip(node.value, node.args):
        if not any(q.strict for q in g):
            continue
        region, facets = _facet_points(g, dim, rng)
        for j, P in facets:
            if not g[j].strict or not len(P):
                continue
            lim, dl = _eval(e, P)
            val, dv = _eval(node, P)
            fval = np.where(dv, val, np.inf)
            limv = np.where(dl, lim, np.inf)
            bad = limv < fval - 1e-9 * (1 + np.abs(limv))
            if bad.any():
                raise SemanticError(
                    f"piecewise definition is not lower semicontinuous at {P[bad][0].tolist()}")


def _domain_unbounded(root: Node, dim: int) -> bool:
    rng = np.random.default_rng(11)
    dirs = rng.normal(size=(256, dim))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    dirs = np.vstack([dirs, np.eye(dim), -np.eye(dim)])
    far = np.vstack([r * dirs for r in (1e3, 1e5)])
    # mixed scales: one coordinate large, others small
    mixed = []
    for i in range(dim):
        for s in (1e3, -1e3):
            P = rng.uniform(-1, 1, size=(64, dim)) * 10.0 ** rng.integers(-3, 2, size=(64, 1))
            P[:, i] = s
            mixed.append(P)
    far = np.vstack([far] + mixed)
    _, dom = _eval(root, far)
    if dom.any():
        return True
    # thin sets (curves, surfaces) are invisible to random points: snap onto them
    from .sets import SetSpec, project_batch
    for node in _walk(root):
        if node.op == "indicator" and isinstance(node.value, SetSpec):
            Y, d = project_batch(node.value, far[: 2 * len(dirs)])
            ok = np.all(np.isfinite(Y), axis=1) & (np.linalg.norm(np.nan_to_num(Y), axis=1) >= 100.0)
            if ok.any():
                _, dom = _eval(root, Y[ok])
                if dom.any():
                    return True
    return False
