"""Expression trees for scalar fields on R^n_x x (R^n_xi minus 0).

Nodes are immutable and interned: structurally equal trees built in the same
process are the same object.  That makes the trees behave like DAGs, so
repeated subexpressions produced by differentiation are shared and evaluated
once.

Simplification is limited to what the constructors do (constant folding,
flattening, collecting like terms and powers).  Equality of fields is always
judged numerically, never by comparing trees.
"""

from __future__ import annotations

import math
import threading
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

__all__ = [
    "DomainError",
    "ParseError",
    "ScalarField",
    "HomogeneousField",
    "cotangent_coords",
    "parse_expression",
    "unparse",
    "evaluate",
    "differentiate",
    "check_homogeneity",
    "euler_residual",
    "restrict_to_sphere",
    "extend_homogeneous",
    "exp",
    "sin",
    "cos",
    "sqrt",
    "norm_xi",
]


class DomainError(ArithmeticError):
    """Evaluation left the domain of the field (xi = 0, 1/0, sqrt(<0))."""


class ParseError(ValueError):
    def __init__(self, message: str, position: int):
        super().__init__(f"{message} (at position {position})")
        self.position = position


# ---------------------------------------------------------------------------
# nodes

_TABLE: dict = {}
_LOCK = threading.Lock()
_SERIAL = [0]


def _intern(key, factory):
    node = _TABLE.get(key)
    if node is not None:
        return node
    with _LOCK:
        node = _TABLE.get(key)
        if node is None:
            node = factory()
            node.serial = _SERIAL[0]
            _SERIAL[0] += 1
            _TABLE[key] = node
    return node


class Node:
    __slots__ = ("serial", "free", "_topo")

    def children(self) -> tuple:
        return ()


class Const(Node):
    __slots__ = ("value",)

    def __init__(self, value):
        self.value = value
        self.free = frozenset()
        self._topo = None


class Var(Node):
    __slots__ = ("name",)

    def __init__(self, name):
        self.name = name
        self.free = frozenset((name,))
        self._topo = None


class NormXi(Node):
    __slots__ = ("n",)

    def __init__(self, n):
        self.n = n
        self.free = frozenset(f"xi{i}" for i in range(1, n + 1))
        self._topo = None


class Add(Node):
    __slots__ = ("terms",)

    def __init__(self, terms):
        self.terms = terms
        self.free = frozenset().union(*(t.free for t in terms))
        self._topo = None

    def children(self):
        return self.terms


class Mul(Node):
    __slots__ = ("coeff", "factors")

    def __init__(self, coeff, factors):
        self.coeff = coeff
        self.factors = factors
        self.free = frozenset().union(*(f.free for f in factors))
        self._topo = None

    def children(self):
        return self.factors


class Pow(Node):
    __slots__ = ("base", "exp")

    def __init__(self, base, exp):
        self.base = base
        self.exp = exp
        self.free = base.free
        self._topo = None

    def children(self):
        return (self.base,)


class Func(Node):
    __slots__ = ("name", "arg")

    def __init__(self, name, arg):
        self.name = name
        self.arg = arg
        self.free = arg.free
        self._topo = None

    def children(self):
        return (self.arg,)


class Numeric(Node):
    """Opaque field given by a callable on stacked coordinates.

    Used for pullbacks along numerically solved maps.  Derivatives are taken
    with a fourth-order central difference.
    """

    __slots__ = ("fn", "coords", "label")

    def __init__(self, fn, coords, label):
        self.fn = fn
        self.coords = coords
        self.label = label
        self.free = frozenset(coords)
        self._topo = None


def _num(v):
    if isinstance(v, complex):
        if v.imag == 0:
            return float(v.real)
        return v
    if isinstance(v, (np.complexfloating,)):
        return _num(complex(v))
    return float(v)


def const(v) -> Node:
    v = _num(v)
    return _intern(("C", type(v).__name__, v), lambda: Const(v))


ZERO = const(0.0)
ONE = const(1.0)


def var(name: str) -> Node:
    return _intern(("V", name), lambda: Var(name))


def norm_xi_node(n: int) -> Node:
    return _intern(("N", n), lambda: NormXi(n))


def numeric(fn, coords: tuple, label: str) -> Node:
    return _intern(("X", id(fn), coords, label), lambda: Numeric(fn, coords, label))


def _split_coeff(node):
    """node -> (coeff, core) with core free of a numeric factor."""
    if isinstance(node, Mul):
        if node.coeff == 1:
            return 1.0, node
        core = node.factors[0] if len(node.factors) == 1 else _mul_node(1.0, node.factors)
        return node.coeff, core
    return 1.0, node


def _mul_node(coeff, factors):
    factors = tuple(sorted(factors, key=lambda f: f.serial))
    return _intern(("M", type(coeff).__name__, coeff, tuple(f.serial for f in factors)),
                   lambda: Mul(coeff, factors))


def add(*nodes: Node) -> Node:
    constant = 0.0
    acc: dict = {}
    stack = list(nodes)
    while stack:
        t = stack.pop()
        if isinstance(t, Add):
            stack.extend(t.terms)
            continue
        if isinstance(t, Const):
            constant = constant + t.value
            continue
        c, core = _split_coeff(t)
        slot = acc.get(core.serial)
        if slot is None:
            acc[core.serial] = [core, c]
        else:
            slot[1] = slot[1] + c
    terms = []
    for core, c in acc.values():
        if c == 0:
            continue
        terms.append(core if c == 1 else mul(const(c), core))
    constant = _num(constant)
    if constant != 0:
        terms.append(const(constant))
    if not terms:
        return ZERO
    if len(terms) == 1:
        return terms[0]
    terms = tuple(sorted(terms, key=lambda t: t.serial))
    return _intern(("A", tuple(t.serial for t in terms)), lambda: Add(terms))


def mul(*nodes: Node) -> Node:
    coeff = 1.0
    powers: dict = {}
    stack = list(nodes)
    while stack:
        f = stack.pop()
        if isinstance(f, Const):
            coeff = coeff * f.value
            continue
        if isinstance(f, Mul):
            coeff = coeff * f.coeff
            stack.extend(f.factors)
            continue
        if isinstance(f, Pow):
            base, e = f.base, f.exp
        else:
            base, e = f, Fraction(1)
        slot = powers.get(base.serial)
        if slot is None:
            powers[base.serial] = [base, e]
        else:
            slot[1] += e
    coeff = _num(coeff)
    if coeff == 0:
        return ZERO
    factors = []
    redo = False
    for base, e in powers.values():
        if e == 0:
            continue
        p = power(base, e)
        if isinstance(p, (Mul, Const)):
            redo = True
        factors.append(p)
    if redo:
        return mul(const(coeff), *factors)
    if not factors:
        return const(coeff)
    if len(factors) == 1 and coeff == 1:
        return factors[0]
    return _mul_node(coeff, factors)


def power(base: Node, e) -> Node:
    e = Fraction(e)
    if e == 0:
        return ONE
    if e == 1:
        return base
    if isinstance(base, Const):
        v = base.value
        if e.denominator == 1:
            if v == 0 and e < 0:
                return _intern(("P", base.serial, e), lambda: Pow(base, e))
            return const(v ** int(e))
        if isinstance(v, float) and v > 0:
            return const(v ** float(e))
        return _intern(("P", base.serial, e), lambda: Pow(base, e))
    if e.denominator == 1:
        if isinstance(base, Pow):
            return power(base.base, base.exp * e)
        if isinstance(base, Mul):
            return mul(const(base.coeff ** int(e)), *(power(f, e) for f in base.factors))
    elif isinstance(base, Pow) and base.exp.denominator == 1 and base.exp % 2 == 1:
        # odd integer inner power keeps the sign of the base
        return power(base.base, base.exp * e)
    return _intern(("P", base.serial, e), lambda: Pow(base, e))


_FOLD = {"exp": math.exp, "sin": math.sin, "cos": math.cos}


def func(name: str, arg: Node) -> Node:
    if isinstance(arg, Const) and isinstance(arg.value, float):
        return const(_FOLD[name](arg.value))
    return _intern(("F", name, arg.serial), lambda: Func(name, arg))


# ---------------------------------------------------------------------------
# differentiation

_DCACHE: dict = {}

_FD_STEP = 1e-3


def _fd_numeric(node: Numeric, name: str) -> Node:
    k = node.coords.index(name)
    fn = node.fn

    def deriv(Z):
        h = _FD_STEP * np.maximum(1.0, np.abs(Z[..., k]))
        out = 0.0
        for w, s in ((-1.0, 2.0), (8.0, 1.0), (-8.0, -1.0), (1.0, -2.0)):
            Zs = np.array(Z, dtype=float, copy=True)
            Zs[..., k] = Zs[..., k] + s * h
            out = out + w * fn(Zs)
        return out / (12.0 * h)

    return numeric(deriv, node.coords, f"d{name}({node.label})")


def diff_node(node: Node, name: str) -> Node:
    if name not in node.free:
        return ZERO
    key = (node.serial, name)
    hit = _DCACHE.get(key)
    if hit is not None:
        return hit
    if isinstance(node, Var):
        out = ONE
    elif isinstance(node, NormXi):
        out = mul(var(name), power(node, -1))
    elif isinstance(node, Add):
        out = add(*(diff_node(t, name) for t in node.terms))
    elif isinstance(node, Mul):
        parts = []
        fs = node.factors
        for i, f in enumerate(fs):
            df = diff_node(f, name)
            if df is ZERO:
                continue
            parts.append(mul(const(node.coeff), df, *fs[:i], *fs[i + 1:]))
        out = add(*parts)
    elif isinstance(node, Pow):
        out = mul(const(float(node.exp)), power(node.base, node.exp - 1),
                  diff_node(node.base, name))
    elif isinstance(node, Func):
        da = diff_node(node.arg, name)
        if node.name == "exp":
            out = mul(node, da)
        elif node.name == "sin":
            out = mul(func("cos", node.arg), da)
        else:
            out = mul(const(-1.0), func("sin", node.arg), da)
    elif isinstance(node, Numeric):
        out = _fd_numeric(node, name)
    else:  # pragma: no cover
        raise TypeError(f"cannot differentiate {type(node).__name__}")
    _DCACHE[key] = out
    return out


# ---------------------------------------------------------------------------
# evaluation


def _topo(root: Node) -> list:
    if root._topo is not None:
        return root._topo
    order = []
    seen = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if node.serial in seen:
            continue
        seen.add(node.serial)
        stack.append((node, True))
        for c in node.children():
            if c.serial not in seen:
                stack.append((c, False))
    root._topo = order
    return order


def eval_node(root: Node, env: Mapping[str, np.ndarray], Z=None, coords=None):
    vals: dict = {}
    for node in _topo(root):
        if isinstance(node, Const):
            v = node.value
        elif isinstance(node, Var):
            v = env[node.name]
        elif isinstance(node, NormXi):
            s = 0.0
            for i in range(1, node.n + 1):
                s = s + env[f"xi{i}"] ** 2
            if np.any(s == 0):
                raise DomainError("xi = 0 lies outside the domain")
            v = np.sqrt(s)
        elif isinstance(node, Add):
            it = iter(node.terms)
            v = vals[next(it).serial]
            for t in it:
                v = v + vals[t.serial]
        elif isinstance(node, Mul):
            v = node.coeff
            for f in node.factors:
                v = v * vals[f.serial]
        elif isinstance(node, Pow):
            b = vals[node.base.serial]
            e = node.exp
            if e < 0 and np.any(b == 0):
                raise DomainError("division by zero")
            if e.denominator == 1:
                v = b ** int(e) if e > 0 else 1.0 / (b ** int(-e))
            else:
                if not np.iscomplexobj(b) and np.any(np.asarray(b) < 0):
                    raise DomainError("fractional power of a negative number")
                v = b ** float(e)
        elif isinstance(node, Func):
            a = vals[node.arg.serial]
            v = getattr(np, node.name)(a)
        elif isinstance(node, Numeric):
            if Z is None or coords != node.coords:
                Zn = np.stack([np.asarray(env[c], dtype=float) for c in node.coords], axis=-1)
            else:
                Zn = Z
            v = node.fn(Zn)
        else:  # pragma: no cover
            raise TypeError(type(node).__name__)
        vals[node.serial] = v
    return vals[root.serial]


# ---------------------------------------------------------------------------
# public field types


def cotangent_coords(n: int) -> tuple:
    return tuple(f"x{i}" for i in range(1, n + 1)) + tuple(f"xi{i}" for i in range(1, n + 1))


def _as_node(other, coords) -> Node:
    if isinstance(other, ScalarField):
        if other.coords != coords and not isinstance(other.node, Const):
            raise ValueError(f"coordinate mismatch: {other.coords} vs {coords}")
        return other.node
    if isinstance(other, Node):
        return other
    if isinstance(other, (int, float, complex, np.number)):
        return const(other)
    return NotImplemented


class ScalarField:
    """A scalar expression over a fixed tuple of coordinate names.

    For cotangent models the coordinates are ``x1..xn, xi1..xin`` and the
    field can be called as ``f(x, xi)`` with arrays of shape ``(..., n)``.
    """

    __slots__ = ("node", "coords")

    def __init__(self, node: Node, coords: Sequence[str]):
        self.node = node
        self.coords = tuple(coords)

    # construction helpers
    @classmethod
    def constant(cls, value, coords):
        return cls(const(value), coords)

    @classmethod
    def coordinate(cls, name: str, coords):
        if name not in coords:
            raise ValueError(f"unknown coordinate {name!r}")
        return cls(var(name), coords)

    @classmethod
    def from_callable(cls, fn: Callable, coords, label: str = "numeric"):
        """Opaque field from ``fn(Z)`` with ``Z`` of shape ``(..., len(coords))``."""
        return cls(numeric(fn, tuple(coords), label), coords)

    @property
    def dim(self) -> int:
        return len([c for c in self.coords if c.startswith("xi")])

    @property
    def is_symbolic(self) -> bool:
        return not any(isinstance(n, Numeric) for n in _topo(self.node))

    @property
    def is_zero(self) -> bool:
        return self.node is ZERO

    def _wrap(self, node):
        return ScalarField(node, self.coords)

    def __add__(self, other):
        o = _as_node(other, self.coords)
        return NotImplemented if o is NotImplemented else self._wrap(add(self.node, o))

    __radd__ = __add__

    def __sub__(self, other):
        o = _as_node(other, self.coords)
        if o is NotImplemented:
            return o
        return self._wrap(add(self.node, mul(const(-1.0), o)))

    def __rsub__(self, other):
        o = _as_node(other, self.coords)
        if o is NotImplemented:
            return o
        return self._wrap(add(o, mul(const(-1.0), self.node)))

    def __mul__(self, other):
        o = _as_node(other, self.coords)
        return NotImplemented if o is NotImplemented else self._wrap(mul(self.node, o))

    __rmul__ = __mul__

    def __truediv__(self, other):
        o = _as_node(other, self.coords)
        if o is NotImplemented:
            return o
        return self._wrap(mul(self.node, power(o, -1)))

    def __rtruediv__(self, other):
        o = _as_node(other, self.coords)
        if o is NotImplemented:
            return o
        return self._wrap(mul(o, power(self.node, -1)))

    def __neg__(self):
        return self._wrap(mul(const(-1.0), self.node))

    def __pow__(self, e):
        return self._wrap(power(self.node, Fraction(e).limit_denominator(10**6)
                                if isinstance(e, float) else e))

    def conj(self) -> "ScalarField":
        return self._wrap(_conj(self.node))

    def diff(self, name: str) -> "ScalarField":
        if name not in self.coords:
            raise ValueError(f"unknown coordinate {name!r}")
        return self._wrap(diff_node(self.node, name))

    def subs(self, mapping: Mapping[str, "ScalarField"]) -> "ScalarField":
        """Substitute coordinates by fields (all over the same coordinates)."""
        nodes = {k: _as_node(v, self.coords) for k, v in mapping.items()}
        return self._wrap(_subs(self.node, nodes, self.dim))

    def at(self, Z) -> np.ndarray:
        """Evaluate at stacked coordinates ``Z`` of shape ``(..., d)``."""
        Z = np.asarray(Z, dtype=float)
        if Z.shape[-1] != len(self.coords):
            raise ValueError(f"expected {len(self.coords)} coordinates, got {Z.shape[-1]}")
        env = {c: Z[..., k] for k, c in enumerate(self.coords)}
        out = eval_node(self.node, env, Z, self.coords)
        return np.broadcast_to(out, Z.shape[:-1]) if np.ndim(out) < Z.ndim - 1 else out

    def __call__(self, *args):
        if len(args) == 1:
            return self.at(args[0])
        n = self.dim
        x, xi = (np.atleast_1d(np.asarray(a, dtype=float)) for a in args)
        if n == 1:
            x = x if x.shape[-1] == 1 and x.ndim > 1 or x.shape == (1,) else x[..., None]
            xi = xi if xi.shape[-1] == 1 and xi.ndim > 1 or xi.shape == (1,) else xi[..., None]
        x, xi = np.broadcast_arrays(x, xi)
        return self.at(np.concatenate([x, xi], axis=-1))

    def __repr__(self):
        try:
            return f"ScalarField({unparse(self)!r})"
        except TypeError:
            return f"ScalarField(<numeric {self.node.label}>)"


@dataclass(frozen=True)
class HomogeneousField:
    """A cotangent field declared positively homogeneous of ``degree`` in xi."""

    base: ScalarField
    degree: int

    def __call__(self, *args):
        return self.base(*args)

    @property
    def dim(self) -> int:
        return self.base.dim


def _conj(node: Node) -> Node:
    if isinstance(node, Const):
        v = node.value
        return const(v.conjugate()) if isinstance(v, complex) else node
    if isinstance(node, Add):
        return add(*(_conj(t) for t in node.terms))
    if isinstance(node, Mul):
        c = node.coeff
        c = c.conjugate() if isinstance(c, complex) else c
        return mul(const(c), *(_conj(f) for f in node.factors))
    if isinstance(node, Pow):
        return power(_conj(node.base), node.exp)
    if isinstance(node, Func):
        return func(node.name, _conj(node.arg))
    if isinstance(node, Numeric):
        fn = node.fn
        return numeric(lambda Z, fn=fn: np.conj(fn(Z)), node.coords, f"conj({node.label})")
    return node


def _subs(node: Node, mapping: Mapping[str, Node], n: int, cache=None) -> Node:
    if cache is None:
        cache = {}
    if not (node.free & mapping.keys()):
        return node
    hit = cache.get(node.serial)
    if hit is not None:
        return hit
    if isinstance(node, Var):
        out = mapping[node.name]
    elif isinstance(node, NormXi):
        parts = [power(mapping.get(f"xi{i}", var(f"xi{i}")), 2) for i in range(1, node.n + 1)]
        out = power(add(*parts), Fraction(1, 2))
    elif isinstance(node, Add):
        out = add(*(_subs(t, mapping, n, cache) for t in node.terms))
    elif isinstance(node, Mul):
        out = mul(const(node.coeff), *(_subs(f, mapping, n, cache) for f in node.factors))
    elif isinstance(node, Pow):
        out = power(_subs(node.base, mapping, n, cache), node.exp)
    elif isinstance(node, Func):
        out = func(node.name, _subs(node.arg, mapping, n, cache))
    else:
        raise TypeError(f"cannot substitute into {type(node).__name__}")
    cache[node.serial] = out
    return out


def _normalize_xi(node: Node, n: int, cache=None) -> Node:
    """Replace xi_i by xi_i/|xi| and |xi| by 1."""
    if cache is None:
        cache = {}
    hit = cache.get(node.serial)
    if hit is not None:
        return hit
    if isinstance(node, NormXi):
        out = ONE
    elif isinstance(node, Var):
        out = mul(node, power(norm_xi_node(n), -1)) if node.name.startswith("xi") else node
    elif isinstance(node, (Const,)):
        out = node
    elif isinstance(node, Add):
        out = add(*(_normalize_xi(t, n, cache) for t in node.terms))
    elif isinstance(node, Mul):
        out = mul(const(node.coeff), *(_normalize_xi(f, n, cache) for f in node.factors))
    elif isinstance(node, Pow):
        out = power(_normalize_xi(node.base, n, cache), node.exp)
    elif isinstance(node, Func):
        out = func(node.name, _normalize_xi(node.arg, n, cache))
    elif isinstance(node, Numeric):
        fn, coords = node.fn, node.coords

        def normalized(Z, fn=fn):
            Z = np.array(Z, dtype=float, copy=True)
            r = np.linalg.norm(Z[..., n:], axis=-1, keepdims=True)
            Z[..., n:] = Z[..., n:] / r
            return fn(Z)

        out = numeric(normalized, coords, f"S({node.label})")
    else:  # pragma: no cover
        raise TypeError(type(node).__name__)
    cache[node.serial] = out
    return out


# ---------------------------------------------------------------------------
# module-level operations


def _elementwise(name):
    def f(field: ScalarField) -> ScalarField:
        return field._wrap(func(name, field.node))

    f.__name__ = name
    return f


exp = _elementwise("exp")
sin = _elementwise("sin")
cos = _elementwise("cos")


def sqrt(field: ScalarField) -> ScalarField:
    return field._wrap(power(field.node, Fraction(1, 2)))


def norm_xi(n: int) -> ScalarField:
    return ScalarField(norm_xi_node(n), cotangent_coords(n))


def evaluate(f: ScalarField, point) -> float | complex:
    """Evaluate at a single point, given as ``(x, xi)`` or as a flat coordinate vector."""
    if isinstance(point, tuple) and len(point) == 2:
        out = f(np.atleast_1d(point[0]), np.atleast_1d(point[1]))
    else:
        out = f.at(np.asarray(point, dtype=float))
    out = np.asarray(out).reshape(())[()]
    return complex(out) if np.iscomplexobj(out) else float(out)


def differentiate(f: ScalarField, name: str) -> ScalarField:
    return f.diff(name)


def sample_cotangent(n: int, count: int, rng: np.random.Generator, radius: float = 2.0):
    """Random points (x, xi) with |xi| in [0.5, 2] (xi bounded away from 0)."""
    x = rng.uniform(-radius, radius, size=(count, n))
    xi = rng.normal(size=(count, n))
    xi /= np.linalg.norm(xi, axis=1, keepdims=True)
    xi *= rng.uniform(0.5, 2.0, size=(count, 1))
    return x, xi


def check_homogeneity(f: ScalarField, degree: int, samples: int = 50, seed: int = 0,
                      tol: float = 1e-9) -> bool:
    """True iff F(x, lam xi) = lam^m F(x, xi) at sampled points, lam in {0.5, 2, 10}."""
    rng = np.random.default_rng(seed)
    x, xi = sample_cotangent(f.dim, samples, rng)
    base = f(x, xi)
    for lam in (0.5, 2.0, 10.0):
        scaled = f(x, lam * xi)
        expected = lam ** degree * base
        scale = 1.0 + np.maximum(np.abs(scaled), np.abs(expected))
        if np.any(np.abs(scaled - expected) > tol * scale):
            return False
    return True


def euler_residual(f: ScalarField, degree: int, samples: int = 50, seed: int = 0) -> float:
    """max |sum_i xi_i dF/dxi_i - m F| over sampled points."""
    n = f.dim
    rng = np.random.default_rng(seed)
    x, xi = sample_cotangent(n, samples, rng)
    lhs = sum(f.diff(f"xi{i + 1}")(x, xi) * xi[:, i] for i in range(n))
    return float(np.max(np.abs(lhs - degree * f(x, xi))))


def restrict_to_sphere(f: HomogeneousField | ScalarField) -> ScalarField:
    """Restriction to |xi| = 1, represented by its degree-0 extension."""
    base = f.base if isinstance(f, HomogeneousField) else f
    return base._wrap(_normalize_xi(base.node, base.dim))


def extend_homogeneous(h: ScalarField, degree: int) -> HomogeneousField:
    """Extend a function given on |xi| = 1 homogeneously of ``degree``."""
    n = h.dim
    on_sphere = _normalize_xi(h.node, n)
    return HomogeneousField(h._wrap(mul(power(norm_xi_node(n), degree), on_sphere)), degree)


# ---------------------------------------------------------------------------
# text form

_FUNCS = ("exp", "sin", "cos", "sqrt")
_CONSTS = {"pi": math.pi, "I": 1j}


@dataclass
class _Tok:
    kind: str
    text: str
    pos: int


def _tokenize(text: str) -> list:
    toks = []
    i = 0
    while i < len(text):
        ch = text[i]
        if ch.isspace():
            i += 1
            continue
        if ch.isdigit() or (ch == "." and i + 1 < len(text) and text[i + 1].isdigit()):
            j = i
            while j < len(text) and (text[j].isdigit() or text[j] == "."):
                j += 1
            if j < len(text) and text[j] in "eE":
                k = j + 1
                if k < len(text) and text[k] in "+-":
                    k += 1
                if k < len(text) and text[k].isdigit():
                    j = k
                    while j < len(text) and text[j].isdigit():
                        j += 1
            toks.append(_Tok("num", text[i:j], i))
            i = j
            continue
        if ch.isalpha() or ch == "_":
            j = i
            while j < len(text) and (text[j].isalnum() or text[j] == "_"):
                j += 1
            toks.append(_Tok("id", text[i:j], i))
            i = j
            continue
        if ch in "+-*/^(),":
            toks.append(_Tok(ch, ch, i))
            i += 1
            continue
        raise ParseError(f"unexpected character {ch!r}", i)
    toks.append(_Tok("end", "", len(text)))
    return toks


class _Parser:
    def __init__(self, text, coords, n):
        self.toks = _tokenize(text)
        self.i = 0
        self.coords = coords
        self.n = n

    def peek(self):
        return self.toks[self.i]

    def take(self, kind=None):
        tok = self.toks[self.i]
        if kind is not None and tok.kind != kind:
            want = "end of input" if kind == "end" else repr(kind)
            got = "end of input" if tok.kind == "end" else repr(tok.text)
            raise ParseError(f"expected {want}, got {got}", tok.pos)
        self.i += 1
        return tok

    def expr(self):
        node = self.term()
        while self.peek().kind in "+-" and self.peek().kind != "end":
            op = self.take().kind
            rhs = self.term()
            node = add(node, rhs if op == "+" else mul(const(-1.0), rhs))
        return node

    def term(self):
        node = self.unary()
        while self.peek().kind in ("*", "/"):
            op = self.take().kind
            rhs = self.unary()
            node = mul(node, rhs if op == "*" else power(rhs, -1))
        return node

    def unary(self):
        if self.peek().kind == "-":
            self.take()
            return mul(const(-1.0), self.unary())
        if self.peek().kind == "+":
            self.take()
            return self.unary()
        return self.power()

    def power(self):
        base = self.atom()
        if self.peek().kind == "^":
            self.take()
            base = power(base, self.exponent())
        return base

    def exponent(self) -> Fraction:
        tok = self.peek()
        paren = tok.kind == "("
        if paren:
            self.take()
        sign = 1
        if self.peek().kind == "-":
            self.take()
            sign = -1
        num = self.take("num")
        value = Fraction(num.text)
        if paren and self.peek().kind == "/":
            self.take()
            den = self.take("num")
            value = value / Fraction(den.text)
        if paren:
            self.take(")")
        return sign * value

    def atom(self):
        tok = self.take()
        if tok.kind == "num":
            return const(float(tok.text))
        if tok.kind == "(":
            node = self.expr()
            self.take(")")
            return node
        if tok.kind == "id":
            name = tok.text
            if name in _FUNCS:
                lp = self.take("(")
                args = [] if self.peek().kind == ")" else [self.expr()]
                while self.peek().kind == ",":
                    self.take()
                    args.append(self.expr())
                self.take(")")
                if len(args) != 1:
                    raise ParseError(f"{name} takes 1 argument, got {len(args)}", lp.pos)
                if name == "sqrt":
                    return power(args[0], Fraction(1, 2))
                return func(name, args[0])
            if self.peek().kind == "(":
                raise ParseError(f"unknown function {name!r}", tok.pos)
            if name in self.coords:
                return var(name)
            if name == "norm_xi" and self.n > 0:
                return norm_xi_node(self.n)
            if name in _CONSTS:
                return const(_CONSTS[name])
            raise ParseError(f"unknown identifier {name!r}", tok.pos)
        what = "end of input" if tok.kind == "end" else repr(tok.text)
        raise ParseError(f"unexpected {what}", tok.pos)


def parse_expression(text: str, dim: int | None = None, coords: Sequence[str] | None = None
                     ) -> ScalarField:
    """Parse ``text`` over the cotangent coordinates of R^dim (or explicit ``coords``)."""
    if coords is None:
        if dim is None or dim < 1:
            raise ValueError("dim must be a positive integer")
        coords = cotangent_coords(dim)
    coords = tuple(coords)
    n = len([c for c in coords if c.startswith("xi")])
    p = _Parser(text, coords, n)
    node = p.expr()
    p.take("end")
    return ScalarField(node, coords)


def _fmt_num(v) -> str:
    if isinstance(v, complex):
        sign = "-" if math.copysign(1.0, v.imag) < 0 else "+"
        return f"({v.real!r}{sign}{abs(v.imag)!r}*I)"
    s = repr(float(v))
    if s in ("inf", "-inf", "nan"):
        raise ValueError(f"cannot write non-finite constant {s}")
    return f"({s})" if s.startswith("-") or "e" in s else s


def _fmt_exp(e: Fraction) -> str:
    if e.denominator == 1 and e > 0:
        return str(e.numerator)
    if e.denominator == 1:
        return f"({e.numerator})"
    return f"({e.numerator}/{e.denominator})"


def _unparse(node: Node) -> str:
    if isinstance(node, Const):
        return _fmt_num(node.value)
    if isinstance(node, Var):
        return node.name
    if isinstance(node, NormXi):
        return "norm_xi"
    if isinstance(node, Add):
        return "(" + " + ".join(_unparse(t) for t in node.terms) + ")"
    if isinstance(node, Mul):
        parts = [_unparse(f) for f in node.factors]
        if node.coeff != 1:
            parts.insert(0, _fmt_num(node.coeff))
        return "(" + "*".join(parts) + ")"
    if isinstance(node, Pow):
        return f"({_unparse(node.base)})^{_fmt_exp(node.exp)}"
    if isinstance(node, Func):
        return f"{node.name}({_unparse(node.arg)})"
    raise TypeError("numeric fields have no text form")


def unparse(f: ScalarField) -> str:
    return _unparse(f.node)
