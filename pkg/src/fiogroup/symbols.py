"""Truncated polyhomogeneous symbols and their graded algebra.

A :class:`GradedSymbol` of order q and depth k holds homogeneous components
``a_q, a_{q-1}, ..., a_{q-k}``; arithmetic happens in the quotient by
symbols of order below ``q - k``.  All recursions are exact expression-tree
identities; sampled evaluation only absorbs rounding.
"""

from __future__ import annotations

import functools
import itertools
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .expr import (HomogeneousField, ScalarField, check_homogeneity, cotangent_coords,
                   parse_expression, restrict_to_sphere, sample_cotangent)

__all__ = [
    "Convention",
    "STANDARD",
    "PRINTED",
    "EllipticityError",
    "GradedSymbol",
    "SobolevParams",
    "graded_compose",
    "adjoint",
    "is_uniformly_elliptic",
    "parametrix",
    "invert_in_quotient",
    "commutator",
    "composition_residual",
    "sobolev_distance",
    "same_component",
    "multi_indices",
]


class EllipticityError(ValueError):
    pass


@dataclass(frozen=True)
class Convention:
    """Unit factor kappa in the composition expansion and the argument order.

    ``standard``: sum kappa^|al|/al! d_xi^al a * d_x^al b with kappa = -i
    (Kohn-Nirenberg quantization).  ``printed``: kappa = 1 with the
    derivatives swapped, d_x^al a * d_xi^al b.
    """

    name: str
    kappa: complex
    xi_on_left: bool = True


STANDARD = Convention("standard", -1j, True)
PRINTED = Convention("printed", 1.0, False)


def multi_indices(n: int, order: int):
    """All multi-indices in N^n with |alpha| = order, in a fixed order."""
    for combo in itertools.combinations_with_replacement(range(n), order):
        alpha = [0] * n
        for i in combo:
            alpha[i] += 1
        yield tuple(alpha)


def _factorial(alpha) -> int:
    return math.prod(math.factorial(a) for a in alpha)


def _deriv(f: ScalarField, names: Sequence[str], alpha) -> ScalarField:
    for name, count in zip(names, alpha):
        for _ in range(count):
            if f.is_zero:
                return f
            f = f.diff(name)
    return f


@dataclass(frozen=True, eq=False)
class GradedSymbol:
    order: int
    components: tuple
    dim: int

    def __post_init__(self):
        if not self.components:
            raise ValueError("a graded symbol needs at least the principal component")
        coords = cotangent_coords(self.dim)
        for c in self.components:
            if c.coords != coords:
                raise ValueError(f"component lives on {c.coords}, expected {coords}")

    @property
    def depth(self) -> int:
        return len(self.components) - 1

    @property
    def coords(self) -> tuple:
        return cotangent_coords(self.dim)

    @property
    def principal(self) -> ScalarField:
        return self.components[0]

    def component(self, j: int) -> HomogeneousField:
        return HomogeneousField(self.components[j], self.order - j)

    @classmethod
    def constant(cls, value, n: int, depth: int = 0) -> "GradedSymbol":
        coords = cotangent_coords(n)
        comps = [ScalarField.constant(value, coords)]
        comps += [ScalarField.constant(0.0, coords)] * depth
        return cls(0, tuple(comps), n)

    @classmethod
    def identity(cls, n: int, depth: int = 0) -> "GradedSymbol":
        return cls.constant(1.0, n, depth)

    @classmethod
    def zero(cls, n: int, depth: int = 0, order: int = 0) -> "GradedSymbol":
        coords = cotangent_coords(n)
        return cls(order, tuple(ScalarField.constant(0.0, coords) for _ in range(depth + 1)), n)

    @classmethod
    def from_fields(cls, fields, order: int = 0) -> "GradedSymbol":
        fields = tuple(fields)
        return cls(order, fields, fields[0].dim)

    @classmethod
    def from_strings(cls, texts: Sequence[str], n: int, order: int = 0,
                     check: bool = True) -> "GradedSymbol":
        """Parse components in order of decreasing degree and check their homogeneity."""
        comps = tuple(parse_expression(t, dim=n) for t in texts)
        sym = cls(order, comps, n)
        if check:
            sym.validate()
        return sym

    def validate(self, samples: int = 50, seed: int = 0) -> None:
        for j, c in enumerate(self.components):
            if not c.is_zero and not check_homogeneity(c, self.order - j, samples, seed):
                raise ValueError(f"component {j} is not homogeneous of degree {self.order - j}")

    def truncate(self, depth: int) -> "GradedSymbol":
        return GradedSymbol(self.order, self.components[: depth + 1], self.dim)

    def _zip(self, other, op):
        if self.dim != other.dim or self.order != other.order:
            raise ValueError("symbols must share dimension and order")
        depth = min(self.depth, other.depth)
        return GradedSymbol(self.order, tuple(op(a, b) for a, b in zip(
            self.components[: depth + 1], other.components[: depth + 1])), self.dim)

    def __add__(self, other):
        return self._zip(other, lambda a, b: a + b)

    def __sub__(self, other):
        return self._zip(other, lambda a, b: a - b)

    def __neg__(self):
        return GradedSymbol(self.order, tuple(-c for c in self.components), self.dim)

    def scale(self, c) -> "GradedSymbol":
        return GradedSymbol(self.order, tuple(c * a for a in self.components), self.dim)

    def map(self, fn) -> "GradedSymbol":
        """Apply ``fn`` to every component (used for pullbacks)."""
        return GradedSymbol(self.order, tuple(fn(c) for c in self.components), self.dim)

    def at(self, Z) -> np.ndarray:
        """Component values at points Z, shape (depth + 1, ...)."""
        return np.stack([np.broadcast_to(c.at(Z), np.shape(Z)[:-1]) for c in self.components])

    def max_abs_difference(self, other, Z) -> float:
        depth = min(self.depth, other.depth)
        return float(np.max(np.abs(self.truncate(depth).at(Z) - other.truncate(depth).at(Z))))

    def __repr__(self):
        return f"GradedSymbol(order={self.order}, depth={self.depth}, {list(self.components)})"


def _compose_component(a_comps, b_comps, m: int, n: int, conv: Convention,
                       skip=None) -> ScalarField:
    """Degree (q1 + q2 - m) component of the composition expansion.

    ``skip`` names a pair (i, j) whose alpha = 0 term is left out.
    """
    xs = [f"x{i}" for i in range(1, n + 1)]
    ps = [f"xi{i}" for i in range(1, n + 1)]
    left_vars, right_vars = (ps, xs) if conv.xi_on_left else (xs, ps)
    total = ScalarField.constant(0.0, cotangent_coords(n))
    for order in range(m + 1):
        unit = conv.kappa ** order
        for alpha in multi_indices(n, order):
            coeff = unit / _factorial(alpha)
            for i in range(m - order + 1):
                j = m - order - i
                if order == 0 and skip == (i, j):
                    continue
                da = _deriv(a_comps[i], left_vars, alpha)
                if da.is_zero:
                    continue
                db = _deriv(b_comps[j], right_vars, alpha)
                if db.is_zero:
                    continue
                term = da * db
                total = total + (term if coeff == 1 else coeff * term)
    return total


def graded_compose(a: GradedSymbol, b: GradedSymbol,
                   convention: Convention = STANDARD) -> GradedSymbol:
    """Symbol of the composition a(x, D) b(x, D), truncated at the shared depth."""
    if a.dim != b.dim:
        raise ValueError(f"dimension mismatch: {a.dim} vs {b.dim}")
    depth = min(a.depth, b.depth)
    comps = tuple(_compose_component(a.components, b.components, m, a.dim, convention)
                  for m in range(depth + 1))
    return GradedSymbol(a.order + b.order, comps, a.dim)


def adjoint(a: GradedSymbol, convention: Convention = STANDARD) -> GradedSymbol:
    """Symbol of the formal adjoint: sum (-i)^|al|/al! d_xi^al d_x^al conj(a)."""
    if convention != STANDARD:
        raise ValueError("adjoint expansion is defined for the standard quantization only")
    n = a.dim
    xs = [f"x{i}" for i in range(1, n + 1)]
    ps = [f"xi{i}" for i in range(1, n + 1)]
    conj = [c.conj() for c in a.components]
    comps = []
    for m in range(a.depth + 1):
        total = ScalarField.constant(0.0, a.coords)
        for order in range(m + 1):
            j = m - order
            for alpha in multi_indices(n, order):
                d = _deriv(_deriv(conj[j], xs, alpha), ps, alpha)
                if d.is_zero:
                    continue
                coeff = (-1j) ** order / _factorial(alpha)
                total = total + (d if coeff == 1 else coeff * d)
        comps.append(total)
    return GradedSymbol(a.order, tuple(comps), n)


def _sphere_grid(n: int, count: int) -> np.ndarray:
    if n == 1:
        return np.array([[1.0], [-1.0]])
    if n == 2:
        t = np.linspace(0.0, 2 * np.pi, count, endpoint=False)
        return np.stack([np.cos(t), np.sin(t)], axis=-1)
    rng = np.random.default_rng(12345)
    v = rng.normal(size=(count, n))
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


def is_uniformly_elliptic(a: GradedSymbol, samples: int = 400, seed: int = 0,
                          threshold: float = 1e-10) -> tuple:
    """(elliptic, C1, C2): inf and sup of |a_q| on |xi| = 1 over sampled x.

    The x samples combine a grid through the origin, random points and probes
    at large |x| along the axes and diagonals.
    """
    n = a.dim
    rng = np.random.default_rng(seed)
    line = np.linspace(-3.0, 3.0, 13)
    if n <= 2:
        grid = np.stack(np.meshgrid(*([line] * n), indexing="ij"), axis=-1).reshape(-1, n)
    else:
        grid = np.zeros((1, n))
    far = []
    for r in (10.0, 100.0, 1e3):
        for d in itertools.product((-1.0, 0.0, 1.0), repeat=min(n, 3)):
            v = np.zeros(n)
            v[: len(d)] = d
            if np.any(v):
                far.append(r * v / np.linalg.norm(v))
    X = np.concatenate([grid, rng.uniform(-5, 5, size=(samples, n)), np.array(far)])
    S = _sphere_grid(n, 64)
    Z = np.concatenate([np.repeat(X, len(S), axis=0), np.tile(S, (len(X), 1))], axis=-1)
    vals = np.abs(a.principal.at(Z))
    c1, c2 = float(np.min(vals)), float(np.max(vals))
    return c1 > threshold, c1, c2


def _one_sided_inverse(a: GradedSymbol, left: bool, convention: Convention) -> GradedSymbol:
    n = a.dim
    a0 = a.principal
    inv0 = 1 / a0
    p = [inv0]
    zero = ScalarField.constant(0.0, a.coords)
    for m in range(1, a.depth + 1):
        trial = p + [zero]
        if left:
            rest = _compose_component(trial, a.components, m, n, convention, skip=(m, 0))
        else:
            rest = _compose_component(a.components, trial, m, n, convention, skip=(0, m))
        p.append(-(inv0 * rest))
    return GradedSymbol(-a.order, tuple(p), n)


def parametrix(a: GradedSymbol, convention: Convention = STANDARD, check: bool = True,
               left: bool = True) -> GradedSymbol:
    """Inverse in the graded quotient: p_q = 1/a_q and p_{-m} = -(1/a_q) * (rest of c_{-m})."""
    if check:
        ok, c1, _ = is_uniformly_elliptic(a)
        if not ok:
            raise EllipticityError(f"principal symbol is not uniformly elliptic (inf |a| = {c1:.3g})")
    return _one_sided_inverse(a, left, convention)


def composition_residual(p: GradedSymbol, a: GradedSymbol, Z,
                         convention: Convention = STANDARD) -> float:
    """max over components and points of |p * a - identity|."""
    c = graded_compose(p, a, convention)
    vals = c.at(Z)
    vals[0] = vals[0] - 1.0
    return float(np.max(np.abs(vals)))


@dataclass
class InverseReport:
    inverse: GradedSymbol
    left_residual: float
    right_residual: float
    left_right_gap: float


def invert_in_quotient(a: GradedSymbol, samples: int = 1000, seed: int = 0,
                       convention: Convention = STANDARD, return_report: bool = False):
    """Two-sided inverse in the quotient, verified at sampled points.

    The left parametrix is returned; the report records both residuals and
    the gap between the left and right parametrices.
    """
    p = parametrix(a, convention)
    rng = np.random.default_rng(seed)
    x, xi = sample_cotangent(a.dim, samples, rng)
    Z = np.concatenate([x, xi], axis=-1)
    report = InverseReport(
        p,
        composition_residual(p, a, Z, convention),
        composition_residual(a, p, Z, convention),
        p.max_abs_difference(_one_sided_inverse(a, False, convention), Z),
    )
    return report if return_report else p


def commutator(a: GradedSymbol, b: GradedSymbol,
               convention: Convention = STANDARD) -> GradedSymbol:
    return graded_compose(a, b, convention) - graded_compose(b, a, convention)


# ---------------------------------------------------------------------------
# Sobolev structure


@dataclass(frozen=True)
class SobolevParams:
    q: int = 0
    k: int = 0
    s: int = 2
    R: float = 6.0
    x_points: int = 97
    sphere_points: int = 16
    growth_ratio: float = 0.9

    def __post_init__(self):
        if self.R <= 0 or self.x_points < 3 or self.sphere_points < 1:
            raise ValueError("R, x_points and sphere_points must be positive")

    def check_dim(self, n: int) -> None:
        if self.s <= n:
            raise ValueError(f"Sobolev index s = {self.s} must exceed the dimension n = {n}")

    def refined(self) -> "SobolevParams":
        return SobolevParams(self.q, self.k, self.s, self.R, 2 * self.x_points - 1,
                             2 * self.sphere_points, self.growth_ratio)


@dataclass
class SobolevReport:
    distance: float
    components: list
    shells: list = field(default_factory=list)


def _box_weights(grid: np.ndarray, h: float, r: float) -> np.ndarray:
    w = np.where(np.abs(grid) < r - 1e-12, h, 0.0)
    w = np.where(np.abs(np.abs(grid) - r) <= 1e-12, h / 2, w)
    return w


def _sobolev_sq(diff: ScalarField, order: int, params: SobolevParams):
    """Squared Sobolev norm of a degree-0 field on R^n x S^{n-1} for three box radii."""
    n = diff.dim
    restricted = restrict_to_sphere(diff)
    R = params.R
    h = 2 * R / (params.x_points - 1)
    m = int(round(4 * R / h))
    line = np.arange(-m, m + 1) * h
    S = _sphere_grid(n, params.sphere_points)
    if n == 1:
        sw = np.ones(len(S))
    elif n == 2:
        sw = np.full(len(S), 2 * np.pi / len(S))
    else:
        area = 2 * np.pi ** (n / 2) / math.gamma(n / 2)
        sw = np.full(len(S), area / len(S))
    X = np.stack(np.meshgrid(*([line] * n), indexing="ij"), axis=-1).reshape(-1, n)
    Z = np.concatenate([np.repeat(X, len(S), axis=0), np.tile(S, (len(X), 1))], axis=-1)
    names = list(restricted.coords)
    acc = np.zeros(len(Z))
    for total in range(order + 1):
        for beta in multi_indices(2 * n, total):
            d = _deriv(restricted, names, beta)
            if d.is_zero:
                continue
            acc += np.abs(np.broadcast_to(d.at(Z), (len(Z),))) ** 2
    acc = acc.reshape(len(X), len(S)) @ sw
    out = []
    for r in (R, 2 * R, 4 * R):
        w1 = _box_weights(line, h, r)
        W = functools.reduce(np.multiply.outer, [w1] * n).reshape(-1)
        out.append(float(acc @ W))
    return out


def sobolev_distance(a: GradedSymbol, b: GradedSymbol, params: SobolevParams,
                     return_report: bool = False):
    """Graded Sobolev distance between two symbols of equal order and depth.

    Component j contributes its squared Sobolev norm of order q + k + s - j on
    R^n x S^{n-1}, computed on the box [-R, R]^n.  Derivatives are taken of
    the degree-0 extension in all 2n variables.  The integral is also formed
    on boxes of radius 2R and 4R; when the outer shell contributes at least
    ``growth_ratio`` times the inner shell (and is not negligible) the
    integral is declared divergent and the distance is infinite.
    """
    if a.dim != b.dim or a.order != b.order or a.depth != b.depth:
        raise ValueError("symbols must share dimension, order and depth")
    params.check_dim(a.dim)
    total = 0.0
    comps = []
    shells = []
    infinite = False
    for j, (u, v) in enumerate(zip(a.components, b.components)):
        # the norm is even in d; a fixed operand order makes the result exactly symmetric
        d = u - v if repr(u) <= repr(v) else v - u
        if d.is_zero:
            comps.append(0.0)
            shells.append((0.0, 0.0, 0.0))
            continue
        order = params.q + params.k + params.s - j
        i1, i2, i4 = _sobolev_sq(d, order, params)
        t1, t2 = i2 - i1, i4 - i2
        shells.append((i1, i2, i4))
        if t2 > 1e-10 * (1.0 + i4) and t2 >= params.growth_ratio * t1:
            infinite = True
            comps.append(math.inf)
            continue
        comps.append(i1)
        total += i1
    dist = math.inf if infinite else math.sqrt(total)
    if return_report:
        return SobolevReport(dist, comps, shells)
    return dist


def same_component(a: GradedSymbol, b: GradedSymbol, params: SobolevParams) -> bool:
    return math.isfinite(sobolev_distance(a, b, params))
