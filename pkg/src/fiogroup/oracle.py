"""Independent numerical checks by direct quadrature of operator integrals.

Operators are discretised as dense matrices on a periodic grid: a
pseudodifferential operator acts by

    Op(a)u(x) = (2 pi)^{-n} sum_xi e^{i x.xi} a(x, xi) u_hat(xi) dxi,

with ``u_hat`` the discrete Fourier transform, and the section operator of
a diffeo replaces ``e^{i x.xi}`` by ``e^{i (x.xi - H_f(x, xi))}``.  The
frequency sum is restricted to |xi| <= xi_cutoff with a smooth taper.

Homogeneous components are evaluated through their restriction to the unit
sphere.  Components of negative degree are multiplied by ``1 - chi(xi)``
with a smooth bump ``chi`` of radius ``cutoff``.  A degree-0 component that
depends on the direction of xi takes at xi = 0 the mean over the sampled
directions.

The grid supports n = 1 and n = 2; the n = 2 grids are small.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from .diffeo import SolverConfig, diffeo_to_phase, flow
from .expr import HomogeneousField, ScalarField, cotangent_coords
from .fio import (FioElement, FioTangent, invert, multiply, one_parameter, section_sigma,
                  tangent_bracket, transport)
from .geometry import hamiltonian_vector_field
from .symbols import PRINTED, STANDARD, Convention, GradedSymbol, graded_compose

__all__ = [
    "QuadratureConfig",
    "ResolutionError",
    "InconclusiveError",
    "gaussian",
    "relative_l2",
    "psdo_matrix",
    "section_matrix",
    "fio_matrix",
    "apply_psdo",
    "apply_fio",
    "composition_mismatch",
    "select_convention",
    "ConventionResult",
    "egorov_mismatch",
    "finite_difference",
    "bracket_fd_defect",
    "family_tangent_defect",
    "refinement_change",
]


class ResolutionError(RuntimeError):
    pass


class InconclusiveError(RuntimeError):
    pass


@dataclass(frozen=True)
class QuadratureConfig:
    n: int = 1
    L: float = 16.0
    N: int = 512
    xi_cutoff: float = 32.0
    cutoff: float = 1.0
    taper: float = 0.8
    refine_tol: float = 0.05

    def __post_init__(self):
        if self.n not in (1, 2):
            raise ValueError("quadrature grids support n = 1 and n = 2")
        if self.N <= 0 or self.xi_cutoff <= 0 or self.cutoff <= 0 or self.L <= 0:
            raise ValueError("N, L, xi_cutoff and cutoff must be positive")
        if self.N % 2:
            raise ValueError("N must be even")
        if self.xi_cutoff > np.pi * self.N / (2 * self.L):
            raise ValueError(f"xi_cutoff {self.xi_cutoff} exceeds the grid Nyquist frequency "
                             f"{np.pi * self.N / (2 * self.L):.3g}")

    def refined(self) -> "QuadratureConfig":
        """Double the grid density and the frequency cutoff."""
        return replace(self, N=2 * self.N, xi_cutoff=2 * self.xi_cutoff)


def _smooth_step(t):
    """C-infinity step: 0 for t <= 0, 1 for t >= 1."""
    t = np.clip(t, 0.0, 1.0)
    a = np.where(t > 0, np.exp(-1.0 / np.where(t > 0, t, 1.0)), 0.0)
    b = np.where(t < 1, np.exp(-1.0 / np.where(t < 1, 1 - t, 1.0)), 0.0)
    return a / (a + b)


@dataclass
class _Grid:
    x: np.ndarray        # (P, n)
    xi: np.ndarray       # (M, n)
    dx: float
    dxi: float
    forward: np.ndarray  # (M, P): e^{-i y.xi} dx^n
    taper: np.ndarray    # (M,)
    chi: np.ndarray      # (M,)


@functools.lru_cache(maxsize=8)
def _grid(cfg: QuadratureConfig) -> _Grid:
    n = cfg.n
    dx = 2 * cfg.L / cfg.N
    line = -cfg.L + dx * np.arange(cfg.N)
    dxi = np.pi / cfg.L
    freq = dxi * np.arange(-cfg.N // 2, cfg.N // 2)
    x = np.stack(np.meshgrid(*([line] * n), indexing="ij"), axis=-1).reshape(-1, n)
    xi = np.stack(np.meshgrid(*([freq] * n), indexing="ij"), axis=-1).reshape(-1, n)
    r = np.linalg.norm(xi, axis=-1)
    keep = r <= cfg.xi_cutoff
    xi, r = xi[keep], r[keep]
    taper = 1.0 - _smooth_step((r - cfg.taper * cfg.xi_cutoff)
                               / ((1 - cfg.taper) * cfg.xi_cutoff))
    chi = 1.0 - _smooth_step((r - 0.5 * cfg.cutoff) / (0.5 * cfg.cutoff))
    forward = np.exp(-1j * xi @ x.T) * dx ** n
    return _Grid(x, xi, dx, dxi, forward, taper, chi)


def gaussian(x0=0.0, xi0=0.0, width: float = 1.0) -> Callable:
    """u(x) = exp(-|x - x0|^2 / (2 width^2)) exp(i xi0.x)."""
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    xi0 = np.atleast_1d(np.asarray(xi0, dtype=float))

    def u(X):
        X = np.asarray(X, dtype=float)
        return np.exp(-np.sum((X - x0) ** 2, axis=-1) / (2 * width ** 2)
                      + 1j * (X @ xi0))

    return u


def relative_l2(u, v) -> float:
    return float(np.linalg.norm(np.asarray(u) - np.asarray(v)) / np.linalg.norm(v))


def _sample(u, g: _Grid) -> np.ndarray:
    return u(g.x) if callable(u) else np.asarray(u, dtype=complex)


def _on_directions(field: ScalarField, g: _Grid):
    """Values of a field at (x, xi/|xi|) for all grid pairs, shape (P, M)."""
    n = g.x.shape[1]
    r = np.linalg.norm(g.xi, axis=-1)
    nz = r > 0
    dirs = np.zeros_like(g.xi)
    dirs[nz] = g.xi[nz] / r[nz, None]
    uniq, inv = np.unique(np.round(dirs[nz], 12), axis=0, return_inverse=True)
    inv = inv.reshape(-1)
    P = len(g.x)
    Z = np.concatenate([np.repeat(g.x, len(uniq), axis=0), np.tile(uniq, (P, 1))], axis=-1)
    vals = np.broadcast_to(field.at(Z), (len(Z),)).reshape(P, len(uniq))
    out = np.empty((P, len(g.xi)), dtype=complex)
    out[:, nz] = vals[:, inv]
    if not np.all(nz):
        out[:, ~nz] = vals.mean(axis=1, keepdims=True)
    return out, r


def _amplitude(a: GradedSymbol, g: _Grid) -> np.ndarray:
    total = np.zeros((len(g.x), len(g.xi)), dtype=complex)
    for j, comp in enumerate(a.components):
        if comp.is_zero:
            continue
        deg = a.order - j
        vals, r = _on_directions(comp, g)
        if deg > 0:
            vals = vals * r ** deg
        elif deg < 0:
            safe = np.where(r > 0, r, 1.0)
            vals = vals * np.where(r > 0, safe ** deg, 0.0) * (1.0 - g.chi)
        total += vals
    return total


def psdo_matrix(a: GradedSymbol, cfg: QuadratureConfig) -> np.ndarray:
    if a.dim != cfg.n:
        raise ValueError("symbol dimension does not match the quadrature grid")
    g = _grid(cfg)
    kernel = np.exp(1j * g.x @ g.xi.T) * _amplitude(a, g) * g.taper
    return (g.dxi / (2 * np.pi)) ** cfg.n * kernel @ g.forward


def _phase_values(H: ScalarField, g: _Grid) -> np.ndarray:
    vals, r = _on_directions(H, g)
    return np.real(vals) * r


def section_matrix(f, cfg: QuadratureConfig, sol: SolverConfig | None = None) -> np.ndarray:
    """Matrix of the operator with phase <xi, x - y> - H_f(x, xi) and amplitude 1."""
    g = _grid(cfg)
    H = diffeo_to_phase(f, sol).base
    phase = g.x @ g.xi.T - _phase_values(H, g)
    return (g.dxi / (2 * np.pi)) ** cfg.n * (np.exp(1j * phase) * g.taper) @ g.forward


def fio_matrix(A: FioElement, cfg: QuadratureConfig, sol: SolverConfig | None = None):
    """Op(p) sigma(f) for the element (f, p)."""
    return psdo_matrix(A.p, cfg) @ section_matrix(A.f, cfg, sol)


def apply_psdo(a: GradedSymbol, u, cfg: QuadratureConfig | None = None,
               check_refinement: bool = False) -> np.ndarray:
    """Op(a)u sampled on the grid. ``u`` is a callable of x or grid samples."""
    cfg = cfg or QuadratureConfig(n=a.dim)
    out = psdo_matrix(a, cfg) @ _sample(u, _grid(cfg))
    if check_refinement:
        if not callable(u):
            raise ValueError("refinement check needs u as a callable")
        change = refinement_change(lambda c: psdo_matrix(a, c) @ _sample(u, _grid(c)), cfg)
        if change > cfg.refine_tol:
            raise ResolutionError(f"grid refinement changes the output by {change:.3g}")
    return out


def apply_fio(A: FioElement, u, cfg: QuadratureConfig | None = None,
              sol: SolverConfig | None = None) -> np.ndarray:
    cfg = cfg or QuadratureConfig(n=A.dim)
    return fio_matrix(A, cfg, sol) @ _sample(u, _grid(cfg))


def refinement_change(op: Callable[[QuadratureConfig], np.ndarray],
                      cfg: QuadratureConfig) -> float:
    """Relative L2 change of a grid output when N and the cutoff double.

    The finer output is subsampled at the coarse grid points.
    """
    coarse = op(cfg)
    fine = op(cfg.refined())
    n = cfg.n
    shape = (2 * cfg.N,) * n
    sub = fine.reshape(shape)[(slice(None, None, 2),) * n].reshape(-1)
    return relative_l2(sub, coarse)


def _test_functions(n: int):
    if n == 1:
        return [gaussian(0.0, 8.0, 1.5), gaussian(1.0, -6.0, 1.2), gaussian(-0.5, 10.0, 2.0)]
    return [gaussian([0.0, 0.0], [6.0, 2.0], 1.2), gaussian([0.5, -0.5], [-4.0, 5.0], 1.0)]


def composition_mismatch(a: GradedSymbol, b: GradedSymbol, cfg: QuadratureConfig,
                         convention: Convention = STANDARD, tests=None,
                         depth: int | None = None) -> float:
    """Largest relative L2 gap between Op(a * b)u and Op(a)Op(b)u over test functions.

    With ``depth`` the composed symbol is truncated there while a and b are
    used in full, which measures the size of the dropped terms.
    """
    g = _grid(cfg)
    c = graded_compose(a, b, convention)
    if depth is not None:
        c = c.truncate(depth)
    Mc = psdo_matrix(c, cfg)
    Mab = psdo_matrix(a, cfg) @ psdo_matrix(b, cfg)
    worst = 0.0
    for u in tests or _test_functions(cfg.n):
        v = _sample(u, g)
        worst = max(worst, relative_l2(Mc @ v, Mab @ v))
    return worst


@dataclass
class ConventionResult:
    choice: Convention | None
    errors: dict
    separation: float
    conclusive: bool
    details: list = field(default_factory=list)


def _default_pairs():
    n = 1
    d = GradedSymbol.from_strings(["xi1", "0"], n, order=1)
    g = GradedSymbol.from_strings(["exp(-x1^2)", "0"], n)
    return [(d, g), (g, d)]


def select_convention(pairs=None, cfg: QuadratureConfig | None = None, tests=None,
                      min_separation: float = 3.0, strict: bool = False) -> ConventionResult:
    """Pick the composition convention that matches operator composition.

    Each pair is composed with both conventions and compared with the
    product of quadrature matrices; errors are summed over pairs.  The
    choice is conclusive when the worse convention's error exceeds the
    better one's by ``min_separation``.  The default pairs are
    (xi, e^{-x^2}) and its swap in one dimension.
    """
    pairs = pairs or _default_pairs()
    cfg = cfg or QuadratureConfig(n=pairs[0][0].dim)
    errors = {STANDARD.name: 0.0, PRINTED.name: 0.0}
    details = []
    for a, b in pairs:
        row = {}
        for conv in (STANDARD, PRINTED):
            err = composition_mismatch(a, b, cfg, conv, tests)
            errors[conv.name] = max(errors[conv.name], err)
            row[conv.name] = err
        details.append(row)
    lo, hi = sorted(errors.values())
    separation = hi / lo if lo > 0 else (np.inf if hi > 0 else 1.0)
    conclusive = bool(separation >= min_separation)
    choice = None
    if conclusive:
        choice = STANDARD if errors[STANDARD.name] < errors[PRINTED.name] else PRINTED
    elif strict:
        raise InconclusiveError(f"conventions separated by only {separation:.3g}x")
    return ConventionResult(choice, errors, float(separation), conclusive, details)


def egorov_mismatch(f, P: GradedSymbol, cfg: QuadratureConfig | None = None, tests=None,
                    sol: SolverConfig | None = None) -> float:
    """Relative L2 gap between sigma(f) Op(P) sigma(f)^* u and Op(P o f^{-1}) u.

    The discrete adjoint stands in for the inverse of the section operator;
    it is exact when the phase does not depend on x.
    """
    cfg = cfg or QuadratureConfig(n=P.dim)
    g = _grid(cfg)
    S = section_matrix(f, cfg, sol)
    conj = S @ psdo_matrix(P, cfg) @ S.conj().T
    moved = psdo_matrix(transport(f, P), cfg)
    worst = 0.0
    for u in tests or _test_functions(cfg.n):
        v = _sample(u, g)
        worst = max(worst, relative_l2(conj @ v, moved @ v))
    return worst


def finite_difference(fn: Callable[[float], np.ndarray], t0: float = 0.0, h: float = 1e-3,
                      richardson: bool = True):
    """Central difference at t0, with one Richardson extrapolation step."""
    def central(step):
        return (np.asarray(fn(t0 + step)) - np.asarray(fn(t0 - step))) / (2 * step)

    if not richardson:
        return central(h)
    return (4 * central(h / 2) - central(h)) / 3


def bracket_fd_defect(T1: FioTangent, T2: FioTangent, Z, h: float = 0.02,
                      steps: int = 40) -> dict:
    """Compare tangent_bracket with the mixed derivative of t, s -> c1(t) c2(s) c1(t)^{-1}.

    Returns the max deviations of the diffeo part (against the Hamiltonian
    field of the bracket) and of the symbol part at points Z.
    """
    Z = np.asarray(Z, dtype=float)

    def conj(t, s):
        c1 = one_parameter(T1, t, steps=steps)
        c2 = one_parameter(T2, s, steps=steps)
        return multiply(multiply(c1, c2), invert(c1))

    def packed(t, s):
        A = conj(t, s)
        return np.concatenate([A.f(Z), np.real(A.p.principal.at(Z))[..., None]], axis=-1)

    mixed = finite_difference(lambda t: finite_difference(lambda s: packed(t, s), 0.0, h),
                              0.0, h)
    B = tangent_bracket(T1, T2)
    XK = hamiltonian_vector_field(B.hamiltonian_part.base).at(Z)
    sym = np.real(B.psdo_part.principal.at(Z))
    return {"diffeo": float(np.max(np.abs(mixed[..., :-1] - XK))),
            "symbol": float(np.max(np.abs(mixed[..., -1] - sym)))}


def family_tangent_defect(H: HomogeneousField, Z, h: float = 1e-3, steps: int = 40,
                          sol: SolverConfig | None = None) -> float:
    """max |d/dt H_{flow(H, t)} at t = 0 minus H| at points Z."""
    Z = np.asarray(Z, dtype=float)

    def phase(t):
        return np.real(diffeo_to_phase(flow(H, t, sol, steps=steps), sol).base.at(Z))

    return float(np.max(np.abs(finite_difference(phase, 0.0, h) - H.base.at(Z))))
