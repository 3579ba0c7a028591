"""Homogeneous contact transformations of T*R^n minus the zero section.

Points are stacked arrays ``Z`` of shape ``(..., 2n)`` holding ``(x, xi)``.
A :class:`ContactDiffeo` stores numeric forward and inverse maps together
with optional Jacobian routines; flows carry exact Jacobians of the discrete
RK4 map, obtained by integrating the variational equation alongside.

Chart convention.  A degree-1 Hamiltonian ``H(x, alpha)`` generates the map
``(y, eta) -> (x, xi)`` defined by

    x = y + dH/dalpha(x, eta),    xi = eta - dH/dx(x, eta),

which is the canonical transformation with generating function
``<x, eta> - H(x, eta)``.  Conversely a diffeo ``f`` near the identity has
phase ``H_f(x, alpha) = -<alpha, pi(f^{-1}(x, alpha)) - x>``.  Translations
correspond to linear Hamiltonians and the time-1 cogeodesic flow to |alpha|.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .expr import (HomogeneousField, ScalarField, cotangent_coords, extend_homogeneous,
                   restrict_to_sphere, sample_cotangent)
from .geometry import hamiltonian_vector_field

__all__ = [
    "SolverConfig",
    "ContactDiffeo",
    "ContactReport",
    "FlowError",
    "SmallnessError",
    "ConvergenceError",
    "identity",
    "translation",
    "flow",
    "verify_contact",
    "compose",
    "invert",
    "diffeo_to_phase",
    "phase_to_diffeo",
    "chart_psi",
    "conformal_factor",
    "reconstruct_from_sphere",
    "max_deviation",
]


class FlowError(RuntimeError):
    pass


class SmallnessError(ValueError):
    pass


class ConvergenceError(RuntimeError):
    pass


@dataclass(frozen=True)
class SolverConfig:
    contact_tol: float = 1e-6
    fixed_point_tol: float = 1e-10
    max_iterations: int = 100
    smallness_threshold: float = 0.5
    rk4_steps: int = 400
    max_displacement: float = 4.0
    contraction_limit: float = 0.9

    def __post_init__(self):
        for name in ("contact_tol", "fixed_point_tol", "max_iterations", "smallness_threshold",
                     "rk4_steps", "max_displacement", "contraction_limit"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")


MapFn = Callable[[np.ndarray], np.ndarray]
JacFn = Callable[[np.ndarray], tuple]


def _fd_jacobian(fn: MapFn, Z: np.ndarray, h: float = 1e-6) -> tuple:
    Z = np.asarray(Z, dtype=float)
    d = Z.shape[-1]
    W = fn(Z)
    J = np.empty(Z.shape + (d,))
    for j in range(d):
        e = np.zeros(d)
        e[j] = h
        J[..., :, j] = (fn(Z + e) - fn(Z - e)) / (2 * h)
    return W, J


@dataclass(frozen=True, eq=False)
class ContactDiffeo:
    """A homogeneous contact diffeo stored as forward and inverse maps."""

    n: int
    forward: MapFn
    inverse: MapFn
    provenance: str
    forward_jac: Optional[JacFn] = None
    inverse_jac: Optional[JacFn] = None
    descriptor: dict = field(default_factory=dict)

    def __call__(self, Z) -> np.ndarray:
        return self.forward(np.asarray(Z, dtype=float))

    def apply_inverse(self, Z) -> np.ndarray:
        return self.inverse(np.asarray(Z, dtype=float))

    def jacobian(self, Z) -> tuple:
        """(f(Z), Df(Z)); exact when a Jacobian routine is stored, else central differences."""
        Z = np.asarray(Z, dtype=float)
        if self.forward_jac is not None:
            return self.forward_jac(Z)
        return _fd_jacobian(self.forward, Z)

    def inverse_jacobian(self, Z) -> tuple:
        Z = np.asarray(Z, dtype=float)
        if self.inverse_jac is not None:
            return self.inverse_jac(Z)
        return _fd_jacobian(self.inverse, Z)

    def __repr__(self):
        return f"ContactDiffeo(n={self.n}, provenance={self.provenance!r}, {self.descriptor})"


def identity(n: int) -> ContactDiffeo:
    def fwd(Z):
        return np.array(Z, dtype=float, copy=True)

    def jac(Z):
        return fwd(Z), np.broadcast_to(np.eye(2 * n), Z.shape + (2 * n,)).copy()

    return ContactDiffeo(n, fwd, fwd, "identity", jac, jac)


def translation(c) -> ContactDiffeo:
    """(x, xi) -> (x + c, xi), the time-1 flow of <c, xi>."""
    c = np.atleast_1d(np.asarray(c, dtype=float))
    n = c.size
    shift = np.concatenate([c, np.zeros(n)])

    def fwd(Z):
        return Z + shift

    def inv(Z):
        return Z - shift

    def jf(Z):
        return fwd(Z), np.broadcast_to(np.eye(2 * n), Z.shape + (2 * n,)).copy()

    def ji(Z):
        return inv(Z), np.broadcast_to(np.eye(2 * n), Z.shape + (2 * n,)).copy()

    return ContactDiffeo(n, fwd, inv, "flow", jf, ji, {"translation": c.tolist()})


# ---------------------------------------------------------------------------
# flows


def _hamiltonian_parts(H):
    base = H.base if isinstance(H, HomogeneousField) else H
    X = hamiltonian_vector_field(base)
    coords = X.coords
    DX = [[c.diff(v) for v in coords] for c in X.components]
    return X, DX


def _field_at(comps, Z):
    return np.stack([np.broadcast_to(np.real(c.at(Z)), Z.shape[:-1]) for c in comps], axis=-1)


def _matrix_at(rows, Z):
    return np.stack([_field_at(row, Z) for row in rows], axis=-2)


def _rk4(X, DX, Z, t, steps, with_jac):
    n2 = Z.shape[-1]
    n = n2 // 2
    h = t / steps
    J = np.broadcast_to(np.eye(n2), Z.shape + (n2,)).copy() if with_jac else None

    def rhs(Z, J):
        if np.any(np.linalg.norm(Z[..., n:], axis=-1) < 1e-12):
            raise FlowError("trajectory reached the zero section xi = 0")
        v = _field_at(X.components, Z)
        if J is None:
            return v, None
        return v, _matrix_at(DX, Z) @ J

    for _ in range(steps):
        k1, K1 = rhs(Z, J)
        k2, K2 = rhs(Z + 0.5 * h * k1, None if J is None else J + 0.5 * h * K1)
        k3, K3 = rhs(Z + 0.5 * h * k2, None if J is None else J + 0.5 * h * K2)
        k4, K4 = rhs(Z + h * k3, None if J is None else J + h * K3)
        Z = Z + (h / 6) * (k1 + 2 * k2 + 2 * k3 + k4)
        if J is not None:
            J = J + (h / 6) * (K1 + 2 * K2 + 2 * K3 + K4)
    return Z, J


def flow(H, t: float, cfg: SolverConfig | None = None, steps: int | None = None) -> ContactDiffeo:
    """Time-t flow of the Hamiltonian field of a degree-1 H, by RK4.

    The inverse is the backward flow. Jacobians come from the variational
    equation integrated by the same RK4 scheme, so they are the exact
    derivatives of the discrete maps.
    """
    cfg = cfg or SolverConfig()
    steps = steps or cfg.rk4_steps
    X, DX = _hamiltonian_parts(H)
    n = len(X.coords) // 2
    if all(c.is_zero for c in X.components) or t == 0:
        out = identity(n)
        return ContactDiffeo(n, out.forward, out.inverse, "flow", out.forward_jac,
                             out.inverse_jac, {"H": H, "t": t, "steps": steps})

    def make(tt):
        def fwd(Z):
            Z = np.asarray(Z, dtype=float)
            return _rk4(X, DX, Z, tt, steps, False)[0]

        def jac(Z):
            Z = np.asarray(Z, dtype=float)
            return _rk4(X, DX, Z, tt, steps, True)

        return fwd, jac

    f, jf = make(t)
    g, jg = make(-t)
    return ContactDiffeo(n, f, g, "flow", jf, jg, {"H": H, "t": t, "steps": steps})


# ---------------------------------------------------------------------------
# verification


@dataclass
class ContactReport:
    residuals: dict
    tolerances: dict

    @property
    def passed(self) -> dict:
        return {k: self.residuals[k] <= self.tolerances[k] for k in self.residuals}

    @property
    def ok(self) -> bool:
        return all(self.passed.values())


def contact_residuals(f: ContactDiffeo, Z: np.ndarray, V: np.ndarray) -> dict:
    """Pullback residuals |(f*theta - theta)(v)| and |f*omega - omega| at points Z."""
    n = f.n
    W, J = f.jacobian(Z)
    FV = np.einsum("...ij,...j->...i", J, V)
    theta = np.abs(np.einsum("...i,...i->...", W[..., n:], FV[..., :n])
                   - np.einsum("...i,...i->...", Z[..., n:], V[..., :n]))
    Om = np.zeros((2 * n, 2 * n))
    Om[:n, n:] = np.eye(n)
    Om[n:, :n] = -np.eye(n)
    omega = np.abs(np.swapaxes(J, -1, -2) @ Om @ J - Om).max(axis=(-1, -2))
    return {"theta": float(np.max(theta)), "omega": float(np.max(omega))}


def homogeneity_residual(f: ContactDiffeo, Z: np.ndarray) -> float:
    n = f.n
    W = f(Z)
    worst = 0.0
    for lam in (0.5, 2.0):
        S = Z.copy()
        S[..., n:] *= lam
        WS = f(S)
        expected = W.copy()
        expected[..., n:] *= lam
        rel = np.abs(WS - expected) / (1.0 + np.abs(expected))
        worst = max(worst, float(np.max(rel)))
    return worst


def verify_contact(f: ContactDiffeo, samples: int = 200, tol: float | None = None,
                   seed: int = 0) -> ContactReport:
    """Residuals of f*theta = theta, f*omega = omega, homogeneity and f o f^{-1} = id."""
    tol = SolverConfig().contact_tol if tol is None else tol
    rng = np.random.default_rng(seed)
    x, xi = sample_cotangent(f.n, samples, rng)
    Z = np.concatenate([x, xi], axis=-1)
    V = rng.normal(size=Z.shape)
    res = contact_residuals(f, Z, V)
    res["homogeneity"] = homogeneity_residual(f, Z)
    res["inverse"] = float(np.max(np.abs(f(f.apply_inverse(Z)) - Z)))
    tols = {"theta": tol, "omega": tol, "homogeneity": 1e-9, "inverse": 1e-8}
    return ContactReport(res, tols)


def max_deviation(f: ContactDiffeo, g: ContactDiffeo, Z: np.ndarray) -> float:
    return float(np.max(np.abs(f(Z) - g(Z))))


# ---------------------------------------------------------------------------
# group operations


def _compose_jac(outer: JacFn | None, inner: JacFn | None, outer_fn, inner_fn):
    def jac(Z):
        Wi, Ji = inner(Z) if inner is not None else _fd_jacobian(inner_fn, Z)
        Wo, Jo = outer(Wi) if outer is not None else _fd_jacobian(outer_fn, Wi)
        return Wo, Jo @ Ji

    return jac


def compose(f: ContactDiffeo, g: ContactDiffeo) -> ContactDiffeo:
    """The map f o g (apply g first)."""
    if f.n != g.n:
        raise ValueError("dimension mismatch")
    if f.provenance == "identity":
        return g
    if g.provenance == "identity":
        return f

    def fwd(Z):
        return f.forward(g.forward(Z))

    def inv(Z):
        return g.inverse(f.inverse(Z))

    return ContactDiffeo(f.n, fwd, inv, "composed",
                         _compose_jac(f.forward_jac, g.forward_jac, f.forward, g.forward),
                         _compose_jac(g.inverse_jac, f.inverse_jac, g.inverse, f.inverse),
                         {"outer": f, "inner": g})


def invert(f: ContactDiffeo) -> ContactDiffeo:
    desc = dict(f.descriptor)
    if f.provenance == "flow" and "t" in desc:
        desc["t"] = -desc["t"]
    elif "translation" in desc:
        desc["translation"] = [-c for c in desc["translation"]]
    else:
        desc = {"inverse_of": f}
    return ContactDiffeo(f.n, f.inverse, f.forward, f.provenance, f.inverse_jac,
                         f.forward_jac, desc)


# ---------------------------------------------------------------------------
# chart correspondence


def _unit_samples(n, count, seed):
    rng = np.random.default_rng(seed)
    x, xi = sample_cotangent(n, count, rng)
    xi /= np.linalg.norm(xi, axis=-1, keepdims=True)
    return np.concatenate([x, xi], axis=-1)


def diffeo_to_phase(f: ContactDiffeo, cfg: SolverConfig | None = None,
                    samples: int = 64, seed: int = 0) -> HomogeneousField:
    """H_f(x, alpha) = -<alpha, pi(f^{-1}(x, alpha)) - x>, a degree-1 field.

    The result is an opaque numeric field (derivatives by high-order finite
    differences). Raises SmallnessError if the sampled base-point
    displacement of f^{-1} on the unit cosphere exceeds cfg.max_displacement.
    """
    cfg = cfg or SolverConfig()
    n = f.n
    if f.provenance == "identity":
        return HomogeneousField(ScalarField.constant(0.0, cotangent_coords(n)), 1)
    Z = _unit_samples(n, samples, seed)
    disp = np.linalg.norm(f.apply_inverse(Z)[..., :n] - Z[..., :n], axis=-1)
    if np.max(disp) > cfg.max_displacement:
        raise SmallnessError(f"displacement {np.max(disp):.3g} exceeds "
                             f"{cfg.max_displacement:.3g}: outside the chart")

    def H(Z):
        Z = np.asarray(Z, dtype=float)
        W = f.apply_inverse(Z)
        return -np.einsum("...i,...i->...", Z[..., n:], W[..., :n] - Z[..., :n])

    return HomogeneousField(ScalarField.from_callable(H, cotangent_coords(n), "H_f"), 1)


class _PhaseDerivs:
    """Numeric first and second derivatives of a degree-1 Hamiltonian."""

    def __init__(self, H: ScalarField):
        n = H.dim
        self.n = n
        xs = [f"x{i}" for i in range(1, n + 1)]
        ps = [f"xi{i}" for i in range(1, n + 1)]
        self.Hx = [H.diff(v) for v in xs]
        self.Ha = [H.diff(v) for v in ps]
        self.Hax = [[d.diff(v) for v in xs] for d in self.Ha]  # d/dx of H_alpha
        self.Haa = [[d.diff(v) for v in ps] for d in self.Ha]
        self.Hxx = [[d.diff(v) for v in xs] for d in self.Hx]
        self.Hxa = [[d.diff(v) for v in ps] for d in self.Hx]

    @staticmethod
    def vec(fields, Z):
        return _field_at(fields, Z)

    @staticmethod
    def mat(rows, Z):
        return _matrix_at(rows, Z)


def _mixed_norm(D: _PhaseDerivs, samples=64, seed=0) -> float:
    Z = _unit_samples(D.n, samples, seed)
    return float(np.max(np.linalg.norm(D.mat(D.Hxa, Z), ord=2, axis=(-1, -2))))


def _solve(step, jac_step, u0, cfg: SolverConfig, what: str):
    """Fixed-point iteration u <- step(u) with Newton polish on slow convergence."""
    u = u0
    prev = None
    ratio = 0.0
    for it in range(cfg.max_iterations):
        new = step(u)
        delta = float(np.max(np.abs(new - u)))
        u = new
        if prev is not None and prev > 1e-300 and delta > 1e-14:
            ratio = max(ratio, delta / prev)
            if it >= 2 and ratio >= cfg.contraction_limit:
                raise SmallnessError(f"{what}: fixed-point iteration does not contract "
                                     f"(ratio {ratio:.3g})")
        if delta <= cfg.fixed_point_tol * 1e-2:
            return u
        prev = delta
    # contracting but slow: Newton on u - step(u) = 0
    for _ in range(10):
        r = u - step(u)
        if float(np.max(np.abs(r))) <= cfg.fixed_point_tol * 1e-2:
            return u
        u = u - np.linalg.solve(jac_step(u), r[..., None])[..., 0]
    r = float(np.max(np.abs(u - step(u))))
    if r > cfg.fixed_point_tol:
        raise ConvergenceError(f"{what}: no convergence in {cfg.max_iterations} iterations "
                               f"(residual {r:.3g})")
    return u


def phase_to_diffeo(H, cfg: SolverConfig | None = None) -> ContactDiffeo:
    """The contact diffeo generated by a degree-1 phase H (or its sphere restriction).

    Forward (y, eta) -> (x, xi) solves x = y + H_alpha(x, eta) then sets
    xi = eta - H_x(x, eta). Inverse (x, xi) -> (y, eta) solves
    eta = xi + H_x(x, eta) then sets y = x - H_alpha(x, eta). Both solves
    are fixed-point iterations whose contraction constant is the mixed
    Hessian of H; a sampled guard refuses phases beyond the smallness
    threshold.
    """
    cfg = cfg or SolverConfig()
    if isinstance(H, HomogeneousField):
        if H.degree != 1:
            raise ValueError(f"phase must have degree 1, got {H.degree}")
        base = H.base
    else:
        base = extend_homogeneous(H, 1).base
    n = base.dim
    if base.is_zero:
        return ContactDiffeo(n, identity(n).forward, identity(n).inverse, "phase-solved",
                             identity(n).forward_jac, identity(n).inverse_jac, {"H": H})
    D = _PhaseDerivs(base)
    mixed = _mixed_norm(D)
    if mixed >= cfg.smallness_threshold:
        raise SmallnessError(f"mixed Hessian norm {mixed:.3g} exceeds smallness threshold "
                             f"{cfg.smallness_threshold:.3g}")
    eye = np.eye(n)

    def join(a, b):
        return np.concatenate([a, b], axis=-1)

    def solve_forward(Z):
        y, eta = Z[..., :n], Z[..., n:]

        def step(x):
            return y + D.vec(D.Ha, join(x, eta))

        def jac(x):
            return eye - D.mat(D.Hax, join(x, eta))

        x = _solve(step, jac, y.copy(), cfg, "forward solve")
        return x, eta

    def fwd(Z):
        Z = np.asarray(Z, dtype=float)
        x, eta = solve_forward(Z)
        P = join(x, eta)
        return join(x, eta - D.vec(D.Hx, P))

    def fwd_jac(Z):
        Z = np.asarray(Z, dtype=float)
        x, eta = solve_forward(Z)
        P = join(x, eta)
        A, B = D.mat(D.Hax, P), D.mat(D.Haa, P)
        Cxx, Cxa = D.mat(D.Hxx, P), D.mat(D.Hxa, P)
        Minv = np.linalg.inv(eye - A)
        dx_dy = Minv
        dx_de = Minv @ B
        J = np.empty(Z.shape + (2 * n,))
        J[..., :n, :n] = dx_dy
        J[..., :n, n:] = dx_de
        J[..., n:, :n] = -Cxx @ dx_dy
        J[..., n:, n:] = eye - Cxx @ dx_de - Cxa
        return join(x, eta - D.vec(D.Hx, P)), J

    def solve_inverse(Z):
        x, xi = Z[..., :n], Z[..., n:]

        def step(eta):
            return xi + D.vec(D.Hx, join(x, eta))

        def jac(eta):
            return eye - D.mat(D.Hxa, join(x, eta))

        eta = _solve(step, jac, xi.copy(), cfg, "inverse solve")
        return x, eta

    def inv(Z):
        Z = np.asarray(Z, dtype=float)
        x, eta = solve_inverse(Z)
        return join(x - D.vec(D.Ha, join(x, eta)), eta)

    def inv_jac(Z):
        Z = np.asarray(Z, dtype=float)
        x, eta = solve_inverse(Z)
        P = join(x, eta)
        Cxx, Cxa = D.mat(D.Hxx, P), D.mat(D.Hxa, P)
        A, B = D.mat(D.Hax, P), D.mat(D.Haa, P)
        Minv = np.linalg.inv(eye - Cxa)
        de_dx = Minv @ Cxx
        de_dxi = Minv
        J = np.empty(Z.shape + (2 * n,))
        J[..., n:, :n] = de_dx
        J[..., n:, n:] = de_dxi
        J[..., :n, :n] = eye - A - B @ de_dx
        J[..., :n, n:] = -B @ de_dxi
        return join(x - D.vec(D.Ha, P), eta), J

    return ContactDiffeo(n, fwd, inv, "phase-solved", fwd_jac, inv_jac, {"H": H})


def chart_psi(f: ContactDiffeo, cfg: SolverConfig | None = None) -> ScalarField:
    """Chart coordinate of f: its phase restricted to the unit cosphere bundle."""
    return restrict_to_sphere(diffeo_to_phase(f, cfg))


def conformal_factor(f: ContactDiffeo) -> ScalarField:
    """beta(x, alpha) = |alpha| / |eta| where f(x, alpha) = (y, eta); degree 0."""
    n = f.n

    def beta(Z):
        Z = np.asarray(Z, dtype=float)
        W = f(Z)
        return np.linalg.norm(Z[..., n:], axis=-1) / np.linalg.norm(W[..., n:], axis=-1)

    return ScalarField.from_callable(beta, cotangent_coords(n), "beta")


def reconstruct_from_sphere(f: ContactDiffeo, beta: ScalarField, Z) -> np.ndarray:
    """f(z) rebuilt from the sphere data: |z| beta(z/|z|)^{-1} times the unit part of f(z/|z|)."""
    n = f.n
    Z = np.asarray(Z, dtype=float)
    r = np.linalg.norm(Z[..., n:], axis=-1, keepdims=True)
    U = np.concatenate([Z[..., :n], Z[..., n:] / r], axis=-1)
    W = f(U)
    eta = W[..., n:] / np.linalg.norm(W[..., n:], axis=-1, keepdims=True)
    b = np.real(beta.at(U))[..., None]
    return np.concatenate([W[..., :n], r / b * eta], axis=-1)
