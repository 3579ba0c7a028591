"""Exterior calculus and contact geometry on flat coordinate models.

Two kinds of model are supported: the standard contact space R^{2n+1}
with coordinates ``x1..xn, y1..yn, z`` and contact form ``dz - sum y_i dx_i``,
and the cotangent space T*R^n with coordinates ``x1..xn, xi1..xin`` and
canonical form ``sum xi_i dx_i``.
"""

from __future__ import annotations

import itertools
import re
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from .expr import ScalarField, cotangent_coords, parse_expression, exp, sin, cos

__all__ = [
    "DegreeError",
    "NotContactError",
    "VectorField",
    "DifferentialForm",
    "MetricTensor",
    "PhiTensor",
    "ContactModel",
    "CotangentModel",
    "contact_model",
    "exterior_derivative",
    "interior_product",
    "lie_derivative",
    "wedge",
    "lie_bracket",
    "reeb_field",
    "associated_metric",
    "verify_associated",
    "operator_A",
    "operator_B",
    "hamiltonian_vector_field",
    "contact_bracket",
    "random_smooth_field",
    "random_vector_field",
]

MAX_DEGREE = 3


class DegreeError(ValueError):
    pass


class NotContactError(ValueError):
    pass


def _zero(coords):
    return ScalarField.constant(0.0, coords)


@dataclass(frozen=True)
class VectorField:
    components: tuple
    coords: tuple

    def __post_init__(self):
        if len(self.components) != len(self.coords):
            raise ValueError("component count must match the model dimension")

    @classmethod
    def zero(cls, coords):
        coords = tuple(coords)
        return cls(tuple(_zero(coords) for _ in coords), coords)

    @classmethod
    def coordinate(cls, name, coords):
        """The coordinate field d/d(name)."""
        coords = tuple(coords)
        return cls(tuple(ScalarField.constant(1.0 if c == name else 0.0, coords)
                         for c in coords), coords)

    def __call__(self, f: ScalarField) -> ScalarField:
        """Directional derivative X(f)."""
        out = _zero(self.coords)
        for c, comp in zip(self.coords, self.components):
            if not comp.is_zero:
                out = out + comp * f.diff(c)
        return out

    def __add__(self, other):
        return VectorField(tuple(a + b for a, b in zip(self.components, other.components)),
                           self.coords)

    def __sub__(self, other):
        return VectorField(tuple(a - b for a, b in zip(self.components, other.components)),
                           self.coords)

    def scale(self, f) -> "VectorField":
        return VectorField(tuple(c * f for c in self.components), self.coords)

    def at(self, Z) -> np.ndarray:
        Z = np.asarray(Z, dtype=float)
        return np.stack([np.broadcast_to(c.at(Z), Z.shape[:-1]) for c in self.components],
                        axis=-1)


@dataclass(frozen=True)
class DifferentialForm:
    """A k-form stored as coefficients on strictly increasing index tuples."""

    degree: int
    coeffs: Mapping[tuple, ScalarField]
    coords: tuple

    def __post_init__(self):
        if not 0 <= self.degree <= MAX_DEGREE:
            raise DegreeError(f"degree {self.degree} outside 0..{MAX_DEGREE}")
        for idx in self.coeffs:
            if len(idx) != self.degree or list(idx) != sorted(set(idx)):
                raise ValueError(f"bad index tuple {idx} for a {self.degree}-form")

    @classmethod
    def function(cls, f: ScalarField):
        return cls(0, {(): f}, f.coords)

    @classmethod
    def zero(cls, degree, coords):
        return cls(degree, {}, tuple(coords))

    @classmethod
    def from_terms(cls, degree, terms: Mapping, coords):
        """Build from {index tuple or coordinate-name tuple: field}."""
        coords = tuple(coords)
        coeffs: dict = {}
        for idx, f in terms.items():
            idx = tuple(coords.index(i) if isinstance(i, str) else i for i in idx)
            order = sorted(range(len(idx)), key=lambda k: idx[k])
            sign = _perm_sign(order)
            key = tuple(idx[k] for k in order)
            if len(set(key)) != len(key):
                continue
            f = f if isinstance(f, ScalarField) else ScalarField.constant(f, coords)
            coeffs[key] = coeffs[key] + sign * f if key in coeffs else sign * f
        return cls(degree, _prune(coeffs), coords)

    def component(self, idx) -> ScalarField:
        return self.coeffs.get(tuple(idx), _zero(self.coords))

    def __add__(self, other):
        _check_same(self, other)
        out = dict(self.coeffs)
        for k, v in other.coeffs.items():
            out[k] = out[k] + v if k in out else v
        return DifferentialForm(self.degree, _prune(out), self.coords)

    def __neg__(self):
        return DifferentialForm(self.degree, {k: -v for k, v in self.coeffs.items()},
                                self.coords)

    def __sub__(self, other):
        return self + (-other)

    def __mul__(self, f):
        """Multiply by a function (ScalarField or number)."""
        return DifferentialForm(self.degree, _prune({k: v * f for k, v in self.coeffs.items()}),
                                self.coords)

    __rmul__ = __mul__

    def at(self, Z, *vectors) -> np.ndarray:
        """Evaluate on tangent vectors (arrays of shape (..., d)) at points Z."""
        Z = np.asarray(Z, dtype=float)
        if len(vectors) != self.degree:
            raise DegreeError(f"a {self.degree}-form takes {self.degree} vectors")
        out = np.zeros(Z.shape[:-1], dtype=complex)
        for idx, f in self.coeffs.items():
            if self.degree == 0:
                det = 1.0
            else:
                M = np.stack([np.stack([v[..., i] for i in idx], axis=-1) for v in vectors],
                             axis=-2)
                det = np.linalg.det(M)
            out = out + f.at(Z) * det
        return out.real if not np.iscomplexobj(out) or np.all(out.imag == 0) else out

    def matrix(self, Z) -> np.ndarray:
        """Coefficient vector (1-form) or antisymmetric matrix (2-form) at Z."""
        Z = np.asarray(Z, dtype=float)
        d = len(self.coords)
        if self.degree == 1:
            out = np.zeros(Z.shape[:-1] + (d,))
            for (i,), f in self.coeffs.items():
                out[..., i] = np.real(f.at(Z))
            return out
        if self.degree == 2:
            out = np.zeros(Z.shape[:-1] + (d, d))
            for (i, j), f in self.coeffs.items():
                v = np.real(f.at(Z))
                out[..., i, j] = v
                out[..., j, i] = -v
            return out
        raise DegreeError("matrix form only for degrees 1 and 2")

    def max_abs(self, Z) -> float:
        """Largest coefficient magnitude over points Z (0 for the zero form)."""
        vals = [np.max(np.abs(f.at(Z))) for f in self.coeffs.values()]
        return float(max(vals, default=0.0))


def _check_same(a, b):
    if a.degree != b.degree or a.coords != b.coords:
        raise DegreeError(f"cannot combine a {a.degree}-form with a {b.degree}-form")


def _prune(coeffs):
    return {k: coeffs[k] for k in sorted(coeffs) if not coeffs[k].is_zero}


def _perm_sign(order) -> int:
    order = list(order)
    sign = 1
    for i in range(len(order)):
        for j in range(i + 1, len(order)):
            if order[i] > order[j]:
                sign = -sign
    return sign


def wedge(a: DifferentialForm, b: DifferentialForm) -> DifferentialForm:
    if a.coords != b.coords:
        raise ValueError("forms live on different models")
    deg = a.degree + b.degree
    if deg > MAX_DEGREE:
        raise DegreeError(f"wedge product of degree {deg} exceeds {MAX_DEGREE}")
    terms: dict = {}
    for I, f in a.coeffs.items():
        for J, g in b.coeffs.items():
            if set(I) & set(J):
                continue
            idx = I + J
            order = sorted(range(deg), key=lambda k: idx[k])
            key = tuple(idx[k] for k in order)
            term = _perm_sign(order) * (f * g)
            terms[key] = terms[key] + term if key in terms else term
    return DifferentialForm(deg, _prune(terms), a.coords)


def exterior_derivative(w: DifferentialForm) -> DifferentialForm:
    if w.degree >= MAX_DEGREE:
        raise DegreeError(f"d of a {w.degree}-form exceeds degree {MAX_DEGREE}")
    terms: dict = {}
    for I, f in w.coeffs.items():
        for j, c in enumerate(w.coords):
            if j in I:
                continue
            df = f.diff(c)
            if df.is_zero:
                continue
            pos = sum(1 for i in I if i < j)
            key = tuple(sorted(I + (j,)))
            term = df if pos % 2 == 0 else -df
            terms[key] = terms[key] + term if key in terms else term
    return DifferentialForm(w.degree + 1, _prune(terms), w.coords)


def interior_product(X: VectorField, w: DifferentialForm) -> DifferentialForm:
    if w.degree == 0:
        raise DegreeError("interior product of a 0-form is undefined")
    terms: dict = {}
    for I, f in w.coeffs.items():
        for r, i in enumerate(I):
            comp = X.components[i]
            if comp.is_zero:
                continue
            key = I[:r] + I[r + 1:]
            term = comp * f if r % 2 == 0 else -(comp * f)
            terms[key] = terms[key] + term if key in terms else term
    return DifferentialForm(w.degree - 1, _prune(terms), w.coords)


def lie_derivative(X: VectorField, w: DifferentialForm) -> DifferentialForm:
    """Cartan's formula L_X = i_X d + d i_X."""
    if w.degree > 2:
        raise DegreeError("Lie derivative implemented for degrees <= 2")
    if w.degree == 0:
        return DifferentialForm.function(X(w.component(())))
    return interior_product(X, exterior_derivative(w)) + exterior_derivative(interior_product(X, w))


def lie_bracket(X: VectorField, Y: VectorField) -> VectorField:
    return VectorField(tuple(X(b) - Y(a) for a, b in zip(X.components, Y.components)),
                       X.coords)


# ---------------------------------------------------------------------------
# tensors


class MetricTensor:
    """Symmetric (0,2) tensor, given by field entries or a pointwise callable."""

    def __init__(self, at: Callable[[np.ndarray], np.ndarray], dim: int, entries=None):
        self._at = at
        self.dim = dim
        self.entries = entries

    @classmethod
    def from_fields(cls, entries: Sequence[Sequence[ScalarField]]):
        d = len(entries)

        def at(Z):
            Z = np.asarray(Z, dtype=float)
            out = np.empty(Z.shape[:-1] + (d, d))
            for i in range(d):
                for j in range(d):
                    out[..., i, j] = np.real(entries[i][j].at(Z))
            return out

        return cls(at, d, entries)

    @classmethod
    def euclidean(cls, coords):
        d = len(coords)
        return cls.from_fields([[ScalarField.constant(float(i == j), coords) for j in range(d)]
                                for i in range(d)])

    def at(self, Z) -> np.ndarray:
        return self._at(np.asarray(Z, dtype=float))

    def is_symmetric(self, Z, tol=1e-12) -> bool:
        M = self.at(Z)
        return bool(np.max(np.abs(M - np.swapaxes(M, -1, -2))) <= tol)

    def is_positive_definite(self, Z) -> bool:
        try:
            np.linalg.cholesky(self.at(Z))
        except np.linalg.LinAlgError:
            return False
        return True


class PhiTensor(MetricTensor):
    """A (1,1) tensor; ``at`` returns the matrix acting on column vectors."""


@dataclass
class ContactModel:
    name: str
    n: int
    coords: tuple
    theta: DifferentialForm
    g0: MetricTensor
    reeb: VectorField
    dtheta: DifferentialForm = field(init=False)

    def __post_init__(self):
        self.dtheta = exterior_derivative(self.theta)

    @property
    def dimension(self) -> int:
        return 2 * self.n + 1

    def volume(self, Z) -> np.ndarray:
        """mu = theta ^ (d theta)^n evaluated on the coordinate frame."""
        Z = np.asarray(Z, dtype=float)
        d = self.dimension
        t = self.theta.matrix(Z)
        W = self.dtheta.matrix(Z)
        # top form coefficient: Pfaffian-style determinant of the bordered matrix
        M = np.zeros(Z.shape[:-1] + (d + 1, d + 1))
        M[..., :d, :d] = W
        M[..., :d, d] = t
        M[..., d, :d] = -t
        return np.sqrt(np.abs(np.linalg.det(M)))

    def sample(self, count, rng, radius=1.5) -> np.ndarray:
        return rng.uniform(-radius, radius, size=(count, self.dimension))


@dataclass
class CotangentModel:
    n: int
    coords: tuple
    theta: DifferentialForm
    omega: DifferentialForm

    @property
    def dimension(self) -> int:
        return 2 * self.n


def _contact_coords(n):
    return (tuple(f"x{i}" for i in range(1, n + 1)) + tuple(f"y{i}" for i in range(1, n + 1))
            + ("z",))


def contact_model(name: str, g0: Sequence[Sequence[str]] | None = None,
                  scale: float = 1.0):
    """Model by name: ``std-contact-3``, ``std-contact-5`` (any odd) or ``cotangent-n``.

    ``g0`` optionally gives the metric entries as expression strings over the
    model coordinates; ``scale`` multiplies the standard contact form.
    """
    m = re.fullmatch(r"std-contact-(\d+)", name)
    if m:
        d = int(m.group(1))
        if d < 3 or d % 2 == 0:
            raise ValueError(f"contact dimension must be odd and >= 3, got {d}")
        n = (d - 1) // 2
        coords = _contact_coords(n)
        terms = {("z",): ScalarField.constant(scale, coords)}
        for i in range(1, n + 1):
            terms[(f"x{i}",)] = -scale * ScalarField.coordinate(f"y{i}", coords)
        theta = DifferentialForm.from_terms(1, terms, coords)
        if g0 is None:
            metric = MetricTensor.euclidean(coords)
        else:
            metric = MetricTensor.from_fields([[parse_expression(e, coords=coords) for e in row]
                                               for row in g0])
        reeb = VectorField.coordinate("z", coords).scale(1.0 / scale)
        return ContactModel(name, n, coords, theta, metric, reeb)
    m = re.fullmatch(r"cotangent-(\d+)", name)
    if m:
        n = int(m.group(1))
        coords = cotangent_coords(n)
        theta = DifferentialForm.from_terms(
            1, {(f"x{i}",): ScalarField.coordinate(f"xi{i}", coords) for i in range(1, n + 1)},
            coords)
        return CotangentModel(n, coords, theta, -exterior_derivative(theta))
    raise ValueError(f"unknown model {name!r}")


def reeb_field(model: ContactModel, samples: int = 20, seed: int = 0,
               tol: float = 1e-10) -> VectorField:
    """The Reeb field; its defining equations are checked at sample points."""
    rng = np.random.default_rng(seed)
    Z = model.sample(samples, rng)
    if np.min(model.volume(Z)) <= 1e-12:
        raise NotContactError(f"{model.name}: theta ^ (d theta)^n vanishes")
    R = model.reeb.at(Z)
    t = model.theta.matrix(Z)
    W = model.dtheta.matrix(Z)
    if np.max(np.abs(np.einsum("...i,...i->...", t, R) - 1)) > tol or \
            np.max(np.abs(np.einsum("...i,...ij->...j", R, W))) > tol:
        raise NotContactError(f"{model.name}: stored Reeb field fails theta(R)=1, i_R dtheta=0")
    return model.reeb


# ---------------------------------------------------------------------------
# associated metric


def _associated_at(model: ContactModel, Z: np.ndarray):
    """Pointwise construction of (g, phi) at points Z of shape (m, d)."""
    d = model.dimension
    t = model.theta.matrix(Z)
    W = model.dtheta.matrix(Z)
    R = model.reeb.at(Z)
    G0 = model.g0.at(Z)
    eye = np.broadcast_to(np.eye(d), Z.shape[:-1] + (d, d))
    P = -eye + R[..., :, None] * t[..., None, :]
    h = np.swapaxes(P, -1, -2) @ G0 @ P + t[..., :, None] * t[..., None, :]
    # basis of ker theta: range of the projector along the Reeb direction
    U, _, _ = np.linalg.svd(eye - R[..., :, None] * t[..., None, :])
    X = U[..., :, : d - 1]
    M = np.swapaxes(X, -1, -2) @ h @ X
    L = np.linalg.cholesky(M)
    Xo = np.swapaxes(np.linalg.solve(L, np.swapaxes(X, -1, -2)), -1, -2)
    Omega = np.swapaxes(Xo, -1, -2) @ W @ Xo
    Uo, S, Vt = np.linalg.svd(Omega)
    if np.min(S) <= 1e-12 * max(1.0, float(np.max(S))):
        raise np.linalg.LinAlgError("d theta is degenerate on ker theta")
    F = Uo @ Vt
    G = np.swapaxes(Vt, -1, -2) @ (S[..., :, None] * Vt)
    B = np.concatenate([Xo, R[..., :, None]], axis=-1)
    Binv = np.linalg.inv(B)
    g_frame = np.zeros(Z.shape[:-1] + (d, d))
    g_frame[..., : d - 1, : d - 1] = G
    g_frame[..., d - 1, d - 1] = 1.0
    phi_frame = np.zeros(Z.shape[:-1] + (d, d))
    phi_frame[..., : d - 1, : d - 1] = F
    g = np.swapaxes(Binv, -1, -2) @ g_frame @ Binv
    phi = B @ phi_frame @ Binv
    return 0.5 * (g + np.swapaxes(g, -1, -2)), phi


def associated_metric(model: ContactModel):
    """Metric g and (1,1) tensor phi associated to the contact form.

    Built pointwise: the auxiliary metric h makes the Reeb field a unit normal
    of ker theta; in an h-orthonormal frame of ker theta the matrix of d theta
    is polar-decomposed as F G, and g = diag(G, 1), phi = diag(F, 0).
    """
    reeb_field(model)

    def g_at(Z):
        return _associated_at(model, np.asarray(Z, dtype=float))[0]

    def phi_at(Z):
        return _associated_at(model, np.asarray(Z, dtype=float))[1]

    d = model.dimension
    return MetricTensor(g_at, d), PhiTensor(phi_at, d)


@dataclass
class AssociatedReport:
    residuals: dict
    tol: float

    @property
    def passed(self) -> dict:
        return {k: v <= self.tol for k, v in self.residuals.items()}

    @property
    def ok(self) -> bool:
        return all(self.passed.values())

    def failures(self) -> list:
        return [k for k, v in self.passed.items() if not v]


def verify_associated(g: MetricTensor, phi: MetricTensor, model: ContactModel,
                      samples: int = 200, seed: int = 0, tol: float = 1e-8) -> AssociatedReport:
    """Residuals of the associated-metric conditions 1)-8) at random points/vectors."""
    rng = np.random.default_rng(seed)
    Z = model.sample(samples, rng)
    d = model.dimension
    X = rng.normal(size=(samples, d))
    Y = rng.normal(size=(samples, d))
    G = g.at(Z)
    Ph = phi.at(Z)
    t = model.theta.matrix(Z)
    W = model.dtheta.matrix(Z)
    R = model.reeb.at(Z)

    def gg(a, b):
        return np.einsum("...i,...ij,...j->...", a, G, b)

    def dth(a, b):
        return np.einsum("...i,...ij,...j->...", a, W, b)

    def th(a):
        return np.einsum("...i,...i->...", t, a)

    def ph(a):
        return np.einsum("...ij,...j->...i", Ph, a)

    E = X - th(X)[:, None] * R
    res = {
        "1_g(X,reeb)=theta(X)": np.abs(gg(X, R) - th(X)),
        "2_phi^2=-I+theta*reeb": np.abs(ph(ph(X)) + X - th(X)[:, None] * R).max(axis=-1),
        "3_dtheta(X,Y)=g(X,phiY)": np.abs(dth(X, Y) - gg(X, ph(Y))),
        "4_g(reeb,reeb)=1": np.abs(gg(R, R) - 1),
        "5_ker_theta_perp_reeb": np.abs(gg(E, R)),
        "6_phi(reeb)=0,phi(E)<E": np.maximum(np.abs(ph(R)).max(axis=-1), np.abs(th(ph(X)))),
        "7_dtheta(phiX,phiY)=dtheta(X,Y)": np.abs(dth(ph(X), ph(Y)) - dth(X, Y)),
        "8_g=theta*theta+dtheta(phi.,.)": np.abs(gg(X, Y) - th(X) * th(Y) - dth(ph(X), Y)),
    }
    try:
        np.linalg.cholesky(G)
        pd = 0.0
    except np.linalg.LinAlgError:
        pd = np.inf
    res["g_symmetric_positive"] = np.maximum(np.abs(G - np.swapaxes(G, -1, -2)).max(), pd)
    return AssociatedReport({k: float(np.max(v)) for k, v in res.items()}, tol)


# ---------------------------------------------------------------------------
# operators A, B and Hamiltonian structure


def operator_A(u: ScalarField, X: VectorField, model: ContactModel):
    """A(u, X) = (u theta + L_X theta, d(u theta) + d(i_X d theta))."""
    theta = model.theta
    u_theta = theta * u
    first = u_theta + lie_derivative(X, theta)
    second = exterior_derivative(u_theta) + exterior_derivative(
        interior_product(X, model.dtheta))
    return first, second


def operator_B(rho: DifferentialForm, sigma: DifferentialForm):
    """B(rho, sigma) = (d rho - sigma, d sigma)."""
    if rho.degree != 1 or sigma.degree != 2:
        raise DegreeError(f"B takes a 1-form and a 2-form, got degrees "
                          f"{rho.degree} and {sigma.degree}")
    return exterior_derivative(rho) - sigma, exterior_derivative(sigma)


def hamiltonian_vector_field(H, n: int | None = None) -> VectorField:
    """X_H = (dH/dxi, -dH/dx) on T*R^n, so that i_{X_H} omega = dH, omega = -d theta."""
    base = getattr(H, "base", H)
    n = base.dim if n is None else n
    coords = cotangent_coords(n)
    comps = [base.diff(f"xi{i}") for i in range(1, n + 1)]
    comps += [-base.diff(f"x{i}") for i in range(1, n + 1)]
    return VectorField(tuple(comps), coords)


def canonical_theta(n: int) -> DifferentialForm:
    return contact_model(f"cotangent-{n}").theta


def theta_of(X: VectorField) -> ScalarField:
    """theta(X) = sum xi_i X^{x_i} on T*R^n."""
    n = len(X.coords) // 2
    out = ScalarField.constant(0.0, X.coords)
    for i in range(n):
        out = out + ScalarField.coordinate(f"xi{i + 1}", X.coords) * X.components[i]
    return out


def contact_bracket(a, b):
    """[(X,u),(Y,v)] = ([X,Y], X(v) - Y(u))."""
    (X, u), (Y, v) = a, b
    return lie_bracket(X, Y), X(v) - Y(u)


# ---------------------------------------------------------------------------
# random smooth data for property checks


def random_smooth_field(coords, rng: np.random.Generator, terms: int = 3) -> ScalarField:
    coords = tuple(coords)
    d = len(coords)
    zs = [ScalarField.coordinate(c, coords) for c in coords]
    out = ScalarField.constant(float(rng.normal()), coords)
    for k in range(terms):
        w = rng.normal(size=d) * 0.7
        lin = sum((float(w[i]) * zs[i] for i in range(d)), ScalarField.constant(
            float(rng.uniform(0, 3)), coords))
        amp = float(rng.normal())
        kind = k % 3
        if kind == 0:
            term = sin(lin)
        elif kind == 1:
            term = cos(lin) * zs[int(rng.integers(d))]
        else:
            term = exp(-0.2 * zs[int(rng.integers(d))] ** 2)
        out = out + amp * term
    return out


def random_vector_field(coords, rng: np.random.Generator) -> VectorField:
    coords = tuple(coords)
    return VectorField(tuple(random_smooth_field(coords, rng, terms=2) for _ in coords), coords)
