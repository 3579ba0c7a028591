"""The group of invertible Fourier integral operator classes in chart form.

An element is a pair ``(f, p)``: a homogeneous contact diffeo and an
invertible graded symbol, standing for ``Op(p) sigma(f)`` where ``sigma(f)``
is the operator with phase ``<alpha, x - y> - H_f(x, alpha)`` and amplitude 1.
Moving ``Op(p)`` across ``sigma(f)`` transports its symbol by pullback along
``f^{-1}``; at depth 0 this gives the exact group law

    (f1, p1) (f2, p2) = (f1 o f2, p1 * (p2 o f1^{-1})).

For depth >= 1 the true conjugation carries stationary-phase corrections
that are not modelled, so products at positive depth are only available
behind an explicit experimental flag.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .diffeo import (ContactDiffeo, SolverConfig, SmallnessError, compose, diffeo_to_phase,
                     identity, invert as invert_diffeo, verify_contact)
from .expr import HomogeneousField, ScalarField, cotangent_coords, exp, sample_cotangent
from .geometry import contact_bracket, hamiltonian_vector_field, theta_of
from .symbols import (STANDARD, EllipticityError, GradedSymbol, commutator, graded_compose,
                      invert_in_quotient, is_uniformly_elliptic)

__all__ = [
    "ExperimentalDepthError",
    "FioElement",
    "FioTangent",
    "section_sigma",
    "project_pi",
    "embed_j",
    "transport",
    "multiply",
    "invert",
    "identity_element",
    "chart_psi_at",
    "chart_psi_inverse",
    "transition_direct",
    "element_deviation",
    "exact_sequence_check",
    "algebra_split",
    "tangent_bracket",
    "one_parameter",
    "associativity_defect",
]


class ExperimentalDepthError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class FioElement:
    f: ContactDiffeo
    p: GradedSymbol

    @property
    def depth(self) -> int:
        return self.p.depth

    @property
    def dim(self) -> int:
        return self.f.n

    def check(self) -> None:
        """Raise unless the symbol part is uniformly elliptic."""
        ok, c1, _ = is_uniformly_elliptic(self.p)
        if not ok:
            raise EllipticityError(f"symbol part is not elliptic (inf |p| = {c1:.3g})")

    def __mul__(self, other):
        return multiply(self, other)

    def __repr__(self):
        return f"FioElement({self.f!r}, depth={self.depth})"


@dataclass(frozen=True, eq=False)
class FioTangent:
    """Tangent vector at the identity: a real degree-1 Hamiltonian and a symbol direction.

    The Hamiltonian part H stands for the direction iH of the operator
    family; only the real H is stored.
    """

    hamiltonian_part: HomogeneousField
    psdo_part: GradedSymbol

    def __post_init__(self):
        if self.hamiltonian_part.degree != 1:
            raise ValueError("the Hamiltonian part must have degree 1")


def _pullback_field(c: ScalarField, f: ContactDiffeo) -> ScalarField:
    """The field c o f^{-1}; symbolic for translations, numeric otherwise."""
    if c.is_zero or f.provenance == "identity":
        return c
    shift = f.descriptor.get("translation")
    if shift is not None and c.is_symbolic:
        coords = c.coords
        return c.subs({f"x{i + 1}": ScalarField.coordinate(f"x{i + 1}", coords) - s
                       for i, s in enumerate(shift)})
    inner = c

    def pulled(Z, inner=inner):
        return inner.at(f.apply_inverse(Z))

    return ScalarField.from_callable(pulled, c.coords, "pullback")


def transport(f: ContactDiffeo, P: GradedSymbol) -> GradedSymbol:
    """Componentwise pullback p_{q-j} o f^{-1}."""
    if f.n != P.dim:
        raise ValueError("dimension mismatch")
    return P.map(lambda c: _pullback_field(c, f))


def identity_element(n: int, depth: int = 0) -> FioElement:
    return FioElement(identity(n), GradedSymbol.identity(n, depth))


def section_sigma(f: ContactDiffeo, depth: int = 0, cfg: SolverConfig | None = None,
                  check_chart: bool = True) -> FioElement:
    """The local section: f paired with the identity symbol (amplitude 1)."""
    if check_chart:
        diffeo_to_phase(f, cfg)
    return FioElement(f, GradedSymbol.identity(f.n, depth))


def project_pi(A: FioElement) -> ContactDiffeo:
    return A.f


def embed_j(P: GradedSymbol, check: bool = True) -> FioElement:
    el = FioElement(identity(P.dim), P)
    if check:
        el.check()
    return el


def _require_depth(depth: int, experimental: bool) -> None:
    if depth > 0 and not experimental:
        raise ExperimentalDepthError(
            f"group operations at depth {depth} are a model only; pass experimental=True")


def multiply(A: FioElement, B: FioElement, experimental: bool = False) -> FioElement:
    """(f1 o f2, p1 * transport(f1, p2)); depth >= 1 needs ``experimental``."""
    if A.depth != B.depth or A.dim != B.dim:
        raise ValueError("elements must share depth and dimension")
    if A.f.provenance != "identity":
        _require_depth(A.depth, experimental)
    p2 = transport(A.f, B.p)
    if A.depth == 0:
        sym = GradedSymbol(A.p.order + B.p.order, (A.p.principal * p2.principal,), A.dim)
    else:
        sym = graded_compose(A.p, p2, STANDARD)
    return FioElement(compose(A.f, B.f), sym)


def invert(A: FioElement, experimental: bool = False) -> FioElement:
    """(f^{-1}, transport(f^{-1}, p^{-1}))."""
    if A.f.provenance != "identity":
        _require_depth(A.depth, experimental)
    finv = invert_diffeo(A.f)
    if A.depth == 0:
        pinv = GradedSymbol(-A.p.order, (1 / A.p.principal,), A.dim)
    else:
        pinv = invert_in_quotient(A.p)
    return FioElement(finv, transport(finv, pinv))


def element_deviation(A: FioElement, B: FioElement, Z) -> float:
    """max of the diffeo and symbol discrepancies at points Z."""
    Z = np.asarray(Z, dtype=float)
    return max(float(np.max(np.abs(A.f(Z) - B.f(Z)))), A.p.max_abs_difference(B.p, Z))


def associativity_defect(A, B, C, Z, experimental: bool = False) -> float:
    left = multiply(multiply(A, B, experimental), C, experimental)
    right = multiply(A, multiply(B, C, experimental), experimental)
    return element_deviation(left, right, Z)


# ---------------------------------------------------------------------------
# charts


def chart_psi_at(g0: FioElement, cfg: SolverConfig | None = None, experimental: bool = False):
    """Chart centred at g0: g -> (pi(g), g g0^{-1} sigma(pi(g) pi(g0)^{-1})^{-1}).

    Returns a function of g giving (ContactDiffeo, GradedSymbol); the second
    entry is the symbol of an element with trivial diffeo part.
    """
    g0_inv = invert(g0, experimental)

    def psi(g: FioElement):
        q = compose(g.f, g0_inv.f)
        s = section_sigma(q, g.depth, cfg)
        h = multiply(multiply(g, g0_inv, experimental), invert(s, experimental), experimental)
        return g.f, h.p

    return psi


def chart_psi_inverse(g0: FioElement, f: ContactDiffeo, h: GradedSymbol,
                      cfg: SolverConfig | None = None, experimental: bool = False) -> FioElement:
    """The element j(h) sigma(f pi(g0)^{-1}) g0 with chart coordinates (f, h) at g0."""
    q = compose(f, invert_diffeo(g0.f))
    s = section_sigma(q, h.depth, cfg)
    return multiply(multiply(embed_j(h, check=False), s, experimental), g0, experimental)


def transition_direct(g0: FioElement, g1: FioElement, f: ContactDiffeo, h: GradedSymbol,
                      cfg: SolverConfig | None = None, experimental: bool = False):
    """Transition map between the charts at g0 and g1, by its closed formula:
    (f, h) -> (f, h sigma(f q0^{-1}) g0 g1^{-1} sigma(f q1^{-1})^{-1})."""
    s0 = section_sigma(compose(f, invert_diffeo(g0.f)), h.depth, cfg)
    s1 = section_sigma(compose(f, invert_diffeo(g1.f)), h.depth, cfg)
    out = embed_j(h, check=False)
    for factor in (s0, g0, invert(g1, experimental), invert(s1, experimental)):
        out = multiply(out, factor, experimental)
    return f, out.p


# ---------------------------------------------------------------------------
# exact sequence


@dataclass
class ExactSequenceReport:
    checks: dict
    tol: float
    notes: list = field(default_factory=list)

    @property
    def passed(self) -> dict:
        return {k: v <= self.tol for k, v in self.checks.items()}

    @property
    def ok(self) -> bool:
        return all(self.passed.values())


def exact_sequence_check(diffeos: Sequence[ContactDiffeo], symbols: Sequence[GradedSymbol],
                         elements: Sequence[FioElement] = (), samples: int = 50, seed: int = 0,
                         tol: float = 1e-9, contact_tol: float = 1e-6) -> ExactSequenceReport:
    """Check pi o sigma = id, pi o j = id, ker pi = im j and the contact property.

    ``diffeos`` feed the section, ``symbols`` feed j and the kernel check,
    ``elements`` are extra group elements whose diffeo parts must be contact.
    """
    rng = np.random.default_rng(seed)
    notes = []
    n = (diffeos[0].n if diffeos else symbols[0].dim)
    x, xi = sample_cotangent(n, samples, rng)
    Z = np.concatenate([x, xi], axis=-1)
    checks = {"pi_sigma": 0.0, "pi_j": 0.0, "kernel": 0.0, "j_homomorphism": 0.0,
              "contact": 0.0}
    for f in diffeos:
        s = section_sigma(f, 0)
        checks["pi_sigma"] = max(checks["pi_sigma"], float(np.max(np.abs(project_pi(s)(Z) - f(Z)))))
        # a product with trivial diffeo part lies in the image of j
        k = multiply(s, invert(s))
        dev = float(np.max(np.abs(project_pi(k)(Z) - Z)))
        checks["kernel"] = max(checks["kernel"], dev,
                               k.p.max_abs_difference(embed_j(k.p, check=False).p, Z))
    for P in symbols:
        e = embed_j(P)
        checks["pi_j"] = max(checks["pi_j"], float(np.max(np.abs(project_pi(e)(Z) - Z))))
    for P1, P2 in zip(symbols, symbols[1:]):
        lhs = embed_j(graded_compose(P1, P2), check=False)
        rhs = multiply(embed_j(P1), embed_j(P2))
        checks["j_homomorphism"] = max(checks["j_homomorphism"], element_deviation(lhs, rhs, Z))
    for A in list(elements) + [section_sigma(f, 0, check_chart=False) for f in diffeos]:
        rep = verify_contact(A.f, samples, contact_tol, seed)
        if not rep.ok:
            notes.append(f"non-contact diffeo part: {rep.residuals}")
            checks["contact"] = np.inf
    return ExactSequenceReport(checks, tol, notes)


# ---------------------------------------------------------------------------
# Lie algebra


def algebra_split(T: FioTangent):
    """(rho, lower): the Hamiltonian part (principal symbol over i) and the symbol part."""
    return T.hamiltonian_part, T.psdo_part


def tangent_bracket(T1: FioTangent, T2: FioTangent) -> FioTangent:
    """Bracket of tangent vectors, matching the group commutator c1 c2 c1^{-1} c2^{-1}.

    With X_i the Hamiltonian fields and P_i the symbol parts, the contact
    bracket gives ([X1, X2], X1(P2) - X2(P1)); the group commutator of the
    one-parameter families is its negative, and the symbol commutator is
    added for depth >= 1.  The Hamiltonian of the resulting field is
    recovered as theta of it.
    """
    H1, H2 = T1.hamiltonian_part.base, T2.hamiltonian_part.base
    X1, X2 = hamiltonian_vector_field(H1), hamiltonian_vector_field(H2)
    P1, P2 = T1.psdo_part, T2.psdo_part
    depth = min(P1.depth, P2.depth)
    V, _ = contact_bracket((X1, P1.principal), (X2, P2.principal))
    K = -theta_of(V)
    comps = []
    for j in range(depth + 1):
        _, w = contact_bracket((X1, P1.components[j]), (X2, P2.components[j]))
        comps.append(-w)
    lower = GradedSymbol(0, tuple(comps), P1.dim)
    if depth > 0:
        lower = lower + commutator(P1.truncate(depth), P2.truncate(depth))
    return FioTangent(HomogeneousField(K, 1), lower)


def one_parameter(T: FioTangent, t: float, cfg: SolverConfig | None = None,
                  steps: int = 40) -> FioElement:
    """Depth-0 family t -> (flow(H, t), exp(t P)) with tangent T at t = 0."""
    from .diffeo import flow

    if T.psdo_part.depth != 0:
        raise ExperimentalDepthError("one-parameter families are exact at depth 0 only")
    f = flow(T.hamiltonian_part, t, cfg, steps=steps)
    P = T.psdo_part.principal
    return FioElement(f, GradedSymbol(0, (exp(t * P),), P.dim))
