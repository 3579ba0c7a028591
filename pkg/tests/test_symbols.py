import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fiogroup.expr import parse_expression, sample_cotangent
from fiogroup.symbols import (PRINTED, STANDARD, EllipticityError, GradedSymbol, SobolevParams,
                              adjoint, commutator, composition_residual, graded_compose,
                              invert_in_quotient, is_uniformly_elliptic, parametrix,
                              same_component, sobolev_distance)


def _Z(n, count=200, seed=0):
    x, xi = sample_cotangent(n, count, np.random.default_rng(seed))
    return np.concatenate([x, xi], axis=-1)


def S(texts, n, order=0):
    return GradedSymbol.from_strings(texts, n, order=order)


A1 = ["1 + 0.5*exp(-x1^2)*xi1/norm_xi", "0.3*sin(x1)/norm_xi", "0.2*x1*exp(-x1^2)*xi1/norm_xi^3",
      "0.1*cos(x1)/norm_xi^3"]
B1 = ["2 + 0.5*sin(x1)*xi1/norm_xi", "0.4*cos(x1)*xi1/norm_xi^2", "0.1*exp(-x1^2)/norm_xi^2",
      "0.05*x1*exp(-x1^2)*xi1/norm_xi^4"]
C1 = ["1.5 + cos(x1)*0.3", "0.2*exp(-x1^2)*xi1/norm_xi^2", "0", "0.3*sin(x1)/norm_xi^3"]
A2 = ["1.2 + 0.4*exp(-x1^2-x2^2)*xi1/norm_xi", "0.3*sin(x2)*xi2/norm_xi^2",
      "0.2*x1*exp(-x1^2)*xi1*xi2/norm_xi^4", "0.1*cos(x1)/norm_xi^3"]
B2 = ["2 + 0.5*sin(x1)*xi2/norm_xi", "0.4*cos(x2)/norm_xi", "0.1*exp(-x2^2)*xi1/norm_xi^3", "0"]
C2 = ["1 + 0.3*cos(x1*x2)*xi1*xi2/norm_xi^2", "0", "0.2*sin(x1)/norm_xi^2", "0.1*xi2/norm_xi^4"]


def test_from_strings_checks_degrees():
    with pytest.raises(ValueError, match="component 1"):
        S(["1", "xi1"], 1)


def test_identity_composes_to_identity():
    one = GradedSymbol.identity(2, depth=3)
    out = graded_compose(one, one)
    Z = _Z(2)
    assert out.max_abs_difference(one, Z) == 0.0


def test_identity_is_two_sided_unit():
    a = S(A2, 2)
    one = GradedSymbol.identity(2, depth=3)
    Z = _Z(2)
    assert graded_compose(one, a).max_abs_difference(a, Z) == 0.0
    assert graded_compose(a, one).max_abs_difference(a, Z) == 0.0


def test_xi_independent_principal_parts():
    a = S(["exp(-x1^2)", "0.3*xi1/norm_xi^2"], 1)
    b = S(["2 + sin(x1)", "cos(x1)/norm_xi"], 1)
    c = graded_compose(a, b)
    Z = _Z(1)
    a0, am1 = (f.at(Z) for f in a.components)
    b0, bm1 = (f.at(Z) for f in b.components)
    assert np.max(np.abs(c.components[1].at(Z) - (a0 * bm1 + am1 * b0))) <= 1e-15


def test_first_correction_hand_expansion():
    g = S(["exp(-x1^2)", "0"], 1)
    b = S(["0.5*sin(x1)*xi1/norm_xi + 2", "0.3*cos(x1)/norm_xi"], 1)
    Z = _Z(1)
    x, xi = Z[:, 0], Z[:, 1]
    gauss = np.exp(-x ** 2)
    bm1 = 0.3 * np.cos(x) / np.abs(xi)
    # in one dimension a degree-0 symbol is locally constant in xi, so both
    # derivative terms drop out and only the product terms remain
    for conv in (STANDARD, PRINTED):
        for c in (graded_compose(g, b, conv), graded_compose(b, g, conv)):
            assert np.max(np.abs(c.components[1].at(Z) - gauss * bm1)) <= 1e-12


def test_first_correction_with_order_one_factor():
    g = S(["exp(-x1^2)", "0"], 1)
    d = S(["xi1", "0"], 1, order=1)
    Z = _Z(1)
    dgauss = -2 * Z[:, 0] * np.exp(-Z[:, 0] ** 2)
    # standard: -i d_xi(a) d_x(b); printed: d_x(a) d_xi(b)
    assert np.max(np.abs(graded_compose(d, g, STANDARD).components[1].at(Z)
                         - (-1j) * dgauss)) <= 1e-12
    assert np.max(np.abs(graded_compose(g, d, STANDARD).components[1].at(Z))) <= 1e-12
    assert np.max(np.abs(graded_compose(g, d, PRINTED).components[1].at(Z) - dgauss)) <= 1e-12
    assert np.max(np.abs(graded_compose(d, g, PRINTED).components[1].at(Z))) <= 1e-12


def test_depth_zero_is_pointwise_product():
    a, b = S(A2[:1], 2), S(B2[:1], 2)
    Z = _Z(2)
    c = graded_compose(a, b)
    assert c.depth == 0
    assert np.max(np.abs(c.principal.at(Z) - a.principal.at(Z) * b.principal.at(Z))) <= 1e-15


def test_compose_dimension_mismatch():
    with pytest.raises(ValueError):
        graded_compose(S(A1, 1), S(A2, 2))


def test_compose_truncates_at_shared_depth():
    assert graded_compose(S(A1, 1), S(B1[:2], 1)).depth == 1


@pytest.mark.parametrize("n,syms", [(1, (A1, B1, C1)), (2, (A2, B2, C2))])
def test_associativity(n, syms):
    a, b, c = (S(t, n) for t in syms)
    Z = _Z(n, 100)
    lhs = graded_compose(graded_compose(a, b), c)
    rhs = graded_compose(a, graded_compose(b, c))
    assert lhs.max_abs_difference(rhs, Z) <= 1e-9


def test_adjoint_examples():
    one = GradedSymbol.identity(2, depth=2)
    Z = _Z(2)
    assert adjoint(one).max_abs_difference(one, Z) == 0.0
    a = S(["2 + xi1/norm_xi", "xi2/norm_xi^2", "0"], 2)
    assert adjoint(a).max_abs_difference(a, Z) <= 1e-15


@pytest.mark.parametrize("n,texts", [(1, A1[:3]), (2, A2[:3]), (2, ["(1 + I*x1)*xi1/norm_xi + 3",
                                                                      "I*sin(x2)/norm_xi", "0"])])
def test_adjoint_involution(n, texts):
    a = S(texts, n)
    assert adjoint(adjoint(a)).max_abs_difference(a, _Z(n)) <= 1e-10


def test_adjoint_of_x_xi():
    a = S(["x1*xi1", "0"], 1, order=1)
    Z = _Z(1)
    b = adjoint(a)
    assert np.max(np.abs(b.components[1].at(Z) - (-1j))) <= 1e-15


def test_adjoint_rejects_printed_convention():
    with pytest.raises(ValueError):
        adjoint(S(A1, 1), PRINTED)


def test_ellipticity_examples():
    ok, c1, c2 = is_uniformly_elliptic(GradedSymbol.constant(2.0, 1))
    assert ok and c1 == 2.0 and c2 == 2.0
    ok, c1, _ = is_uniformly_elliptic(S(["xi1/norm_xi"], 2))
    assert not ok and c1 < 1e-10
    ok, c1, c2 = is_uniformly_elliptic(S(["1 + 0.5*exp(-x1^2)*xi1/norm_xi"], 2))
    assert ok and c1 == pytest.approx(0.5, abs=1e-12) and c2 == pytest.approx(1.5, abs=1e-12)


def test_ellipticity_sees_decay_at_infinity():
    ok, c1, _ = is_uniformly_elliptic(S(["exp(-x1^2)"], 1))
    assert not ok


def test_parametrix_examples():
    Z = _Z(2)
    one = GradedSymbol.identity(2, depth=2)
    assert parametrix(one).max_abs_difference(one, Z) == 0.0
    p = parametrix(GradedSymbol.constant(2.0, 2, depth=2))
    assert p.max_abs_difference(GradedSymbol.constant(0.5, 2, depth=2), Z) == 0.0


@pytest.mark.parametrize("n", [1, 2])
def test_parametrix_residual(n):
    a = S(["1 + 0.5*exp(-x1^2)*xi1/norm_xi", "0", "0"], n)
    p = parametrix(a)
    Z = _Z(n, 1000)
    assert composition_residual(p, a, Z) <= 1e-9
    c = graded_compose(p, a).at(Z)
    assert np.max(np.abs(c[0] - 1)) <= 1e-15


def test_parametrix_rejects_nonelliptic():
    with pytest.raises(EllipticityError):
        parametrix(S(["xi1/norm_xi", "0"], 2))


def test_invert_in_quotient_two_sided():
    rep = invert_in_quotient(S(A2, 2), return_report=True)
    assert rep.left_residual <= 1e-9
    assert rep.right_residual <= 1e-9
    assert rep.left_right_gap <= 1e-10


def test_invert_in_quotient_constants():
    Z = _Z(1)
    p = invert_in_quotient(GradedSymbol.constant(3.0, 1, depth=2))
    assert p.max_abs_difference(GradedSymbol.constant(1 / 3, 1, depth=2), Z) <= 1e-16
    one = GradedSymbol.identity(1, depth=2)
    assert invert_in_quotient(one).max_abs_difference(one, Z) == 0.0


def test_printed_convention_parametrix_is_self_consistent():
    a = S(A1[:3], 1)
    p = parametrix(a, PRINTED)
    assert composition_residual(p, a, _Z(1), PRINTED) <= 1e-9


def test_commutator_examples():
    a = S(A2, 2)
    Z = _Z(2)
    zero = GradedSymbol.zero(2, depth=3)
    assert commutator(a, a).max_abs_difference(zero, Z) == 0.0
    assert commutator(a, GradedSymbol.identity(2, depth=3)).max_abs_difference(zero, Z) == 0.0


def test_commutator_principal_vanishes_and_antisymmetry():
    a, b = S(A2, 2), S(B2, 2)
    Z = _Z(2)
    ab = commutator(a, b)
    assert np.max(np.abs(ab.principal.at(Z))) <= 1e-15
    assert ab.max_abs_difference(-commutator(b, a), Z) <= 1e-15


@pytest.mark.parametrize("n,syms", [(1, (A1, B1, C1)), (2, (A2, B2, C2))])
def test_commutator_jacobi(n, syms):
    a, b, c = (S(t[:3], n) for t in syms)
    Z = _Z(n, 100)
    total = (commutator(a, commutator(b, c)) + commutator(b, commutator(c, a))
             + commutator(c, commutator(a, b)))
    assert total.max_abs_difference(GradedSymbol.zero(n, depth=2), Z) <= 1e-9


def test_commutator_bilinear():
    a, b, c = (S(t[:3], 1) for t in (A1, B1, C1))
    Z = _Z(1)
    lhs = commutator(a.scale(2.0) + b, c)
    rhs = commutator(a, c).scale(2.0) + commutator(b, c)
    assert lhs.max_abs_difference(rhs, Z) <= 1e-12


# Sobolev structure

P1 = SobolevParams(q=0, k=1, s=2)


def _offset(text, base=A1[:2]):
    return S([f"{base[0]} + {text}", base[1]], 1)


def test_sobolev_distance_zero_on_identical():
    a = S(A1[:2], 1)
    assert sobolev_distance(a, a, P1) == 0.0
    assert same_component(a, a, P1)


def test_sobolev_constant_offset_is_infinite():
    a = S(A1[:2], 1)
    b = _offset("1")
    assert sobolev_distance(a, b, P1) == math.inf
    assert not same_component(a, b, P1)


def test_sobolev_gaussian_offset_is_finite_and_stable():
    a = S(A1[:2], 1)
    b = _offset("exp(-x1^2)")
    d = sobolev_distance(a, b, P1)
    d_fine = sobolev_distance(a, b, P1.refined())
    assert math.isfinite(d) and d > 0
    assert abs(d - d_fine) <= 0.01 * d_fine
    assert same_component(a, b, P1)


def test_sobolev_slow_decay_is_finite():
    a = S(A1[:2], 1)
    assert math.isfinite(sobolev_distance(a, _offset("1/(1 + x1^2)"), P1))


def test_sobolev_symmetry_and_triangle():
    a = S(A1[:2], 1)
    b = _offset("exp(-x1^2)")
    c = _offset("0.5*exp(-(x1 - 1)^2)*xi1/norm_xi")
    dab, dbc, dac = (sobolev_distance(u, v, P1) for u, v in ((a, b), (b, c), (a, c)))
    assert sobolev_distance(b, a, P1) == dab
    assert dac <= dab + dbc + 1e-8
    assert dab <= dac + dbc + 1e-8


def test_sobolev_index_must_exceed_dimension():
    with pytest.raises(ValueError):
        sobolev_distance(S(A2[:2], 2), S(B2[:2], 2), SobolevParams(s=2))


def test_sobolev_requires_matching_shapes():
    with pytest.raises(ValueError):
        sobolev_distance(S(A1[:2], 1), S(A1[:3], 1), P1)


amp = st.floats(0.1, 2.0)


@settings(max_examples=10, deadline=None)
@given(amp, amp, st.floats(-1.0, 1.0))
def test_sobolev_triangle_property(a1, a2, shift):
    base = S(A1[:2], 1)
    b = _offset(f"{a1!r}*exp(-x1^2)")
    c = _offset(f"{a2!r}*exp(-(x1 - ({shift!r}))^2)*xi1/norm_xi")
    dab = sobolev_distance(base, b, P1)
    dbc = sobolev_distance(b, c, P1)
    dac = sobolev_distance(base, c, P1)
    assert dac <= dab + dbc + 1e-8


@settings(max_examples=15, deadline=None)
@given(st.floats(0.05, 0.45), st.floats(-3, 3), st.floats(0.1, 1.0))
def test_parametrix_property(eps, c, width):
    a = S([f"1 + {eps!r}*exp(-{width!r}*x1^2)*xi1/norm_xi",
           f"{eps!r}*sin(x1 + ({c!r}))/norm_xi", "0"], 1)
    p = parametrix(a)
    assert composition_residual(p, a, _Z(1, 100)) <= 1e-9
    assert composition_residual(a, p, _Z(1, 100)) <= 1e-9
