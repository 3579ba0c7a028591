import numpy as np
import pytest

from fiogroup import diffeo as dg
from fiogroup import fio
from fiogroup.expr import HomogeneousField, ScalarField, norm_xi, parse_expression, sample_cotangent
from fiogroup.symbols import EllipticityError, GradedSymbol, graded_compose, is_uniformly_elliptic


def _Z(n, count=100, seed=0):
    x, xi = sample_cotangent(n, count, np.random.default_rng(seed))
    return np.concatenate([x, xi], axis=-1)


def _H(text, n=1):
    return HomogeneousField(parse_expression(text, dim=n), 1)


def _P(texts, n=1):
    return GradedSymbol.from_strings(texts, n)


F1 = dg.phase_to_diffeo(_H("0.2*xi1 + 0.05*norm_xi*exp(-x1^2)"))
F2 = dg.flow(_H("0.1*norm_xi*cos(x1)"), 0.5, steps=200)
F3 = dg.translation([0.3])
P1 = _P(["1.5 + 0.5*exp(-x1^2)*xi1/norm_xi"])
P2 = _P(["2 + sin(x1)"])


def _generators():
    return ([fio.section_sigma(f) for f in (F1, F2, F3)] + [fio.embed_j(P) for P in (P1, P2)])


def test_section_examples():
    Z = _Z(1)
    s = fio.section_sigma(dg.identity(1))
    assert np.array_equal(s.f(Z), Z)
    assert s.p.max_abs_difference(GradedSymbol.identity(1), Z) == 0.0
    t = fio.section_sigma(F3)
    assert np.array_equal(fio.project_pi(t)(Z), F3(Z))
    assert t.p.max_abs_difference(GradedSymbol.identity(1), Z) == 0.0


def test_section_rejects_far_diffeo():
    with pytest.raises(dg.SmallnessError):
        fio.section_sigma(dg.translation([20.0]))


def test_project_examples():
    Z = _Z(1)
    assert np.array_equal(fio.project_pi(fio.embed_j(P1))(Z), Z)
    AB = fio.multiply(fio.section_sigma(F1), fio.section_sigma(F2))
    assert np.max(np.abs(fio.project_pi(AB)(Z) - F1(F2(Z)))) == 0.0


def test_embed_examples():
    Z = _Z(1)
    e = fio.embed_j(GradedSymbol.identity(1))
    assert np.array_equal(e.f(Z), Z)
    two = fio.embed_j(GradedSymbol.constant(2.0, 1))
    assert np.max(np.abs(two.p.principal.at(Z) - 2)) == 0.0
    with pytest.raises(EllipticityError):
        fio.embed_j(_P(["exp(-x1^2)"]))


def test_embed_is_homomorphism_at_every_depth():
    Z = _Z(1)
    a = _P(["1.5 + 0.5*exp(-x1^2)*xi1/norm_xi", "0.3*sin(x1)/norm_xi", "0"])
    b = _P(["2 + sin(x1)", "0.2*cos(x1)*xi1/norm_xi^2", "0.1/norm_xi^2"])
    lhs = fio.embed_j(graded_compose(a, b))
    rhs = fio.multiply(fio.embed_j(a), fio.embed_j(b))
    assert fio.element_deviation(lhs, rhs, Z) == 0.0


def test_transport_examples():
    Z = _Z(1)
    assert fio.transport(dg.identity(1), P1).max_abs_difference(P1, Z) == 0.0
    moved = fio.transport(dg.translation([0.7]), P1)
    assert moved.principal.is_symbolic
    shifted = Z.copy()
    shifted[:, 0] -= 0.7
    assert np.max(np.abs(moved.principal.at(Z) - P1.principal.at(shifted))) <= 1e-15


def test_transport_is_left_action():
    Z = _Z(1)
    lhs = fio.transport(dg.compose(F1, F2), P1)
    rhs = fio.transport(F1, fio.transport(F2, P1))
    assert lhs.max_abs_difference(rhs, Z) <= 1e-12


def test_transport_preserves_ellipticity():
    # sampled bounds: the shifted peak at x = 0.3 falls between grid points
    ok, c1, c2 = is_uniformly_elliptic(fio.transport(F3, P1))
    assert ok and c1 == pytest.approx(1.0, abs=1e-3) and c2 == pytest.approx(2.0, abs=1e-3)


def test_transport_distributes_over_products():
    Z = _Z(1)
    prod = GradedSymbol(0, (P1.principal * P2.principal,), 1)
    lhs = fio.transport(F2, prod)
    a, b = fio.transport(F2, P1), fio.transport(F2, P2)
    assert np.max(np.abs(lhs.principal.at(Z) - a.principal.at(Z) * b.principal.at(Z))) <= 1e-14


def test_multiply_examples():
    Z = _Z(1)
    jj = fio.multiply(fio.embed_j(P1), fio.embed_j(P2))
    assert np.array_equal(jj.f(Z), Z)
    assert jj.p.max_abs_difference(graded_compose(P1, P2), Z) == 0.0
    sj = fio.multiply(fio.section_sigma(F2), fio.embed_j(P1))
    assert fio.element_deviation(sj, fio.FioElement(F2, fio.transport(F2, P1)), Z) == 0.0


def test_pi_is_homomorphism():
    Z = _Z(1)
    gens = _generators()
    for A in gens:
        for B in gens:
            AB = fio.multiply(A, B)
            assert np.max(np.abs(AB.f(Z) - A.f(B.f(Z)))) <= 1e-9


def test_associativity_on_random_triples():
    gens = _generators()
    rng = np.random.default_rng(3)
    Z = _Z(1, 50)
    for _ in range(20):
        A, B, C = (gens[i] for i in rng.integers(len(gens), size=3))
        assert fio.associativity_defect(A, B, C, Z) <= 1e-10


def test_identity_and_inverse():
    Z = _Z(1, 50)
    e = fio.identity_element(1)
    for A in _generators():
        assert fio.element_deviation(fio.multiply(A, e), A, Z) <= 1e-12
        assert fio.element_deviation(fio.multiply(e, A), A, Z) <= 1e-12
        assert fio.element_deviation(fio.multiply(A, fio.invert(A)), e, Z) <= 1e-9
        assert fio.element_deviation(fio.multiply(fio.invert(A), A), e, Z) <= 1e-9


def test_invert_examples():
    Z = _Z(1)
    e = fio.identity_element(1)
    assert fio.element_deviation(fio.invert(e), e, Z) == 0.0
    half = fio.invert(fio.embed_j(GradedSymbol.constant(2.0, 1)))
    assert np.max(np.abs(half.p.principal.at(Z) - 0.5)) == 0.0


def test_depth_one_requires_experimental_flag():
    a = _P(["1.5 + 0.5*exp(-x1^2)*xi1/norm_xi", "0.3*sin(x1)/norm_xi"])
    s = fio.section_sigma(F3, depth=1)
    with pytest.raises(fio.ExperimentalDepthError):
        fio.multiply(s, fio.embed_j(a))
    with pytest.raises(fio.ExperimentalDepthError):
        fio.invert(s)
    out = fio.multiply(s, fio.embed_j(a), experimental=True)
    assert out.depth == 1


def test_depth_one_psdo_subgroup_is_exact():
    a = _P(["1.5 + 0.5*exp(-x1^2)*xi1/norm_xi", "0.3*sin(x1)/norm_xi"])
    A = fio.embed_j(a)
    e = fio.identity_element(1, depth=1)
    assert fio.element_deviation(fio.multiply(A, fio.invert(A)), e, _Z(1)) <= 1e-9


def test_chart_at_identity():
    Z = _Z(1)
    psi = fio.chart_psi_at(fio.identity_element(1))
    f, h = psi(fio.embed_j(P1))
    assert np.array_equal(f(Z), Z) and h.max_abs_difference(P1, Z) <= 1e-15
    f, h = psi(fio.section_sigma(F1))
    assert np.array_equal(f(Z), F1(Z))
    assert h.max_abs_difference(GradedSymbol.identity(1), Z) <= 1e-12


def test_chart_inverse_round_trip():
    Z = _Z(1)
    g0 = fio.multiply(fio.section_sigma(F2), fio.embed_j(P2))
    g = fio.multiply(fio.section_sigma(F1), fio.embed_j(P1))
    f, h = fio.chart_psi_at(g0)(g)
    back = fio.chart_psi_inverse(g0, f, h)
    assert fio.element_deviation(back, g, Z) <= 1e-9


def test_transition_two_paths_agree():
    Z = _Z(1)
    g0 = fio.multiply(fio.section_sigma(F2), fio.embed_j(P2))
    g1 = fio.multiply(fio.section_sigma(F3), fio.embed_j(P1))
    f, h = F1, _P(["1.2 + 0.3*cos(x1)*xi1/norm_xi"])
    via_charts = fio.chart_psi_at(g1)(fio.chart_psi_inverse(g0, f, h))
    direct = fio.transition_direct(g0, g1, f, h)
    assert np.max(np.abs(via_charts[0](Z) - direct[0](Z))) <= 1e-9
    assert via_charts[1].max_abs_difference(direct[1], Z) <= 1e-9


def test_exact_sequence_passes():
    rep = fio.exact_sequence_check([F1, F2, F3], [P1, P2], _generators())
    assert rep.ok, rep.checks
    assert rep.checks["pi_sigma"] == 0.0 and rep.checks["pi_j"] == 0.0


def test_exact_sequence_randomized_products():
    gens = _generators()
    rng = np.random.default_rng(5)
    prods = [fio.multiply(gens[i], gens[j]) for i, j in rng.integers(len(gens), size=(6, 2))]
    rep = fio.exact_sequence_check([F1, F2, F3], [P1, P2], prods)
    assert rep.ok, rep.checks


def test_exact_sequence_negative_control():
    def fwd(Z):
        W = np.array(Z, dtype=float)
        W[..., 1] *= 2
        return W

    def inv(Z):
        W = np.array(Z, dtype=float)
        W[..., 1] /= 2
        return W

    bad = fio.FioElement(dg.ContactDiffeo(1, fwd, inv, "composed"), GradedSymbol.identity(1))
    rep = fio.exact_sequence_check([F3], [P1], [bad])
    assert not rep.ok
    assert not rep.passed["contact"]


def test_algebra_split_examples():
    zeroH = HomogeneousField(ScalarField.constant(0.0, ("x1", "xi1")), 1)
    T = fio.FioTangent(zeroH, P2)
    rho, lower = fio.algebra_split(T)
    assert rho.base.is_zero and lower is P2
    H = _H("0.3*norm_xi*sin(x1)")
    rho, lower = fio.algebra_split(fio.FioTangent(H, GradedSymbol.zero(1)))
    assert rho is H and lower.principal.is_zero


def test_tangent_requires_degree_one():
    with pytest.raises(ValueError):
        fio.FioTangent(HomogeneousField(norm_xi(1), 2), P1)


def test_tangent_bracket_antisymmetric():
    T1 = fio.FioTangent(_H("0.2*xi1 + 0.05*norm_xi*exp(-x1^2)"),
                        _P(["0.5*sin(x1)*xi1/norm_xi"]))
    T2 = fio.FioTangent(_H("0.1*norm_xi*cos(x1)"), P2)
    Z = _Z(1)
    a, b = fio.tangent_bracket(T1, T2), fio.tangent_bracket(T2, T1)
    assert np.max(np.abs(a.hamiltonian_part.base.at(Z) + b.hamiltonian_part.base.at(Z))) <= 1e-14
    assert a.psdo_part.max_abs_difference(-b.psdo_part, Z) <= 1e-14


def test_one_parameter_family_at_zero_is_identity():
    T = fio.FioTangent(_H("0.1*norm_xi*cos(x1)"), P2)
    Z = _Z(1)
    assert fio.element_deviation(fio.one_parameter(T, 0.0), fio.identity_element(1), Z) == 0.0
