"""Lifted contact coframe, modified Maurer-Cartan forms, involutivity data."""

import pytest

from cartan.symfield import Field
from cartan.jetspace import JetChart, contact_forms
from cartan.exterior import ext_d, form_sum, wedge
from cartan.liftedcontact import (
    AbsorptionFreedom,
    LiftedContactError,
    apply_shift,
    build_lifted_coframe,
    build_mc_forms,
    contact_characters,
    generic_shift_kernel_dimension,
    group_dimension_report,
    structure_residuals,
)


def build(n, q):
    field = Field()
    chart = JetChart(field, n, q)
    params, coframe = build_lifted_coframe(chart)
    return field, chart, params, coframe


@pytest.fixture(scope="module")
def scalar_1_1():
    field, chart, params, coframe = build(1, 1)
    mc = build_mc_forms(params, coframe)
    return field, chart, params, coframe, mc


@pytest.fixture(scope="module")
def plane_2_1():
    field, chart, params, coframe = build(2, 1)
    mc = build_mc_forms(params, coframe)
    return field, chart, params, coframe, mc


@pytest.fixture(scope="module")
def square_2_2():
    field, chart, params, coframe = build(2, 2)
    return field, chart, params, coframe


# --- group parameters --------------------------------------------------------


def test_inverse_identities(square_2_2):
    field, chart, params, coframe = square_2_2
    for al in range(2):
        for be in range(2):
            acc = field.zero
            for ga in range(2):
                acc = acc + params.a[al][ga] * params.A[ga][be]
            assert acc == (field.one if al == be else field.zero)
    for i in range(2):
        for k in range(2):
            acc = field.zero
            for j in range(2):
                acc = acc + params.b[i][j] * params.B[j][k]
            assert acc == (field.one if i == k else field.zero)


def test_g_block_shares_symmetric_entries(square_2_2):
    _, _, params, _ = square_2_2
    for al in range(2):
        assert params.g[al][0][1] is params.g[al][1][0]


def test_invertibility_assumptions_recorded(square_2_2):
    _, _, params, _ = square_2_2
    notes = {e.provenance for e in params.assumptions.entries()}
    assert "group block a is invertible" in notes
    assert "group block b is invertible" in notes


# --- the lifted coframe ------------------------------------------------------


def test_theta1_matches_display(square_2_2):
    """First transformed contact form for two dependent variables."""
    field, chart, params, coframe = square_2_2
    a = params.a
    p = chart.p
    th = coframe.theta[0]
    assert th.coefficient("du1") == a[0][0]
    assert th.coefficient("du2") == a[0][1]
    assert th.coefficient("dx1") == -(a[0][0] * p[0][0] + a[0][1] * p[1][0])
    assert th.coefficient("dx2") == -(a[0][0] * p[0][1] + a[0][1] * p[1][1])


def test_sigma_derivative_block_coefficients(square_2_2):
    """The dp part of Sigma^1_1 carries the fixed block a^1_be * B^j_1."""
    _, chart, params, coframe = square_2_2
    a, B = params.a, params.B
    sg = coframe.sigma[0][0]
    for be in range(2):
        for j in range(2):
            assert sg.coefficient(f"dp{be + 1}_{j + 1}") == a[0][be] * B[j][0]


def test_identity_slice_is_contact_coframe(square_2_2):
    """At a = id, b = id, c = f = g = 0 the lift collapses to tau, dx, dp."""
    field, chart, params, coframe = square_2_2
    at_id = params.identity_substitution()

    def slice_(form):
        return form.map_coefficients(lambda e: e.substitute(at_id))

    tau = contact_forms(chart, coframe.basis)
    for al in range(2):
        assert slice_(coframe.theta[al]) == tau[al]
    for i in range(2):
        assert slice_(coframe.xi[i]) == coframe.basis.one(f"dx{i + 1}")
    for al in range(2):
        for i in range(2):
            assert slice_(coframe.sigma[al][i]) == \
                coframe.basis.one(f"dp{al + 1}_{i + 1}")


def test_coframe_form_names(plane_2_1):
    _, _, _, coframe, _ = plane_2_1
    names = [name for name, _ in coframe.forms()]
    assert names == ["theta1", "xi1", "xi2", "sigma1_1", "sigma1_2"]


# --- modified Maurer-Cartan forms ---------------------------------------------


def test_psi_matches_display(plane_2_1):
    """Psi^i_k = db^i_j B^j_k - c^i_be Sigma^be_k."""
    _, chart, params, coframe, mc = plane_2_1
    basis = coframe.basis
    B, c = params.B, params.c
    for i in range(2):
        for k in range(2):
            pieces = [basis.one(f"db{i + 1}_{j + 1}", B[j][k]) for j in range(2)]
            pieces += [(-c[i][0]) * coframe.sigma[0][k]]
            assert mc.psi[i][k] == form_sum(basis, 1, pieces)


def test_identity_slice_phi_is_parameter_differential(square_2_2):
    field, chart, params, coframe = square_2_2
    mc = build_mc_forms(params, coframe)
    at_id = params.identity_substitution()
    for al in range(2):
        for be in range(2):
            sliced = mc.phi[al][be].map_coefficients(
                lambda e: e.substitute(at_id))
            assert sliced == coframe.basis.one(f"da{al + 1}_{be + 1}")


def test_omega_is_symmetric(plane_2_1):
    _, _, _, _, mc = plane_2_1
    assert mc.omega[0][0][1] is mc.omega[0][1][0]


def test_structure_residuals_vanish(scalar_1_1):
    _, _, _, coframe, mc = scalar_1_1
    for name, residual in structure_residuals(coframe, mc):
        assert residual.is_zero, name


def test_first_equation_torsion_is_constant(plane_2_1):
    """dTheta - Phi-wedge part equals exactly the Xi^k ^ Sigma^al_k sum."""
    _, _, _, coframe, mc = plane_2_1
    basis = coframe.basis
    theta, xi, sigma = coframe.theta, coframe.xi, coframe.sigma
    lhs = ext_d(theta[0]) - form_sum(
        basis, 2, [wedge(mc.phi[0][0], theta[0])])
    rhs = form_sum(basis, 2, [wedge(xi[k], sigma[0][k]) for k in range(2)])
    assert lhs == rhs


# --- involutivity data --------------------------------------------------------


def test_characters_two_by_two():
    data = contact_characters(2, 2)
    assert data.r1 == 58
    assert data.s_prime == [8, 8, 6, 4, 0, 0, 0, 0]
    assert sum(k * s for k, s in enumerate(data.s_prime, start=1)) == 58
    assert data.involutive
    assert data.group_report == "4 functions of 4 variables"


def test_characters_two_one():
    data = contact_characters(2, 1)
    assert data.r1 == 22
    assert data.s_prime == [5, 4, 3, 0, 0]
    assert data.involutive


def test_character_table_frozen_values():
    expected = {(1, 1): 7, (1, 2): 24, (2, 1): 22, (2, 2): 58,
                (3, 2): 113, (4, 4): 584}
    for (n, q), r1 in expected.items():
        assert contact_characters(n, q).r1 == r1


def test_last_nonzero_character_is_q_plus_n():
    for n in range(1, 5):
        for q in range(1, 5):
            s = contact_characters(n, q).s_prime
            nonzero = [k for k, v in enumerate(s, start=1) if v]
            assert nonzero[-1] == q + n
            assert s[q + n - 1] == q + n


def test_cartan_test_holds_on_grid():
    for n in range(1, 5):
        for q in range(1, 5):
            data = contact_characters(n, q)
            assert data.involutive
            assert data.r1 == sum(
                k * s for k, s in enumerate(data.s_prime, start=1))
            assert len(data.s_prime) == q + n + n * q


def test_characters_reject_degenerate_shape():
    with pytest.raises(LiftedContactError):
        contact_characters(0, 1)
    with pytest.raises(LiftedContactError):
        contact_characters(1, 0)


def test_kernel_dimension_matches_closed_form():
    """Independent recomputation: the space of coframe-linear shifts that
    preserve the structure equations has dimension r1."""
    for n, q in [(1, 1), (2, 1), (1, 2), (2, 2)]:
        assert generic_shift_kernel_dimension(n, q) == \
            contact_characters(n, q).r1


def test_freedom_count_matches_r1():
    for n in range(1, 4):
        for q in range(1, 4):
            assert AbsorptionFreedom(n, q).count() == \
                contact_characters(n, q).r1


def test_freedom_symmetry_identifications():
    fr = AbsorptionFreedom(2, 2)
    assert fr.K(1, 2, 1) is fr.K(1, 1, 2)
    assert fr.L(2, 2, 1) is fr.L(2, 1, 2)
    assert fr.N(1, 2, 1) is fr.N(1, 1, 2)
    assert fr.P(2, 1, 2, 1) is fr.P(2, 1, 1, 2)
    assert fr.Q(1, 2, 1, 1) is fr.Q(1, 1, 1, 2)
    assert fr.R(1, 2, 1, 2) is fr.R(1, 1, 2, 2) and \
        fr.R(1, 2, 2, 1) is fr.R(1, 1, 2, 2)
    assert len(set(map(id, fr.unknowns()))) == fr.count()


def test_group_dimension_report_wording():
    assert group_dimension_report([3, 2, 0], 7) == "2 functions of 2 variables"
    assert group_dimension_report([1, 0], 1) == "1 function of 1 variable"
    assert group_dimension_report([0, 0, 0], 0, coframe_rank=7) == \
        "symmetry group of dimension at most 7"


# --- shift invariance ----------------------------------------------------------


def test_shift_preserves_structure_equations(scalar_1_1):
    field, chart, params, coframe, mc = scalar_1_1
    freedom = AbsorptionFreedom(1, 1, field=field)
    shifted = apply_shift(mc, coframe, freedom)
    assert shifted.phi[0][0] != mc.phi[0][0]
    for name, residual in structure_residuals(coframe, shifted):
        assert residual.is_zero, name


def test_shift_preserves_structure_equations_plane(plane_2_1):
    field, chart, params, coframe, mc = plane_2_1
    freedom = AbsorptionFreedom(2, 1, field=field)
    shifted = apply_shift(mc, coframe, freedom)
    for name, residual in structure_residuals(coframe, shifted):
        assert residual.is_zero, name


def test_shift_requires_field_unknowns(scalar_1_1):
    _, _, _, coframe, mc = scalar_1_1
    with pytest.raises(LiftedContactError):
        apply_shift(mc, coframe, AbsorptionFreedom(1, 1))
