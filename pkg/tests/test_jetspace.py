"""Oracle and property tests for jet charts, contact forms, and reduction."""

import pytest
from hypothesis import given, settings, strategies as st

from cartan import exterior as ext
from cartan import jetspace as js
from cartan import symfield as sf


# --- charts and contact forms --------------------------------------------------

def test_chart_coordinate_order():
    F = sf.Field()
    chart = js.JetChart(F, 2, 2)
    names = [s.name for s in chart.coordinate_symbols()]
    assert names == ["x1", "x2", "u1", "u2", "p1_1", "p1_2", "p2_1", "p2_2"]


def test_chart_rejects_colliding_names():
    with pytest.raises(js.JetError):
        js.JetChart(sf.Field(), 2, 1, x_names=["x", "t"], u_names=["x"])


def test_contact_forms_two_by_two():
    F = sf.Field()
    chart = js.JetChart(F, 2, 2)
    basis = chart.basis()
    taus = js.contact_forms(chart, basis)
    assert len(taus) == 2
    expected0 = basis.one("du1") - basis.one("dx1", chart.p[0][0]) \
        - basis.one("dx2", chart.p[0][1])
    assert taus[0] == expected0
    assert taus[1].coefficient("dx2") == -chart.p[1][1]


def test_contact_form_scalar_case():
    F = sf.Field()
    chart = js.JetChart(F, 1, 1, x_names=["x"], u_names=["u"])
    basis = chart.basis()
    (tau,) = js.contact_forms(chart, basis)
    assert tau == basis.one("du") - basis.one("dx", chart.p[0][0])


def test_contact_form_pullback_on_product_section():
    # the 1-jet of u1 = x1*x2 has p1_1 = x2, p1_2 = x1
    F = sf.Field()
    chart = js.JetChart(F, 2, 1)
    basis = chart.basis()
    (tau,) = js.contact_forms(chart, basis)
    x1, x2 = chart.x
    pulled = ext.substitute(tau, {"u1": x1 * x2, "p1_1": x2, "p1_2": x1})
    assert pulled.is_zero


poly_recipes = st.lists(
    st.tuples(st.integers(0, 2), st.integers(0, 2),
              st.fractions(min_value=-3, max_value=3, max_denominator=3)),
    min_size=0, max_size=4)


def poly_from(recipe, x1, x2, F):
    e = F.zero
    for i, j, c in recipe:
        e = e + F.expr(c) * x1 ** i * x2 ** j
    return e


@settings(max_examples=200, deadline=None)
@given(poly_recipes, poly_recipes)
def test_contact_forms_vanish_on_every_jet_prolongation(r1, r2):
    F = sf.Field()
    chart = js.JetChart(F, 2, 2)
    basis = chart.basis()
    x1, x2 = chart.x
    f1 = poly_from(r1, x1, x2, F)
    f2 = poly_from(r2, x1, x2, F)
    section = {
        "u1": f1, "u2": f2,
        "p1_1": f1.derivative(x1), "p1_2": f1.derivative(x2),
        "p2_1": f2.derivative(x1), "p2_2": f2.derivative(x2),
    }
    for tau in js.contact_forms(chart, basis):
        assert ext.substitute(tau, section).is_zero


def test_contact_form_detects_non_prolongation():
    F = sf.Field()
    chart = js.JetChart(F, 2, 1)
    basis = chart.basis()
    (tau,) = js.contact_forms(chart, basis)
    x1, x2 = chart.x
    bad = {"u1": x1 * x2, "p1_1": x2 + 1, "p1_2": x1}
    pulled = ext.substitute(tau, bad)
    assert pulled.coefficient("dx1") == F.expr(-1)


# --- PDE systems and the embedding ---------------------------------------------

def burgers_system():
    F = sf.Field()
    chart = js.JetChart(F, 2, 2)
    u1, u2 = chart.u
    p = chart.p
    return js.PDESystem(chart, {p[0][0]: p[1][1] - u1 * u2, p[1][0]: u1},
                        label="burgers")


def test_system_rejects_non_derivative_key():
    F = sf.Field()
    chart = js.JetChart(F, 2, 2)
    with pytest.raises(js.JetError):
        js.PDESystem(chart, {chart.u[0]: chart.u[1]})


def test_system_rejects_solved_coordinate_in_rhs():
    F = sf.Field()
    chart = js.JetChart(F, 2, 2)
    p = chart.p
    with pytest.raises(js.JetError):
        js.PDESystem(chart, {p[0][0]: p[1][0], p[1][0]: chart.u[0]})


def test_embedding_burgers():
    sysm = burgers_system()
    emb = js.embedding(sysm)
    chart = sysm.chart
    u1, u2 = chart.u
    p = chart.p
    assert emb.subs == {
        p[0][0]._single_symbol(): p[1][1] - u1 * u2,
        p[1][0]._single_symbol(): u1,
    }
    assert [s.name for s in emb.intrinsic] == ["x1", "x2", "u1", "u2", "p1_2", "p2_2"]


def test_embedding_gas_dynamics():
    # Lagrangian gas dynamics: with rho=u1, u=u2, p=u3, t=x1, m=x2 the laws
    #   rho_t + rho^2 u_m = 0, u_t + p_m = 0, p_t + gamma rho p u_m = 0
    # are solved here for the t-derivatives, independently of the frozen map.
    F = sf.Field()
    chart = js.JetChart(F, 2, 3)
    gamma = F.parameter("gamma")
    u1, u2, u3 = chart.u
    p = chart.p
    unknowns = [p[0][0], p[1][0], p[2][0]]
    laws = [
        p[0][0] + u1 ** 2 * p[1][1],
        p[1][0] + p[2][1],
        p[2][0] + gamma * u1 * u3 * p[1][1],
    ]
    sol = sf.solve_linear(laws, unknowns)
    assert sol.consistent and not sol.free
    derived = {u._single_symbol(): sol.assignments[u._single_symbol()]
               for u in unknowns}
    frozen = {
        p[0][0]._single_symbol(): -(u1 ** 2) * p[1][1],
        p[1][0]._single_symbol(): -p[2][1],
        p[2][0]._single_symbol(): -gamma * u1 * u3 * p[1][1],
    }
    assert derived == frozen

    sysm = js.PDESystem(chart, frozen, label="gas")
    emb = js.embedding(sysm)
    assert emb.subs == frozen
    assert [s.name for s in emb.intrinsic] == \
        ["x1", "x2", "u1", "u2", "u3", "p1_2", "p2_2", "p3_2"]


def test_embedding_single_trivial_equation():
    F = sf.Field()
    chart = js.JetChart(F, 2, 1, x_names=["t", "x"], u_names=["u1"])
    emb = js.embedding(js.PDESystem(chart, {chart.p[0][0]: F.zero}))
    assert emb.apply(chart.p[0][0]).is_zero
    assert [s.name for s in emb.intrinsic] == ["t", "x", "u1", "p1_2"]


def test_embedding_fixes_intrinsic_coordinates_and_is_idempotent():
    sysm = burgers_system()
    emb = js.embedding(sysm)
    F = sysm.chart.field
    for s in emb.intrinsic:
        e = F.expr(s)
        assert emb.apply(e) == e
    sample = sysm.chart.p[0][0] ** 2 + sysm.chart.p[1][0] * sysm.chart.x[1]
    once = emb.apply(sample)
    assert emb.apply(once) == once


# --- order reduction ------------------------------------------------------------

def reduce_burgers():
    prob = js.SecondOrderProblem(["x", "t"], ["u"])
    nm = prob.names()
    rhs = nm["u_t"] - nm["u"] * nm["u_x"]
    return js.reduce_to_first_order(
        prob, [js.RawEquation(("u", (0, 0)), rhs)], label="burgers")


def test_reduce_heat_like_equation_to_pair():
    # u_xx = u_t - u*u_x  becomes  u_x = v, v_x = u_t - u*v
    sysm = reduce_burgers()
    chart = sysm.chart
    assert chart.u_names == ["u", "v"]
    u, v = chart.u
    p = chart.p
    assert sysm.solved == {
        p[0][0]._single_symbol(): v,
        p[1][0]._single_symbol(): p[0][1] - u * v,
    }


def test_reduce_mixed_derivative_equation():
    # u_xt = e^u  becomes  u_t = v, v_x = e^u
    prob = js.SecondOrderProblem(["x", "t"], ["u"])
    nm = prob.names()
    sysm = js.reduce_to_first_order(
        prob, [js.RawEquation(("u", (0, 1)), prob.field.exp(nm["u"]))])
    chart = sysm.chart
    assert chart.u_names == ["u", "v"]
    u, v = chart.u
    p = chart.p
    assert sysm.solved == {
        p[0][1]._single_symbol(): v,
        p[1][0]._single_symbol(): chart.field.exp(u),
    }


def test_reduce_mixed_derivative_name_mirrored():
    prob = js.SecondOrderProblem(["x", "t"], ["u"])
    nm = prob.names()
    assert nm["u_xt"] == nm["u_tx"]


def test_reduce_passes_first_order_system_through():
    prob = js.SecondOrderProblem(["x1", "x2"], ["u1", "u2"])
    nm = prob.names()
    eqs = [js.RawEquation(("u1", (0,)), nm["u2_x2"] - nm["u1"] * nm["u2"]),
           js.RawEquation(("u2", (0,)), nm["u1"])]
    sysm = js.reduce_to_first_order(prob, eqs)
    chart = sysm.chart
    assert chart.u_names == ["u1", "u2"]
    u1, u2 = chart.u
    p = chart.p
    assert sysm.solved == {
        p[0][0]._single_symbol(): p[1][1] - u1 * u2,
        p[1][0]._single_symbol(): u1,
    }


def test_reduce_carries_declared_constants():
    prob = js.SecondOrderProblem(["x", "t"], ["u"])
    nm = prob.names()
    c = prob.field.parameter("c")
    sysm = js.reduce_to_first_order(
        prob, [js.RawEquation(("u", (0, 0)), c * nm["u_t"])], constants={"c": None})
    field = sysm.chart.field
    assert field.has_generator("c")
    v_x = sysm.solved[sysm.chart.p[1][0]._single_symbol()]
    assert v_x == field.expr("c") * sysm.chart.p[0][1]


def test_reduce_rejects_unknown_dependent():
    prob = js.SecondOrderProblem(["x", "t"], ["u"])
    with pytest.raises(js.JetError):
        js.reduce_to_first_order(prob, [js.RawEquation(("w", (0, 0)), prob.field.zero)])


def test_reduce_rejects_two_second_order_equations_per_dependent():
    prob = js.SecondOrderProblem(["x", "t"], ["u"])
    with pytest.raises(js.JetError):
        js.reduce_to_first_order(prob, [
            js.RawEquation(("u", (0, 0)), prob.field.zero),
            js.RawEquation(("u", (1, 1)), prob.field.zero)])


def test_reduce_rejects_unsolved_second_derivative_in_rhs():
    prob = js.SecondOrderProblem(["x", "t"], ["u"])
    nm = prob.names()
    with pytest.raises(js.JetError):
        js.reduce_to_first_order(
            prob, [js.RawEquation(("u", (0, 0)), nm["u_tt"])])


def test_reduce_rejects_third_order_index():
    prob = js.SecondOrderProblem(["x", "t"], ["u"])
    with pytest.raises(js.JetError):
        js.reduce_to_first_order(
            prob, [js.RawEquation(("u", (0, 0, 0)), prob.field.zero)])


# --- restriction reproduces the original equation on explicit solutions --------

def burgers_solution_residuals(make_solution):
    sysm = reduce_burgers()
    chart = sysm.chart
    field = chart.field
    f = make_solution(field, chart)
    x, t = chart.x
    fx = f.derivative(x)
    section = {
        "u": f, "v": fx,
        "p1_1": fx, "p1_2": f.derivative(t),
        "p2_1": fx.derivative(x), "p2_2": fx.derivative(t),
    }
    return [field.expr(sym).substitute(section) - rhs.substitute(section)
            for sym, rhs in sysm.solved.items()]


def test_restriction_on_rational_similarity_solution():
    # u = -x/(t + c) solves u_t = u_xx + u*u_x
    def make(field, chart):
        x, t = chart.x
        return -x / (t + field.parameter("c"))
    assert all(r.is_zero for r in burgers_solution_residuals(make))


def test_restriction_on_stationary_pole_solution():
    # u = 2/(x + c) solves u_t = u_xx + u*u_x
    def make(field, chart):
        x, t = chart.x
        return 2 / (x + field.parameter("c"))
    assert all(r.is_zero for r in burgers_solution_residuals(make))


def test_restriction_on_traveling_wave_solution():
    # u = 2k E/(1+E) with E = exp(kx + k^2 t) solves u_t = u_xx + u*u_x
    def make(field, chart):
        x, t = chart.x
        k = field.parameter("k")
        E = field.exp(k * x + k ** 2 * t)
        return 2 * k * E / (1 + E)
    assert all(r.is_zero for r in burgers_solution_residuals(make))


def test_restriction_flags_non_solution():
    def make(field, chart):
        x, t = chart.x
        return x * t
    residuals = burgers_solution_residuals(make)
    assert any(not r.is_zero for r in residuals)
