"""Oracle and property tests for the exterior algebra layer."""

from fractions import Fraction

import pytest
from hypothesis import given, settings, strategies as st

from cartan import exterior as ext
from cartan import symfield as sf


def small_space():
    F = sf.Field()
    x = F.coordinate("x")
    y = F.coordinate("y")
    u = F.coordinate("u")
    p = F.coordinate("p")
    b = F.parameter("b")
    basis = ext.FormBasis(F)
    for c in (x, y, u, p):
        basis.register_differential(c)
    basis.register_differential(b)
    return F, basis, {"x": x, "y": y, "u": u, "p": p, "b": b}


# --- wedge -------------------------------------------------------------------

def test_wedge_antisymmetry():
    F, basis, g = small_space()
    dx, dy = basis.one("dx"), basis.one("dy")
    assert ext.wedge(dx, dx).is_zero
    assert ext.wedge(dx, dy) == -ext.wedge(dy, dx)


def test_wedge_bilinear_over_coefficients():
    F, basis, g = small_space()
    f, h = g["u"] * g["x"], g["p"] - 1
    a = basis.one("dx", f)
    b = basis.one("dy", h)
    w = ext.wedge(a, b)
    assert w.coefficient("dx", "dy") == f * h
    assert w.coefficient("dy", "dx") == -(f * h)


def test_wedge_basis_mismatch_rejected():
    F1, basis1, _ = small_space()
    F2, basis2, _ = small_space()
    with pytest.raises(ext.ExteriorError):
        ext.wedge(basis1.one("dx"), basis2.one("dx"))


# --- exterior derivative -----------------------------------------------------

def test_d_of_contact_like_form():
    F, basis, g = small_space()
    f = basis.one("du") - basis.one("dx", g["p"])
    df = ext.ext_d(f)
    assert df == ext.wedge(basis.one("dx"), basis.one("dp"))


def test_d_examples():
    F, basis, g = small_space()
    assert ext.ext_d(basis.one("dy", g["x"])) == ext.wedge(basis.one("dx"), basis.one("dy"))
    assert ext.ext_d(basis.one("dx")).is_zero


def test_d_includes_parameter_directions():
    F, basis, g = small_space()
    f = basis.one("dx", g["b"] * g["u"])
    df = ext.ext_d(f)
    assert df.coefficient("db", "dx") == g["u"]
    assert df.coefficient("du", "dx") == g["b"]


def test_d_rejects_labeled_forms():
    F, basis, g = small_space()
    theta = basis.add("theta1", "coframe-element")
    with pytest.raises(ext.ExteriorError):
        ext.ext_d(basis.one(theta))


# --- rebase ----------------------------------------------------------------------

def test_rebase_single_scaled_form():
    F, basis, g = small_space()
    xi = basis.add("xi1", "coframe-element")
    A = sf.AssumptionSet(F)
    target = ext.CoframeBasis(basis, [xi], [basis.one("dx", g["b"])], A)
    out = ext.rebase(basis.one("dx"), target)
    assert out.coefficient(xi) == 1 / g["b"]
    assert any(e.expr == g["b"] for e in A.entries())


def test_rebase_round_trip_mixed_block():
    F, basis, g = small_space()
    th = basis.add("theta1", "coframe-element")
    xi = basis.add("xi1", "coframe-element")
    A = sf.AssumptionSet(F)
    target = ext.CoframeBasis(
        basis, [th, xi],
        [basis.one("du") - basis.one("dx", g["p"]),
         basis.one("dx", g["b"]) + basis.one("du", g["u"])],
        A)
    raw = ext.CoframeBasis.raw(basis, [basis["dx"], basis["dy"], basis["du"],
                                       basis["dp"], basis["db"]])
    f = basis.one("dx", g["x"] * g["p"]) + basis.one("du", F.expr(3)) \
        + basis.one("dy", g["u"])
    over = ext.rebase(f, target)
    back = ext.rebase(over, raw)
    assert back == f
    # leftover differentials stay raw: dy is not spanned by the target
    assert any(basis.forms[k[0]].name == "dy" for k in over.terms)


def test_rebase_to_same_basis_is_identity():
    F, basis, g = small_space()
    raw = ext.CoframeBasis.raw(basis, [basis["dx"], basis["dy"]])
    f = basis.one("dx", g["u"]) + basis.one("dy", g["p"] ** 2)
    assert ext.rebase(f, raw) == f


def test_rebase_singular_transition_reports_dependence():
    F, basis, g = small_space()
    a1 = basis.add("w1", "coframe-element")
    a2 = basis.add("w2", "coframe-element")
    with pytest.raises(ext.ExteriorError, match="w2"):
        ext.CoframeBasis(basis, [a1, a2],
                         [basis.one("dx"), basis.one("dx", F.expr(2))])


# --- substitute ----------------------------------------------------------------

def test_substitute_expands_differential_by_chain_rule():
    F, basis, g = small_space()
    # dp -> d(u*x) = u dx + x du
    out = ext.substitute(basis.one("dp"), {"p": g["u"] * g["x"]})
    assert out.coefficient("dx") == g["u"]
    assert out.coefficient("du") == g["x"]


def test_substitute_empty_is_identity():
    F, basis, g = small_space()
    f = basis.one("dx", g["u"] ** 2)
    assert ext.substitute(f, {}) == f


def test_substitute_kills_exponential_coefficient():
    F, basis, g = small_space()
    f = basis.one("dx", F.exp(g["u"]))
    out = ext.substitute(f, {"u": F.zero})
    assert out == basis.one("dx")


def test_substitute_commutes_with_d_on_paper_shape():
    F, basis, g = small_space()
    # p |-> y - u*x mirrors an equation-manifold restriction
    value = g["y"] - g["u"] * g["x"]
    f = basis.one("dp", g["p"]) + basis.one("du", g["x"] * g["p"])
    lhs = ext.substitute(ext.ext_d(f), {"p": value})
    rhs = ext.ext_d(ext.substitute(f, {"p": value}))
    assert lhs == rhs


# --- hypothesis properties ----------------------------------------------------

coeff_recipes = st.recursive(
    st.one_of(
        st.fractions(min_value=-3, max_value=3, max_denominator=4).map(lambda c: ("const", c)),
        st.integers(0, 4).map(lambda i: ("gen", i))),
    lambda sub: st.one_of(
        st.tuples(st.just("add"), sub, sub),
        st.tuples(st.just("mul"), sub, sub)),
    max_leaves=4,
)


def build_coeff(recipe, F, leaves):
    kind = recipe[0]
    if kind == "const":
        return F.expr(recipe[1])
    if kind == "gen":
        return leaves[recipe[1] % len(leaves)]
    a, b = build_coeff(recipe[1], F, leaves), build_coeff(recipe[2], F, leaves)
    return a + b if kind == "add" else a * b


def build_one_form(recipes, basis, F, leaves):
    names = ["dx", "dy", "du", "dp", "db"]
    f = basis.zero(1)
    for name, recipe in zip(names, recipes):
        f = f + basis.one(name, build_coeff(recipe, F, leaves))
    return f


@settings(max_examples=200, deadline=None)
@given(st.lists(coeff_recipes, min_size=5, max_size=5))
def test_d_squared_zero_on_one_forms(recipes):
    F, basis, g = small_space()
    leaves = [g["x"], g["y"], g["u"], g["p"], g["b"]]
    f = build_one_form(recipes, basis, F, leaves)
    assert ext.ext_d(ext.ext_d(f)).is_zero


@settings(max_examples=200, deadline=None)
@given(coeff_recipes)
def test_d_squared_zero_on_functions(recipe):
    F, basis, g = small_space()
    leaves = [g["x"], g["y"], g["u"], g["p"], g["b"]]
    c = build_coeff(recipe, F, leaves)
    f = ext.DForm(basis, 0, {(): c} if not c.is_zero else {})
    assert ext.ext_d(ext.ext_d(f)).is_zero


@settings(max_examples=200, deadline=None)
@given(coeff_recipes, st.lists(coeff_recipes, min_size=5, max_size=5))
def test_d_leibniz(recipe_f, recipes_g):
    F, basis, g = small_space()
    leaves = [g["x"], g["y"], g["u"], g["p"], g["b"]]
    c = build_coeff(recipe_f, F, leaves)
    f0 = ext.DForm(basis, 0, {(): c} if not c.is_zero else {})
    g1 = build_one_form(recipes_g, basis, F, leaves)
    lhs = ext.ext_d(ext.wedge(f0, g1))
    rhs = ext.wedge(ext.ext_d(f0), g1) + ext.wedge(f0, ext.ext_d(g1))
    assert lhs == rhs


@settings(max_examples=200, deadline=None)
@given(st.lists(coeff_recipes, min_size=5, max_size=5), coeff_recipes)
def test_substitute_naturality(recipes, value_recipe):
    F, basis, g = small_space()
    leaves = [g["x"], g["y"], g["u"], g["b"]]  # no p: p is substituted away
    f = build_one_form(recipes, basis, F, leaves)
    value = build_coeff(value_recipe, F, leaves)
    subs = {"p": value}
    assert ext.substitute(ext.ext_d(f), subs) == ext.ext_d(ext.substitute(f, subs))


@settings(max_examples=200, deadline=None)
@given(st.lists(coeff_recipes, min_size=5, max_size=5))
def test_rebase_round_trip_property(recipes):
    F, basis, g = small_space()
    leaves = [g["x"], g["y"], g["u"], g["p"], g["b"]]
    th = basis.add("theta1", "coframe-element")
    xi = basis.add("xi1", "coframe-element")
    target = ext.CoframeBasis(
        basis, [th, xi],
        [basis.one("du") - basis.one("dx", g["p"]),
         basis.one("dx") + basis.one("dy", g["u"] ** 2 + 1)])
    raw = ext.CoframeBasis.raw(
        basis, [basis["dx"], basis["dy"], basis["du"], basis["dp"], basis["db"]])
    f = build_one_form(recipes, basis, F, leaves)
    assert ext.rebase(ext.rebase(f, target), raw) == f
