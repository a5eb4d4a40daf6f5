"""Lifted coframe of the contact pseudo-group and its structure data.

Builds, over a first-order jet chart, the lifted coframe Theta/Xi/Sigma of
the contact pseudo-group with its group parameters, the five families of
modified Maurer-Cartan forms, the absorption freedom (the arbitrary shift
coefficients compatible with the structure equations), and the closed-form
involutivity data (degree of indeterminacy, reduced characters, Cartan test).
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

from sympy import QQ, Symbol
from sympy.polys.matrices import DomainMatrix

from .exterior import DForm, FormBasis, ext_d, form_sum, wedge
from .jetspace import JetChart, contact_forms
from .symfield import AssumptionSet, Expr, Field, expr_sum


class LiftedContactError(ValueError):
    """Raised when construction or internal verification fails."""


# --- small exact linear algebra over field elements ---------------------------


def _det(m: list[list[Expr]]) -> Expr:
    size = len(m)
    if size == 1:
        return m[0][0]
    total = None
    for col in range(size):
        minor = [row[:col] + row[col + 1:] for row in m[1:]]
        piece = m[0][col] * _det(minor)
        if col % 2:
            piece = -piece
        total = piece if total is None else total + piece
    return total


def _inverse(m: list[list[Expr]], assumptions: AssumptionSet,
             provenance: str) -> list[list[Expr]]:
    size = len(m)
    det = _det(m)
    assumptions.assume_nonzero(det, provenance)
    out = [[None] * size for _ in range(size)]
    for i in range(size):
        for j in range(size):
            minor = [[m[r][c] for c in range(size) if c != i]
                     for r in range(size) if r != j]
            cof = _det(minor) if minor else m[0][0].field.one
            if (i + j) % 2:
                cof = -cof
            out[i][j] = cof / det
    return out


# --- group parameters ----------------------------------------------------------


class GroupParams:
    """Fresh symbolic group parameters a, b, c, f, g with inverses A, B.

    The g family is stored symmetrically: g[al][i][j] and g[al][j][i] are the
    same generator.  The h block is not free; it is fixed to a^al_be * B^j_i.
    """

    def __init__(self, chart: JetChart,
                 assumptions: AssumptionSet | None = None) -> None:
        field = chart.field
        n, q = chart.n, chart.q
        self.chart = chart
        self.field = field
        self.n = n
        self.q = q
        self.assumptions = assumptions if assumptions is not None \
            else AssumptionSet(field)
        self.a = [[field.parameter(f"a{al}_{be}") for be in range(1, q + 1)]
                  for al in range(1, q + 1)]
        self.b = [[field.parameter(f"b{i}_{j}") for j in range(1, n + 1)]
                  for i in range(1, n + 1)]
        self.c = [[field.parameter(f"c{i}_{be}") for be in range(1, q + 1)]
                  for i in range(1, n + 1)]
        self.f = [[[field.parameter(f"f{al}_{i}{be}") for be in range(1, q + 1)]
                   for i in range(1, n + 1)]
                  for al in range(1, q + 1)]
        self.g = [[[None] * n for _ in range(n)] for _ in range(q)]
        for al in range(q):
            for i in range(n):
                for j in range(i, n):
                    gp = field.parameter(f"g{al + 1}_{i + 1}{j + 1}")
                    self.g[al][i][j] = gp
                    self.g[al][j][i] = gp
        self.A = _inverse(self.a, self.assumptions, "group block a is invertible")
        self.B = _inverse(self.b, self.assumptions, "group block b is invertible")

    def parameter_symbols(self) -> list[Symbol]:
        out = []
        for row in self.a:
            out.extend(e._single_symbol() for e in row)
        for row in self.b:
            out.extend(e._single_symbol() for e in row)
        for row in self.c:
            out.extend(e._single_symbol() for e in row)
        for plane in self.f:
            for row in plane:
                out.extend(e._single_symbol() for e in row)
        for al in range(self.q):
            for i in range(self.n):
                for j in range(i, self.n):
                    out.append(self.g[al][i][j]._single_symbol())
        return out

    def identity_substitution(self) -> dict[Symbol, Expr]:
        """Parameter values of the group identity: a = id, b = id, c=f=g=0."""
        field = self.field
        subs: dict[Symbol, Expr] = {}
        for al in range(self.q):
            for be in range(self.q):
                subs[self.a[al][be]._single_symbol()] = \
                    field.one if al == be else field.zero
        for i in range(self.n):
            for j in range(self.n):
                subs[self.b[i][j]._single_symbol()] = \
                    field.one if i == j else field.zero
        for row in self.c:
            for e in row:
                subs[e._single_symbol()] = field.zero
        for plane in self.f:
            for row in plane:
                for e in row:
                    subs[e._single_symbol()] = field.zero
        for al in range(self.q):
            for i in range(self.n):
                for j in range(i, self.n):
                    subs[self.g[al][i][j]._single_symbol()] = field.zero
        return subs


# --- the lifted coframe ----------------------------------------------------------


@dataclass
class LiftedCoframe:
    basis: FormBasis
    theta: list[DForm]
    xi: list[DForm]
    sigma: list[list[DForm]]

    def forms(self) -> list[tuple[str, DForm]]:
        out = [(f"theta{al + 1}", f) for al, f in enumerate(self.theta)]
        out += [(f"xi{i + 1}", f) for i, f in enumerate(self.xi)]
        for al, row in enumerate(self.sigma):
            out += [(f"sigma{al + 1}_{i + 1}", f) for i, f in enumerate(row)]
        return out


def build_lifted_coframe(chart: JetChart,
                         params: GroupParams | None = None,
                         basis: FormBasis | None = None
                         ) -> tuple[GroupParams, LiftedCoframe]:
    """The coframe Theta^al, Xi^i, Sigma^al_i on the chart times the group."""
    params = params if params is not None else GroupParams(chart)
    basis = chart.basis(basis)
    field = chart.field
    for sym in params.parameter_symbols():
        basis.register_differential(field.expr(sym))
    n, q = chart.n, chart.q
    tau = contact_forms(chart, basis)

    theta = [form_sum(basis, 1, [params.a[al][be] * tau[be] for be in range(q)])
             for al in range(q)]
    xi = [form_sum(basis, 1,
                   [params.c[i][be] * theta[be] for be in range(q)]
                   + [basis.one(f"d{chart.x_names[j]}", params.b[i][j])
                      for j in range(n)])
          for i in range(n)]
    sigma = []
    for al in range(q):
        row = []
        for i in range(n):
            pieces = [params.f[al][i][be] * theta[be] for be in range(q)]
            pieces += [params.g[al][i][j] * xi[j] for j in range(n)]
            pieces += [basis.one(f"dp{be + 1}_{j + 1}",
                                 params.a[al][be] * params.B[j][i])
                       for be in range(q) for j in range(n)]
            row.append(form_sum(basis, 1, pieces))
        sigma.append(row)
    return params, LiftedCoframe(basis, theta, xi, sigma)


# --- modified Maurer-Cartan forms -------------------------------------------------


@dataclass
class MCForms:
    phi: list[list[DForm]]
    psi: list[list[DForm]]
    pi: list[list[DForm]]
    lam: list[list[list[DForm]]]
    omega: list[list[list[DForm]]]

    def named_forms(self) -> list[tuple[str, DForm]]:
        out = []
        for al, row in enumerate(self.phi):
            out += [(f"phi{al + 1}_{be + 1}", f) for be, f in enumerate(row)]
        for i, row in enumerate(self.psi):
            out += [(f"psi{i + 1}_{k + 1}", f) for k, f in enumerate(row)]
        for i, row in enumerate(self.pi):
            out += [(f"pi{i + 1}_{ga + 1}", f) for ga, f in enumerate(row)]
        for al, plane in enumerate(self.lam):
            for i, row in enumerate(plane):
                out += [(f"lambda{al + 1}_{i + 1}{be + 1}", f)
                        for be, f in enumerate(row)]
        for al, plane in enumerate(self.omega):
            for i, row in enumerate(plane):
                for j in range(i, len(row)):
                    out.append((f"omega{al + 1}_{i + 1}{j + 1}", row[j]))
        return out


def build_mc_forms(params: GroupParams, coframe: LiftedCoframe) -> MCForms:
    """The five modified Maurer-Cartan families, verified against the
    structure equations with zero residual."""
    basis = coframe.basis
    n, q = params.n, params.q
    theta, xi, sigma = coframe.theta, coframe.xi, coframe.sigma
    a, b, c, f, g = params.a, params.b, params.c, params.f, params.g
    A, B = params.A, params.B

    def da(al: int, ga: int, coeff: Expr) -> DForm:
        return basis.one(f"da{al + 1}_{ga + 1}", coeff)

    def db(i: int, j: int, coeff: Expr) -> DForm:
        return basis.one(f"db{i + 1}_{j + 1}", coeff)

    # the pure parameter part da^al_ga A^ga_be of Phi (also the parenthesized
    # combination subtracted inside the Lambda and Omega families)
    pure = [[form_sum(basis, 1, [da(al, ga, A[ga][be]) for ga in range(q)])
             for be in range(q)] for al in range(q)]

    phi = []
    for al in range(q):
        row = []
        for be in range(q):
            pieces = [pure[al][be]]
            for ga in range(q):
                coeff = expr_sum(params.field,
                                  [c[k][ga] * f[al][k][be] for k in range(n)])
                pieces.append(coeff * theta[ga])
            for k in range(n):
                pieces.append((-f[al][k][be]) * xi[k])
            for j in range(n):
                coeff = expr_sum(params.field,
                                  [c[k][be] * g[al][k][j] for k in range(n)])
                pieces.append((-coeff) * xi[j])
            for k in range(n):
                pieces.append(c[k][be] * sigma[al][k])
            row.append(form_sum(basis, 1, pieces))
        phi.append(row)

    psi = []
    for i in range(n):
        row = []
        for k in range(n):
            pieces = [db(i, j, B[j][k]) for j in range(n)]
            pieces += [(-c[i][be]) * sigma[be][k] for be in range(q)]
            row.append(form_sum(basis, 1, pieces))
        psi.append(row)

    pi = []
    for i in range(n):
        row = []
        for ga in range(q):
            pieces = [basis.one(f"dc{i + 1}_{ga + 1}")]
            pieces += [c[i][be] * phi[be][ga] for be in range(q)]
            pieces += [(-c[k][ga]) * psi[i][k] for k in range(n)]
            pieces += [(-(c[k][ga] * c[i][be])) * sigma[be][k]
                       for k in range(n) for be in range(q)]
            row.append(form_sum(basis, 1, pieces))
        pi.append(row)

    lam = []
    for al in range(q):
        plane = []
        for i in range(n):
            row = []
            for be in range(q):
                pieces = [basis.one(f"df{al + 1}_{i + 1}{be + 1}")]
                pieces += [f[al][i][ga] * phi[ga][be] for ga in range(q)]
                pieces += [g[al][i][j] * pi[j][be] for j in range(n)]
                pieces += [(-f[ga][i][be]) * pure[al][ga] for ga in range(q)]
                for k in range(n):
                    inner = [psi[k][i]]
                    inner += [c[k][ga] * sigma[ga][i] for ga in range(q)]
                    pieces.append(f[al][k][be] * form_sum(basis, 1, inner))
                pieces += [(c[k][be] * f[al][k][ga]) * sigma[ga][i]
                           for k in range(n) for ga in range(q)]
                row.append(form_sum(basis, 1, pieces))
            plane.append(row)
        lam.append(plane)

    omega = [[[None] * n for _ in range(n)] for _ in range(q)]
    for al in range(q):
        for i in range(n):
            for j in range(i, n):
                pieces = [basis.one(f"dg{al + 1}_{i + 1}{j + 1}")]
                pieces += [g[al][i][k] * psi[k][j] for k in range(n)]
                pieces += [g[al][j][k] * psi[k][i] for k in range(n)]
                pieces += [(-f[al][i][be]) * sigma[be][j] for be in range(q)]
                pieces += [(-f[al][j][be]) * sigma[be][i] for be in range(q)]
                pieces += [(-g[ga][i][j]) * pure[al][ga] for ga in range(q)]
                w = form_sum(basis, 1, pieces)
                omega[al][i][j] = w
                omega[al][j][i] = w

    mc = MCForms(phi, psi, pi, lam, omega)
    _verify_structure_equations(coframe, mc)
    return mc


def structure_residuals(coframe: LiftedCoframe, mc: MCForms
                        ) -> list[tuple[str, DForm]]:
    """d(form) minus the structure-equation right-hand side, per lifted form."""
    basis = coframe.basis
    theta, xi, sigma = coframe.theta, coframe.xi, coframe.sigma
    q, n = len(theta), len(xi)
    out = []
    for al in range(q):
        rhs = [wedge(mc.phi[al][be], theta[be]) for be in range(q)]
        rhs += [wedge(xi[k], sigma[al][k]) for k in range(n)]
        out.append((f"theta{al + 1}",
                    ext_d(theta[al]) - form_sum(basis, 2, rhs)))
    for i in range(n):
        rhs = [wedge(mc.psi[i][k], xi[k]) for k in range(n)]
        rhs += [wedge(mc.pi[i][ga], theta[ga]) for ga in range(q)]
        out.append((f"xi{i + 1}", ext_d(xi[i]) - form_sum(basis, 2, rhs)))
    for al in range(q):
        for i in range(n):
            rhs = [wedge(mc.phi[al][ga], sigma[ga][i]) for ga in range(q)]
            rhs += [-wedge(mc.psi[k][i], sigma[al][k]) for k in range(n)]
            rhs += [wedge(mc.lam[al][i][be], theta[be]) for be in range(q)]
            rhs += [wedge(mc.omega[al][i][j], xi[j]) for j in range(n)]
            out.append((f"sigma{al + 1}_{i + 1}",
                        ext_d(sigma[al][i]) - form_sum(basis, 2, rhs)))
    return out


def _verify_structure_equations(coframe: LiftedCoframe, mc: MCForms) -> None:
    for name, residual in structure_residuals(coframe, mc):
        if not residual.is_zero:
            raise LiftedContactError(
                f"structure equation for {name} has a nonzero residual")


# --- absorption freedom ------------------------------------------------------------


class AbsorptionFreedom:
    """The arbitrary shift coefficients K, L, M, N, P, Q, R of the modified
    Maurer-Cartan forms, with their symmetry identifications.

    Accessors take 1-based indices in the family's own order and return the
    canonical representative, so symmetric entries share one unknown.  With a
    field supplied the unknowns are field parameters; otherwise plain symbols.
    """

    def __init__(self, n: int, q: int, field: Field | None = None) -> None:
        self.n = n
        self.q = q
        self.field = field
        self._by_name: dict[str, object] = {}
        self._order: list[object] = []

        def make(name: str):
            if name not in self._by_name:
                val = field.parameter(name) if field is not None else Symbol(name)
                self._by_name[name] = val
                self._order.append(val)
            return self._by_name[name]

        self._make = make
        for al in range(1, q + 1):
            for ga in range(1, q + 1):
                for ep in range(ga, q + 1):
                    make(f"K{al}_{ga}{ep}")
        for i in range(1, n + 1):
            for k in range(1, n + 1):
                for j in range(k, n + 1):
                    make(f"L{i}_{k}{j}")
        for i in range(1, n + 1):
            for k in range(1, n + 1):
                for ga in range(1, q + 1):
                    make(f"M{i}_{k}{ga}")
        for i in range(1, n + 1):
            for ga in range(1, q + 1):
                for ep in range(ga, q + 1):
                    make(f"N{i}_{ga}{ep}")
        for al in range(1, q + 1):
            for i in range(1, n + 1):
                for be in range(1, q + 1):
                    for ga in range(be, q + 1):
                        make(f"P{al}_{i}{be}{ga}")
        for al in range(1, q + 1):
            for be in range(1, q + 1):
                for i in range(1, n + 1):
                    for k in range(i, n + 1):
                        make(f"Q{al}_{i}{be}{k}")
        for al in range(1, q + 1):
            for i in range(1, n + 1):
                for j in range(i, n + 1):
                    for k in range(j, n + 1):
                        make(f"R{al}_{i}{j}{k}")

    def unknowns(self) -> list[object]:
        return list(self._order)

    def count(self) -> int:
        return len(self._order)

    def K(self, al, ga, ep):
        ga, ep = min(ga, ep), max(ga, ep)
        return self._by_name[f"K{al}_{ga}{ep}"]

    def L(self, i, k, j):
        k, j = min(k, j), max(k, j)
        return self._by_name[f"L{i}_{k}{j}"]

    def M(self, i, k, ga):
        return self._by_name[f"M{i}_{k}{ga}"]

    def N(self, i, ga, ep):
        ga, ep = min(ga, ep), max(ga, ep)
        return self._by_name[f"N{i}_{ga}{ep}"]

    def P(self, al, i, be, ga):
        be, ga = min(be, ga), max(be, ga)
        return self._by_name[f"P{al}_{i}{be}{ga}"]

    def Q(self, al, i, be, k):
        i, k = min(i, k), max(i, k)
        return self._by_name[f"Q{al}_{i}{be}{k}"]

    def R(self, al, i, j, k):
        i, j, k = sorted((i, j, k))
        return self._by_name[f"R{al}_{i}{j}{k}"]


def apply_shift(mc: MCForms, coframe: LiftedCoframe,
                freedom: AbsorptionFreedom) -> MCForms:
    """Shift the Maurer-Cartan forms by the absorption-freedom pattern."""
    if freedom.field is None:
        raise LiftedContactError("shift application needs field-valued unknowns")
    basis = coframe.basis
    theta, xi, sigma = coframe.theta, coframe.xi, coframe.sigma
    q, n = len(theta), len(xi)
    F = freedom

    def add(base: DForm, pieces: list[DForm]) -> DForm:
        return form_sum(basis, 1, [base] + pieces)

    phi = [[add(mc.phi[al][be],
                [F.K(al + 1, be + 1, ep + 1) * theta[ep] for ep in range(q)])
            for be in range(q)] for al in range(q)]
    psi = [[add(mc.psi[i][k],
                [F.L(i + 1, k + 1, j + 1) * xi[j] for j in range(n)]
                + [F.M(i + 1, k + 1, ga + 1) * theta[ga] for ga in range(q)])
            for k in range(n)] for i in range(n)]
    pi = [[add(mc.pi[i][ga],
               [F.M(i + 1, k + 1, ga + 1) * xi[k] for k in range(n)]
               + [F.N(i + 1, ga + 1, ep + 1) * theta[ep] for ep in range(q)])
           for ga in range(q)] for i in range(n)]
    lam = [[[add(mc.lam[al][i][be],
                 [F.P(al + 1, i + 1, be + 1, ga + 1) * theta[ga]
                  for ga in range(q)]
                 + [F.Q(al + 1, i + 1, be + 1, k + 1) * xi[k] for k in range(n)]
                 + [F.K(al + 1, ga + 1, be + 1) * sigma[ga][i]
                    for ga in range(q)]
                 + [(-F.M(k + 1, i + 1, be + 1)) * sigma[al][k]
                    for k in range(n)])
             for be in range(q)] for i in range(n)] for al in range(q)]
    omega = [[[None] * n for _ in range(n)] for _ in range(q)]
    for al in range(q):
        for i in range(n):
            for j in range(i, n):
                w = add(mc.omega[al][i][j],
                        [F.Q(al + 1, i + 1, be + 1, j + 1) * theta[be]
                         for be in range(q)]
                        + [F.R(al + 1, i + 1, j + 1, k + 1) * xi[k]
                           for k in range(n)]
                        + [(-F.L(k + 1, i + 1, j + 1)) * sigma[al][k]
                           for k in range(n)])
                omega[al][i][j] = w
                omega[al][j][i] = w
    return MCForms(phi, psi, pi, lam, omega)


# --- involutivity data -------------------------------------------------------------


@dataclass
class CharacterData:
    r1: int
    s_prime: list[int]
    involutive: bool
    group_report: str


def group_dimension_report(s_prime: list[int], r1: int,
                           coframe_rank: int | None = None) -> str:
    """Involutive-coframe symmetry description from the reduced characters."""
    last = 0
    for k, s in enumerate(s_prime, start=1):
        if s:
            last = k
    if last == 0:
        dim = coframe_rank if coframe_rank is not None else 0
        return f"symmetry group of dimension at most {dim}"
    count = s_prime[last - 1]
    noun = "function" if count == 1 else "functions"
    var = "variable" if last == 1 else "variables"
    return f"{count} {noun} of {last} {var}"


def contact_characters(n: int, q: int) -> CharacterData:
    """Closed-form involutivity data of the full lifted contact coframe."""
    if n < 1 or q < 1:
        raise LiftedContactError("need n >= 1 and q >= 1")
    r1 = Fraction(1, 2) * q * q * (q + 1) + Fraction(1, 2) * n * n * (n + 1) \
        + n * n * q + Fraction(1, 2) * n * q * (q + 1) \
        + Fraction(1, 2) * n * q * q * (q + 1) \
        + Fraction(1, 2) * n * q * q * (n + 1) \
        + Fraction(1, 6) * q * n * (n + 1) * (n + 2)
    if r1.denominator != 1:
        raise LiftedContactError("degree of indeterminacy is not an integer")
    r1 = int(r1)
    s_prime = [q + n + n * q] * q
    s_prime += [n + (n - j + 1) * q for j in range(1, n + 1)]
    s_prime += [0] * (n * q)
    involutive = r1 == sum(k * s for k, s in enumerate(s_prime, start=1))
    return CharacterData(r1=r1, s_prime=s_prime, involutive=involutive,
                         group_report=group_dimension_report(s_prime, r1))


def generic_shift_kernel_dimension(n: int, q: int) -> int:
    """Dimension of the space of coframe-linear shifts of the Maurer-Cartan
    forms that preserve the structure equations, computed from scratch as the
    kernel of the shift-constraint system over the rationals."""
    m = q + n + n * q

    def th(al):  # 0-based form index of Theta^(al+1)
        return al

    def xf(i):
        return q + i

    def sg(al, i):
        return q + n + al * n + i

    slots: list[tuple] = []
    slots += [("phi", al, be) for al in range(q) for be in range(q)]
    slots += [("psi", i, k) for i in range(n) for k in range(n)]
    slots += [("pi", i, ga) for i in range(n) for ga in range(q)]
    slots += [("lam", al, i, be)
              for al in range(q) for i in range(n) for be in range(q)]
    slots += [("omega", al, i, j)
              for al in range(q) for i in range(n) for j in range(i, n)]
    slot_index = {s: t for t, s in enumerate(slots)}

    def unknown(slot, w):
        return slot_index[slot] * m + w

    def omega_slot(al, i, j):
        return ("omega", al, min(i, j), max(i, j))

    n_unknowns = len(slots) * m
    rows: dict[tuple, dict[int, int]] = {}

    def contribute(eq, slot, partner, orient=1):
        # orient * (sum_w z[slot,w] e_w) wedge e_partner
        for w in range(m):
            if w == partner:
                continue
            lo, hi, sign = (w, partner, 1) if w < partner else (partner, w, -1)
            row = rows.setdefault((eq, lo, hi), {})
            col = unknown(slot, w)
            row[col] = row.get(col, 0) + sign * orient

    for al in range(q):
        eq = ("th", al)
        for be in range(q):
            contribute(eq, ("phi", al, be), th(be))
    for i in range(n):
        eq = ("xi", i)
        for k in range(n):
            contribute(eq, ("psi", i, k), xf(k))
        for ga in range(q):
            contribute(eq, ("pi", i, ga), th(ga))
    for al in range(q):
        for i in range(n):
            eq = ("sg", al, i)
            for ga in range(q):
                contribute(eq, ("phi", al, ga), sg(ga, i))
            for k in range(n):
                contribute(eq, ("psi", k, i), sg(al, k), orient=-1)
            for be in range(q):
                contribute(eq, ("lam", al, i, be), th(be))
            for j in range(n):
                contribute(eq, omega_slot(al, i, j), xf(j))

    entries = [[QQ(row.get(col, 0)) for col in range(n_unknowns)]
               for row in rows.values()]
    if not entries:
        return n_unknowns
    matrix = DomainMatrix(entries, (len(entries), n_unknowns), QQ)
    return n_unknowns - matrix.rank()
