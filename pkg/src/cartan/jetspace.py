"""First-order jet charts, contact forms, PDE systems and order reduction.

A :class:`JetChart` owns the coordinates (x^i, u^alpha, p^alpha_i) of the
first jet space of maps R^n -> R^q inside a shared field.  A
:class:`PDESystem` is a first-order system in solved form: a subset of the
p-coordinates expressed as functions of the remaining (intrinsic) ones.
Second-order scalar equations are reduced to such systems by introducing
one auxiliary dependent per second-order variable.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

from sympy import Symbol

from .exterior import DForm, FormBasis
from .symfield import Expr, Field


class JetError(ValueError):
    """Raised for malformed charts, systems, or reduction inputs."""


class JetChart:
    """Coordinates of J^1 for maps R^n -> R^q, registered in fixed order."""

    def __init__(self, field: Field, n: int, q: int,
                 x_names: Sequence[str] | None = None,
                 u_names: Sequence[str] | None = None) -> None:
        if n < 1 or q < 1:
            raise JetError("need at least one independent and one dependent variable")
        self.field = field
        self.n = n
        self.q = q
        self.x_names = list(x_names) if x_names else [f"x{i}" for i in range(1, n + 1)]
        self.u_names = list(u_names) if u_names else [f"u{a}" for a in range(1, q + 1)]
        if len(self.x_names) != n or len(self.u_names) != q:
            raise JetError("coordinate name lists do not match n, q")
        if len(set(self.x_names) | set(self.u_names)) != n + q:
            raise JetError("coordinate names collide")
        self.x = [field.coordinate(nm) for nm in self.x_names]
        self.u = [field.coordinate(nm) for nm in self.u_names]
        self.p = [[field.coordinate(f"p{a + 1}_{i + 1}") for i in range(n)]
                  for a in range(q)]

    def p_name(self, alpha: int, i: int) -> str:
        """1-based name of the derivative coordinate p^alpha_i."""
        return f"p{alpha}_{i}"

    def coordinates(self) -> list[Expr]:
        out = list(self.x) + list(self.u)
        for row in self.p:
            out.extend(row)
        return out

    def coordinate_symbols(self) -> list[Symbol]:
        return [e._single_symbol() for e in self.coordinates()]

    def basis(self, existing: FormBasis | None = None) -> FormBasis:
        """A form basis with every chart differential registered, in order."""
        basis = existing if existing is not None else FormBasis(self.field)
        for c in self.coordinates():
            basis.register_differential(c)
        return basis


def contact_forms(chart: JetChart, basis: FormBasis | None = None) -> list[DForm]:
    """The q contact 1-forms du^alpha - p^alpha_i dx^i."""
    basis = basis if basis is not None else chart.basis()
    out = []
    for a in range(chart.q):
        tau = basis.one(f"d{chart.u_names[a]}")
        for i in range(chart.n):
            tau = tau - basis.one(f"d{chart.x_names[i]}", chart.p[a][i])
        out.append(tau)
    return out


class PDESystem:
    """A first-order system in solved form p = F on a jet chart."""

    def __init__(self, chart: JetChart, solved: Mapping, label: str = "") -> None:
        self.chart = chart
        self.label = label
        field = chart.field
        norm: dict[Symbol, Expr] = {}
        for key, value in solved.items():
            sym = key if isinstance(key, Symbol) else (
                key._single_symbol() if isinstance(key, Expr) else field.symbol(key))
            norm[sym] = field.expr(value)
        pnames = {chart.p[a][i]._single_symbol()
                  for a in range(chart.q) for i in range(chart.n)}
        for sym in norm:
            if sym not in pnames:
                raise JetError(f"{sym} is not a derivative coordinate of the chart")
        for sym, rhs in norm.items():
            bad = rhs.support() & set(norm)
            if bad:
                raise JetError(
                    f"right-hand side for {sym} mentions solved coordinates "
                    f"{sorted(s.name for s in bad)}")
        self.solved = norm

    def intrinsic_coordinates(self) -> list[Symbol]:
        return [s for s in self.chart.coordinate_symbols() if s not in self.solved]


@dataclass
class EmbeddingMap:
    """Substitution onto the equation submanifold, plus its chart."""

    subs: dict[Symbol, Expr]
    intrinsic: list[Symbol]

    def apply(self, e: Expr) -> Expr:
        if not self.subs:
            return e
        return e.substitute(self.subs)


def embedding(system: PDESystem) -> EmbeddingMap:
    return EmbeddingMap(dict(system.solved), system.intrinsic_coordinates())


# --- order reduction ---------------------------------------------------------


class SecondOrderProblem:
    """Scratch chart for entering equations of order <= 2.

    Coordinates: x^i, u^alpha, first derivatives named ``<u>_<x>``, second
    derivatives named ``<u>_<x><x>`` (indices ascending).  Right-hand sides
    are entered as expressions over this scratch field.
    """

    def __init__(self, x_names: Sequence[str], u_names: Sequence[str]) -> None:
        self.field = Field()
        self.x_names = list(x_names)
        self.u_names = list(u_names)
        self.n = len(x_names)
        self.x = {nm: self.field.coordinate(nm) for nm in x_names}
        self.u = {nm: self.field.coordinate(nm) for nm in u_names}
        self.d1: dict[tuple[str, int], Expr] = {}
        self.d2: dict[tuple[str, int, int], Expr] = {}
        for un in u_names:
            for i, xn in enumerate(x_names):
                self.d1[(un, i)] = self.field.coordinate(f"{un}_{xn}")
        for un in u_names:
            for i in range(self.n):
                for j in range(i, self.n):
                    self.d2[(un, i, j)] = self.field.coordinate(
                        f"{un}_{x_names[i]}{x_names[j]}")

    def names(self) -> dict[str, Expr]:
        out: dict[str, Expr] = {}
        out.update(self.x)
        out.update(self.u)
        for (un, i), e in self.d1.items():
            out[f"{un}_{self.x_names[i]}"] = e
        for (un, i, j), e in self.d2.items():
            out[f"{un}_{self.x_names[i]}{self.x_names[j]}"] = e
            if i != j:
                out[f"{un}_{self.x_names[j]}{self.x_names[i]}"] = e
        return out


@dataclass
class RawEquation:
    """One input equation ``lhs = rhs`` in solved form.

    ``lhs`` is a derivative key: (dependent name, (i,)) for first order or
    (dependent name, (i, j)) with i <= j for second order, indices 0-based.
    """

    lhs: tuple[str, tuple[int, ...]]
    rhs: Expr


def reduce_to_first_order(problem: SecondOrderProblem,
                          equations: Sequence[RawEquation],
                          constants: Mapping[str, object] | None = None,
                          label: str = "") -> PDESystem:
    """Rewrite equations of order <= 2 as a first-order system in solved form.

    Each second-order equation u_{x^a x^b} = G (a <= b) introduces the
    auxiliary dependent v = u_{x^b}; the pair becomes u_{x^b} = v and
    v_{x^a} = G with second derivatives of u rewritten through v.  Already
    first-order equations pass through unchanged.  Systems of order three
    or higher are rejected.
    """
    sec_targets: dict[str, tuple[int, int]] = {}
    for eq in equations:
        un, idx = eq.lhs
        if un not in problem.u:
            raise JetError(f"unknown dependent variable {un!r}")
        if len(idx) == 2:
            if un in sec_targets:
                raise JetError(f"multiple second-order equations for {un!r}")
            sec_targets[un] = (min(idx), max(idx))
        elif len(idx) != 1:
            raise JetError("only equations of order one or two are supported")

    # every second derivative appearing anywhere must be one being solved
    solved_d2 = set()
    for eq in equations:
        un, idx = eq.lhs
        if len(idx) == 2:
            solved_d2.add((un, min(idx), max(idx)))
    for eq in equations:
        for s in eq.rhs.support():
            for (un, i, j), e in problem.d2.items():
                if e._single_symbol() == s and (un, i, j) not in solved_d2:
                    raise JetError(
                        f"second derivative {s.name} is not solved by any equation")

    aux_name: dict[str, str] = {}
    taken = set(problem.u_names) | set(problem.x_names)
    for un in sec_targets:
        cand = "v" if len(sec_targets) == 1 and "v" not in taken else f"v{un}"
        base = cand
        k = 1
        while cand in taken:
            cand = f"{base}{k}"
            k += 1
        taken.add(cand)
        aux_name[un] = cand

    u_names = problem.u_names + [aux_name[un] for un in problem.u_names
                                 if un in aux_name]
    field = Field()
    chart = JetChart(field, problem.n, len(u_names),
                     x_names=problem.x_names, u_names=u_names)
    consts = {nm: field.parameter(nm) for nm in (constants or {})}

    u_index = {nm: a for a, nm in enumerate(u_names)}

    def translate(e: Expr) -> Expr:
        mapping = {}
        for nm, x in problem.x.items():
            mapping[x._single_symbol()] = chart.x[problem.x_names.index(nm)]
        for nm, u in problem.u.items():
            mapping[u._single_symbol()] = chart.u[u_index[nm]]
        for (un, i), e1 in problem.d1.items():
            if un in sec_targets and i == sec_targets[un][1]:
                mapping[e1._single_symbol()] = chart.u[u_index[aux_name[un]]]
            else:
                mapping[e1._single_symbol()] = chart.p[u_index[un]][i]
        for (un, i, j), e2 in problem.d2.items():
            if (un, i, j) in solved_d2:
                a, b = i, j
                mapping[e2._single_symbol()] = chart.p[u_index[aux_name[un]]][a]
        for nm, sym in consts.items():
            if problem.field.has_generator(nm):
                mapping[problem.field.symbol(nm)] = sym
        return _transport(problem.field, field, e, mapping)

    solved: dict[Symbol, Expr] = {}
    for eq in equations:
        un, idx = eq.lhs
        if len(idx) == 1:
            target = chart.p[u_index[un]][idx[0]]
        else:
            a, b = min(idx), max(idx)
            vname = aux_name[un]
            solved[chart.p[u_index[un]][b]._single_symbol()] = chart.u[u_index[vname]]
            target = chart.p[u_index[vname]][a]
        solved[target._single_symbol()] = translate(eq.rhs)

    # iterate substitution so right-hand sides avoid solved coordinates
    for _ in range(len(solved) + 1):
        dirty = False
        for sym, rhs in list(solved.items()):
            hit = rhs.support() & set(solved)
            if hit:
                solved[sym] = rhs.substitute({s: solved[s] for s in hit})
                dirty = True
        if not dirty:
            break
    else:
        raise JetError("solved equations substitute cyclically")
    return PDESystem(chart, solved, label=label)


def _transport(src: Field, dst: Field, e: Expr, mapping: dict[Symbol, Expr]) -> Expr:
    """Move an expression between fields along a generator mapping."""
    import sympy

    abstract = {}
    for sym in e.support():
        if src.kind_of(sym) in ("coordinate", "parameter"):
            if sym not in mapping:
                raise JetError(f"no image for generator {sym.name} during reduction")
            abstract[sym] = mapping[sym]
    num, den = e.num, e.den
    for sym in (num.free_symbols | den.free_symbols):
        if sym in src._exps:
            atom = src._exps[sym]
            arg = _transport(src, dst, src._make(atom.arg_num, atom.arg_den), mapping)
            abstract[sym] = dst.exp(arg)
        elif sym in src._roots:
            atom = src._roots[sym]
            base = _transport(src, dst, src._make(atom.base, sympy.S.One), mapping)
            abstract[sym] = dst.root(base, atom.index)
    sym_subs = {s: v.num / v.den for s, v in abstract.items()}
    quotient = sympy.together(num.xreplace(sym_subs) / den.xreplace(sym_subs))
    nn, dd = sympy.fraction(quotient)
    return dst._make(nn, dd)
