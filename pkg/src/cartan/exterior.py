"""Exterior algebra of differential forms over the shared function field.

Forms are sparse: a :class:`DForm` of degree k maps strictly increasing
k-tuples of basis indices to nonzero coefficients.  The ordered
:class:`FormBasis` registry holds every 1-form label of a session —
coordinate and parameter differentials, coframe elements, and modified
Maurer–Cartan form labels — so wedge ordering and printing are stable.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

from sympy import Symbol

from .symfield import AssumptionSet, Expr, Field, FieldError, Scalar
from .symfield import expr_sum as sf_expr_sum
from .symfield import quotient_sum as sf_quotient_sum


class ExteriorError(ValueError):
    """Raised for basis mismatches, singular transitions and bad pullbacks."""


_KINDS = ("coordinate-differential", "parameter-differential",
          "coframe-element", "mc-form")


@dataclass(frozen=True)
class Basis1Form:
    name: str
    kind: str

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ExteriorError(f"unknown 1-form kind {self.kind!r}")

    def __str__(self) -> str:
        return self.name


class FormBasis:
    """Ordered registry of the 1-form labels active in a session."""

    def __init__(self, field: Field) -> None:
        self.field = field
        self.forms: list[Basis1Form] = []
        self._index: dict[str, int] = {}
        self._diff_of: dict[Symbol, int] = {}
        self._definitions: dict[int, "DForm"] = {}

    def add(self, name: str, kind: str) -> Basis1Form:
        if name in self._index:
            raise ExteriorError(f"1-form name {name!r} already registered")
        form = Basis1Form(name, kind)
        self._index[name] = len(self.forms)
        self.forms.append(form)
        return form

    def register_differential(self, gen) -> Basis1Form:
        """Add the differential of a coordinate or group parameter."""
        sym = gen if isinstance(gen, Symbol) else (
            gen._single_symbol() if isinstance(gen, Expr) else self.field.symbol(gen))
        kind = self.field.kind_of(sym)
        if kind not in ("coordinate", "parameter"):
            raise ExteriorError("only coordinates and parameters have differentials")
        if sym in self._diff_of:
            return self.forms[self._diff_of[sym]]
        form = self.add("d" + sym.name, kind + "-differential")
        self._diff_of[sym] = self._index[form.name]
        return form

    def differential_pairs(self) -> list[tuple[Symbol, int]]:
        """(generator, basis index) pairs, in basis order."""
        return sorted(self._diff_of.items(), key=lambda kv: kv[1])

    def index(self, form) -> int:
        name = form.name if isinstance(form, Basis1Form) else str(form)
        try:
            return self._index[name]
        except KeyError:
            raise ExteriorError(f"1-form {name!r} is not registered") from None

    def __getitem__(self, name: str) -> Basis1Form:
        return self.forms[self.index(name)]

    def is_differential(self, idx: int) -> bool:
        return self.forms[idx].kind.endswith("-differential")

    def define(self, form, expansion: "DForm") -> None:
        """Attach a flat (differentials-only) expansion to a label."""
        idx = self.index(form)
        for key in expansion.terms:
            for i in key:
                if not self.is_differential(i):
                    raise ExteriorError("definitions must be flat over differentials")
        self._definitions[idx] = expansion

    def definition(self, idx: int) -> "DForm | None":
        return self._definitions.get(idx)

    # -- constructors

    def zero(self, degree: int = 1) -> "DForm":
        return DForm(self, degree, {})

    def one(self, form, coeff: Scalar = 1) -> "DForm":
        idx = self.index(form)
        c = self.field.expr(coeff)
        return DForm(self, 1, {(idx,): c} if not c.is_zero else {})

    def combo(self, pairs: Iterable[tuple] ) -> "DForm":
        """1-form from (label, coefficient) pairs."""
        total = self.zero(1)
        for form, coeff in pairs:
            total = total + self.one(form, coeff)
        return total


class DForm:
    """Sparse exterior form of fixed degree over a FormBasis.  Immutable."""

    __slots__ = ("basis", "degree", "terms")

    def __init__(self, basis: FormBasis, degree: int,
                 terms: Mapping[tuple[int, ...], Expr]) -> None:
        self.basis = basis
        self.degree = degree
        clean = {}
        for key, coeff in terms.items():
            if len(key) != degree:
                raise ExteriorError("term arity does not match the form degree")
            if any(key[i] >= key[i + 1] for i in range(len(key) - 1)):
                raise ExteriorError("term keys must be strictly increasing")
            if not coeff.is_zero:
                clean[tuple(key)] = coeff
        self.terms = clean

    # -- helpers

    @property
    def is_zero(self) -> bool:
        return not self.terms

    def coefficient(self, *forms) -> Expr:
        idxs = tuple(self.basis.index(f) for f in forms)
        sign, key = _sort_key(idxs)
        if sign == 0:
            return self.basis.field.zero
        c = self.terms.get(key)
        if c is None:
            return self.basis.field.zero
        return c if sign > 0 else -c

    def map_coefficients(self, fn) -> "DForm":
        return DForm(self.basis, self.degree,
                     {k: fn(c) for k, c in self.terms.items()})

    # -- linear structure

    def _check(self, other: "DForm") -> None:
        if self.basis is not other.basis:
            raise ExteriorError("forms live over different bases")
        if self.degree != other.degree:
            raise ExteriorError("cannot add forms of different degree")

    def __add__(self, other: "DForm") -> "DForm":
        self._check(other)
        terms = dict(self.terms)
        for key, c in other.terms.items():
            terms[key] = terms.get(key, self.basis.field.zero) + c
        return DForm(self.basis, self.degree, terms)

    def __sub__(self, other: "DForm") -> "DForm":
        return self + (-other)

    def __neg__(self) -> "DForm":
        return DForm(self.basis, self.degree,
                     {k: -c for k, c in self.terms.items()})

    def __mul__(self, scalar) -> "DForm":
        c = self.basis.field.expr(scalar)
        return DForm(self.basis, self.degree,
                     {k: v * c for k, v in self.terms.items()})

    __rmul__ = __mul__

    def __eq__(self, other) -> bool:
        if not isinstance(other, DForm):
            return NotImplemented
        return (self.basis is other.basis and self.degree == other.degree
                and self.terms == other.terms)

    def __ne__(self, other):
        r = self.__eq__(other)
        return r if r is NotImplemented else not r

    # -- exterior operations (method forms of the module-level API)

    def wedge(self, other: "DForm") -> "DForm":
        return wedge(self, other)

    def d(self) -> "DForm":
        return ext_d(self)

    def __str__(self) -> str:
        if not self.terms:
            return "0"
        parts = []
        for key in sorted(self.terms):
            names = "^".join(self.basis.forms[i].name for i in key)
            c = self.terms[key]
            cs = str(c)
            if cs == "1":
                parts.append(names if names else "1")
            elif cs == "-1":
                parts.append(f"-{names}" if names else "-1")
            else:
                if any(ch in cs for ch in "+-") and not cs.lstrip("-").isdigit():
                    cs = f"({cs})"
                parts.append(f"{cs}*{names}" if names else cs)
        out = parts[0]
        for p in parts[1:]:
            out += f" - {p[1:]}" if p.startswith("-") else f" + {p}"
        return out

    def __repr__(self) -> str:
        return f"DForm({self})"


def _sort_key(idxs: Sequence[int]) -> tuple[int, tuple[int, ...]]:
    """Sort indices, returning (parity sign, sorted tuple); 0 on repeats."""
    idxs = list(idxs)
    sign = 1
    for i in range(1, len(idxs)):
        j = i
        while j > 0 and idxs[j - 1] > idxs[j]:
            idxs[j - 1], idxs[j] = idxs[j], idxs[j - 1]
            sign = -sign
            j -= 1
    for i in range(len(idxs) - 1):
        if idxs[i] == idxs[i + 1]:
            return 0, ()
    return sign, tuple(idxs)


def form_sum(basis: FormBasis, degree: int, forms: Iterable[DForm]) -> DForm:
    pieces: dict[tuple, list] = {}
    for f in forms:
        if f.degree != degree or f.basis is not basis:
            raise ExteriorError("form_sum arguments must share basis and degree")
        for key, c in f.terms.items():
            pieces.setdefault(key, []).append(c)
    field = basis.field
    terms = {key: sf_expr_sum(field, cs) for key, cs in pieces.items()}
    return DForm(basis, degree, terms)


def wedge(a: DForm, b: DForm) -> DForm:
    """Graded-anticommutative product, bilinear over the field."""
    if a.basis is not b.basis:
        raise ExteriorError("wedge of forms over different bases")
    basis = a.basis
    field = basis.field
    pieces: dict[tuple, list] = {}
    for ka, ca in a.terms.items():
        ca = ca._current()
        for kb, cb in b.terms.items():
            sign, key = _sort_key(ka + kb)
            if sign == 0:
                continue
            cb = cb._current()
            num = ca.num * cb.num
            if sign < 0:
                num = -num
            pieces.setdefault(key, []).append((num, ca.den * cb.den))
    terms = {key: sf_quotient_sum(field, ps) for key, ps in pieces.items()}
    return DForm(basis, a.degree + b.degree, terms)


def ext_d(f: DForm) -> DForm:
    """Exterior derivative of a form written over raw differentials."""
    basis = f.basis
    for key in f.terms:
        for i in key:
            if not basis.is_differential(i):
                raise ExteriorError(
                    "ext_d needs a form over coordinate/parameter differentials; "
                    f"found {basis.forms[i].name}")
    pairs = basis.differential_pairs()
    terms: dict = {}
    zero = basis.field.zero
    for key, coeff in f.terms.items():
        for gen, gi in pairs:
            dc = coeff.derivative(gen)
            if dc.is_zero:
                continue
            sign, newkey = _sort_key((gi,) + key)
            if sign == 0:
                continue
            c = dc if sign > 0 else -dc
            terms[newkey] = terms.get(newkey, zero) + c
    return DForm(basis, f.degree + 1, terms)


def d_scalar(basis: FormBasis, e: Expr) -> DForm:
    """Differential of a scalar as a 1-form over the registered differentials."""
    terms = {}
    for gen, gi in basis.differential_pairs():
        dc = e.derivative(gen)
        if not dc.is_zero:
            terms[(gi,)] = dc
    return DForm(basis, 1, terms)


class CoframeBasis:
    """A working coframe: labels with flat expansions over differentials.

    Construction solves the expansions for a pivot set of differentials, so
    that any form over the raw differentials can be rewritten over the
    coframe labels plus the leftover (non-pivot) differentials.  Pivot
    nonzeroness is recorded in the supplied assumption set.
    """

    def __init__(self, basis: FormBasis, labels: Sequence[Basis1Form],
                 expansions: Sequence[DForm],
                 assumptions: AssumptionSet | None = None) -> None:
        if len(labels) != len(expansions):
            raise ExteriorError("labels and expansions differ in length")
        self.basis = basis
        self.labels = list(labels)
        self.expansions = list(expansions)
        field = basis.field
        for lab, exp in zip(self.labels, self.expansions):
            if basis.definition(basis.index(lab)) is None:
                basis.define(lab, exp)

        # Gauss-Jordan over the field on rows of expansion coefficients
        rows: list[dict[int, Expr]] = [
            {k[0]: c for k, c in e.terms.items()} for e in self.expansions]
        extra: list[dict[int, Expr]] = [
            {i: field.one} for i in range(len(rows))]  # running label combos
        pivots: list[int | None] = [None] * len(rows)
        used_cols: set[int] = set()
        for r in range(len(rows)):
            pivot_col = None
            for col in sorted(rows[r]):
                if col not in used_cols and not rows[r][col].is_zero:
                    pivot_col = col
                    break
            if pivot_col is None:
                done = [self.labels[i].name for i, p in enumerate(pivots) if p is not None]
                raise ExteriorError(
                    f"singular coframe transition: {self.labels[r].name} depends on "
                    f"earlier forms (vanishing minor after pivots {done})")
            pivots[r] = pivot_col
            used_cols.add(pivot_col)
            pv = rows[r][pivot_col]
            if assumptions is not None:
                assumptions.assume_nonzero(
                    pv, f"coframe pivot for {self.labels[r].name}")
            for j in range(len(rows)):
                if j == r or pivot_col not in rows[j]:
                    continue
                factor = rows[j][pivot_col] / pv
                for col, val in rows[r].items():
                    rows[j][col] = rows[j].get(col, field.zero) - factor * val
                for col, val in extra[r].items():
                    extra[j][col] = extra[j].get(col, field.zero) - factor * val
                rows[j] = {c: v for c, v in rows[j].items() if not v.is_zero}
                extra[j] = {c: v for c, v in extra[j].items() if not v.is_zero}

        # dd_pivot = (combo of labels  -  leftover diffs) / pivot
        self._diff_map: dict[int, DForm] = {}
        for r, pivot_col in enumerate(pivots):
            pv = rows[r][pivot_col]
            terms: dict = {}
            for li, c in extra[r].items():
                terms[(basis.index(self.labels[li]),)] = c / pv
            for col, val in rows[r].items():
                if col != pivot_col:
                    terms[(col,)] = terms.get((col,), field.zero) - val / pv
            self._diff_map[pivot_col] = DForm(basis, 1, terms)

    @classmethod
    def raw(cls, basis: FormBasis, diff_forms: Sequence[Basis1Form]) -> "CoframeBasis":
        """The identity coframe over a set of raw differentials."""
        return cls(basis, list(diff_forms),
                   [basis.one(f) for f in diff_forms])

    def pivot_differentials(self) -> list[int]:
        return sorted(self._diff_map)

    def expand_differential(self, idx: int) -> DForm:
        """The 1-form replacing a raw differential, if it is a pivot."""
        return self._diff_map.get(idx, self.basis.one(self.basis.forms[idx]))


def flatten(f: DForm) -> DForm:
    """Replace every labeled 1-form in ``f`` by its flat definition."""
    basis = f.basis
    out_terms: list[DForm] = []
    for key, coeff in f.terms.items():
        part = None
        for i in key:
            defn = basis.definition(i)
            factor = defn if defn is not None else basis.one(basis.forms[i])
            part = factor if part is None else wedge(part, factor)
        if part is None:
            part = DForm(basis, 0, {(): basis.field.one})
        out_terms.append(part * coeff)
    if not out_terms:
        return DForm(basis, f.degree, {})
    return form_sum(basis, f.degree, out_terms)


def rebase(f: DForm, target: CoframeBasis) -> DForm:
    """Express ``f`` over the target coframe labels plus leftover differentials.

    Labeled forms inside ``f`` are first flattened to raw differentials via
    their registered definitions; pivot differentials are then replaced by
    the coframe solution.  Coefficients on leftover raw differentials are
    exactly the dependence the normalization loop checks for.
    """
    basis = f.basis
    flat = flatten(f)
    out_terms: list[DForm] = []
    for key, coeff in flat.terms.items():
        part = None
        for i in key:
            factor = target.expand_differential(i)
            part = factor if part is None else wedge(part, factor)
        if part is None:
            part = DForm(basis, 0, {(): basis.field.one})
        out_terms.append(part * coeff)
    if not out_terms:
        return DForm(basis, f.degree, {})
    return form_sum(basis, f.degree, out_terms)


def substitute(f: DForm, subs: Mapping) -> DForm:
    """Pullback along a coordinate substitution.

    Coefficients are substituted; each differential of a substituted
    coordinate is expanded by the chain rule.  The substituted coordinates
    must not appear among the values (the map eliminates them).
    """
    basis = f.basis
    field = basis.field
    sym_map: dict[Symbol, Expr] = {}
    for key, value in subs.items():
        sym = key if isinstance(key, Symbol) else (
            key._single_symbol() if isinstance(key, Expr) else field.symbol(key))
        sym_map[sym] = field.expr(value)
    for value in sym_map.values():
        bad = set(sym_map) & value.support()
        if bad:
            raise ExteriorError(
                f"substituted coordinates reappear in a value: {sorted(s.name for s in bad)}")

    replacements: dict[int, DForm] = {}
    for sym, value in sym_map.items():
        if sym in dict(basis.differential_pairs()):
            idx = dict(basis.differential_pairs())[sym]
            dv = d_scalar(basis, value)
            dv = DForm(basis, 1, {k: c.substitute(sym_map) for k, c in dv.terms.items()})
            replacements[idx] = dv

    out_terms: list[DForm] = []
    for key, coeff in f.terms.items():
        for i in key:
            if not basis.is_differential(i):
                raise ExteriorError("substitute needs a form over raw differentials")
        part = None
        for i in key:
            factor = replacements.get(i, basis.one(basis.forms[i]))
            part = factor if part is None else wedge(part, factor)
        new_coeff = coeff.substitute(sym_map)
        if part is None:
            part = DForm(basis, 0, {(): field.one})
        out_terms.append(part * new_coeff)
    if not out_terms:
        return DForm(basis, f.degree, {})
    return form_sum(basis, f.degree, out_terms)
