"""Exact arithmetic in a rational function field with root and exponential atoms.

Every scalar that occurs in a coframe computation lives in a shared
:class:`Field`: chart coordinates, group parameters, q-th-root atoms over
polynomial bases, and exponential atoms.  An :class:`Expr` is kept in
canonical form at all times — a reduced ratio of two expanded multivariate
polynomials over the rationals in the field generators, with every root-atom
power reduced below its index, root atoms cleared out of the denominator,
and the denominator scaled to leading coefficient 1.  Equality and
zero-testing are therefore decidable by structural comparison.

Root atoms assume positive bases, so a root of a product splits into the
product of the roots of its irreducible factors.  Exponential atoms are
treated as algebraically independent transcendentals; arguments of
exponentials are never rewritten.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from math import gcd, lcm
from typing import Iterable, Mapping, Sequence, Union

import sympy
from sympy import Integer, Rational, S, Symbol


class FieldError(ValueError):
    """An operation fell outside the supported fragment of the field."""


GenLike = Union[str, Symbol, "Expr"]
Scalar = Union[int, Fraction, Rational, "Expr"]


# --- atoms ----------------------------------------------------------------

@dataclass
class RootAtom:
    """A q-th root of a polynomial base, base assumed positive.

    The symbol satisfies ``symbol**index == base`` and no other relation;
    canonicalization rewrites ``symbol**k`` with ``k >= index`` accordingly.
    """

    symbol: Symbol
    base: sympy.Expr          # expanded polynomial, free of root atoms
    index: int                # q >= 2

    def base_expr(self, field: "Field") -> "Expr":
        return field._make(self.base, S.One)


@dataclass
class ExpAtom:
    """An exponential of a fixed argument, treated as a transcendental."""

    symbol: Symbol
    arg_num: sympy.Expr
    arg_den: sympy.Expr

    def argument(self, field: "Field") -> "Expr":
        return field._make(self.arg_num, self.arg_den)


# --- assumptions ----------------------------------------------------------

@dataclass
class AssumptionEntry:
    expr: "Expr"
    provenance: str
    positive: bool = False


class AssumptionSet:
    """Record of nonzero (and positive) assumptions with provenance.

    Entries created by normalizations and linear-solve pivots live here;
    positivity of root-atom bases is recorded on the owning :class:`Field`
    and merged into every view of the set.
    """

    def __init__(self, field: "Field") -> None:
        self.field = field
        self._entries: list[AssumptionEntry] = []
        self._keys: set[tuple] = set()

    def assume_nonzero(self, e: Scalar, provenance: str, positive: bool = False) -> None:
        e = self.field.expr(e)
        if e.is_zero:
            raise FieldError("cannot assume an identically-zero expression nonzero")
        if e.is_rational:
            return  # a nonzero constant carries no information
        key = e._key()
        if key in self._keys or key in self.field._atom_keys():
            return
        self._keys.add(key)
        self._entries.append(AssumptionEntry(e, provenance, positive))

    @property
    def nonzero(self) -> list["Expr"]:
        return [entry.expr for entry in self.entries()]

    def entries(self) -> list[AssumptionEntry]:
        return list(self.field._atom_assumptions) + list(self._entries)

    def implies_nonzero(self, e: Scalar) -> bool:
        """True when nonzeroness of ``e`` follows from the recorded entries.

        An expression counts as implied when every irreducible factor of its
        numerator is either constant, an atom symbol, or an entry of the set.
        """
        e = self.field.expr(e)
        if e.is_zero:
            return False
        if e.is_rational:
            return True
        keys = self._keys | self.field._atom_keys()
        _, factors = sympy.factor_list(e.num)
        for f, _ in factors:
            fe = self.field._make(f, S.One)
            sym = fe._single_symbol()
            if sym is not None and self.field.kind_of(sym) in ("root", "exp"):
                continue
            if fe._key() not in keys:
                return False
        return True

    def copy(self) -> "AssumptionSet":
        out = AssumptionSet(self.field)
        out._entries = list(self._entries)
        out._keys = set(self._keys)
        return out

    def merge(self, other: "AssumptionSet") -> None:
        for entry in other._entries:
            self.assume_nonzero(entry.expr, entry.provenance, entry.positive)

    def __len__(self) -> int:
        return len(self.entries())

    def __iter__(self):
        return iter(self.entries())


# --- linear solving result --------------------------------------------------

@dataclass
class LinearSolution:
    """Outcome of a linear solve over the field.

    ``assignments`` maps each pivoted unknown to an expression in free
    unknowns only; ``new_assumptions`` lists the pivot expressions whose
    nonzeroness the solution relies on; when ``consistent`` is false,
    ``witness`` is a residual that no assignment can cancel.
    """

    assignments: dict[Symbol, "Expr"]
    free: list[Symbol]
    new_assumptions: list["Expr"]
    consistent: bool
    witness: "Expr | None" = None


# --- the field -------------------------------------------------------------

class Field:
    """Registry of generators and factory for canonical expressions.

    Generator order — coordinates in creation order, parameters sorted by
    name, atoms in creation order — fixes leading coefficients, pivoting and
    printing, hence all results are reproducible run to run.
    """

    def __init__(self) -> None:
        self._coords: list[Symbol] = []
        self._params: list[Symbol] = []
        self._atoms: list[Symbol] = []
        self._roots: dict[Symbol, RootAtom] = {}
        self._exps: dict[Symbol, ExpAtom] = {}
        self._by_name: dict[str, Symbol] = {}
        self._root_key: dict[tuple[str, int], Symbol] = {}
        self._exp_key: dict[str, Symbol] = {}
        self._retired: set[Symbol] = set()
        self._rewrites: dict[Symbol, sympy.Expr] = {}
        self.rewrite_version = 0
        self._atom_assumptions: list[AssumptionEntry] = []
        self._order_cache: dict[Symbol, int] | None = None
        self._counter = 0

    # -- registration

    def _register(self, name: str, kind: str) -> Symbol:
        if not name or name.startswith("_"):
            raise FieldError(f"invalid generator name {name!r}")
        if name in self._by_name:
            raise FieldError(f"generator {name!r} already exists")
        sym = Symbol(name)
        self._by_name[name] = sym
        if kind == "coordinate":
            self._coords.append(sym)
        else:
            self._params.append(sym)
        self._order_cache = None
        return sym

    def coordinate(self, name: str) -> "Expr":
        return self._gen_expr(self._register(name, "coordinate"))

    def parameter(self, name: str) -> "Expr":
        return self._gen_expr(self._register(name, "parameter"))

    def coordinates(self) -> list[Symbol]:
        return list(self._coords)

    def parameters(self) -> list[Symbol]:
        return list(self._params)

    def root_atoms(self) -> list[RootAtom]:
        return [self._roots[s] for s in self._atoms
                if s in self._roots and s not in self._retired]

    def exp_atoms(self) -> list[ExpAtom]:
        return [self._exps[s] for s in self._atoms
                if s in self._exps and s not in self._retired]

    def has_generator(self, name: str) -> bool:
        return name in self._by_name

    def symbol(self, name: str) -> Symbol:
        try:
            return self._by_name[name]
        except KeyError:
            raise FieldError(f"unknown generator {name!r}") from None

    def kind_of(self, sym: Symbol) -> str:
        if sym in self._roots:
            return "root"
        if sym in self._exps:
            return "exp"
        if sym in self._coords:
            return "coordinate"
        if sym in self._params:
            return "parameter"
        raise FieldError(f"symbol {sym} is not a generator of this field")

    def ordered_generators(self) -> list[Symbol]:
        return (list(self._coords)
                + sorted(self._params, key=lambda s: s.name)
                + list(self._atoms))

    def _order_map(self) -> dict[Symbol, int]:
        if self._order_cache is None:
            self._order_cache = {s: i for i, s in enumerate(self.ordered_generators())}
        return self._order_cache

    def _atom_keys(self) -> set[tuple]:
        return {entry.expr._key() for entry in self._atom_assumptions}

    # -- conversion

    def expr(self, value: Scalar | GenLike) -> "Expr":
        if isinstance(value, Expr):
            if value.field is not self:
                raise FieldError("expression belongs to a different field")
            return value._current()
        if isinstance(value, bool):
            raise FieldError("booleans are not field elements")
        if isinstance(value, int):
            return Expr(self, Integer(value), S.One, self.rewrite_version)
        if isinstance(value, Fraction):
            return self._make(Rational(value.numerator, value.denominator), S.One)
        if isinstance(value, Rational):
            return self._make(value, S.One)
        if isinstance(value, Symbol):
            self.kind_of(value)  # raises when foreign
            return self._gen_expr(value)
        if isinstance(value, str):
            return self._gen_expr(self.symbol(value))
        raise FieldError(f"cannot convert {value!r} to a field element")

    def _gen_expr(self, sym: Symbol) -> "Expr":
        if sym in self._rewrites:
            return self._make(sym, S.One)
        return Expr(self, sym, S.One, self.rewrite_version)

    @property
    def zero(self) -> "Expr":
        return Expr(self, S.Zero, S.One, self.rewrite_version)

    @property
    def one(self) -> "Expr":
        return Expr(self, S.One, S.One, self.rewrite_version)

    # -- canonicalization pipeline

    def _reduce(self, P: sympy.Expr) -> sympy.Expr:
        """Expand and rewrite every root-atom power below its index."""
        P = sympy.expand(P)
        syms = P.free_symbols
        changed = False
        for r in list(syms):
            atom = self._roots.get(r)
            if atom is None:
                continue
            q, B = atom.index, atom.base

            def hit(e, r=r, q=q):
                return (e.is_Pow and e.base == r
                        and e.exp.is_Integer and int(e.exp) >= q)

            def swap(e, q=q, B=B, r=r):
                k = int(e.exp)
                return B ** (k // q) * r ** (k % q)

            newP = P.replace(hit, swap)
            if newP is not P:
                P = newP
                changed = True
        if changed:
            P = sympy.expand(P)
        return P

    def _rationalize(self, num: sympy.Expr, den: sympy.Expr):
        """Clear root atoms out of the denominator."""
        while True:
            atoms = [s for s in den.free_symbols if s in self._roots]
            if not atoms:
                return num, den
            atoms.sort(key=lambda s: self._atoms.index(s))
            poly = den.as_poly(*atoms)
            if poly is not None and len(poly.terms()) == 1:
                exps, _ = poly.terms()[0]
                mult = S.One
                for s, e in zip(atoms, exps):
                    if e:
                        mult *= s ** (self._roots[s].index - e)
                num = self._reduce(num * mult)
                den = self._reduce(den * mult)
                continue
            # general case: invert with respect to the last-created atom
            r = atoms[-1]
            q, B = self._roots[r].index, self._roots[r].base
            dpoly = den.as_poly(r)
            coeff = {}
            for (e,), c in dpoly.terms():
                coeff[e] = c.as_expr() if hasattr(c, "as_expr") else c
            M = sympy.zeros(q, q)
            for k in range(q):
                for j, dj in coeff.items():
                    M[(j + k) % q, k] += dj * B ** ((j + k) // q)
            det = sympy.expand(M.det(method="berkowitz"))
            if det.is_zero:
                raise FieldError("root relation degenerated while rationalizing")
            adj = M.adjugate()
            inv = sum(adj[k, 0] * r ** k for k in range(q))
            num = self._reduce(num * inv)
            den = self._reduce(det)

    def _lex_lc(self, P: sympy.Expr) -> Rational:
        """Leading coefficient of ``P`` in lex order over the generators."""
        if P.is_Number:
            return P
        order = self._order_map()
        n = len(order)
        best_vec = None
        best_coeff = None
        for mon, coeff in P.as_coefficients_dict().items():
            vec = [0] * n
            for s, p in mon.as_powers_dict().items():
                if s is S.One:
                    continue
                vec[order[s]] = int(p)
            if best_vec is None or vec > best_vec:
                best_vec = vec
                best_coeff = coeff
        return best_coeff

    @staticmethod
    def _cancel_pair(num: sympy.Expr, den: sympy.Expr
                     ) -> tuple[sympy.Expr, sympy.Expr]:
        c, P, Q = sympy.cancel((num, den))
        c = Rational(c)
        return sympy.expand(P * c.p), sympy.expand(Q * c.q)

    def _make(self, num: sympy.Expr, den: sympy.Expr) -> "Expr":
        """Run the full canonicalization pipeline on a polynomial quotient."""
        if self._rewrites:
            num = num.xreplace(self._rewrites)
            den = den.xreplace(self._rewrites)
        num = self._reduce(num)
        den = self._reduce(den)
        if den.is_zero:
            raise ZeroDivisionError("division by an identically-zero expression")
        if num.is_zero:
            return Expr(self, S.Zero, S.One, self.rewrite_version)
        if not den.is_Number:
            num, den = self._cancel_pair(num, den)
            num, den = self._rationalize(num, den)
            if not den.is_Number:
                num, den = self._cancel_pair(num, den)
        lc = self._lex_lc(den)
        if lc != 1:
            num = sympy.expand(num / lc)
            den = sympy.expand(den / lc)
        return Expr(self, num, den, self.rewrite_version)

    # -- atoms

    def root(self, e: Scalar | GenLike, index: int) -> "Expr":
        """Principal ``index``-th root of ``e``, split over irreducible factors."""
        if index < 1:
            raise FieldError("root index must be positive")
        e = self.expr(e)
        if index == 1:
            return e
        return self._root_of_poly(e.num, index) / self._root_of_poly(e.den, index)

    def _root_of_poly(self, P: sympy.Expr, q: int) -> "Expr":
        if P.is_zero:
            return self.zero
        const, factors = sympy.factor_list(P)
        c = Rational(const)
        oriented: list[tuple[sympy.Expr, int]] = []
        for f, m in factors:
            f = sympy.expand(f)
            neg = sympy.expand(-f)
            if not self._base_assumed_positive(f) and self._base_assumed_positive(neg):
                # the opposite orientation is already assumed positive
                f = neg
                c *= Rational(-1) ** m
            elif c < 0 and len(factors) == 1 and m % 2 == 1:
                # keep the caller's sign on a single base
                f, c = neg, -c
            oriented.append((f, m))
        out = self._rational_root(c, q)
        for f, m in oriented:
            k, s = divmod(m, q)
            if k:
                out = out * self._make(f, S.One) ** k
                if q % 2 == 0 and k % 2 == 1 and s == 0 \
                        and not self._base_assumed_positive(f):
                    self._atom_assumptions.append(AssumptionEntry(
                        self._make(f, S.One),
                        f"positive branch extracting a {q}-th root",
                        positive=True,
                    ))
            if s:
                out = out * self._atom_monomial(f, q) ** s
        return out

    def assume_positive(self, e: Scalar | GenLike) -> None:
        """Declare a scalar positive, fixing the branch of later root extractions.

        The sign information is attached to the single odd-multiplicity
        irreducible factor of the expression (even powers of nonzero factors
        are already positive); an expression with several odd-multiplicity
        factors is ambiguous and rejected.
        """
        e = self.expr(e)
        if e.is_zero:
            raise FieldError("cannot assume zero positive")
        if e.is_rational:
            if Rational(e.num, e.den) <= 0:
                raise FieldError(f"{e} is a non-positive constant")
            return
        const, factors = sympy.factor_list(sympy.expand(e.num * e.den))
        c = Rational(const)
        odd = [sympy.expand(f) for f, m in factors
               if m % 2 == 1 and not f.is_number]
        if not odd:
            if c < 0:
                raise FieldError(f"{e} is manifestly non-positive")
            return  # even powers of nonzero factors are already positive
        if len(odd) > 1:
            raise FieldError(
                "a positivity declaration needs exactly one odd-multiplicity "
                f"factor; {e} has {len(odd)}")
        base = odd[0] if c > 0 else sympy.expand(-odd[0])
        if self._base_assumed_positive(base):
            return
        neg = sympy.expand(-base)
        if self._base_assumed_positive(neg):
            raise FieldError(
                f"the opposite sign of {self._make(base, S.One)} is already "
                "assumed positive")
        self._atom_assumptions.append(AssumptionEntry(
            self._make(base, S.One), "declared positive", positive=True))

    def _base_assumed_positive(self, f: sympy.Expr) -> bool:
        key = sympy.srepr(f)
        if any(k == key for (k, _qq) in self._root_key):
            return True
        return any(entry.positive and sympy.srepr(entry.expr.num) == key
                   and entry.expr.den is S.One
                   for entry in self._atom_assumptions)

    def _rational_root(self, c: Rational, q: int) -> "Expr":
        if c.is_negative:
            if q % 2 == 0:
                raise FieldError("even root of a negative constant")
            return -self._rational_root(-c, q)
        p, r = sympy.integer_nthroot(c.p, q), sympy.integer_nthroot(c.q, q)
        if p[1] and r[1]:
            return self.expr(Rational(p[0], r[0]))
        out = self.one
        for prime, m in sympy.factorint(c.p).items():
            k, s = divmod(m, q)
            out = out * self.expr(prime ** k)
            if s:
                out = out * self._atom_monomial(Integer(prime), q) ** s
        for prime, m in sympy.factorint(c.q).items():
            k, s = divmod(m, q)
            out = out / self.expr(prime ** k)
            if s:
                out = out / self._atom_monomial(Integer(prime), q) ** s
        return out

    def _atom_monomial(self, base: sympy.Expr, q: int) -> "Expr":
        """Expression for ``base**(1/q)``, refining existing atoms if needed."""
        base = sympy.expand(base)
        if any(s in self._roots for s in base.free_symbols):
            raise FieldError("nested roots of root-atom expressions are not supported")
        key = sympy.srepr(base)
        neg = sympy.expand(-base)
        if not self._base_assumed_positive(base) \
                and self._base_assumed_positive(neg):
            if q % 2 == 0:
                raise FieldError(
                    "even root of an expression whose opposite is assumed positive")
            return -self._atom_monomial(neg, q)
        matching = [(qq, sym) for (k, qq), sym in self._root_key.items() if k == key]
        target = q
        for qq, _ in matching:
            target = lcm(target, qq)
        for qq, sym in matching:
            if qq == target:
                return self._gen_expr(sym) ** (target // q)
        # need a finer atom; retire any coarser ones over the same base
        sym = self._new_root_atom(base, target, key)
        for qq, old in matching:
            self._rewrites[old] = sym ** (target // qq)
            self._retired.add(old)
            del self._root_key[(key, qq)]
            self.rewrite_version += 1
        return self._gen_expr(sym) ** (target // q)

    def _new_root_atom(self, base: sympy.Expr, q: int, key: str) -> Symbol:
        name = f"_r{self._counter}"
        self._counter += 1
        sym = Symbol(name)
        atom = RootAtom(sym, base, q)
        self._atoms.append(sym)
        self._roots[sym] = atom
        self._root_key[(key, q)] = sym
        self._order_cache = None
        self._atom_assumptions.append(AssumptionEntry(
            self._make(base, S.One),
            f"base of the root atom {name} = (...)^(1/{q}), assumed positive",
            positive=True,
        ))
        return sym

    def exp(self, arg: Scalar | GenLike) -> "Expr":
        arg = self.expr(arg)
        if arg.is_zero:
            return self.one
        key = sympy.srepr(arg.num) + "/" + sympy.srepr(arg.den)
        sym = self._exp_key.get(key)
        if sym is None:
            name = f"_e{self._counter}"
            self._counter += 1
            sym = Symbol(name)
            self._atoms.append(sym)
            self._exps[sym] = ExpAtom(sym, arg.num, arg.den)
            self._exp_key[key] = sym
            self._order_cache = None
            self._atom_assumptions.append(AssumptionEntry(
                Expr(self, sym, S.One, self.rewrite_version),
                f"exponential atom {name}, positive by construction",
                positive=True,
            ))
        return self._gen_expr(sym)

    def pow_rational(self, e: Scalar | GenLike, p: int, q: int = 1) -> "Expr":
        """``e**(p/q)`` via the root-atom machinery."""
        if q == 0:
            raise FieldError("zero root index")
        if q < 0:
            p, q = -p, -q
        g = gcd(abs(p), q) if p else q
        p, q = p // g, q // g
        e = self.expr(e)
        whole, rem = divmod(p, q)
        out = e ** whole
        if rem:
            out = out * self.root(e, q) ** rem
        return out

    # -- differentiation

    def _diff_sym(self, P: sympy.Expr, g: Symbol) -> sympy.Expr:
        total = sympy.diff(P, g)
        for s in P.free_symbols:
            if s in self._roots:
                atom = self._roots[s]
                dB = self._diff_sym(atom.base, g)
                if not dB.is_zero:
                    total += sympy.diff(P, s) * s * dB / (atom.index * atom.base)
            elif s in self._exps:
                atom = self._exps[s]
                darg = self._diff_sym(atom.arg_num / atom.arg_den, g)
                if not darg.is_zero:
                    total += sympy.diff(P, s) * s * darg
        return total

    # -- serialization

    def to_state(self) -> dict:
        atoms = []
        for s in self._atoms:
            if s in self._retired:
                continue
            if s in self._roots:
                a = self._roots[s]
                atoms.append({"kind": "root", "name": s.name,
                              "base": self._poly_sexpr(a.base),
                              "index": a.index})
            else:
                a = self._exps[s]
                atoms.append({"kind": "exp", "name": s.name,
                              "argument": self._poly_sexpr(a.arg_num) + "|"
                              + self._poly_sexpr(a.arg_den)})
        return {"coordinates": [s.name for s in self._coords],
                "parameters": [s.name for s in self._params],
                "atoms": atoms}

    @classmethod
    def from_state(cls, state: dict) -> "Field":
        field = cls()
        for name in state["coordinates"]:
            field.coordinate(name)
        for name in state["parameters"]:
            field.parameter(name)
        for entry in state["atoms"]:
            name = entry["name"]
            sym = Symbol(name)
            num = int(name[2:]) if name[2:].isdigit() else 0
            field._counter = max(field._counter, num + 1)
            if entry["kind"] == "root":
                base = field._poly_from_sexpr(entry["base"])
                key = sympy.srepr(sympy.expand(base))
                field._atoms.append(sym)
                field._roots[sym] = RootAtom(sym, base, entry["index"])
                field._root_key[(key, entry["index"])] = sym
                field._atom_assumptions.append(AssumptionEntry(
                    field._make(base, S.One),
                    f"base of the root atom {name} = (...)^(1/{entry['index']}), assumed positive",
                    positive=True,
                ))
            else:
                ns, ds = entry["argument"].split("|")
                field._atoms.append(sym)
                field._exps[sym] = ExpAtom(sym, field._poly_from_sexpr(ns),
                                           field._poly_from_sexpr(ds))
                arg = field._make(field._exps[sym].arg_num, field._exps[sym].arg_den)
                key = sympy.srepr(arg.num) + "/" + sympy.srepr(arg.den)
                field._exp_key[key] = sym
                field._atom_assumptions.append(AssumptionEntry(
                    Expr(field, sym, S.One, field.rewrite_version),
                    f"exponential atom {name}, positive by construction",
                    positive=True,
                ))
            field._order_cache = None
        return field

    def _poly_sexpr(self, P: sympy.Expr) -> str:
        """Deterministic single-line encoding of an expanded polynomial."""
        if P.is_zero:
            return "0"
        order = self._order_map()
        n = len(order)
        terms = []
        for mon, coeff in P.as_coefficients_dict().items():
            vec = [0] * n
            for s, p in mon.as_powers_dict().items():
                if s is S.One:
                    continue
                vec[order[s]] = int(p)
            terms.append((vec, Rational(coeff)))
        terms.sort(key=lambda t: t[0], reverse=True)
        parts = []
        for vec, coeff in terms:
            c = f"{coeff.p}" if coeff.q == 1 else f"{coeff.p}/{coeff.q}"
            pows = ",".join(f"{i}^{e}" for i, e in enumerate(vec) if e)
            parts.append(f"{c}:{pows}" if pows else c)
        return ";".join(parts)

    def _poly_from_sexpr(self, s: str) -> sympy.Expr:
        if s == "0":
            return S.Zero
        gens = self.ordered_generators()
        total = S.Zero
        for part in s.split(";"):
            if ":" in part:
                c, pows = part.split(":")
                mon = S.One
                for pw in pows.split(","):
                    i, e = pw.split("^")
                    mon *= gens[int(i)] ** int(e)
            else:
                c, mon = part, S.One
            total += Rational(c) * mon
        return sympy.expand(total)

    def expr_to_sexpr(self, e: "Expr") -> str:
        e = self.expr(e)
        return self._poly_sexpr(e.num) + "|" + self._poly_sexpr(e.den)

    def expr_from_sexpr(self, s: str) -> "Expr":
        ns, ds = s.split("|")
        return self._make(self._poly_from_sexpr(ns), self._poly_from_sexpr(ds))


# --- expressions -----------------------------------------------------------

class Expr:
    """A canonical element of the function field.  Immutable.

    Do not construct directly; use :meth:`Field.expr`, the generator
    factories, and arithmetic operators.
    """

    __slots__ = ("field", "num", "den", "_ver")

    def __init__(self, field: Field, num: sympy.Expr, den: sympy.Expr, ver: int) -> None:
        self.field = field
        self.num = num
        self.den = den
        self._ver = ver

    def _current(self) -> "Expr":
        if self._ver != self.field.rewrite_version:
            return self.field._make(self.num, self.den)
        return self

    def _key(self) -> tuple:
        cur = self._current()
        return (cur.num, cur.den)

    # -- predicates

    @property
    def is_zero(self) -> bool:
        return self.num.is_zero is True

    @property
    def is_rational(self) -> bool:
        return self.num.is_Number and self.den.is_Number

    def as_fraction(self) -> Fraction:
        cur = self._current()
        if not cur.is_rational:
            raise FieldError(f"not a rational constant: {cur}")
        r = Rational(cur.num) / Rational(cur.den)
        return Fraction(int(r.p), int(r.q))

    def _single_symbol(self) -> Symbol | None:
        if isinstance(self.num, Symbol) and self.den is S.One:
            return self.num
        return None

    def support(self) -> frozenset[Symbol]:
        """All coordinates/parameters the value depends on, plus the atoms
        themselves, following atom definitions transitively."""
        cur = self._current()
        seen: set[Symbol] = set()
        todo = list(cur.num.free_symbols | cur.den.free_symbols)
        while todo:
            s = todo.pop()
            if s in seen:
                continue
            seen.add(s)
            atom = self.field._roots.get(s)
            if atom is not None:
                todo.extend(atom.base.free_symbols)
                continue
            atom = self.field._exps.get(s)
            if atom is not None:
                todo.extend(atom.arg_num.free_symbols | atom.arg_den.free_symbols)
        return frozenset(seen)

    def depends_on(self, gen: GenLike) -> bool:
        sym = gen if isinstance(gen, Symbol) else (
            gen._single_symbol() if isinstance(gen, Expr) else self.field.symbol(gen))
        return sym in self.support()

    # -- arithmetic

    def _coerce(self, other) -> "Expr | None":
        if isinstance(other, Expr):
            if other.field is not self.field:
                return None
            return other._current()
        if isinstance(other, (int, Fraction, Rational)) and not isinstance(other, bool):
            return self.field.expr(other)
        return None

    def __add__(self, other):
        b = self._coerce(other)
        if b is None:
            return NotImplemented
        a = self._current()
        return self.field._make(a.num * b.den + b.num * a.den, a.den * b.den)

    __radd__ = __add__

    def __neg__(self):
        a = self._current()
        return Expr(self.field, sympy.expand(-a.num), a.den, a._ver)

    def __sub__(self, other):
        b = self._coerce(other)
        if b is None:
            return NotImplemented
        return self + (-b)

    def __rsub__(self, other):
        b = self._coerce(other)
        if b is None:
            return NotImplemented
        return b + (-self)

    def __mul__(self, other):
        b = self._coerce(other)
        if b is None:
            return NotImplemented
        a = self._current()
        return self.field._make(a.num * b.num, a.den * b.den)

    __rmul__ = __mul__

    def __truediv__(self, other):
        b = self._coerce(other)
        if b is None:
            return NotImplemented
        if b.is_zero:
            raise ZeroDivisionError("division by an identically-zero expression")
        a = self._current()
        return self.field._make(a.num * b.den, a.den * b.num)

    def __rtruediv__(self, other):
        b = self._coerce(other)
        if b is None:
            return NotImplemented
        return b / self

    def __pow__(self, k):
        if isinstance(k, Fraction):
            return self.field.pow_rational(self, k.numerator, k.denominator)
        if isinstance(k, Rational) and not isinstance(k, Integer):
            return self.field.pow_rational(self, int(k.p), int(k.q))
        k = int(k)
        a = self._current()
        if k == 0:
            return self.field.one
        if k < 0:
            if a.is_zero:
                raise ZeroDivisionError("negative power of zero")
            return self.field._make(a.den ** (-k), a.num ** (-k))
        return self.field._make(a.num ** k, a.den ** k)

    def __eq__(self, other):
        b = self._coerce(other)
        if b is None:
            return NotImplemented
        a = self._current()
        return a.num == b.num and a.den == b.den

    def __ne__(self, other):
        r = self.__eq__(other)
        return r if r is NotImplemented else not r

    def __hash__(self):
        a = self._current()
        return hash((a.num, a.den))

    def __bool__(self):
        return not self.is_zero

    # -- calculus and substitution

    def derivative(self, gen: GenLike) -> "Expr":
        """Partial derivative along a coordinate or group parameter."""
        field = self.field
        if isinstance(gen, Expr):
            sym = gen._single_symbol()
            if sym is None:
                raise FieldError("derivative direction must be a single generator")
        elif isinstance(gen, Symbol):
            sym = gen
        else:
            sym = field.symbol(gen)
        if field.kind_of(sym) not in ("coordinate", "parameter"):
            raise FieldError("can only differentiate along coordinates and parameters")
        a = self._current()
        fs = a.num.free_symbols | a.den.free_symbols
        if sym not in fs:
            # absent directly; may still enter through atom definitions
            if not any(s in field._roots or s in field._exps for s in fs):
                return field.zero
            if sym not in a.support():
                return field.zero
        dn = field._diff_sym(a.num, sym)
        dd = field._diff_sym(a.den, sym)
        if dd.is_zero:
            nn, nd = sympy.fraction(sympy.together(dn))
            return field._make(nn, nd * a.den)
        quotient = sympy.together((dn * a.den - a.num * dd) / a.den ** 2)
        num, den = sympy.fraction(quotient)
        return field._make(num, den)

    def substitute(self, mapping: Mapping, allow_atoms: bool = False) -> "Expr":
        """Simultaneous substitution of generators by field elements.

        Root and exponential atoms whose definitions involve substituted
        generators are rebuilt from the substituted definitions.  Passing
        atoms directly as keys requires ``allow_atoms=True`` (used by exact
        evaluation, where exponential atoms act as free transcendentals).
        """
        field = self.field
        sym_subs: dict[Symbol, sympy.Expr] = {}
        pinned: set[Symbol] = set()
        for key, value in mapping.items():
            if isinstance(key, Expr):
                sym = key._single_symbol()
                if sym is None:
                    raise FieldError("substitution keys must be single generators")
            elif isinstance(key, Symbol):
                sym = key
            else:
                sym = field.symbol(key)
            kind = field.kind_of(sym)
            if kind in ("root", "exp"):
                if not allow_atoms:
                    raise FieldError("substituting atoms requires allow_atoms=True")
                pinned.add(sym)
            v = field.expr(value)
            sym_subs[sym] = v.num / v.den
        for atom_sym in list(field._atoms):
            if atom_sym in field._retired or atom_sym in pinned:
                continue
            if atom_sym in field._roots:
                atom = field._roots[atom_sym]
                if atom.base.free_symbols & set(sym_subs):
                    new_base = sympy.together(atom.base.xreplace(sym_subs))
                    bn, bd = sympy.fraction(new_base)
                    val = field.root(field._make(bn, bd), atom.index)
                    sym_subs[atom_sym] = val.num / val.den
            else:
                atom = field._exps[atom_sym]
                arg_syms = atom.arg_num.free_symbols | atom.arg_den.free_symbols
                if arg_syms & set(sym_subs):
                    new_arg = sympy.together(
                        (atom.arg_num / atom.arg_den).xreplace(sym_subs))
                    an, ad = sympy.fraction(new_arg)
                    val = field.exp(field._make(an, ad))
                    sym_subs[atom_sym] = val.num / val.den
        a = self._current()
        quotient = sympy.together(
            a.num.xreplace(sym_subs) / a.den.xreplace(sym_subs))
        num, den = sympy.fraction(quotient)
        if sympy.expand(den).is_zero:
            raise ZeroDivisionError("substitution produced a zero denominator")
        return field._make(num, den)

    # -- display

    def __str__(self) -> str:
        return format_expr(self)

    def __repr__(self) -> str:
        return f"Expr({format_expr(self)})"


# --- printing ----------------------------------------------------------------

def _sym_str(e: sympy.Expr) -> str:
    return sympy.sstr(e, order="lex").replace("**", "^")


def _needs_parens(s: str) -> bool:
    if s.startswith("-"):
        return True
    return any(c in s for c in "+-*/^ ")


def format_expr(e: Expr) -> str:
    """Readable form with atoms folded back into fractional powers."""
    e = e._current()
    if e.is_zero:
        return "0"
    field = e.field

    base_keys = {sympy.srepr(a.base) for a in field.root_atoms()}

    def side_factors(P: sympy.Expr, sign: int, const: list, powers: dict):
        c, factors = sympy.factor_list(P)
        const[0] *= Rational(c) ** sign
        for f, m in factors:
            atom = field._roots.get(f) if isinstance(f, Symbol) else None
            if atom is not None:
                key = sympy.srepr(atom.base)
                disp, old = powers.get(key, (atom.base, Fraction(0)))
                powers[key] = (disp, old + Fraction(sign * m, atom.index))
            else:
                f = sympy.expand(f)
                key = sympy.srepr(f)
                neg = sympy.expand(-f)
                negkey = sympy.srepr(neg)
                if key not in powers and key not in base_keys and (
                        negkey in base_keys or negkey in powers
                        or _sym_str(f).startswith("-")):
                    const[0] *= Rational(-1) ** m
                    f, key = neg, negkey
                disp, old = powers.get(key, (f, Fraction(0)))
                powers[key] = (disp, old + Fraction(sign * m))

    const = [Rational(1)]
    powers: dict[str, tuple[sympy.Expr, Fraction]] = {}
    side_factors(e.num, +1, const, powers)
    if e.den != S.One:
        side_factors(e.den, -1, const, powers)

    def factor_str(disp: sympy.Expr, p: Fraction) -> str:
        if isinstance(disp, Symbol) and disp in field._exps:
            atom = field._exps[disp]
            arg = field._make(atom.arg_num, atom.arg_den)
            base = f"exp({format_expr(arg)})"
        else:
            s = _sym_str(disp)
            base = f"({s})" if _needs_parens(s) else s
        if p == 1:
            return base
        if p.denominator == 1:
            return f"{base}^{p.numerator}"
        return f"{base}^({p.numerator}/{p.denominator})"

    num_parts, den_parts = [], []
    for key in sorted(powers):
        disp, p = powers[key]
        if p == 0:
            continue
        (num_parts if p > 0 else den_parts).append(factor_str(disp, abs(p)))
    c = Rational(const[0])
    sign = "-" if c < 0 else ""
    c = abs(c)
    if c.p != 1 or not num_parts:
        num_parts.insert(0, str(c.p))
    if c.q != 1:
        den_parts.insert(0, str(c.q))

    num_s = "*".join(num_parts)
    if not den_parts:
        return sign + num_s
    den_s = "*".join(den_parts)
    if len(den_parts) > 1 or _needs_parens(den_s):
        den_s = f"({den_s})"
    return f"{sign}{num_s} / {den_s}"


# --- module-level operations --------------------------------------------------

def canonicalize(e: Expr) -> Expr:
    """Re-run the canonicalization pipeline; a fixed point for canonical input."""
    return e.field._make(e.num, e.den)


def is_zero(e: Expr, assumptions: AssumptionSet | None = None) -> bool:
    """Exact zero test; assumptions only guard the nonzero entries."""
    if assumptions is not None:
        for entry in assumptions.entries():
            if entry.expr.is_zero:
                raise FieldError("assumption set contains an identically-zero entry")
    return e.is_zero


def derivative(e: Expr, gen: GenLike) -> Expr:
    return e.derivative(gen)


def quotient_sum(field: Field, pairs: Iterable[tuple[sympy.Expr, sympy.Expr]]
                 ) -> Expr:
    """Sum of raw numerator/denominator pairs, canonicalized once.

    Pairs sharing a syntactically identical denominator are combined first,
    so the common denominator is the product of the distinct ones only.
    """
    groups: dict[str, tuple[sympy.Expr, list[sympy.Expr]]] = {}
    for num, den in pairs:
        key = sympy.srepr(den)
        bucket = groups.get(key)
        if bucket is None:
            groups[key] = (den, [num])
        else:
            bucket[1].append(num)
    if not groups:
        return field.zero
    items = [groups[key] for key in sorted(groups)]
    if len(items) == 1:
        den, nums = items[0]
        return field._make(sympy.Add(*nums), den)
    dens = [den for den, _ in items]
    total = S.Zero
    for i, (_, nums) in enumerate(items):
        rest = sympy.Mul(*[d for j, d in enumerate(dens) if j != i])
        total = total + sympy.Add(*nums) * rest
    return field._make(total, sympy.Mul(*dens))


def expr_sum(field: Field, terms: Iterable[Scalar]) -> Expr:
    """Sum with a single canonicalization pass at the end."""

    def pairs():
        for t in terms:
            t = field.expr(t)._current()
            yield t.num, t.den

    return quotient_sum(field, pairs())


def _resolve_unknowns(field: Field, unknowns: Sequence) -> list[Symbol]:
    syms = []
    for u in unknowns:
        if isinstance(u, Expr):
            s = u._single_symbol()
            if s is None:
                raise FieldError("unknowns must be single generators")
        elif isinstance(u, Symbol):
            s = u
        else:
            s = field.symbol(u)
        if field.kind_of(s) not in ("coordinate", "parameter"):
            raise FieldError("unknowns must be coordinates or parameters")
        syms.append(s)
    return syms


def solve_linear(equations: Sequence[Expr], unknowns: Sequence,
                 assumptions: AssumptionSet | None = None) -> LinearSolution:
    """Fraction-free Gauss–Jordan elimination over the field.

    Pivot columns follow the order of ``unknowns``; each symbolic pivot is
    recorded in ``new_assumptions`` unless the assumption set already implies
    it.  Assignments reference free unknowns only.
    """
    eqs = [e for e in equations if isinstance(e, Expr)]
    if len(eqs) != len(equations):
        raise FieldError("equations must be field elements")
    if not eqs:
        field = _require_field(unknowns)
        return LinearSolution({}, _resolve_unknowns(field, unknowns), [], True)
    field = eqs[0].field
    unks = _resolve_unknowns(field, unknowns)
    unk_set = set(unks)

    rows: list[dict] = []
    consts: list[sympy.Expr] = []
    for e in eqs:
        P = e._current().num
        present = [u for u in unks if u in P.free_symbols]
        if present:
            poly = P.as_poly(*present)
            if poly is None or poly.total_degree() > 1:
                raise FieldError(
                    f"equation is not jointly linear in the unknowns: {e}")
        row = {}
        for u in present:
            c = sympy.expand(sympy.diff(P, u))
            if c.free_symbols & unk_set:
                raise FieldError(
                    f"equation is not jointly linear in the unknowns: {e}")
            if not c.is_zero:
                row[u] = c
        const = sympy.expand(P.xreplace({u: S.Zero for u in present}))
        rows.append(row)
        consts.append(const)

    if all(c.is_Number for c in consts) and all(
            v.is_Number for row in rows for v in row.values()):
        return _solve_linear_rational(field, rows, consts, unks)

    used = [False] * len(rows)
    pivots: list[tuple[int, Symbol]] = []
    new_assumptions: list[Expr] = []
    for u in unks:
        pivot_row = None
        for i, row in enumerate(rows):
            if not used[i] and u in row and not row[u].is_zero:
                pivot_row = i
                break
        if pivot_row is None:
            continue
        used[pivot_row] = True
        pivots.append((pivot_row, u))
        p = rows[pivot_row][u]
        pexpr = field._make(p, S.One)
        if not pexpr.is_rational and (
                assumptions is None or not assumptions.implies_nonzero(pexpr)):
            if all(pexpr != a for a in new_assumptions):
                new_assumptions.append(pexpr)
        for j, other in enumerate(rows):
            if j == pivot_row or u not in other:
                continue
            c = other[u]
            newrow = {}
            for v in set(other) | set(rows[pivot_row]):
                if v == u:
                    continue
                val = sympy.expand(p * other.get(v, S.Zero)
                                   - c * rows[pivot_row].get(v, S.Zero))
                if not val.is_zero:
                    newrow[v] = val
            consts[j] = sympy.expand(p * consts[j] - c * consts[pivot_row])
            rows[j] = newrow

    consistent = True
    witness = None
    for i, row in enumerate(rows):
        if used[i] or row:
            continue
        resid = field._make(consts[i], S.One)
        if not resid.is_zero:
            consistent = False
            witness = resid
            break

    pivot_unks = {u for _, u in pivots}
    free = [u for u in unks if u not in pivot_unks]
    assignments: dict[Symbol, Expr] = {}
    for i, u in pivots:
        p = rows[i][u]
        total = field._make(consts[i], S.One)
        for v, c in rows[i].items():
            if v != u:
                total = total + field._make(c, S.One) * field._gen_expr(v)
        assignments[u] = -total / field._make(p, S.One)
    return LinearSolution(assignments, free, new_assumptions, consistent, witness)


def _require_field(unknowns):
    for u in unknowns:
        if isinstance(u, Expr):
            return u.field
    raise FieldError("cannot infer the field from the arguments")


def _solve_linear_rational(field: Field, rows, consts, unks) -> LinearSolution:
    """Dense exact path for systems with rational coefficients."""
    from sympy.polys.domains import QQ
    from sympy.polys.matrices import DomainMatrix

    m, n = len(rows), len(unks)
    data = []
    for row, const in zip(rows, consts):
        data.append([QQ.from_sympy(Rational(row.get(u, S.Zero))) for u in unks]
                    + [QQ.from_sympy(-Rational(const))])
    dm = DomainMatrix(data, (m, n + 1), QQ)
    rref, pivot_cols = dm.rref()
    rref = rref.to_Matrix()
    consistent = True
    witness = None
    if n in pivot_cols:
        consistent = False
        witness = field.one
        pivot_cols = tuple(c for c in pivot_cols if c != n)
    free = [u for j, u in enumerate(unks) if j not in pivot_cols]
    assignments: dict[Symbol, Expr] = {}
    for i, j in enumerate(pivot_cols):
        lead = rref[i, j]
        total = field.expr(Rational(rref[i, n]) / Rational(lead))
        for k, u in enumerate(unks):
            if k != j and rref[i, k] != 0:
                total = total - field.expr(
                    Rational(rref[i, k]) / Rational(lead)) * field._gen_expr(u)
        assignments[unks[j]] = total
    return LinearSolution(assignments, free, [], consistent, witness)
