"""Sessions for the method of equivalence on first-order PDE systems.

A session restricts the lifted contact coframe to the submanifold cut out by
a solved-form system and then walks the classical loop:

1. solve the linear dependencies among the restricted ``sigma`` forms,
2. normalize group parameters against lifted invariants and torsion,
3. recompute structure equations and absorb inessential torsion,
4. compute reduced Cartan characters and run the involutivity test,
5. prolong onto the group when the test fails, or finalize into an
   e-structure report with differential invariants, their coframe
   differentials, the coframe rank, and the symmetry-group dimension.

Normalization targets and constants are supplied by the caller (scripts
replay a known derivation step by step); the engine validates every command
and keeps the full history.  An automatic mode with a fixed target-selection
rule is provided for unattended runs.

A session is strictly sequential: every operation consumes and returns the
same state.  Distinct sessions never share mutable data.
"""

from __future__ import annotations

import random
import warnings
from dataclasses import dataclass, field as _dc_field

import sympy
from sympy import S, Symbol

from .symfield import AssumptionSet, Expr, Field, FieldError, solve_linear
from .exterior import (
    CoframeBasis,
    DForm,
    ExteriorError,
    FormBasis,
    d_scalar,
    ext_d,
    form_sum,
    rebase,
    substitute,
    wedge,
)
from .jetspace import JetChart, PDESystem, embedding
from .liftedcontact import CharacterData, GroupParams, build_lifted_coframe, build_mc_forms


class EquivalenceError(ValueError):
    """Raised for invalid commands, inconsistent normalizations and stalls."""


_NUMBER_WORDS = (
    "zero", "one", "two", "three", "four", "five", "six", "seven", "eight",
    "nine", "ten", "eleven", "twelve", "thirteen", "fourteen", "fifteen",
    "sixteen", "seventeen", "eighteen", "nineteen", "twenty",
)


def _word(k: int) -> str:
    return _NUMBER_WORDS[k] if 0 <= k < len(_NUMBER_WORDS) else str(k)


def _plural(k: int, noun: str) -> str:
    return noun if k == 1 else noun + "s"


def _ensure_label(basis: FormBasis, name: str, kind: str):
    try:
        return basis[name]
    except ExteriorError:
        return basis.add(name, kind)


# --- result types ------------------------------------------------------------


@dataclass
class DependencyRelation:
    """A linear relation among the restricted coframe candidates.

    ``dependent`` names the 1-form that the relation solves for, ``source``
    the derivative coordinate whose elimination produced it.  ``expansion``
    writes the dependent form over the retained coframe, and ``coefficients``
    states the relation itself (coefficient per label, summing to the zero
    1-form).
    """

    dependent: str
    source: str
    expansion: dict[str, Expr]
    coefficients: dict[str, Expr]


@dataclass
class TorsionCoefficient:
    equation: str
    pair: tuple[str, str]
    value: Expr
    essential: bool
    parameter_dependent: bool


@dataclass
class StructureEquations:
    """d(coframe) split into group-direction columns and a torsion tensor.

    For each coframe element ``w^a`` the expansion is

        d(w^a) = sum_j slot_j ^ (sum_b table[a][j,b] * w^b)
                 + sum_{b<c} torsion[a][b,c] * w^b ^ w^c

    where the slots are canonical 1-forms carrying the leftover parameter
    differentials (``slot_forms``), normalized by row reduction so each slot
    has a leading coefficient of one on its pivot column.
    """

    coframe_names: list[str]
    slot_names: list[str]
    slot_forms: dict[str, DForm]
    table: dict[str, list[tuple[str, str, Expr]]]
    torsion: dict[str, dict[tuple[str, str], Expr]]

    def torsion_entry(self, equation: str, pair: tuple[str, str]) -> Expr | None:
        """Signed lookup of a torsion coefficient for an unordered pair."""
        row = self.torsion.get(equation, {})
        if pair in row:
            return row[pair]
        rev = (pair[1], pair[0])
        if rev in row:
            return -row[rev]
        return None


@dataclass
class AbsorptionResult:
    """Outcome of torsion absorption.

    Iterating yields ``(structure, essential, r1)``; ``kernel`` lists the
    homogeneous shift directions (one map ``(slot, coframe) -> Expr`` per
    degree of indeterminacy).
    """

    structure: StructureEquations
    essential: list[TorsionCoefficient]
    r1: int
    kernel: list[dict[tuple[str, str], Expr]]

    def __iter__(self):
        return iter((self.structure, self.essential, self.r1))


@dataclass
class InvariantRecord:
    name: str
    value: Expr
    differential: dict[str, Expr]


@dataclass
class FinalReport:
    kind: str  # "e-structure" or "involutive"
    coframe_names: list[str]
    structure: StructureEquations
    invariants: list[InvariantRecord]
    rank: int | None
    symmetry_dimension: int | None
    characters: CharacterData | None
    report: str


# --- session state -----------------------------------------------------------


class SessionState:
    """One equivalence-method session.

    Operations mutate the state in place and return it, so scripts can chain
    them; all derived data (working coframe basis, structure equations,
    absorption) is cached against a mutation serial.
    """

    def __init__(self, system: PDESystem, params: GroupParams, basis: FormBasis,
                 coframe_order: list[str], forms: dict[str, DForm],
                 dependent: dict[str, DForm], dependent_source: dict[str, str],
                 mc_order: list[str], mc_raw: dict[str, DForm],
                 seed: int) -> None:
        self.system = system
        self.chart = system.chart
        self.field: Field = self.chart.field
        self.params = params
        self.basis = basis
        self.assumptions: AssumptionSet = params.assumptions
        self.level = 0
        self.coframe_order = list(coframe_order)
        self._forms = dict(forms)
        self.dependent = dict(dependent)
        self.dependent_source = dict(dependent_source)
        self.mc_order = list(mc_order)
        self._mc_raw = dict(mc_raw)
        self.solved: dict[Symbol, Expr] = {}
        self.extra_params: list[Symbol] = []
        self.history: list[str] = []
        self.normalizations: list[tuple[str, str, list[Expr]]] = []
        self.seed = seed
        self._serial = 0
        self._shift_serial = 0
        self._cache: dict[str, tuple[int, object]] = {}
        self._mc_cache: dict[str, tuple[int, DForm]] = {}

    # -- bookkeeping

    def _bump(self) -> None:
        self._serial += 1

    @property
    def unsolved_params(self) -> list[Symbol]:
        out = [s for s in self.params.parameter_symbols() if s not in self.solved]
        out += [s for s in self.extra_params if s not in self.solved]
        return out

    @property
    def coframe(self) -> list[tuple[str, DForm]]:
        return [(name, self._forms[name]) for name in self.coframe_order]

    def coframe_form(self, name: str) -> DForm:
        try:
            return self._forms[name]
        except KeyError:
            raise EquivalenceError(f"{name!r} is not a coframe element") from None

    def mc_form(self, name: str) -> DForm:
        """A candidate group-direction form with the solved map applied."""
        if name not in self._mc_raw:
            raise EquivalenceError(f"{name!r} is not a candidate form of this session")
        cached = self._mc_cache.get(name)
        if cached is not None and cached[0] == len(self.solved):
            return cached[1]
        form = self._mc_raw[name]
        if self.solved:
            form = substitute(form, self.solved)
        self._mc_cache[name] = (len(self.solved), form)
        return form

    def _param_symbol(self, target) -> Symbol:
        if isinstance(target, Expr):
            sym = target._single_symbol()
            if sym is None:
                raise EquivalenceError("parameter targets must be single symbols")
        elif isinstance(target, Symbol):
            sym = target
        else:
            try:
                sym = self.field.symbol(str(target))
            except FieldError:
                raise EquivalenceError(f"unknown parameter {target!r}") from None
        known = set(self.params.parameter_symbols()) | set(self.extra_params)
        if sym not in known:
            raise EquivalenceError(f"{sym.name} is not a group parameter of this session")
        return sym

    def _working_basis(self) -> CoframeBasis:
        cached = self._cache.get("working")
        if cached is not None and cached[0] == self._serial:
            return cached[1]
        labels = [self.basis[name] for name in self.coframe_order]
        for name, label in zip(self.coframe_order, labels):
            self.basis.define(label, self._forms[name])
        cb = CoframeBasis(self.basis, labels, [self._forms[n] for n in self.coframe_order],
                          self.assumptions)
        self._cache["working"] = (self._serial, cb)
        return cb

    def __repr__(self) -> str:
        return (f"SessionState(level={self.level}, coframe={len(self.coframe_order)}, "
                f"solved={len(self.solved)}, unsolved={len(self.unsolved_params)})")


# --- restriction ---------------------------------------------------------------


def restrict(chart: JetChart, system: PDESystem, *, seed: int = 7) -> SessionState:
    """Pull the lifted coframe back to the equation submanifold.

    The lifted coframe and its verified group-direction forms are built on
    the full first-order chart, then pulled back along the embedding defined
    by the solved form of the system.  The ``sigma`` forms whose derivative
    coordinate was eliminated become dependent; the rest, together with all
    ``theta`` and ``xi``, form the level-0 working coframe.
    """
    if chart is not system.chart:
        raise EquivalenceError("the chart does not match the system's chart")
    n, q = chart.n, chart.q
    if n * q <= len(system.solved):
        raise EquivalenceError(
            f"the system solves {len(system.solved)} of the {n * q} derivative "
            "coordinates; no derivative coordinates would remain")

    params, lifted = build_lifted_coframe(chart)
    mc = build_mc_forms(params, lifted)
    emb = embedding(system)

    solved_names = {sym.name for sym in system.solved}
    coframe_order: list[str] = []
    forms: dict[str, DForm] = {}
    dependent: dict[str, DForm] = {}
    dependent_source: dict[str, str] = {}
    for name, form in lifted.forms():
        restricted = substitute(form, emb.subs) if emb.subs else form
        if name.startswith("sigma"):
            pname = "p" + name[len("sigma"):]
            if pname in solved_names:
                dependent[name] = restricted
                dependent_source[name] = pname
                continue
        coframe_order.append(name)
        forms[name] = restricted

    mc_order: list[str] = []
    mc_raw: dict[str, DForm] = {}
    for name, form in mc.named_forms():
        mc_order.append(name)
        mc_raw[name] = substitute(form, emb.subs) if emb.subs else form

    basis = lifted.basis
    for name in coframe_order:
        _ensure_label(basis, name, "coframe-element")

    state = SessionState(system, params, basis, coframe_order, forms, dependent,
                         dependent_source, mc_order, mc_raw, seed)
    state.history.append(
        f"restrict: {len(coframe_order)}-element coframe"
        + (f"; dependent: {', '.join(dependent)}" if dependent else "; no dependent forms"))
    state._working_basis()  # independence check: raises on a singular transition
    return state


# --- dependency relations ------------------------------------------------------


def dependencies(state: SessionState) -> list[DependencyRelation]:
    """A basis of the linear relations among the restricted coframe candidates.

    Each dependent ``sigma`` form is rewritten over the retained coframe;
    the relation (dependent minus its expansion) must canonicalize to the
    zero 1-form, which is re-verified here.
    """
    if state.level != 0:
        raise EquivalenceError("dependency relations are a level-0 computation")
    cb = state._working_basis()
    field = state.field
    out: list[DependencyRelation] = []
    for name, raw in state.dependent.items():
        form = substitute(raw, state.solved) if state.solved else raw
        reb = rebase(form, cb)
        expansion: dict[str, Expr] = {}
        for key, coeff in reb.terms.items():
            label = state.basis.forms[key[0]]
            if label.kind.endswith("-differential"):
                raise EquivalenceError(
                    f"dependent form {name} does not reduce to the coframe: "
                    f"leftover {label.name}")
            expansion[label.name] = coeff
        coefficients = {name: field.one}
        for lab, c in expansion.items():
            coefficients[lab] = -c
        residual = form_sum(state.basis, 1,
                            [form] + [(-c) * state._forms[lab]
                                      for lab, c in expansion.items()])
        if not residual.is_zero:
            raise EquivalenceError(
                f"dependency relation for {name} fails to canonicalize to zero")
        out.append(DependencyRelation(name, state.dependent_source[name],
                                      expansion, coefficients))
    return out


# --- parameter solving -----------------------------------------------------------


_CLASS_ORDER = ("f", "g", "c", "a", "b")


def _param_class(name: str) -> int:
    for rank, prefix in enumerate(_CLASS_ORDER):
        if name.startswith(prefix):
            return rank
    return len(_CLASS_ORDER)


def _solver_queue(state: SessionState, prefer) -> list[Symbol]:
    preferred = [state._param_symbol(p) for p in prefer]
    seen = set(preferred)
    rest = [s for s in state.unsolved_params if s not in seen]
    rest.sort(key=lambda s: _param_class(s.name))  # stable: keeps registration order
    return preferred + rest


def _linear_pick(field: Field, eq_num: Expr, u: Symbol):
    """Solve ``eq_num = 0`` for ``u`` when it is linear with a u-free slope."""
    d1 = eq_num.derivative(u)
    if d1.is_zero or not d1.derivative(u).is_zero or u in d1.support():
        return None
    value = -(eq_num.substitute({u: S.Zero})) / d1
    return value, d1


def _strip_nonzero_factors(state: SessionState, eq_num: Expr) -> Expr | None:
    """Drop numerator factors the assumptions already imply are nonzero.

    Reduces a product equation to the factors that can actually vanish.
    Returns None when every factor is implied nonzero (the equation is
    inconsistent with the assumptions).
    """
    field = state.field
    P = eq_num._current().num
    try:
        const, factors = sympy.factor_list(P)
    except sympy.PolynomialError:
        return eq_num
    kept = sympy.Integer(1)
    changed = False
    for fac, mult in factors:
        fex = field._make(sympy.expand(fac), S.One)
        if state.assumptions.implies_nonzero(fex):
            changed = True
        else:
            kept *= fac ** mult
    if not changed:
        return eq_num
    if kept == 1:
        return None
    return field._make(sympy.expand(kept), S.One)


def _monomial_pick(field: Field, eq_num: Expr, u: Symbol):
    """Solve ``A*u**k + B = 0`` for ``u`` (A, B free of u), via a k-th root."""
    P = eq_num._current().num
    if u not in P.free_symbols:
        return None
    try:
        poly = sympy.Poly(P, u)
    except sympy.PolynomialError:
        return None
    monoms = sorted(m[0] for m in poly.monoms())
    if len(monoms) == 1:
        k = monoms[0]
        A = field._make(poly.coeff_monomial(u ** k), S.One)
        if k == 0 or u in A.support():
            return None
        return field.zero, A, k
    if len(monoms) == 2 and monoms[0] == 0:
        k = monoms[1]
        A = field._make(poly.coeff_monomial(u ** k), S.One)
        B = field._make(poly.coeff_monomial(S.One), S.One)
        if u in A.support() or u in B.support():
            return None
        check = field._make(P, S.One) - A * field.expr(u) ** k - B
        if not check.is_zero:
            return None
        try:
            value = field.root(-B / A, k)
        except FieldError as exc:
            raise EquivalenceError(
                f"cannot normalize {u.name}: {exc}") from exc
        return value, A, k
    return None


def _apply_solution(state: SessionState, u: Symbol, value: Expr, note: str) -> None:
    if u in value.support():
        raise EquivalenceError(f"circular solution for {u.name}")
    sub = {u: value}
    for s, v in list(state.solved.items()):
        state.solved[s] = v.substitute(sub)
    state.solved[u] = value
    state._forms = {n: substitute(f, sub) for n, f in state._forms.items()}
    state.dependent = {n: substitute(f, sub) for n, f in state.dependent.items()}
    state.history.append(f"solve: {u.name} = {value}  [{note}]")
    state._bump()


def _candidate_pick(state: SessionState, eq: Expr, u: Symbol):
    """A solution of ``eq = 0`` for ``u``, or None.

    Assigning zero to a parameter that is assumed nonzero is never a valid
    pick (the vanishing must come from another factor of the equation).
    """
    field = state.field
    pick = _linear_pick(field, eq, u)
    if pick is None:
        mono = _monomial_pick(field, eq, u)
        if mono is None:
            return None
        pick = (mono[0], mono[1])
    value, slope = pick
    if value.is_zero and state.assumptions.implies_nonzero(field._gen_expr(u)):
        return None
    return value, slope


def _solve_sequential(state: SessionState, equations: list[Expr], prefer,
                      context: str) -> None:
    """Solve the equations one parameter at a time.

    Preference order: explicitly preferred parameters first, then the class
    order f, g, c, a, b (auxiliary parameters before the principal blocks).
    A pick whose leading coefficient is implied nonzero by the assumption
    set is always preferred.  If none exists, numerator factors that are
    implied nonzero are stripped from every equation and the scan repeats;
    only then is a pick accepted under a fresh nonzero assumption on its
    leading coefficient.
    """
    field = state.field
    pending: list[Expr] = []
    for e in equations:
        e = field.expr(e)
        if not e.is_zero:
            pending.append(field._make(e._current().num, S.One))

    def scan(queue):
        found_best = None
        found_fallback = None
        for u in queue:
            for eq in pending:
                if u not in eq.support():
                    continue
                pick = _candidate_pick(state, eq, u)
                if pick is None:
                    continue
                value, slope = pick
                if state.assumptions.implies_nonzero(slope):
                    found_best = (u, value)
                    break
                if found_fallback is None:
                    found_fallback = (u, value, slope)
            if found_best is not None:
                break
        return found_best, found_fallback

    while pending:
        queue = [u for u in _solver_queue(state, prefer) if u not in state.solved]
        best, _ = scan(queue)
        if best is None:
            stripped = []
            for eq in pending:
                r = _strip_nonzero_factors(state, eq)
                if r is None:
                    raise EquivalenceError(
                        f"{context}: inconsistent normalization; every factor of "
                        f"the residual {eq} is assumed nonzero")
                stripped.append(r)
            pending = stripped
            best, fallback = scan(queue)
            if best is None and fallback is not None:
                u, value, slope = fallback
                state.assumptions.assume_nonzero(
                    slope, f"leading coefficient solving {u.name} ({context})")
                best = (u, value)
        if best is None:
            names = sorted({s.name for eq in pending for s in eq.support()
                            if s in set(state.unsolved_params)})
            raise EquivalenceError(
                f"{context}: cannot make progress; {len(pending)} equation(s) remain "
                f"in the parameters {', '.join(names) if names else '(none)'} "
                f"(first residual: {pending[0]})")
        u, value = best
        _apply_solution(state, u, value, context)
        nxt: list[Expr] = []
        for eq in pending:
            r = eq.substitute({u: value})
            if r.is_zero:
                continue
            r = field._make(r._current().num, S.One)
            if not (r.support() & set(state.unsolved_params)):
                raise EquivalenceError(
                    f"{context}: inconsistent normalization; residual {r} "
                    "contains no remaining group parameter")
            nxt.append(r)
        pending = nxt


def solve_params(state: SessionState, equations, prefer=()) -> SessionState:
    """Solve the given expressions (set to zero) for group parameters."""
    eqs = [state.field.expr(e) for e in equations]
    if not eqs:
        return state
    recorded = list(eqs)
    _solve_sequential(state, eqs, prefer, "solve_params")
    state.normalizations.append(("solve", "solve_params", recorded))
    return state


# --- scripted normalization commands ---------------------------------------------


def assume(state: SessionState, target, positive: bool = False) -> SessionState:
    """Record a nonzero (optionally positive) assumption.

    ``target`` is a group parameter or any scalar over the chart; a positive
    declaration also fixes the branch used by later root extractions
    involving that scalar.
    """
    try:
        expr = state.field.expr(state._param_symbol(target))
    except EquivalenceError:
        expr = state.field.expr(target)
        if expr.is_rational:
            raise EquivalenceError("cannot record an assumption on a constant")
    if positive:
        state.field.assume_positive(expr)
    state.assumptions.assume_nonzero(expr, f"declared assumption on {expr}",
                                     positive=positive)
    state.history.append(
        f"assume: {expr} " + ("> 0" if positive else "!= 0"))
    return state


def normalize_dependency(state: SessionState, relations: dict, prefer=()) -> SessionState:
    """Impose target expansions on the dependent forms.

    ``relations`` maps a dependent form name to its target expansion over
    retained coframe labels (constant coefficients).  Every coefficient of
    the actual expansion minus the target becomes an equation for the group
    parameters.
    """
    current = {rel.dependent: rel for rel in dependencies(state)}
    field = state.field
    equations: list[Expr] = []
    for dep, target in relations.items():
        if dep not in current:
            raise EquivalenceError(f"{dep!r} is not a dependent form of this session")
        expansion = current[dep].expansion
        target = {lab: field.expr(c) for lab, c in target.items()}
        for lab in target:
            if lab not in state.coframe_order:
                raise EquivalenceError(f"{lab!r} is not a coframe element")
        for lab in set(expansion) | set(target):
            eq = expansion.get(lab, field.zero) - target.get(lab, field.zero)
            if not eq.is_zero:
                equations.append(eq)
    recorded = list(equations)
    _solve_sequential(state, equations, prefer,
                      "normalize_dependency " + ", ".join(sorted(relations)))
    state.normalizations.append(("dependency", ", ".join(sorted(relations)), recorded))
    state.history.append(
        "normalize_dependency: " + "; ".join(
            f"{dep} -> {{{', '.join(f'{l}: {c}' for l, c in sorted(t.items()))}}}"
            for dep, t in sorted(relations.items())))
    return state


def _combo_items(combo):
    if isinstance(combo, str):
        return [(1, combo)]
    out = []
    for item in combo:
        coeff, name = item
        out.append((coeff, name))
    return out


def normalize_mc(state: SessionState, combo, slot: str, constant,
                 prefer=()) -> SessionState:
    """Normalize a coframe coefficient of a reduced group-direction form.

    ``combo`` is a single form name or a list of (coefficient, name) pairs;
    the combination must already be free of parameter differentials so that
    its coframe coefficients are lifted invariants.  The coefficient at
    ``slot`` is set equal to ``constant``.
    """
    field = state.field
    items = _combo_items(combo)
    if slot not in state.coframe_order:
        raise EquivalenceError(f"{slot!r} is not a coframe element")
    total = form_sum(state.basis, 1,
                     [field.expr(c) * state.mc_form(name) for c, name in items])
    cb = state._working_basis()
    reb = rebase(total, cb)
    leftovers = sorted({state.basis.forms[i].name
                        for key in reb.terms for i in key
                        if state.basis.forms[i].kind.endswith("-differential")})
    if leftovers:
        raise EquivalenceError(
            "the combination is not reduced to the coframe: it still contains "
            + ", ".join(leftovers))
    coeff = reb.coefficient(state.basis[slot])
    label = " + ".join(f"{c}*{name}" if c != 1 else name for c, name in items)
    eq = coeff - field.expr(constant)
    if eq.is_zero:
        state.history.append(f"normalize_mc: [{label}] at {slot} already {constant}")
        return state
    if not (coeff.support() & set(state.unsolved_params)):
        raise EquivalenceError(
            f"coefficient of [{label}] at {slot} does not depend on the group "
            f"parameters: {coeff}")
    recorded = [eq]
    _solve_sequential(state, [eq], prefer, f"normalize_mc [{label}] at {slot}")
    state.normalizations.append(("mc", f"[{label}] at {slot} = {constant}", recorded))
    state.history.append(f"normalize_mc: [{label}] at {slot} = {constant}")
    return state


def normalize_torsion(state: SessionState, equation: str, pair, constant,
                      prefer=()) -> SessionState:
    """Normalize a torsion coefficient of the current structure equations.

    The target is the coefficient of ``pair`` (an unordered coframe pair) in
    d(equation) before absorption; it must depend on the group parameters.
    """
    field = state.field
    eqs = structure(state)
    if equation not in state.coframe_order:
        raise EquivalenceError(f"{equation!r} is not a coframe element")
    b, c = pair
    for lab in (b, c):
        if lab not in state.coframe_order:
            raise EquivalenceError(f"{lab!r} is not a coframe element")
    coeff = eqs.torsion_entry(equation, (b, c))
    pretty = f"d{equation}[{b},{c}]"
    if coeff is None:
        if field.expr(constant).is_zero:
            state.history.append(f"normalize_torsion: {pretty} already 0")
            return state
        raise EquivalenceError(
            f"torsion coefficient {pretty} is identically zero; cannot "
            f"normalize it to {constant}")
    if not (coeff.support() & set(state.unsolved_params)):
        raise EquivalenceError(
            f"torsion coefficient {pretty} does not depend on the group "
            f"parameters: {coeff}")
    eq = coeff - field.expr(constant)
    recorded = [eq]
    _solve_sequential(state, [eq], prefer, f"normalize_torsion {pretty}")
    state.normalizations.append(("torsion", f"{pretty} = {constant}", recorded))
    state.history.append(f"normalize_torsion: {pretty} = {constant}")
    return state


# --- structure equations ----------------------------------------------------------


def _slot_prefix(level: int) -> str:
    if level == 0:
        return "chi"
    if level == 1:
        return "nu"
    return f"slot{level}_"


def structure(state: SessionState) -> StructureEquations:
    """Structure equations of the working coframe.

    The exterior derivative of every coframe element is rewritten over the
    coframe; leftover parameter differentials are packaged into canonical
    slot 1-forms by exact row reduction, and what remains is the torsion
    tensor.  Reconstructing d(coframe) from the result is exact.
    """
    cached = state._cache.get("structure")
    if cached is not None and cached[0] == state._serial:
        return cached[1]

    cb = state._working_basis()
    basis, field = state.basis, state.field
    order = state.coframe_order
    label_pos = {basis.index(name): i for i, name in enumerate(order)}
    unsolved = set(state.unsolved_params)
    dpi_param: dict[int, Symbol] = {}
    for gen, gi in basis.differential_pairs():
        if gen in unsolved:
            dpi_param[gi] = gen

    rows_by_param: dict[Symbol, dict[tuple[int, int], Expr]] = {}
    torsion_pos: list[dict[tuple[int, int], Expr]] = [{} for _ in order]
    missing: set[str] = set()
    for a_pos, name in enumerate(order):
        reb = rebase(ext_d(state._forms[name]), cb)
        for key, coeff in reb.terms.items():
            i, j = key
            pi, pj = label_pos.get(i), label_pos.get(j)
            if pi is not None and pj is not None:
                if pi < pj:
                    torsion_pos[a_pos][(pi, pj)] = coeff
                else:
                    torsion_pos[a_pos][(pj, pi)] = -coeff
            elif pj is not None and i in dpi_param:
                rows_by_param.setdefault(dpi_param[i], {})[(a_pos, pj)] = coeff
            elif pi is not None and j in dpi_param:
                row = rows_by_param.setdefault(dpi_param[j], {})
                row[(a_pos, pi)] = row.get((a_pos, pi), field.zero) - coeff
            else:
                for idx in key:
                    if label_pos.get(idx) is None:
                        missing.add(basis.forms[idx].name)
    if missing:
        raise EquivalenceError(
            "the coframe and the group-parameter differentials fail to span "
            "d(coframe); obstructing differentials: " + ", ".join(sorted(missing)))

    live_rows = [(sym, rows_by_param[sym]) for sym in state.unsolved_params
                 if sym in rows_by_param]
    slot_names, slot_forms, table = _reduce_slots(state, live_rows, order)

    torsion: dict[str, dict[tuple[str, str], Expr]] = {}
    for a_pos, name in enumerate(order):
        row = {(order[b], order[c]): v for (b, c), v in torsion_pos[a_pos].items()
               if not v.is_zero}
        if row:
            torsion[name] = row

    result = StructureEquations(list(order), slot_names, slot_forms, table, torsion)
    state._cache["structure"] = (state._serial, result)
    return result


def _reduce_slots(state: SessionState, live_rows, order):
    """Row-reduce the parameter-differential block into canonical slots.

    Rows are indexed by live parameters (registration order), columns by
    (equation, coframe element) in canonical order.  Full Gauss-Jordan over
    the field, tracking the inverse transform so each reduced row's slot
    1-form is an exact combination of the parameter differentials.
    """
    field, basis = state.field, state.basis
    nrows = len(live_rows)
    rows = [dict(r) for _, r in live_rows]
    tinv = [{k: field.one} for k in range(nrows)]  # tinv[k][j]: d(param_k) weight in slot j
    cols = sorted({c for r in rows for c in r})

    def col_swap(i: int, j: int) -> None:
        for k in range(nrows):
            vi, vj = tinv[k].get(i), tinv[k].get(j)
            if vj is None:
                tinv[k].pop(i, None)
            else:
                tinv[k][i] = vj
            if vi is None:
                tinv[k].pop(j, None)
            else:
                tinv[k][j] = vi

    next_row = 0
    for col in cols:
        found = None
        for r in range(next_row, nrows):
            v = rows[r].get(col)
            if v is not None and not v.is_zero:
                found = r
                break
        if found is None:
            continue
        if found != next_row:
            rows[next_row], rows[found] = rows[found], rows[next_row]
            col_swap(next_row, found)
        pivot = rows[next_row][col]
        if not pivot.is_rational and not state.assumptions.implies_nonzero(pivot):
            state.assumptions.assume_nonzero(
                pivot, f"structure slot pivot at d{order[col[0]]}[{order[col[1]]}]")
        if pivot != field.one:
            rows[next_row] = {c: v / pivot for c, v in rows[next_row].items()}
            for k in range(nrows):
                if next_row in tinv[k]:
                    tinv[k][next_row] = tinv[k][next_row] * pivot
        for r in range(nrows):
            if r == next_row:
                continue
            m = rows[r].get(col)
            if m is None or m.is_zero:
                continue
            rows[r] = {c: v for c, v in
                       ((c, rows[r].get(c, field.zero) - m * rows[next_row].get(c, field.zero))
                        for c in set(rows[r]) | set(rows[next_row]))
                       if not v.is_zero}
            for k in range(nrows):
                if r in tinv[k]:
                    tinv[k][next_row] = tinv[k].get(next_row, field.zero) + m * tinv[k][r]
        next_row += 1

    prefix = _slot_prefix(state.level)
    slot_names = [f"{prefix}{j + 1}" for j in range(next_row)]
    slot_forms: dict[str, DForm] = {}
    for j, name in enumerate(slot_names):
        pieces = []
        for k in range(nrows):
            w = tinv[k].get(j)
            if w is not None and not w.is_zero:
                pieces.append(basis.one("d" + live_rows[k][0].name, w))
        slot_forms[name] = form_sum(basis, 1, pieces)

    table: dict[str, list[tuple[str, str, Expr]]] = {}
    for j, sname in enumerate(slot_names):
        for (a_pos, b_pos), v in sorted(rows[j].items()):
            table.setdefault(order[a_pos], []).append((sname, order[b_pos], v))
    for name in table:
        table[name].sort(key=lambda t: (slot_names.index(t[0]), order.index(t[1])))
    return slot_names, slot_forms, table


# --- absorption ---------------------------------------------------------------------


def _fresh_shift_names(state: SessionState, count_slots: int, count_cols: int):
    """Fresh parameter symbols for the absorption shift unknowns."""
    field = state.field
    while True:
        state._shift_serial += 1
        prefix = f"sh{state._shift_serial}"
        names = [[f"{prefix}_{j + 1}_{b + 1}" for b in range(count_cols)]
                 for j in range(count_slots)]
        if not any(field.has_generator(n) for row in names for n in row):
            return [[field.parameter(n) for n in row] for row in names]


def absorb(state: SessionState, eqs: StructureEquations | None = None,
           ) -> AbsorptionResult:
    """Remove all absorbable torsion by shifting the slot 1-forms.

    Introduces one shift unknown per (slot, coframe element), solves the
    linear cancellation system exactly, and returns the absorbed structure
    equations, the surviving essential torsion, and the degree of
    indeterminacy r1 (the dimension of the homogeneous shift space).
    """
    use_cache = eqs is None
    if use_cache:
        cached = state._cache.get("absorb")
        if cached is not None and cached[0] == state._serial:
            return cached[1]
        eqs = structure(state)
    result = _absorb_core(state, eqs)
    if use_cache:
        state._cache["absorb"] = (state._serial, result)
    return result


def _absorb_core(state: SessionState, eqs: StructureEquations,
                 unknown_order=None) -> AbsorptionResult:
    field = state.field
    order = eqs.coframe_names
    slots = eqs.slot_names
    m, S_n = len(order), len(slots)
    unsolved = set(state.unsolved_params)

    if S_n == 0:
        essential = []
        for a in order:
            for (b, c), v in sorted(eqs.torsion.get(a, {}).items(),
                                    key=lambda kv: (order.index(kv[0][0]),
                                                    order.index(kv[0][1]))):
                essential.append(TorsionCoefficient(
                    a, (b, c), v, True, bool(v.support() & unsolved)))
        return AbsorptionResult(eqs, essential, 0, [])

    shift = _fresh_shift_names(state, S_n, m)
    cmap: dict[tuple[int, int], Expr] = {}
    for a, entries in eqs.table.items():
        for sname, bname, v in entries:
            cmap[(slots.index(sname), a, bname)] = v

    def C(j: int, a: str, bname: str) -> Expr | None:
        return cmap.get((j, a, bname))

    equations: list[Expr] = []
    locations: list[tuple[str, tuple[str, str]]] = []
    for a in order:
        trow = eqs.torsion.get(a, {})
        for bi in range(m):
            for ci in range(bi + 1, m):
                b, c = order[bi], order[ci]
                total = trow.get((b, c), field.zero)
                for j in range(S_n):
                    cc = C(j, a, c)
                    if cc is not None:
                        total = total + cc * shift[j][bi]
                    cb_ = C(j, a, b)
                    if cb_ is not None:
                        total = total - cb_ * shift[j][ci]
                if not total.is_zero:
                    equations.append(total)
                    locations.append((a, (b, c)))

    unknowns = [shift[j][b] for j in range(S_n) for b in range(m)]
    if unknown_order is not None:
        unknowns = [unknowns[i] for i in unknown_order]
    sol = solve_linear(equations, unknowns, state.assumptions)
    for e in sol.new_assumptions:
        state.assumptions.assume_nonzero(e, "absorption pivot")

    zero_free = {f: field.zero for f in sol.free}
    t_value: dict[Symbol, Expr] = dict(zero_free)
    for sym, expr in sol.assignments.items():
        t_value[sym] = expr.substitute(zero_free) if sol.free else expr
    for sym in (u._single_symbol() for row in shift for u in row):
        t_value.setdefault(sym, field.zero)

    sub = {sym: v for sym, v in t_value.items()}
    residual: dict[str, dict[tuple[str, str], Expr]] = {}
    essential: list[TorsionCoefficient] = []
    for (a, pair), total in zip(locations, equations):
        v = total.substitute(sub)
        if not v.is_zero:
            residual.setdefault(a, {})[pair] = v
            essential.append(TorsionCoefficient(
                a, pair, v, True, bool(v.support() & unsolved)))

    slot_forms: dict[str, DForm] = {}
    for j, sname in enumerate(slots):
        pieces = [eqs.slot_forms[sname]]
        for b in range(m):
            val = t_value[shift[j][b]._single_symbol()]
            if not val.is_zero:
                pieces.append(val * state._forms[order[b]])
        slot_forms[sname] = form_sum(state.basis, 1, pieces)

    kernel: list[dict[tuple[str, str], Expr]] = []
    pos_of = {shift[j][b]._single_symbol(): (slots[j], order[b])
              for j in range(S_n) for b in range(m)}
    for f in sol.free:
        fsym = f if isinstance(f, Symbol) else f._single_symbol()
        vec: dict[tuple[str, str], Expr] = {pos_of[fsym]: field.one}
        for sym, expr in sol.assignments.items():
            d = expr.derivative(fsym)
            if not d.is_zero:
                vec[pos_of[sym]] = d
        kernel.append(vec)

    absorbed = StructureEquations(list(order), list(slots), slot_forms,
                                  eqs.table, residual)
    return AbsorptionResult(absorbed, essential, len(sol.free), kernel)


# --- lifted invariants ------------------------------------------------------------


def _designated_slots(mc_name: str, label: str) -> bool:
    if mc_name.startswith("phi"):
        return label.startswith("sigma") or label.startswith("xi")
    if mc_name.startswith("psi") or mc_name.startswith("pi"):
        return label.startswith("sigma")
    return False


def lifted_invariants(state: SessionState) -> list[tuple[str, str, Expr]]:
    """Normalization candidates from group-direction forms that have reduced.

    A candidate form that no longer involves parameter differentials (after
    the current substitutions) is rewritten over the coframe; its
    parameter-dependent coefficients in the designated slots are lifted
    invariants, returned as (form name, coframe slot, coefficient).
    """
    cb = state._working_basis()
    unsolved = set(state.unsolved_params)
    out: list[tuple[str, str, Expr]] = []
    for name in state.mc_order:
        if not (name.startswith("phi") or name.startswith("psi")
                or name.startswith("pi")):
            continue
        reb = rebase(state.mc_form(name), cb)
        reduced = True
        entries: list[tuple[str, Expr]] = []
        for key, coeff in reb.terms.items():
            label = state.basis.forms[key[0]]
            if label.kind.endswith("-differential"):
                reduced = False
                break
            entries.append((label.name, coeff))
        if not reduced:
            continue
        for label, coeff in entries:
            if _designated_slots(name, label) and (coeff.support() & unsolved):
                out.append((name, label, coeff))
    return out


# --- generic-point sampling ---------------------------------------------------------


def _sample_point(field: Field, assumptions: AssumptionSet, exprs,
                  rng: random.Random, attempts: int = 64) -> dict[Symbol, sympy.Rational]:
    """A rational point on the variety cut out by the atom definitions.

    Plain generators get small random rationals; each root atom consumes one
    generator its base is linear in, solved so the base is an exact power;
    exponential atoms are treated as free positive transcendentals.  The
    point is rejected until every recorded assumption holds exactly.
    """
    syms: set[Symbol] = set()
    for e in exprs:
        syms |= e.support()
    for entry in assumptions.entries():
        syms |= entry.expr.support()
    roots = [a for a in field.root_atoms() if a.symbol in syms]
    exps = [a for a in field.exp_atoms() if a.symbol in syms]
    atom_syms = {a.symbol for a in roots} | {a.symbol for a in exps}
    plain = sorted((s for s in syms if s not in atom_syms), key=lambda s: s.name)
    positive = {entry.expr._single_symbol()
                for entry in assumptions.entries() if entry.positive}
    positive.discard(None)

    for _ in range(attempts):
        point: dict[Symbol, sympy.Rational] = {}
        for s in plain:
            mag = sympy.Rational(rng.randint(1, 9), rng.randint(1, 4))
            point[s] = mag if s in positive else mag * rng.choice((1, -1))
        for a in exps:
            point[a.symbol] = sympy.Rational(rng.randint(1, 9), rng.randint(1, 4))
        ok = True
        consumed: set[Symbol] = set()
        for a in roots:
            base = a.base_expr(field)
            picked = None
            for s in sorted(base.support(), key=lambda s: s.name, reverse=True):
                if s in atom_syms or s in consumed or s not in point:
                    continue
                d = base.derivative(s)
                if d.is_zero or not d.derivative(s).is_zero or s in d.support():
                    continue
                try:
                    dval = d.substitute(point, allow_atoms=True)
                except (FieldError, ZeroDivisionError):
                    continue
                if not dval.is_rational or dval.as_fraction() == 0:
                    continue
                picked = (s, dval)
                break
            if picked is None:
                ok = False
                break
            s, dval = picked
            rhat = sympy.Rational(rng.randint(1, 5), rng.randint(1, 3))
            at_zero = dict(point)
            at_zero[s] = sympy.Integer(0)
            try:
                b0 = base.substitute(at_zero, allow_atoms=True)
            except (FieldError, ZeroDivisionError):
                ok = False
                break
            sval = (field.expr(rhat) ** a.index - b0) / dval
            if not sval.is_rational:
                ok = False
                break
            point[s] = sympy.Rational(sval.as_fraction().numerator,
                                      sval.as_fraction().denominator)
            point[a.symbol] = rhat
            consumed.add(s)
        if not ok:
            continue
        try:
            for entry in assumptions.entries():
                if not (entry.expr.support() <= set(point) | atom_syms):
                    continue  # mentions symbols outside the sampled scope
                v = entry.expr.substitute(point, allow_atoms=True)
                if not v.is_rational:
                    ok = False
                    break
                fv = v.as_fraction()
                if fv == 0 or (entry.positive and fv <= 0):
                    ok = False
                    break
            if ok:
                for e in exprs:
                    v = e.substitute(point, allow_atoms=True)
                    if not v.is_rational:
                        ok = False
                        break
        except (FieldError, ZeroDivisionError):
            ok = False
        if ok:
            return point
    raise EquivalenceError(
        "could not sample a generic point consistent with the assumptions; "
        "re-seed the session")


def _eval_fraction(e: Expr, point) -> sympy.Rational:
    v = e.substitute(point, allow_atoms=True)
    if not v.is_rational:
        raise EquivalenceError(f"evaluation left free symbols in {v}")
    f = v.as_fraction()
    return sympy.Rational(f.numerator, f.denominator)


# --- reduced characters ----------------------------------------------------------


def _character_pass(state: SessionState, eqs: StructureEquations,
                    seed: int) -> list[int]:
    field = state.field
    order, slots = eqs.coframe_names, eqs.slot_names
    m, S_n = len(order), len(slots)
    rng = random.Random(seed)
    values = [v for entries in eqs.table.values() for _, _, v in entries]
    point = _sample_point(field, state.assumptions, values, rng)
    chat: dict[tuple[str, int, int], sympy.Rational] = {}
    for a, entries in eqs.table.items():
        for sname, bname, v in entries:
            chat[(a, slots.index(sname), order.index(bname))] = _eval_fraction(v, point)
    zs = [[sympy.Rational(rng.randint(1, 9) * rng.choice((1, -1)), rng.randint(1, 4))
           for _ in range(m)] for _ in range(m)]
    s_prime: list[int] = []
    rows: list[list[sympy.Rational]] = []
    prev_rank = 0
    for k in range(m):
        z = zs[k]
        for a in order:
            row = [sympy.Integer(0)] * S_n
            touched = False
            for j in range(S_n):
                total = sympy.Integer(0)
                for b in range(m):
                    c = chat.get((a, j, b))
                    if c is not None:
                        total += c * z[b]
                        touched = True
                row[j] = total
            if touched:
                rows.append(row)
        rank = sympy.Matrix(rows).rank() if rows else 0
        s_prime.append(rank - prev_rank)
        prev_rank = rank
    return s_prime


def _character_report(s_prime: list[int], r1: int, involutive: bool) -> str:
    total = sum((k + 1) * s for k, s in enumerate(s_prime))
    if involutive:
        if not any(s_prime):
            return (f"All reduced characters vanish and r(1) = {r1} = 0; "
                    "the coframe is an e-structure.")
        last = max(k for k, s in enumerate(s_prime) if s)
        count, arity = s_prime[last], last + 1
        return (f"The Cartan test succeeds (r(1) = {r1} = {total}); solutions of "
                f"the structure equations depend on {_word(count)} arbitrary "
                f"{_plural(count, 'function')} of {_word(arity)} "
                f"{_plural(arity, 'variable')}.")
    return (f"The Cartan test fails (r(1) = {r1}, sum of k*s'_k = {total}); "
            "prolongation is required.")


def characters(state: SessionState, absorbed: StructureEquations | None = None,
               r1: int | None = None) -> CharacterData:
    """Reduced Cartan characters of the absorbed structure equations.

    Computed by exact rank evaluation of the slot tableau at deterministic
    pseudo-random rational points; two independent sample points must agree.
    Involutive iff r1 equals the weighted character sum.
    """
    if absorbed is None or r1 is None:
        ab = absorb(state)
        absorbed, r1 = ab.structure, ab.r1
    m = len(absorbed.coframe_names)
    if not absorbed.slot_names:
        s_prime = [0] * m
        return CharacterData(0, s_prime, True, _character_report(s_prime, 0, True))
    first = _character_pass(state, absorbed, state.seed)
    second = _character_pass(state, absorbed, state.seed + 1)
    if first != second:
        raise EquivalenceError(
            f"reduced characters disagree between two sample points "
            f"({first} vs {second}); re-seed the session")
    total = sum((k + 1) * s for k, s in enumerate(first))
    involutive = (r1 == total)
    return CharacterData(r1, first, involutive,
                         _character_report(first, r1, involutive))


# --- prolongation ------------------------------------------------------------------


def prolong(state: SessionState) -> SessionState:
    """Append the slot 1-forms to the coframe and promote the shift freedom.

    The absorbed slot forms become new coframe elements; each homogeneous
    shift direction contributes a fresh group parameter multiplying its
    kernel combination.  No-op (with a warning) on an e-structure or an
    already involutive coframe.
    """
    ab = absorb(state)
    if not ab.structure.slot_names:
        warnings.warn("prolongation skipped: the coframe is an e-structure")
        return state
    blocking = [t for t in ab.essential if t.parameter_dependent]
    if blocking:
        t0 = blocking[0]
        raise EquivalenceError(
            "prolongation requires fully normalized torsion; parameter-dependent "
            f"essential torsion remains at d{t0.equation}[{t0.pair[0]},{t0.pair[1]}]"
            f" = {t0.value}")
    ch = characters(state)
    if ch.involutive:
        warnings.warn("prolongation skipped: the coframe is already involutive")
        return state

    field, basis = state.field, state.basis
    slots = ab.structure.slot_names
    level = state.level
    wsyms: list[Symbol] = []
    wexprs: list[Expr] = []
    for k in range(len(ab.kernel)):
        base = f"w{k + 1}" if level == 0 else f"w{level + 1}_{k + 1}"
        name = base
        bump = 0
        while field.has_generator(name):
            bump += 1
            name = f"{base}_{bump}"
        wexpr = field.parameter(name)
        basis.register_differential(wexpr)
        wsyms.append(wexpr._single_symbol())
        wexprs.append(wexpr)

    new_forms: dict[str, DForm] = {}
    for sname in slots:
        pieces = [ab.structure.slot_forms[sname]]
        for k, vec in enumerate(ab.kernel):
            combo = [c * state._forms[bname]
                     for (sn, bname), c in vec.items() if sn == sname]
            if combo:
                pieces.append(wexprs[k] * form_sum(basis, 1, combo))
        new_forms[sname] = form_sum(basis, 1, pieces)

    for sname in slots:
        _ensure_label(basis, sname, "coframe-element")
        state._forms[sname] = new_forms[sname]
        state.coframe_order.append(sname)
    state.extra_params.extend(wsyms)
    state.level += 1
    state.history.append(
        f"prolong: appended {', '.join(slots)}"
        + (f"; new parameters {', '.join(s.name for s in wsyms)}" if wsyms else ""))
    state._bump()
    return state


# --- finalization ------------------------------------------------------------------


def _functional_rank(field: Field, assumptions: AssumptionSet, fns, coords,
                     seed: int) -> int:
    if not fns:
        return 0
    jac = [[f.derivative(c) for c in coords] for f in fns]
    exprs = list(fns) + [e for row in jac for e in row]
    rng = random.Random(seed)
    point = _sample_point(field, assumptions, exprs, rng)
    mat = sympy.Matrix([[_eval_fraction(e, point) for e in row] for row in jac])
    return mat.rank()


def _stable_rank(state: SessionState, fns, coords) -> int:
    r1 = _functional_rank(state.field, state.assumptions, fns, coords, state.seed)
    r2 = _functional_rank(state.field, state.assumptions, fns, coords, state.seed + 1)
    if r1 != r2:
        raise EquivalenceError(
            f"invariant rank disagrees between two sample points ({r1} vs {r2}); "
            "re-seed the session")
    return r1


def finalize(state: SessionState) -> FinalReport:
    """Close the session with an e-structure or involutivity report.

    With all group parameters solved, the non-constant structure
    coefficients are scanned in canonical order; each one that increases the
    functional rank becomes a differential invariant.  The rank is then
    stabilized by adjoining coframe-derivative coefficients, and the
    symmetry dimension is the coframe size minus the rank.  With parameters
    remaining, the coframe must be involutive and the character report is
    returned.
    """
    if state.unsolved_params:
        ch = characters(state)
        if not ch.involutive:
            raise EquivalenceError(
                "finalize requires an e-structure or an involutive coframe; "
                + ch.group_report)
        ab = absorb(state)
        state.history.append("finalize: involutive coframe")
        return FinalReport("involutive", list(state.coframe_order), ab.structure,
                           [], None, None, ch, ch.group_report)

    eqs = structure(state)
    coords = [field_sym for field_sym in state.system.intrinsic_coordinates()]
    candidates: list[Expr] = []
    order = state.coframe_order
    for a in order:
        row = eqs.torsion.get(a, {})
        for (b, c) in sorted(row, key=lambda p: (order.index(p[0]), order.index(p[1]))):
            v = row[(b, c)]
            if v.support() & set(coords):
                candidates.append(v)

    invariants: list[Expr] = []
    rank = 0
    for cand in candidates:
        trial = invariants + [cand]
        r = _stable_rank(state, trial, coords)
        if r > rank:
            invariants.append(cand)
            rank = r

    # rank stabilization: adjoin coframe-derivative coefficients
    cb = state._working_basis()
    frontier = list(invariants)
    functions = list(invariants)
    while frontier:
        new_frontier: list[Expr] = []
        for f in frontier:
            reb = rebase(d_scalar(state.basis, f), cb)
            for key, coeff in reb.terms.items():
                label = state.basis.forms[key[0]]
                if label.kind.endswith("-differential"):
                    raise EquivalenceError(
                        f"differential of an invariant fails to close onto the "
                        f"coframe: leftover {label.name}")
                if coeff.support() & set(coords):
                    new_frontier.append(coeff)
        if not new_frontier:
            break
        r = _stable_rank(state, functions + new_frontier, coords)
        if r == rank:
            break
        rank = r
        functions.extend(new_frontier)
        frontier = new_frontier

    records: list[InvariantRecord] = []
    for idx, value in enumerate(invariants):
        name = "I" if len(invariants) == 1 else f"I{idx + 1}"
        reb = rebase(d_scalar(state.basis, value), cb)
        differential = {state.basis.forms[key[0]].name: coeff
                        for key, coeff in reb.terms.items()}
        records.append(InvariantRecord(name, value, differential))

    dim = len(order) - rank
    report = (f"Invariant coframe with {len(order)} elements; "
              f"{_word(len(records))} functionally independent differential "
              f"{_plural(len(records), 'invariant')} (rank {rank}); "
              f"the symmetry group is {dim}-dimensional.")
    ch = characters(state)
    state.history.append(f"finalize: e-structure, rank {rank}, dimension {dim}")
    return FinalReport("e-structure", list(order), eqs, records, rank, dim, ch, report)


# --- automatic mode ----------------------------------------------------------------


def auto_run(state: SessionState, max_steps: int = 40) -> FinalReport:
    """Run the loop unattended with a fixed target-selection rule.

    At each step the first parameter-dependent essential torsion coefficient
    (canonical order) is normalized: to 0 when it is affine in the remaining
    parameters with no parameter-free part, else to 1.  When none remain the
    state is finalized if involutive or an e-structure, and prolonged
    otherwise.  Choices are logged in the history.
    """
    field = state.field
    for _ in range(max_steps):
        ab = absorb(state)
        targets = [t for t in ab.essential if t.parameter_dependent]
        if not targets:
            ch = characters(state)
            if ch.involutive or not ab.structure.slot_names:
                return finalize(state)
            prolong(state)
            continue
        t0 = targets[0]
        live = [p for p in state.unsolved_params if p in t0.value.support()]
        const_part = t0.value.substitute({p: field.zero for p in live})
        affine = all(not (t0.value.derivative(p).support() & set(live)) for p in live)
        constant = 0 if (affine and const_part.is_zero) else 1
        state.history.append(
            f"auto: normalizing essential d{t0.equation}"
            f"[{t0.pair[0]},{t0.pair[1]}] to {constant}")
        _solve_sequential(state, [t0.value - field.expr(constant)], (),
                          f"auto normalize d{t0.equation}[{t0.pair[0]},{t0.pair[1]}]")
        state.normalizations.append(
            ("torsion", f"auto d{t0.equation}[{t0.pair[0]},{t0.pair[1]}] = {constant}",
             [t0.value - field.expr(constant)]))
    raise EquivalenceError(
        f"auto mode did not reach an e-structure or involutive coframe "
        f"within {max_steps} steps")
