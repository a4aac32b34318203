"""Decision procedure for linear integer arithmetic with boolean atoms.

The formula IR is negation-normal: plain tuples, hashable, built by smart
constructors that fold ground atoms eagerly.

    ("true",) | ("false",)
    ("and", fs) | ("or", fs)
    ("le", lin)        lin <= 0
    ("eq", lin)        lin == 0
    ("ne", lin)        lin != 0
    ("div", d, lin)    d divides lin          (d >= 2)
    ("ndiv", d, lin)   d does not divide lin
    ("bvar", name) | ("nbvar", name)

where lin is a linear term ((var, coeff), ...) pairs plus an integer constant,
kept sorted by variable name.

Quantifier elimination over the integers follows Cooper's method: scale the
eliminated variable's coefficients to a common magnitude l, switch to u = l*x
(adding the divisibility constraint l | u), and replace the existential with
the finite disjunction over the "minus infinity" residues j in 1..delta and
the boundary terms b + j. Boolean variables are eliminated by expansion.

Satisfiability with model extraction eliminates integer variables innermost-
out, then walks forward assigning each variable by a complete univariate scan
(all atom boundaries +/- the divisibility period). Boolean variables are
branched first.
"""

from __future__ import annotations

from math import gcd
from typing import Iterable, Optional

from ..ast import (
    Expr, IntLit, BoolLit, Var, Unary, Binary, Forall, Exists, Sort,
    COMPARISONS,
)


class NonLinearError(Exception):
    pass


# ---------------------------------------------------------------------------
# Linear terms
# ---------------------------------------------------------------------------

Lin = tuple  # (const, ((var, coeff), ...))


def lin(const: int = 0, terms: Iterable[tuple[str, int]] = ()) -> Lin:
    acc: dict[str, int] = {}
    for v, c in terms:
        acc[v] = acc.get(v, 0) + c
    items = tuple(sorted((v, c) for v, c in acc.items() if c != 0))
    return (const, items)


def lin_var(v: str) -> Lin:
    return (0, ((v, 1),))


def lin_add(a: Lin, b: Lin) -> Lin:
    return lin(a[0] + b[0], list(a[1]) + list(b[1]))


def lin_scale(a: Lin, k: int) -> Lin:
    if k == 0:
        return (0, ())
    return (a[0] * k, tuple((v, c * k) for v, c in a[1]))


def lin_sub(a: Lin, b: Lin) -> Lin:
    return lin_add(a, lin_scale(b, -1))


def lin_coeff(a: Lin, v: str) -> int:
    for name, c in a[1]:
        if name == v:
            return c
    return 0


def lin_drop(a: Lin, v: str) -> Lin:
    return (a[0], tuple((n, c) for n, c in a[1] if n != v))


def lin_subst(a: Lin, v: str, repl: Lin) -> Lin:
    c = lin_coeff(a, v)
    if c == 0:
        return a
    return lin_add(lin_drop(a, v), lin_scale(repl, c))


def lin_eval(a: Lin, env: dict[str, int]) -> int:
    return a[0] + sum(c * env[v] for v, c in a[1])


def lin_vars(a: Lin) -> set[str]:
    return {v for v, _ in a[1]}


def _lcm(a: int, b: int) -> int:
    return a * b // gcd(a, b)


# ---------------------------------------------------------------------------
# Formula constructors
# ---------------------------------------------------------------------------

TRUE = ("true",)
FALSE = ("false",)


def mk_and(fs: Iterable[tuple]) -> tuple:
    out: list[tuple] = []
    seen: set[tuple] = set()
    for f in fs:
        if f == FALSE:
            return FALSE
        if f == TRUE:
            continue
        sub = f[1] if f[0] == "and" else (f,)
        for g in sub:
            if g == FALSE:
                return FALSE
            if g != TRUE and g not in seen:
                seen.add(g)
                out.append(g)
    if not out:
        return TRUE
    if len(out) == 1:
        return out[0]
    return ("and", tuple(out))


def mk_or(fs: Iterable[tuple]) -> tuple:
    out: list[tuple] = []
    seen: set[tuple] = set()
    for f in fs:
        if f == TRUE:
            return TRUE
        if f == FALSE:
            continue
        sub = f[1] if f[0] == "or" else (f,)
        for g in sub:
            if g == TRUE:
                return TRUE
            if g != FALSE and g not in seen:
                seen.add(g)
                out.append(g)
    if not out:
        return FALSE
    if len(out) == 1:
        return out[0]
    return ("or", tuple(out))


def _canon_sign(a: Lin) -> Lin:
    """Flip sign so the first coefficient (or constant) is nonnegative."""
    lead = a[1][0][1] if a[1] else a[0]
    return lin_scale(a, -1) if lead < 0 else a


def mk_le(a: Lin) -> tuple:
    if not a[1]:
        return TRUE if a[0] <= 0 else FALSE
    g = gcd(*(abs(c) for _, c in a[1]))
    if g > 1:
        # g*t + c <= 0  <=>  t <= floor(-c/g)  <=>  t - floor(-c/g) <= 0
        a = (-((-a[0]) // g), tuple((v, c // g) for v, c in a[1]))
    return ("le", a)


def mk_eq(a: Lin) -> tuple:
    if not a[1]:
        return TRUE if a[0] == 0 else FALSE
    g = gcd(*(abs(c) for _, c in a[1]))
    if g > 1:
        if a[0] % g != 0:
            return FALSE
        a = (a[0] // g, tuple((v, c // g) for v, c in a[1]))
    return ("eq", _canon_sign(a))


def mk_ne(a: Lin) -> tuple:
    if not a[1]:
        return TRUE if a[0] != 0 else FALSE
    g = gcd(*(abs(c) for _, c in a[1]))
    if g > 1:
        if a[0] % g != 0:
            return TRUE
        a = (a[0] // g, tuple((v, c // g) for v, c in a[1]))
    return ("ne", _canon_sign(a))


def mk_div(d: int, a: Lin) -> tuple:
    d = abs(d)
    assert d >= 1
    const = a[0] % d
    terms = tuple((v, c % d) for v, c in a[1] if c % d != 0)
    if not terms:
        return TRUE if const == 0 else FALSE
    if d == 1:
        return TRUE
    return ("div", d, (const, terms))


def mk_ndiv(d: int, a: Lin) -> tuple:
    f = mk_div(d, a)
    return neg(f)


def neg(f: tuple) -> tuple:
    tag = f[0]
    if tag == "true":
        return FALSE
    if tag == "false":
        return TRUE
    if tag == "and":
        return mk_or(neg(g) for g in f[1])
    if tag == "or":
        return mk_and(neg(g) for g in f[1])
    if tag == "le":
        # not(t <= 0)  <=>  -t + 1 <= 0
        return mk_le(lin_add(lin_scale(f[1], -1), (1, ())))
    if tag == "eq":
        return ("ne", f[1])
    if tag == "ne":
        return ("eq", f[1])
    if tag == "div":
        return ("ndiv", f[1], f[2])
    if tag == "ndiv":
        return ("div", f[1], f[2])
    if tag == "bvar":
        return ("nbvar", f[1])
    if tag == "nbvar":
        return ("bvar", f[1])
    raise ValueError(f"bad IR node {f!r}")


def ir_vars(f: tuple) -> tuple[set[str], set[str]]:
    """(integer variables, boolean variables) occurring in f."""
    ints: set[str] = set()
    bools: set[str] = set()

    def walk(g: tuple) -> None:
        tag = g[0]
        if tag in ("and", "or"):
            for h in g[1]:
                walk(h)
        elif tag in ("le", "eq", "ne"):
            ints.update(lin_vars(g[1]))
        elif tag in ("div", "ndiv"):
            ints.update(lin_vars(g[2]))
        elif tag in ("bvar", "nbvar"):
            bools.add(g[1])

    walk(f)
    return ints, bools


def subst_int(f: tuple, v: str, repl: Lin) -> tuple:
    tag = f[0]
    if tag in ("true", "false", "bvar", "nbvar"):
        return f
    if tag == "and":
        return mk_and(subst_int(g, v, repl) for g in f[1])
    if tag == "or":
        return mk_or(subst_int(g, v, repl) for g in f[1])
    if tag == "le":
        return mk_le(lin_subst(f[1], v, repl))
    if tag == "eq":
        return mk_eq(lin_subst(f[1], v, repl))
    if tag == "ne":
        return mk_ne(lin_subst(f[1], v, repl))
    if tag == "div":
        return mk_div(f[1], lin_subst(f[2], v, repl))
    if tag == "ndiv":
        return mk_ndiv(f[1], lin_subst(f[2], v, repl))
    raise ValueError(f"bad IR node {f!r}")


def subst_bool(f: tuple, name: str, val: bool) -> tuple:
    tag = f[0]
    if tag == "bvar" and f[1] == name:
        return TRUE if val else FALSE
    if tag == "nbvar" and f[1] == name:
        return FALSE if val else TRUE
    if tag == "and":
        return mk_and(subst_bool(g, name, val) for g in f[1])
    if tag == "or":
        return mk_or(subst_bool(g, name, val) for g in f[1])
    return f


def eval_ir(f: tuple, ienv: dict[str, int], benv: dict[str, bool]) -> bool:
    tag = f[0]
    if tag == "true":
        return True
    if tag == "false":
        return False
    if tag == "and":
        return all(eval_ir(g, ienv, benv) for g in f[1])
    if tag == "or":
        return any(eval_ir(g, ienv, benv) for g in f[1])
    if tag == "le":
        return lin_eval(f[1], ienv) <= 0
    if tag == "eq":
        return lin_eval(f[1], ienv) == 0
    if tag == "ne":
        return lin_eval(f[1], ienv) != 0
    if tag == "div":
        return lin_eval(f[2], ienv) % f[1] == 0
    if tag == "ndiv":
        return lin_eval(f[2], ienv) % f[1] != 0
    if tag == "bvar":
        return benv[f[1]]
    if tag == "nbvar":
        return not benv[f[1]]
    raise ValueError(f"bad IR node {f!r}")


# ---------------------------------------------------------------------------
# Cooper elimination
# ---------------------------------------------------------------------------

def _atoms_with(f: tuple, v: str) -> list[tuple]:
    out: list[tuple] = []

    def walk(g: tuple) -> None:
        tag = g[0]
        if tag in ("and", "or"):
            for h in g[1]:
                walk(h)
        elif tag in ("le", "eq", "ne"):
            if lin_coeff(g[1], v) != 0:
                out.append(g)
        elif tag in ("div", "ndiv"):
            if lin_coeff(g[2], v) != 0:
                out.append(g)

    walk(f)
    return out


def _unitize(f: tuple, x: str, u: str, l: int) -> tuple:
    """Rewrite f so the variable x (coefficient a) appears as u = l*x with
    unit coefficient. Caller conjoins div(l, u)."""

    def map_atom(g: tuple) -> tuple:
        tag = g[0]
        if tag in ("le", "eq", "ne"):
            a = lin_coeff(g[1], x)
            if a == 0:
                return g
            k = l // abs(a)
            scaled = lin_scale(lin_drop(g[1], x), k)
            sign = 1 if a > 0 else -1
            new = lin_add(scaled, (0, ((u, sign),)))
            return (tag, new)
        if tag in ("div", "ndiv"):
            a = lin_coeff(g[2], x)
            if a == 0:
                return g
            k = l // abs(a)
            scaled = lin_scale(lin_drop(g[2], x), k)
            sign = 1 if a > 0 else -1
            new = lin_add(scaled, (0, ((u, sign),)))
            return (tag, g[1] * k, new)
        return g

    def walk(g: tuple) -> tuple:
        tag = g[0]
        if tag == "and":
            return ("and", tuple(walk(h) for h in g[1]))
        if tag == "or":
            return ("or", tuple(walk(h) for h in g[1]))
        return map_atom(g)

    return walk(f)


def _minus_inf(f: tuple, u: str) -> tuple:
    def walk(g: tuple) -> tuple:
        tag = g[0]
        if tag == "and":
            return mk_and(walk(h) for h in g[1])
        if tag == "or":
            return mk_or(walk(h) for h in g[1])
        if tag in ("le", "eq", "ne"):
            c = lin_coeff(g[1], u)
            if c == 0:
                return g
            if tag == "le":
                return TRUE if c > 0 else FALSE
            return FALSE if tag == "eq" else TRUE
        return g  # div/ndiv atoms stay, substituted with u := j later

    return walk(f)


def _boundaries(f: tuple, u: str) -> set[Lin]:
    bset: set[Lin] = set()
    for g in _atoms_with(f, u):
        tag = g[0]
        if tag == "le":
            c = lin_coeff(g[1], u)
            if c < 0:
                # -u + rest <= 0  <=>  u >= rest; boundary rest - 1
                rest = lin_drop(g[1], u)
                bset.add(lin_add(rest, (-1, ())))
        elif tag in ("eq", "ne"):
            c = lin_coeff(g[1], u)
            rest = lin_drop(g[1], u)
            # c=+1: u = -rest;  c=-1: u = rest
            point = rest if c < 0 else lin_scale(rest, -1)
            if tag == "eq":
                bset.add(lin_add(point, (-1, ())))
            else:
                bset.add(point)
    return bset


def qe_exists_int(x: str, f: tuple) -> tuple:
    if x not in ir_vars(f)[0]:
        return f
    atoms = _atoms_with(f, x)
    coeffs = []
    for g in atoms:
        a = lin_coeff(g[1] if g[0] in ("le", "eq", "ne") else g[2], x)
        coeffs.append(abs(a))
    l = 1
    for c in coeffs:
        l = _lcm(l, c)
    u = f"{x}~u"
    g = _unitize(f, x, u, l)
    if l > 1:
        g = mk_and([g, mk_div(l, lin_var(u))])
    delta = 1
    for atom in _atoms_with(g, u):
        if atom[0] in ("div", "ndiv"):
            delta = _lcm(delta, atom[1])
    finf = _minus_inf(g, u)
    bset = _boundaries(g, u)
    parts: list[tuple] = []
    for j in range(1, delta + 1):
        parts.append(subst_int(finf, u, (j, ())))
        for b in bset:
            parts.append(subst_int(g, u, lin_add(b, (j, ()))))
    return mk_or(parts)


def qe_exists(varlist: list[tuple[str, Sort]], f: tuple) -> tuple:
    for name, sort in reversed(varlist):
        if sort is Sort.BOOL:
            f = mk_or([subst_bool(f, name, False), subst_bool(f, name, True)])
        else:
            f = qe_exists_int(name, f)
    return f


def qe_forall(varlist: list[tuple[str, Sort]], f: tuple) -> tuple:
    for name, sort in reversed(varlist):
        if sort is Sort.BOOL:
            f = mk_and([subst_bool(f, name, False), subst_bool(f, name, True)])
        else:
            f = neg(qe_exists_int(name, neg(f)))
    return f


# ---------------------------------------------------------------------------
# Satisfiability and models
# ---------------------------------------------------------------------------

def _univariate_solve(f: tuple, v: str) -> Optional[int]:
    delta = 1
    boundaries: set[int] = set()
    for g in _atoms_with(f, v):
        if g[0] in ("div", "ndiv"):
            delta = _lcm(delta, g[1])
            continue
        a = lin_coeff(g[1], v)
        r = g[1][0]  # remaining constant (other vars already substituted)
        # a*v + r ~ 0 crosses at v = -r/a; take floor and ceiling
        boundaries.add((-r) // a)       # floor(-r/a), Python // floors
        boundaries.add(-(r // a))       # ceil(-r/a) = -floor(r/a)
    cands: set[int] = set()
    for b in boundaries:
        for k in range(-delta - 1, delta + 2):
            cands.add(b + k)
    for k in range(-delta - 1, delta + 2):
        cands.add(k)
    for c in sorted(cands, key=lambda z: (abs(z), z)):
        if eval_ir(f, {v: c}, {}):
            return c
    return None


def decide(f: tuple) -> tuple[bool, Optional[dict]]:
    """Satisfiability with a witness model over all free variables of f."""
    _, bvars = ir_vars(f)
    if bvars:
        b = sorted(bvars)[0]
        for val in (False, True):
            sat, model = decide(subst_bool(f, b, val))
            if sat:
                assert model is not None
                model[b] = val
                return True, model
        return False, None
    ivars = sorted(ir_vars(f)[0])
    chain = [f]
    for v in reversed(ivars):
        chain.append(qe_exists_int(v, chain[-1]))
    ground = chain[-1]
    if not eval_ir(ground, {}, {}):
        return False, None
    model: dict[str, int] = {}
    for i, v in enumerate(ivars):
        g = chain[len(ivars) - (i + 1)]
        for w, val in model.items():
            g = subst_int(g, w, (val, ()))
        c = _univariate_solve(g, v)
        if c is None:
            # widen the scan as a safety net; should be unreachable
            for c2 in range(-1000, 1001):
                if eval_ir(g, {v: c2}, {}):
                    c = c2
                    break
        assert c is not None, "model extraction failed"
        model[v] = c
    return True, model


# ---------------------------------------------------------------------------
# Translation from expression trees
# ---------------------------------------------------------------------------

def _lin_of(e: Expr, sorts: dict[str, Sort]) -> Lin:
    if isinstance(e, IntLit):
        return (e.value, ())
    if isinstance(e, Var):
        if sorts.get(e.name, Sort.INT) is not Sort.INT:
            raise NonLinearError(f"boolean variable {e.name} in arithmetic")
        return lin_var(e.name)
    if isinstance(e, Unary) and e.op == "-":
        return lin_scale(_lin_of(e.operand, sorts), -1)
    if isinstance(e, Binary):
        if e.op == "+":
            return lin_add(_lin_of(e.left, sorts), _lin_of(e.right, sorts))
        if e.op == "-":
            return lin_sub(_lin_of(e.left, sorts), _lin_of(e.right, sorts))
        if e.op == "*":
            a = _lin_of(e.left, sorts)
            b = _lin_of(e.right, sorts)
            if not a[1]:
                return lin_scale(b, a[0])
            if not b[1]:
                return lin_scale(a, b[0])
            raise NonLinearError("product of two variables")
    raise NonLinearError(f"not a linear integer term: {e!r}")


def _is_bool_expr(e: Expr, sorts: dict[str, Sort]) -> bool:
    if isinstance(e, BoolLit):
        return True
    if isinstance(e, Var):
        return sorts.get(e.name, Sort.INT) is Sort.BOOL
    if isinstance(e, Unary):
        return e.op == "!"
    if isinstance(e, Binary):
        return e.op in ("&&", "||", "==>") + COMPARISONS
    if isinstance(e, (Forall, Exists)):
        return True
    return False


def from_expr(e: Expr, sorts: dict[str, Sort]) -> tuple:
    """Translate a boolean expression tree into the NNF IR.

    Quantifiers are eliminated on the way in, so the result is always
    quantifier-free.
    """
    if isinstance(e, BoolLit):
        return TRUE if e.value else FALSE
    if isinstance(e, Var):
        return ("bvar", e.name)
    if isinstance(e, Unary) and e.op == "!":
        return neg(from_expr(e.operand, sorts))
    if isinstance(e, Binary):
        if e.op == "&&":
            return mk_and([from_expr(e.left, sorts), from_expr(e.right, sorts)])
        if e.op == "||":
            return mk_or([from_expr(e.left, sorts), from_expr(e.right, sorts)])
        if e.op == "==>":
            return mk_or([neg(from_expr(e.left, sorts)),
                          from_expr(e.right, sorts)])
        if e.op in ("==", "!=") and (_is_bool_expr(e.left, sorts)
                                     or _is_bool_expr(e.right, sorts)):
            a = from_expr(e.left, sorts)
            b = from_expr(e.right, sorts)
            iff = mk_or([mk_and([a, b]), mk_and([neg(a), neg(b)])])
            return iff if e.op == "==" else neg(iff)
        if e.op in COMPARISONS:
            d = lin_sub(_lin_of(e.left, sorts), _lin_of(e.right, sorts))
            if e.op == "==":
                return mk_eq(d)
            if e.op == "!=":
                return mk_ne(d)
            if e.op == "<=":
                return mk_le(d)
            if e.op == "<":
                return mk_le(lin_add(d, (1, ())))
            if e.op == ">=":
                return mk_le(lin_scale(d, -1))
            if e.op == ">":
                return mk_le(lin_add(lin_scale(d, -1), (1, ())))
    if isinstance(e, Forall):
        inner_sorts = dict(sorts)
        inner_sorts.update({n: s for n, s in e.vars})
        return qe_forall(list(e.vars), from_expr(e.body, inner_sorts))
    if isinstance(e, Exists):
        inner_sorts = dict(sorts)
        inner_sorts.update({n: s for n, s in e.vars})
        return qe_exists(list(e.vars), from_expr(e.body, inner_sorts))
    raise NonLinearError(f"not a boolean formula: {e!r}")


# ---------------------------------------------------------------------------
# Translation back to expression trees (used by abduction)
# ---------------------------------------------------------------------------

class HasDivisibility(Exception):
    """Raised when converting an IR formula containing div/ndiv atoms."""


def _lin_to_expr(a: Lin) -> tuple[Expr, Expr]:
    """Split a linear term into (positive side, negative side) expressions,
    so `x - y + 2 <= 0` renders as `x + 2 <= y`."""
    pos: list[Expr] = []
    negs: list[Expr] = []
    for v, c in a[1]:
        target = pos if c > 0 else negs
        k = abs(c)
        term: Expr = Var(v) if k == 1 else Binary("*", IntLit(k), Var(v))
        target.append(term)
    if a[0] > 0:
        pos.append(IntLit(a[0]))
    elif a[0] < 0:
        negs.append(IntLit(-a[0]))

    def side(terms: list[Expr]) -> Expr:
        if not terms:
            return IntLit(0)
        out = terms[0]
        for t in terms[1:]:
            out = Binary("+", out, t)
        return out

    return side(pos), side(negs)


def to_expr(f: tuple) -> Expr:
    tag = f[0]
    if tag == "true":
        return BoolLit(True)
    if tag == "false":
        return BoolLit(False)
    if tag == "and":
        out = to_expr(f[1][0])
        for g in f[1][1:]:
            out = Binary("&&", out, to_expr(g))
        return out
    if tag == "or":
        out = to_expr(f[1][0])
        for g in f[1][1:]:
            out = Binary("||", out, to_expr(g))
        return out
    if tag == "le":
        lhs, rhs = _lin_to_expr(f[1])
        return Binary("<=", lhs, rhs)
    if tag == "eq":
        lhs, rhs = _lin_to_expr(f[1])
        return Binary("==", lhs, rhs)
    if tag == "ne":
        lhs, rhs = _lin_to_expr(f[1])
        return Binary("!=", lhs, rhs)
    if tag in ("div", "ndiv"):
        raise HasDivisibility(str(f))
    if tag == "bvar":
        return Var(f[1])
    if tag == "nbvar":
        return Unary("!", Var(f[1]))
    raise ValueError(f"bad IR node {f!r}")
