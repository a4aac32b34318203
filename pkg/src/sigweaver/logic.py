"""Verification-condition layer: weakest preconditions, Hoare triples,
thread-local renaming, abduction, and commutativity checking.

A Hoare triple {P} s {Q} is discharged by checking validity of P => wp(s, Q)
plus any loop side conditions. Validity goes through an SMT session: a formula
f is Valid iff !f is unsatisfiable, Invalid with the satisfying assignment of
!f otherwise, and Unknown on solver failure or timeout. Unknown is treated as
"not provable" everywhere downstream, which only ever adds signaling.

Abduction: given premises P and a goal, find strengthenings psi with
(1) P /\ psi |= goal and (2) P /\ psi consistent. Candidates come from two
sources: universal projections of P => goal onto subsets of shared variables
(quantifier elimination over linear integer arithmetic), and sign/strength
variants of the atoms appearing in P and the goal. Every candidate is
re-verified against (1) and (2) before it is returned, so the candidate
generation strategy affects completeness only, never soundness. Candidates
mentioning thread-local variables are discarded: a monitor invariant must
hold for all threads at once.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from enum import Enum
from itertools import combinations
from typing import Iterable, Optional

from .ast import (
    Expr, IntLit, BoolLit, Var, Unary, Binary, Forall, Exists,
    Stmt, Skip, Assign, Seq, If, While,
    Sort, Kind, Monitor, CCR,
    and_, or_, not_, implies, eq, simplify, subst, free_vars, conjuncts,
    ccrs, has_loop, rename_stmt, stmt_vars, assigned_vars,
    COMPARISONS, TRUE, FALSE,
)
from .smt import lia
from .smt.client import SmtSession

log = logging.getLogger("sigweaver.logic")


# ---------------------------------------------------------------------------
# Vocabulary: sorts and shared/local kinds for every variable in play
# ---------------------------------------------------------------------------

class Vocabulary:
    """Tracks sort and kind of every variable, including freshened copies."""

    def __init__(self, monitor: Optional[Monitor] = None):
        self.sorts: dict[str, Sort] = {}
        self.kinds: dict[str, Kind] = {}
        self._fresh = 0
        if monitor is not None:
            for f in monitor.fields:
                self.add(f.name, f.sort, Kind.SHARED)
            for m in monitor.methods:
                for p in m.params:
                    self.add(p.name, p.sort, Kind.LOCAL)

    def add(self, name: str, sort: Sort, kind: Kind) -> None:
        self.sorts[name] = sort
        self.kinds[name] = kind

    def sort_of(self, name: str) -> Sort:
        return self.sorts[name]

    def is_local(self, name: str) -> bool:
        return self.kinds.get(name) is Kind.LOCAL

    def locals_in(self, e: Expr) -> set[str]:
        return {v for v in free_vars(e) if self.is_local(v)}

    def shared_in(self, e: Expr) -> set[str]:
        return {v for v in free_vars(e) if self.kinds.get(v) is Kind.SHARED}

    def fresh(self, base: str, sort: Sort, kind: Kind = Kind.LOCAL) -> str:
        stem = base.split("!", 1)[0]
        while True:
            self._fresh += 1
            cand = f"{stem}!{self._fresh}"
            if cand not in self.sorts:
                self.add(cand, sort, kind)
                return cand

    def decls_for(self, es: Iterable[Expr]) -> dict[str, Sort]:
        names: set[str] = set()
        for e in es:
            names |= free_vars(e)
        return {n: self.sorts[n] for n in names}


# ---------------------------------------------------------------------------
# Verdicts and triples
# ---------------------------------------------------------------------------

class Status(Enum):
    VALID = "valid"
    INVALID = "invalid"
    UNKNOWN = "unknown"


@dataclass(frozen=True)
class Verdict:
    status: Status
    model: Optional[dict] = None   # countermodel for INVALID
    reason: Optional[str] = None   # for UNKNOWN

    @property
    def is_valid(self) -> bool:
        return self.status is Status.VALID

    def __str__(self) -> str:
        if self.status is Status.INVALID and self.model:
            inner = ", ".join(f"{k}={v}" for k, v in sorted(self.model.items()))
            return f"invalid [{inner}]"
        if self.status is Status.UNKNOWN and self.reason:
            return f"unknown ({self.reason})"
        return self.status.value


VALID = Verdict(Status.VALID)


@dataclass(frozen=True)
class HoareTriple:
    pre: Expr
    body: Stmt
    post: Expr
    label: str = ""

    def __str__(self) -> str:
        from .ast import pretty_expr, pretty_stmt
        body = " ".join(l.strip() for l in pretty_stmt(self.body))
        return f"{{{pretty_expr(self.pre)}}} {body} {{{pretty_expr(self.post)}}}"


# ---------------------------------------------------------------------------
# Weakest preconditions
# ---------------------------------------------------------------------------

@dataclass
class WpResult:
    pre: Expr
    side_conditions: tuple[Expr, ...] = ()
    approximate: bool = False  # an unannotated loop was havocked


class UnsupportedConstruct(Exception):
    pass


def wp_full(s: Stmt, q: Expr, vocab: Optional[Vocabulary] = None) -> WpResult:
    """Weakest precondition with loop side conditions.

    Annotated loops contribute their invariant as the precondition plus two
    side conditions (preservation, and invariant /\ !guard => q). Unannotated
    loops havoc the modified variables and assume the negated guard, which
    over-approximates the reachable exit states; results proved through that
    path are sound, failures are reported as Unknown by check_triple.
    """
    if isinstance(s, Skip):
        return WpResult(q)
    if isinstance(s, Assign):
        return WpResult(simplify(subst(q, {s.var: s.expr})))
    if isinstance(s, Seq):
        pre = q
        sides: list[Expr] = []
        approx = False
        for sub_stmt in reversed(s.stmts):
            r = wp_full(sub_stmt, pre, vocab)
            pre = r.pre
            sides.extend(r.side_conditions)
            approx = approx or r.approximate
        return WpResult(pre, tuple(sides), approx)
    if isinstance(s, If):
        rt = wp_full(s.then, q, vocab)
        re_ = wp_full(s.els, q, vocab)
        pre = and_(implies(s.cond, rt.pre), implies(not_(s.cond), re_.pre))
        return WpResult(simplify(pre), rt.side_conditions + re_.side_conditions,
                        rt.approximate or re_.approximate)
    if isinstance(s, While):
        if s.invariant is not None:
            inv = s.invariant
            rb = wp_full(s.body, inv, vocab)
            sides = (implies(and_(inv, s.cond), rb.pre),
                     implies(and_(inv, not_(s.cond)), q))
            return WpResult(inv, sides + rb.side_conditions, rb.approximate)
        # havoc the modified variables, assume the exit condition
        mod = sorted(assigned_vars(s.body))
        if vocab is None:
            raise UnsupportedConstruct(
                "unannotated loop needs a vocabulary for havoc")
        mapping = {}
        binders = []
        for v in mod:
            fresh = vocab.fresh(v, vocab.sort_of(v), Kind.LOCAL)
            mapping[v] = Var(fresh)
            binders.append((fresh, vocab.sort_of(v)))
        body = implies(subst(not_(s.cond), mapping), subst(q, mapping))
        pre = Forall(tuple(binders), body) if binders else implies(not_(s.cond), q)
        return WpResult(simplify(pre), (), True)
    raise UnsupportedConstruct(f"wp over {type(s).__name__}")


def wp(s: Stmt, q: Expr, vocab: Optional[Vocabulary] = None) -> Expr:
    return wp_full(s, q, vocab).pre


# ---------------------------------------------------------------------------
# Validity through the solver
# ---------------------------------------------------------------------------

def check_valid(f: Expr, session: SmtSession, vocab: Vocabulary,
                timeout: Optional[float] = None, label: str = "") -> Verdict:
    """Valid iff !f is unsatisfiable; Invalid carries the model of !f."""
    f = simplify(f)
    if f == TRUE:
        return VALID
    neg = not_(f)
    decls = vocab.decls_for([neg])
    status, model = session.check_sat(decls, [neg], label=label,
                                      timeout=timeout)
    if status == "unsat":
        return VALID
    if status == "sat":
        return Verdict(Status.INVALID, model=model or {})
    return Verdict(Status.UNKNOWN, reason="solver returned unknown")


def check_sat(f: Expr, session: SmtSession, vocab: Vocabulary,
              label: str = "") -> Optional[bool]:
    """Three-valued satisfiability: True/False/None(unknown)."""
    f = simplify(f)
    if f == TRUE:
        return True
    if f == FALSE:
        return False
    status, _ = session.check_sat(vocab.decls_for([f]), [f], label=label)
    if status == "sat":
        return True
    if status == "unsat":
        return False
    return None


def check_triple(t: HoareTriple, session: SmtSession, vocab: Vocabulary,
                 timeout: Optional[float] = None) -> Verdict:
    """Verdict for {P} s {Q}: main VC conjoined with loop side conditions.

    Any Unknown component makes the whole Unknown; an Invalid reached through
    a havocked loop is downgraded to Unknown (the havoc over-approximates).
    """
    try:
        r = wp_full(t.body, t.post, vocab)
    except UnsupportedConstruct as e:
        return Verdict(Status.UNKNOWN, reason=str(e))
    main = check_valid(implies(t.pre, r.pre), session, vocab,
                       timeout=timeout, label=t.label or "triple")
    verdicts = [main]
    for i, side in enumerate(r.side_conditions):
        verdicts.append(check_valid(side, session, vocab, timeout=timeout,
                                    label=f"{t.label or 'triple'}/side{i}"))
    if any(v.status is Status.UNKNOWN for v in verdicts):
        unk = next(v for v in verdicts if v.status is Status.UNKNOWN)
        return unk
    bad = [v for v in verdicts if v.status is Status.INVALID]
    if bad:
        if r.approximate or bad[0] is not main:
            # loop over-approximation or unproven side condition: not a
            # definite counterexample to the triple itself
            return Verdict(Status.UNKNOWN,
                           reason="loop reasoning was inconclusive")
        return bad[0]
    return VALID


# ---------------------------------------------------------------------------
# Thread-local renaming
# ---------------------------------------------------------------------------

def rename_locals(p_other: Expr, q_other: Expr, avoid: set[str],
                  vocab: Vocabulary) -> tuple[Expr, Expr, dict[str, str]]:
    """Replace every thread-local variable of another thread's assertions with
    a fresh copy not occurring in `avoid`; returns the substitution used."""
    names = sorted(vocab.locals_in(p_other) | vocab.locals_in(q_other))
    mapping: dict[str, str] = {}
    for n in names:
        fresh = vocab.fresh(n, vocab.sort_of(n), Kind.LOCAL)
        while fresh in avoid:
            fresh = vocab.fresh(n, vocab.sort_of(n), Kind.LOCAL)
        mapping[n] = fresh
    emap = {k: Var(v) for k, v in mapping.items()}
    return subst(p_other, emap), subst(q_other, emap), mapping


# ---------------------------------------------------------------------------
# Abduction
# ---------------------------------------------------------------------------

def _collect_atoms(e: Expr) -> list[Expr]:
    out: list[Expr] = []

    def walk(x: Expr) -> None:
        if isinstance(x, Binary):
            if x.op in ("&&", "||", "==>"):
                walk(x.left)
                walk(x.right)
                return
            if x.op in COMPARISONS:
                out.append(x)
                return
        if isinstance(x, Unary) and x.op == "!":
            walk(x.operand)
            return
        if isinstance(x, Var):
            out.append(x)

    walk(e)
    return out


def _atom_variants(atom: Expr, vocab: Vocabulary) -> list[Expr]:
    if isinstance(atom, Var):
        if vocab.sorts.get(atom.name) is Sort.BOOL:
            return [atom, not_(atom)]
        return []
    assert isinstance(atom, Binary)
    if _bool_operands(atom, vocab):
        return [atom, not_(atom)]
    variants = []
    for op in COMPARISONS:
        variants.append(simplify(Binary(op, atom.left, atom.right)))
    return variants


def _bool_operands(atom: Binary, vocab: Vocabulary) -> bool:
    def is_bool(x: Expr) -> bool:
        if isinstance(x, BoolLit):
            return True
        if isinstance(x, Var):
            return vocab.sorts.get(x.name) is Sort.BOOL
        if isinstance(x, Unary):
            return x.op == "!"
        if isinstance(x, Binary):
            return x.op in ("&&", "||", "==>") + COMPARISONS
        return False

    return atom.op in ("==", "!=") and (is_bool(atom.left) or is_bool(atom.right))


def abduce(p: Expr, goal: Expr, session: SmtSession, vocab: Vocabulary,
           limit: int = 8) -> list[Expr]:
    """Strengthenings psi with P /\ psi |= goal and P /\ psi satisfiable,
    over shared variables only. Returns at most `limit` candidates, simplest
    (fewest variables, then fewest atoms) first; empty on solver failure."""
    p = simplify(p)
    goal = simplify(goal)
    implication = implies(p, goal)
    try:
        raw: list[Expr] = []

        # 1) atom variants from the premises and the goal
        for atom in _collect_atoms(and_(p, goal)):
            for cand in _atom_variants(atom, vocab):
                raw.append(cand)

        # 2) universal projections onto subsets of the shared variables
        sorts = dict(vocab.sorts)
        fv = sorted(free_vars(implication))
        shared = [v for v in fv if not vocab.is_local(v)]
        ir = lia.from_expr(implication, sorts)
        for size in range(len(shared) + 1):
            for keep in combinations(shared, size):
                elim = [(v, vocab.sort_of(v)) for v in fv if v not in keep]
                proj = lia.qe_forall(elim, ir)
                session.dump_aux(
                    "LIA", vocab.decls_for([implication]),
                    [Forall(tuple((v, vocab.sort_of(v)) for v in fv
                                  if v not in keep), implication)]
                    if elim else [implication],
                    label=f"abduce projection keep={','.join(keep) or '-'}")
                try:
                    raw.append(simplify(lia.to_expr(proj)))
                except lia.HasDivisibility:
                    continue  # divisibility atoms are outside the DSL fragment
    except lia.NonLinearError as e:
        log.warning("abduce gave up (nonlinear): %s", e)
        return []

    # filter: shared-only, verify both abduction conditions, dedupe
    results: list[Expr] = []
    seen: set[Expr] = set()
    scored: list[tuple[int, int, str, Expr]] = []
    for cand in raw:
        cand = simplify(cand)
        if cand == FALSE or cand in seen:
            continue
        seen.add(cand)
        if vocab.locals_in(cand):
            continue
        scored.append((len(free_vars(cand)), _atom_count(cand),
                       str(cand), cand))
    scored.sort(key=lambda t: (t[0], t[1], t[2]))
    for _, _, _, cand in scored:
        entails = check_valid(implies(and_(p, cand), goal), session, vocab,
                              label="abduce entailment")
        if not entails.is_valid:
            continue
        consistent = check_sat(and_(p, cand), session, vocab,
                               label="abduce consistency")
        if consistent is not True:
            continue
        results.append(cand)
        if len(results) >= limit:
            break
    return results


def _atom_count(e: Expr) -> int:
    if isinstance(e, Binary) and e.op in ("&&", "||", "==>"):
        return _atom_count(e.left) + _atom_count(e.right)
    if isinstance(e, Unary) and e.op == "!":
        return _atom_count(e.operand)
    if isinstance(e, (Forall, Exists)):
        return _atom_count(e.body)
    return 1


# ---------------------------------------------------------------------------
# Commutativity of CCR bodies
# ---------------------------------------------------------------------------

def bodies_commute(a: Stmt, b: Stmt, monitor: Monitor, session: SmtSession,
                   vocab: Vocabulary) -> bool:
    """True only if a;b and b;a are verified equivalent as transformers of the
    shared state (locals renamed apart). Unknown counts as not commuting."""
    if has_loop(a) or has_loop(b):
        return False
    ren_b: dict[str, str] = {}
    for v in sorted(stmt_vars(b)):
        if vocab.is_local(v):
            ren_b[v] = vocab.fresh(v, vocab.sort_of(v), Kind.LOCAL)
    b2 = rename_stmt(b, ren_b)
    obs = []
    for g in monitor.shared_names:
        z = vocab.fresh(f"{g}", vocab.sort_of(g), Kind.LOCAL)
        obs.append(eq(Var(g), Var(z)))
    post = and_(*obs)
    wp_ab = wp(Seq((a, b2)), post, vocab)
    wp_ba = wp(Seq((b2, a)), post, vocab)
    f = and_(implies(wp_ab, wp_ba), implies(wp_ba, wp_ab))
    return check_valid(f, session, vocab, label="commutes").is_valid


def commutes(w: CCR, m: Monitor, session: SmtSession,
             vocab: Vocabulary) -> bool:
    """Does w's body commute with every other CCR body in the monitor?"""
    if has_loop(w.body):
        return False
    for other in ccrs(m):
        if other.id == w.id:
            continue
        if not bodies_commute(w.body, other.body, m, session, vocab):
            return False
    return True
