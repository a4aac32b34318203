"""Property-directed monitor-invariant inference.

A monitor invariant is an assertion over shared state that holds whenever a
thread enters or exits the monitor: it must hold after the constructor
(initiation) and be preserved by every CCR body executed under its guard
(consecution). Placement uses it to strengthen the preconditions of its
proof obligations.

Inference is two-phase. Phase 1 replays the placement proof obligations with
the invariant fixed to `true` and, for each one that fails, abduces candidate
strengthenings of its precondition; the union of candidates forms the pool.
Phase 2 is a guess-and-check fixpoint: repeatedly drop every candidate that
fails initiation or is not preserved by some CCR assuming the conjunction of
the surviving candidates, until the pool stabilizes. The conjunction of the
survivors is inductive by construction and is re-verified before being
returned.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

from .ast import (
    Expr, Stmt, Monitor, and_, not_, simplify, free_vars, stmt_vars,
    pretty_expr, ccrs, guards, TRUE,
)
from .logic import (
    HoareTriple, Status, Verdict, VALID, Vocabulary, abduce, check_triple,
    check_valid, rename_locals, wp_full,
)
from .smt.client import SmtSession


@dataclass
class CandidateSet:
    """Abduced candidate predicates plus where each came from."""
    predicates: list[Expr] = field(default_factory=list)
    provenance: dict = field(default_factory=dict)  # Expr -> triple label

    def add(self, psi: Expr, origin: str) -> None:
        if psi not in self.predicates:
            self.predicates.append(psi)
            self.provenance[psi] = origin


@dataclass(frozen=True)
class MonitorInvariant:
    conjuncts: tuple
    rendered: Expr
    provenance: dict = field(compare=False, default_factory=dict)

    def __str__(self) -> str:
        return pretty_expr(self.rendered)


def seed_triples(m: Monitor, vocab: Vocabulary) -> list[HoareTriple]:
    """The placement proof obligations with the invariant set to `true`.

    For every (CCR w, blockable guard p), with p's other-thread locals
    renamed to p^:
      - no-signal:      {Guard(w) /\ !p^} Body(w) {!p^}
      - unconditional:  {Guard(w) /\ !p^} Body(w) {p^}
    and for every CCR w' guarded by p (waker's own p unrenamed):
      - no-broadcast:   {p /\ p^} Body(w') {!p^}
    Structural duplicates are dropped.
    """
    out: list[HoareTriple] = []
    seen: set[tuple] = set()

    def add(t: HoareTriple) -> None:
        key = (simplify(t.pre), t.body, simplify(t.post))
        if key not in seen:
            seen.add(key)
            out.append(t)

    guard_list = guards(m)
    for w in ccrs(m):
        avoid = free_vars(w.guard) | stmt_vars(w.body)
        for p in guard_list:
            p_hat, _, _ = rename_locals(p, p, avoid | free_vars(p), vocab)
            pre = simplify(and_(w.guard, not_(p_hat)))
            add(HoareTriple(pre, w.body, simplify(not_(p_hat)),
                            label=f"no-signal {w.id} / {pretty_expr(p)}"))
            add(HoareTriple(pre, w.body, p_hat,
                            label=f"unconditional {w.id} / {pretty_expr(p)}"))
    for p in guard_list:
        for w2 in ccrs(m):
            if simplify(w2.guard) != p:
                continue
            p2_hat, _, _ = rename_locals(
                p, p, free_vars(p) | stmt_vars(w2.body), vocab)
            add(HoareTriple(simplify(and_(p, p2_hat)), w2.body,
                            simplify(not_(p2_hat)),
                            label=f"no-broadcast {pretty_expr(p)} via {w2.id}"))
    return out


def infer_monitor_invariant(m: Monitor, theta: list[HoareTriple],
                            session: SmtSession, vocab: Vocabulary,
                            abduce_limit: int = 8) -> MonitorInvariant:
    """Abduce candidates from the failing triples in theta, then keep the
    largest inductive subset (guess-and-check fixpoint)."""
    pool = CandidateSet()
    for t in theta:
        v = check_triple(t, session, vocab)
        if v.is_valid:
            continue  # nothing to strengthen
        goal = wp_full(t.body, t.post, vocab)
        if goal.approximate:
            continue
        for psi in abduce(t.pre, goal.pre, session, vocab, limit=abduce_limit):
            pool.add(psi, t.label)

    phi = list(pool.predicates)
    ctr = m.constructor
    while True:
        before = len(phi)
        current = and_(*phi) if phi else TRUE
        survivors: list[Expr] = []
        for psi in phi:
            init = check_triple(HoareTriple(TRUE, ctr, psi,
                                            label="invariant initiation"),
                                session, vocab)
            if not init.is_valid:
                continue
            preserved = True
            for w in ccrs(m):
                cons = check_triple(
                    HoareTriple(and_(current, w.guard), w.body, psi,
                                label=f"invariant consecution {w.id}"),
                    session, vocab)
                if not cons.is_valid:
                    preserved = False
                    break
            if preserved:
                survivors.append(psi)
        phi = survivors
        if len(phi) == before:
            break

    rendered = simplify(and_(*phi)) if phi else TRUE
    inv = MonitorInvariant(tuple(phi), rendered,
                           {p: pool.provenance.get(p, "") for p in phi})
    final = verify_invariant(m, rendered, session, vocab)
    if final.status is Status.INVALID:
        raise AssertionError(
            f"inference produced a non-invariant: {pretty_expr(rendered)}")
    return inv


def verify_invariant(m: Monitor, i: Expr, session: SmtSession,
                     vocab: Vocabulary) -> Verdict:
    """Valid iff {true} Ctr {i} and {i /\ Guard(w)} Body(w) {i} for every CCR.

    Exposed separately so a user-supplied invariant can replace inference.
    The trivial invariant needs no solver.
    """
    i = simplify(i)
    if i == TRUE:
        return VALID
    if vocab.locals_in(i):
        return Verdict(Status.INVALID,
                       reason="invariant mentions thread-local variables")
    verdicts = [check_triple(HoareTriple(TRUE, m.constructor, i,
                                         label="invariant initiation"),
                             session, vocab)]
    for w in ccrs(m):
        verdicts.append(check_triple(
            HoareTriple(and_(i, w.guard), w.body, i,
                        label=f"invariant consecution {w.id}"),
            session, vocab))
    for v in verdicts:
        if v.status is Status.INVALID:
            return v
    for v in verdicts:
        if v.status is Status.UNKNOWN:
            return v
    return VALID
