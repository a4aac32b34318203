"""Signal placement: decide, per (CCR, guard) pair, whether the CCR must
notify threads blocked on the guard, whether the notification can skip the
runtime guard check, and whether it must be a broadcast.

For a CCR w and a blockable guard p (with other-thread locals renamed to p^):

  skip entirely   iff  {I /\ Guard(w) /\ !p^} Body(w) {!p^} is valid
  unconditional   iff  {I /\ Guard(w) /\ !p^} Body(w) {p^}  is valid
  signal (not broadcast) iff for every CCR w' guarded by p:
                       {I /\ p /\ p^} Body(w') {!p^} is valid,
                       or (with the commutativity refinement) Body(w')
                       commutes with every other CCR body and
                       {I /\ Guard(w) /\ !p^} Body(w); Body(w') {!p^} is valid.

Unknown verdicts always take the conservative branch: notify, conditionally,
broadcast. With the solver unreachable this degrades to the
broadcast-everything monitor, which is still equivalent to the source.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

from .ast import (
    Expr, Stmt, Monitor, CCR, Var, Seq,
    and_, not_, simplify, free_vars, stmt_vars, pretty_expr,
    ccrs, guards, rename_stmt, Kind, TRUE,
)
from .logic import (
    HoareTriple, Status, Verdict, Vocabulary, check_triple, commutes,
    rename_locals,
)
from .smt.client import SmtSession


@dataclass(frozen=True)
class NotificationTriple:
    """One notification decision: which predicate's waiters to wake, whether
    the wake is unconditional (statically proven true) and whether to wake
    all of them."""
    pred: Expr
    unconditional: bool  # False: evaluate pred at runtime before notifying
    broadcast: bool

    @property
    def cond_mark(self) -> str:
        return "✓" if self.unconditional else "?"

    def __str__(self) -> str:
        kind = "broadcast" if self.broadcast else "signal"
        return f"({pretty_expr(self.pred)}, {self.cond_mark}, {kind})"


@dataclass(frozen=True)
class SignalMap:
    """Per-CCR notification sets (the map the placement loop fills in)."""
    entries: dict  # ccr id -> frozenset[NotificationTriple]

    def triples(self, ccr_id: str) -> frozenset:
        return self.entries[ccr_id]

    def signals(self, ccr_id: str) -> list[NotificationTriple]:
        return [t for t in self.entries[ccr_id] if not t.broadcast]

    def broadcasts(self, ccr_id: str) -> list[NotificationTriple]:
        return [t for t in self.entries[ccr_id] if t.broadcast]

    def ordered(self, ccr_id: str, guard_order: list[Expr],
                broadcast: bool) -> list[NotificationTriple]:
        pool = self.broadcasts(ccr_id) if broadcast else self.signals(ccr_id)
        return sorted(pool, key=lambda t: guard_order.index(t.pred))


@dataclass(frozen=True)
class ExplicitMonitor:
    base: Monitor
    sigma_map: SignalMap

    @property
    def name(self) -> str:
        return self.base.name


@dataclass
class Check:
    kind: str  # no-signal | unconditional | no-broadcast | commutes | no-broadcast-composed
    triple: Optional[HoareTriple]
    verdict: Verdict
    query_range: tuple[int, int]  # [start, end) into session.queries
    detail: str = ""


@dataclass
class Decision:
    ccr_id: str
    pred: Expr
    checks: list[Check] = field(default_factory=list)
    outcome: Optional[NotificationTriple] = None  # None = no notification

    def describe(self) -> str:
        if self.outcome is None:
            return "skip (proven silent)"
        return str(self.outcome)


@dataclass
class PlacementOptions:
    use_commutativity: bool = False
    rename_locals: bool = True


@dataclass
class PlacementResult:
    explicit: ExplicitMonitor
    decisions: list[Decision]
    invariant: Expr


class InvalidInvariant(ValueError):
    pass


def _renamed(p: Expr, avoid: set[str], vocab: Vocabulary,
             enabled: bool) -> Expr:
    if not enabled:
        return p
    p_hat, _, _ = rename_locals(p, p, avoid, vocab)
    return p_hat


def place_signals(m: Monitor, invariant: Expr, session: SmtSession,
                  vocab: Vocabulary,
                  options: Optional[PlacementOptions] = None,
                  skip_invariant_check: bool = False) -> PlacementResult:
    """Compute the notification map and return the instrumented monitor.

    The invariant must already be verified (verify_invariant); this entry
    point re-checks it unless told not to and rejects invalid invariants.
    """
    from .invariants import verify_invariant

    options = options or PlacementOptions()
    invariant = simplify(invariant)
    if not skip_invariant_check and invariant != TRUE:
        v = verify_invariant(m, invariant, session, vocab)
        if v.status is Status.INVALID:
            raise InvalidInvariant(
                f"not a monitor invariant: {pretty_expr(invariant)} ({v})")
        # Unknown is tolerated: a wrong invariant can only be produced by a
        # caller that skipped inference; the bounded difftest is the net.

    sigma: dict[str, set[NotificationTriple]] = {c.id: set() for c in ccrs(m)}
    decisions: list[Decision] = []
    guard_list = guards(m)
    comm_cache: dict[str, bool] = {}

    def run_check(kind: str, triple: HoareTriple, detail: str = "") -> Check:
        start = len(session.queries)
        verdict = check_triple(triple, session, vocab)
        return Check(kind, triple, verdict, (start, len(session.queries)),
                     detail)

    def ccr_commutes(w: CCR) -> bool:
        if w.id not in comm_cache:
            comm_cache[w.id] = commutes(w, m, session, vocab)
        return comm_cache[w.id]

    for w in ccrs(m):
        avoid = (free_vars(invariant) | free_vars(w.guard)
                 | stmt_vars(w.body))
        for p in guard_list:
            dec = Decision(w.id, p)
            decisions.append(dec)
            p_hat = _renamed(p, avoid | free_vars(p), vocab,
                             options.rename_locals)

            pre = and_(invariant, w.guard, not_(p_hat))
            c1 = run_check("no-signal",
                           HoareTriple(pre, w.body, not_(p_hat),
                                       label=f"no-signal {w.id} / {pretty_expr(p)}"))
            dec.checks.append(c1)
            if c1.verdict.is_valid:
                dec.outcome = None
                continue

            c2 = run_check("unconditional",
                           HoareTriple(pre, w.body, p_hat,
                                       label=f"unconditional {w.id} / {pretty_expr(p)}"))
            dec.checks.append(c2)
            unconditional = c2.verdict.is_valid

            broadcast = False
            for w2 in ccrs(m):
                if simplify(w2.guard) != p:
                    continue
                avoid2 = (free_vars(invariant) | free_vars(p)
                          | stmt_vars(w2.body))
                p2_hat = _renamed(p, avoid2, vocab, options.rename_locals)
                c3 = run_check(
                    "no-broadcast",
                    HoareTriple(and_(invariant, p, p2_hat), w2.body,
                                not_(p2_hat),
                                label=f"no-broadcast {w.id} / {pretty_expr(p)} via {w2.id}"),
                    detail=f"waker {w2.id}")
                dec.checks.append(c3)
                if c3.verdict.is_valid:
                    continue
                if options.use_commutativity:
                    start = len(session.queries)
                    comm = ccr_commutes(w2)
                    dec.checks.append(Check(
                        "commutes", None,
                        Verdict(Status.VALID) if comm
                        else Verdict(Status.UNKNOWN, reason="not proven"),
                        (start, len(session.queries)), detail=w2.id))
                    if comm:
                        ren = {v: vocab.fresh(v, vocab.sort_of(v), Kind.LOCAL)
                               for v in sorted(stmt_vars(w2.body))
                               if vocab.is_local(v)}
                        s2 = rename_stmt(w2.body, ren)
                        p3_hat = _renamed(p, avoid | avoid2, vocab,
                                          options.rename_locals)
                        c4 = run_check(
                            "no-broadcast-composed",
                            HoareTriple(
                                and_(invariant, w.guard, not_(p3_hat)),
                                Seq((w.body, s2)), not_(p3_hat),
                                label=(f"no-broadcast-composed {w.id} / "
                                       f"{pretty_expr(p)} via {w2.id}")),
                            detail=f"waker {w2.id} after {w.id}")
                        dec.checks.append(c4)
                        if c4.verdict.is_valid:
                            continue
                broadcast = True
                break

            triple = NotificationTriple(p, unconditional, broadcast)
            sigma[w.id].add(triple)
            dec.outcome = triple

    sm = SignalMap({k: frozenset(v) for k, v in sigma.items()})
    return PlacementResult(ExplicitMonitor(m, sm), decisions, invariant)


def instrument(m: Monitor, sigma_map: SignalMap) -> ExplicitMonitor:
    """Attach a notification map to a monitor; the map must cover every CCR."""
    missing = [c.id for c in ccrs(m) if c.id not in sigma_map.entries]
    if missing:
        raise ValueError(f"signal map misses CCRs: {', '.join(missing)}")
    extra = set(sigma_map.entries) - {c.id for c in ccrs(m)}
    if extra:
        raise ValueError(f"signal map has unknown CCRs: {', '.join(sorted(extra))}")
    return ExplicitMonitor(m, sigma_map)


def broadcast_everything_map(m: Monitor, unconditional: bool = False) -> SignalMap:
    """Every CCR conditionally broadcasts every guard: the conservative
    fallback emitted when nothing is provable."""
    gl = guards(m)
    entries = {
        c.id: frozenset(NotificationTriple(p, unconditional, True) for p in gl)
        for c in ccrs(m)
    }
    return SignalMap(entries)


def summary_table(result: PlacementResult) -> str:
    m = result.explicit.base
    gl = guards(m)
    lines = [f"signal placement for monitor {m.name} "
             f"(invariant: {pretty_expr(result.invariant)})"]
    for c in ccrs(m):
        sm = result.explicit.sigma_map
        sigs = sm.ordered(c.id, gl, broadcast=False)
        bcasts = sm.ordered(c.id, gl, broadcast=True)
        parts = [str(t) for t in sigs + bcasts]
        lines.append(f"  {c.id:<24} " + ("-" if not parts else "; ".join(parts)))
    return "\n".join(lines)


def explain_report(result: PlacementResult, session: SmtSession) -> str:
    """Per-(CCR, guard) listing of the Hoare triples, verdicts, decision, and
    pointers to the dumped query files when --dump-vcs is active."""
    lines: list[str] = []
    for dec in result.decisions:
        lines.append(f"CCR {dec.ccr_id}, predicate {pretty_expr(dec.pred)}")
        for ch in dec.checks:
            files = [q.filename for q in session.queries[slice(*ch.query_range)]
                     if q.filename]
            ptr = f"  [{', '.join(files)}]" if files else ""
            if ch.triple is not None:
                lines.append(f"    {ch.kind:<24} {ch.triple}")
                lines.append(f"    {'':<24} -> {ch.verdict}{ptr}")
            else:
                lines.append(f"    {ch.kind:<24} {ch.detail} -> {ch.verdict}{ptr}")
        lines.append(f"    decision: {dec.describe()}")
    return "\n".join(lines)
