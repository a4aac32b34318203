"""Render an explicit-signal monitor as lock/condition-variable code.

The output is Java-flavored text for human inspection (it is not compiled or
executed; the trace engine is the executable semantics). Every distinct
non-trivial guard gets one condition variable; each CCR renders as

    lock; while (!guard) cv.await(); body;
    <signals>; <broadcasts>; unlock;

where a conditional signal on p renders as `if (p) cv_p.signal()`, an
unconditional one as `cv_p.signal()`, and broadcasts use signalAll. Guards
that read thread-local variables cannot be re-evaluated on behalf of a
blocked thread, so each such guard gets a waiter registry that snapshots the
locals at block time (they cannot change while the thread waits); the
conditional check becomes "some registered snapshot satisfies p now".

Lazy broadcasts trade one broadcast for a relay chain: the broadcasting CCR
signals a single thread, and every CCR guarded by the same predicate appends
`if (p) cv_p.signal()` after its body so the woken thread passes the
notification on.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

from .ast import (
    Expr, Stmt, Skip, Assign, Seq, If, While, Monitor, Sort,
    ccrs, guards, simplify, negate_pred, pretty_expr, pretty_stmt,
    display_name, locals_of, TRUE, BoolLit, IntLit, Var, Unary, Binary,
)
from .placement import ExplicitMonitor, NotificationTriple, SignalMap
from .smt.smtlib import to_smt


@dataclass(frozen=True)
class RegistryDescriptor:
    """Tracking structure for one guard that reads thread-local variables."""
    guard: Expr
    cv_name: str
    registry_name: str
    snapshot_locals: tuple  # qualified local names captured at block time
    check: str              # how a conditional notification consults it

    @property
    def snapshot_display(self) -> tuple:
        return tuple(display_name(v) for v in self.snapshot_locals)


@dataclass
class RenderedMonitor:
    text: str
    condition_vars: dict          # guard Expr -> condition variable name
    waiter_registries: dict       # guard Expr -> RegistryDescriptor
    ccr_spans: dict               # ccr id -> (first line, last line) of its
                                  # notification statements (for scraping)


@dataclass
class EmitOptions:
    lazy_broadcast: bool = False


def condition_var_names(m: Monitor) -> dict:
    """One condition variable per distinct non-trivial guard, named after the
    first method that waits on it."""
    names: dict = {}
    used: set[str] = set()
    for c in ccrs(m):
        g = simplify(c.guard)
        if g == TRUE or g in names:
            continue
        base = f"cond_{c.method}"
        name = base
        k = 1
        while name in used:
            k += 1
            name = f"{base}_{k}"
        used.add(name)
        names[g] = name
    return names


def waiter_registry_plan(em: ExplicitMonitor) -> list[RegistryDescriptor]:
    """Registry descriptors for every guard containing thread-local reads."""
    m = em.base
    cvs = condition_var_names(m)
    out: list[RegistryDescriptor] = []
    for g in guards(m):
        locs = tuple(sorted(locals_of(g, m)))
        if not locs:
            continue
        cv = cvs[g]
        reg = f"waiters_{cv}"
        shown = ", ".join(display_name(v) for v in locs)
        out.append(RegistryDescriptor(
            guard=g, cv_name=cv, registry_name=reg, snapshot_locals=locs,
            check=(f"exists a registered snapshot ({shown}) such that "
                   f"{pretty_expr(g)} holds under the current shared state")))
    return out


def lazy_signal_map(em: ExplicitMonitor) -> SignalMap:
    """Rewrite broadcasts into single signals plus per-CCR relay signals."""
    m = em.base
    entries = {cid: set(trips) for cid, trips in em.sigma_map.entries.items()}
    for cid in list(entries):
        for trip in list(entries[cid]):
            if not trip.broadcast:
                continue
            entries[cid].discard(trip)
            entries[cid].add(NotificationTriple(trip.pred, trip.unconditional,
                                                False))
            for c in ccrs(m):
                if simplify(c.guard) != simplify(trip.pred):
                    continue
                has_signal = any(t.pred == trip.pred and not t.broadcast
                                 for t in entries[c.id])
                if not has_signal:
                    entries[c.id].add(
                        NotificationTriple(trip.pred, False, False))
    return SignalMap({k: frozenset(v) for k, v in entries.items()})


def _notification_lines(em: ExplicitMonitor, cid: str, cvs: dict,
                        registries: dict, sm: SignalMap) -> list[str]:
    m = em.base
    guard_order = guards(m)
    lines: list[str] = []
    for trip in sm.ordered(cid, guard_order, broadcast=False):
        lines.append(_one_notification(trip, "signal", cvs, registries))
    for trip in sm.ordered(cid, guard_order, broadcast=True):
        lines.append(_one_notification(trip, "signalAll", cvs, registries))
    return lines


def _one_notification(trip: NotificationTriple, op: str, cvs: dict,
                      registries: dict) -> str:
    cv = cvs[simplify(trip.pred)]
    call = f"{cv}.{op}();"
    if trip.unconditional:
        return call
    reg = registries.get(simplify(trip.pred))
    if reg is not None:
        return f"if ({reg.registry_name}.anySatisfies()) {call}"
    return f"if ({pretty_expr(trip.pred)}) {call}"


def emit(em: ExplicitMonitor, options: Optional[EmitOptions] = None
         ) -> RenderedMonitor:
    """Render the explicit monitor as lock/condition-variable text."""
    options = options or EmitOptions()
    m = em.base
    sm = lazy_signal_map(em) if options.lazy_broadcast else em.sigma_map
    cvs = condition_var_names(m)
    registries = {r.guard: r for r in waiter_registry_plan(em)}

    lines: list[str] = [f"class {m.name} {{"]
    for f in m.fields:
        ty = "int" if f.sort is Sort.INT else "boolean"
        init = "" if f.init is None else f" = {pretty_expr(f.init)}"
        lines.append(f"    {ty} {f.name}{init};")
    lines.append("")
    lines.append("    final Lock monitorLock = new ReentrantLock();")
    for g, cv in cvs.items():
        lines.append(f"    final Condition {cv} = monitorLock.newCondition();"
                     f" // waiters on: {pretty_expr(g)}")
    for r in registries.values():
        snaps = ", ".join(r.snapshot_display)
        lines.append(f"    final WaiterRegistry {r.registry_name} ="
                     f" new WaiterRegistry(); // snapshots ({snaps});"
                     f" satisfied when some snapshot meets"
                     f" {pretty_expr(r.guard)}")
    spans: dict = {}
    for meth in m.methods:
        lines.append("")
        params = ", ".join(
            ("int " if p.sort is Sort.INT else "boolean ")
            + display_name(p.name) for p in meth.params)
        lines.append(f"    void {meth.name}({params}) {{")
        lines.append("        monitorLock.lock();")
        for c in meth.ccrs:
            g = simplify(c.guard)
            if g != TRUE:
                cv = cvs[g]
                reg = registries.get(g)
                if reg is None:
                    lines.append(f"        while ({pretty_expr(negate_pred(g))}) "
                                 f"{cv}.await();")
                else:
                    snaps = ", ".join(reg.snapshot_display)
                    lines.append(f"        while ({pretty_expr(negate_pred(g))}) {{")
                    lines.append(f"            {reg.registry_name}.register({snaps});")
                    lines.append(f"            {cv}.await();")
                    lines.append(f"            {reg.registry_name}.deregister();")
                    lines.append("        }")
            for bl in pretty_stmt(c.body, 2):
                if bl.strip() == ";":
                    continue
                lines.append(bl)
            notif = _notification_lines(em, c.id, cvs, registries, sm)
            start = len(lines)
            for n in notif:
                lines.append(f"        {n}")
            spans[c.id] = (start, len(lines))
        lines.append("        monitorLock.unlock();")
        lines.append("    }")
    lines.append("}")
    return RenderedMonitor("\n".join(lines) + "\n", cvs, registries, spans)


def signal_map_from_rendered(rendered: RenderedMonitor,
                             m: Monitor) -> SignalMap:
    """Recover the notification map from rendered text (round-trip check).

    Only the notification statements are parsed; the ccr spans recorded at
    render time say which CCR each statement belongs to.
    """
    by_cv = {cv: g for g, cv in rendered.condition_vars.items()}
    by_reg = {r.registry_name: g for g, r in rendered.waiter_registries.items()}
    text_lines = rendered.text.splitlines()
    entries: dict = {c.id: set() for c in ccrs(m)}
    for cid, (start, end) in rendered.ccr_spans.items():
        for ln in text_lines[start:end]:
            ln = ln.strip()
            conditional = ln.startswith("if (")
            body = ln
            if conditional:
                depth = 0
                for i, ch in enumerate(ln):
                    if ch == "(":
                        depth += 1
                    elif ch == ")":
                        depth -= 1
                        if depth == 0:
                            body = ln[i + 1:].strip()
                            break
            cv, _, call = body.partition(".")
            broadcast = call.startswith("signalAll")
            pred = by_cv.get(cv)
            if pred is None:
                continue
            entries[cid].add(NotificationTriple(pred, not conditional,
                                                broadcast))
    return SignalMap({k: frozenset(v) for k, v in entries.items()})


# ---------------------------------------------------------------------------
# Canonical S-expression form (stable golden-test surface)
# ---------------------------------------------------------------------------

def _stmt_sexpr(s: Stmt) -> str:
    if isinstance(s, Skip):
        return "(skip)"
    if isinstance(s, Assign):
        return f"(assign {s.var} {to_smt(s.expr)})"
    if isinstance(s, Seq):
        return "(seq " + " ".join(_stmt_sexpr(x) for x in s.stmts) + ")"
    if isinstance(s, If):
        return (f"(if {to_smt(s.cond)} {_stmt_sexpr(s.then)} "
                f"{_stmt_sexpr(s.els)})")
    if isinstance(s, While):
        inv = "" if s.invariant is None else f" :invariant {to_smt(s.invariant)}"
        return f"(while {to_smt(s.cond)}{inv} {_stmt_sexpr(s.body)})"
    raise TypeError(f"unexpected statement {s!r}")


def emit_ir(em: ExplicitMonitor) -> str:
    """Canonical S-expression rendering of the instrumented monitor."""
    m = em.base
    guard_order = guards(m)
    out = [f"(monitor {m.name}"]
    flds = " ".join(
        f"({f.name} {f.sort.value} {to_smt(f.init) if f.init is not None else '-'})"
        for f in m.fields)
    out.append(f"  (fields {flds})")
    for meth in m.methods:
        params = " ".join(f"({p.name} {p.sort.value})" for p in meth.params)
        out.append(f"  (method {meth.name} (params {params})")
        for c in meth.ccrs:
            sigs = " ".join(
                f"({to_smt(t.pred)} {'always' if t.unconditional else 'check'})"
                for t in em.sigma_map.ordered(c.id, guard_order, broadcast=False))
            bcasts = " ".join(
                f"({to_smt(t.pred)} {'always' if t.unconditional else 'check'})"
                for t in em.sigma_map.ordered(c.id, guard_order, broadcast=True))
            out.append(f"    (ccr {c.id}")
            out.append(f"      (guard {to_smt(simplify(c.guard))})")
            out.append(f"      (body {_stmt_sexpr(c.body)})")
            out.append(f"      (signals {sigs})")
            out.append(f"      (broadcasts {bcasts}))")
        out.append("  )")
    out.append(")")
    return "\n".join(out) + "\n"
