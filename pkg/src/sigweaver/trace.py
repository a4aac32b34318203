"""Executable trace semantics for implicit- and explicit-signal monitors,
plus the bounded differential equivalence check between them.

A trace is a sequence of events (thread, ccr, fired); `fired=False` means the
thread attempted the guard and blocked (or was woken, rechecked, and went
back to sleep). Both semantics share the state shape (sigma, B, N): sigma is
the monitor state, B the blocked (thread, ccr) pairs, N the notified pairs.

Implicit stepping rules:
  1a  (t,w,false), (t,w) not in B, guard false:  block, B += (t,w)
  1b  (t,w,false), (t,w) in N, guard false:      consume notification
  2a  (t,w,true),  (t,w) not in B, guard true:   run body; N gains every
      blocked pair whose guard now holds
  2b  (t,w,true),  (t,w) = min(N), guard true:   run body; leave B; N is
      (N + fresh notifications) - {(t,w)}

Explicit stepping replaces the "notify everyone whose guard became true" of
2a/2b with the instrumented signal/broadcast sets: a signal on predicate p
notifies the minimum blocked pair waiting on p, a broadcast notifies all of
them, and conditional notifications ('?') first evaluate p for the candidate
thread. min is taken in a fixed total order: lexicographic (thread id, ccr
position).

Equivalence (bounded): source and compiled monitor must accept the same
traces, in the sense that (1) every explicit-feasible trace is implicit-
feasible with the same final state and (2) every normalized implicit-feasible
trace (one that never wakes a thread to a false guard, i.e. never uses 1b) is
explicit-feasible with the same final state. The checker walks the product
configuration graph breadth-first up to a trace-length bound, so identical
configurations reached by different prefixes are explored once.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field, replace
from typing import Iterator, Literal, Optional

from .ast import (
    Expr, IntLit, BoolLit, Var, Unary, Binary, Forall, Exists,
    Stmt, Skip, Assign, Seq, If, While,
    Monitor, CCR, Sort, simplify, TRUE, ccrs as monitor_ccrs,
)
from .placement import ExplicitMonitor, SignalMap


class FuelExhausted(RuntimeError):
    """A loop failed to terminate within the execution fuel budget."""


class UnboundVariable(KeyError):
    pass


# ---------------------------------------------------------------------------
# Monitor state (shared stored once: all threads agree by construction)
# ---------------------------------------------------------------------------

class MonitorState:
    """Map from (thread, variable) to value, with shared variables stored
    once so the all-threads-agree invariant is structural."""

    __slots__ = ("shared", "locals")

    def __init__(self, shared: Optional[dict] = None,
                 locals: Optional[dict] = None):
        self.shared = dict(shared or {})
        self.locals = {t: dict(env) for t, env in (locals or {}).items()}

    @staticmethod
    def initial(m: Monitor, threads: Iterator[int] = ()) -> "MonitorState":
        shared = {f.name: f.default_value() for f in m.fields}
        local_defaults = {}
        for meth in m.methods:
            for p in meth.params:
                local_defaults[p.name] = 0 if p.sort is Sort.INT else False
        locals = {t: dict(local_defaults) for t in threads}
        return MonitorState(shared, locals)

    def get(self, thread: int, var: str):
        if var in self.shared:
            return self.shared[var]
        env = self.locals.get(thread, {})
        if var in env:
            return env[var]
        raise UnboundVariable(f"{var} (thread {thread})")

    def copy(self) -> "MonitorState":
        return MonitorState(self.shared, self.locals)

    def __eq__(self, other) -> bool:
        return (isinstance(other, MonitorState)
                and self.shared == other.shared
                and self.locals == other.locals)

    def __repr__(self) -> str:
        locs = {t: env for t, env in self.locals.items() if env}
        return f"MonitorState(shared={self.shared}, locals={locs})"


@dataclass(frozen=True)
class Event:
    """(thread, ccr, fired) plus optional method-entry arguments.

    `args` may only accompany the first attempt of a method's first CCR; the
    values are assigned to the method's parameters before the guard is
    evaluated. Events without args leave locals as they are.
    """
    thread: int
    ccr: str
    fired: bool
    args: Optional[tuple] = None

    def __str__(self) -> str:
        a = "" if self.args is None else f" args={self.args}"
        return f"({self.thread}, {self.ccr}, {'T' if self.fired else 'F'}{a})"


Trace = list  # list[Event]


@dataclass(frozen=True)
class StepState:
    sigma: MonitorState
    blocked: frozenset  # {(thread, ccr id)}
    notified: frozenset


@dataclass(frozen=True)
class Infeasible:
    reason: str


@dataclass(frozen=True)
class StepRecord:
    index: int
    rule: str  # '1a' | '1b' | '2a' | '2b'
    event: Event
    blocked: frozenset
    notified: frozenset
    changed_shared: tuple  # ((name, value), ...) writes made by the body


@dataclass
class RunResult:
    feasible: bool
    final: Optional[StepState]
    infeasible_at: Optional[int]
    reason: Optional[str]
    records: list
    used_1b: bool


# ---------------------------------------------------------------------------
# Expression / statement evaluation over MonitorState
# ---------------------------------------------------------------------------

def eval_expr(e: Expr, thread: int, sigma: MonitorState):
    if isinstance(e, IntLit):
        return e.value
    if isinstance(e, BoolLit):
        return e.value
    if isinstance(e, Var):
        return sigma.get(thread, e.name)
    if isinstance(e, Unary):
        v = eval_expr(e.operand, thread, sigma)
        return (not v) if e.op == "!" else -v
    if isinstance(e, Binary):
        if e.op == "&&":
            return bool(eval_expr(e.left, thread, sigma)) and \
                bool(eval_expr(e.right, thread, sigma))
        if e.op == "||":
            return bool(eval_expr(e.left, thread, sigma)) or \
                bool(eval_expr(e.right, thread, sigma))
        if e.op == "==>":
            return (not eval_expr(e.left, thread, sigma)) or \
                bool(eval_expr(e.right, thread, sigma))
        a = eval_expr(e.left, thread, sigma)
        b = eval_expr(e.right, thread, sigma)
        return {"==": a == b, "!=": a != b, "<": a < b, "<=": a <= b,
                ">": a > b, ">=": a >= b, "+": a + b, "-": a - b,
                "*": a * b}[e.op]
    raise TypeError(f"cannot evaluate {e!r}")


def eval_pred(sigma: MonitorState, thread: int, p: Expr) -> bool:
    """Truth of a predicate for one thread: shared variables from the shared
    store, locals from the thread's slot."""
    return bool(eval_expr(p, thread, sigma))


DEFAULT_FUEL = 10_000


def exec_body(s: Stmt, thread: int, sigma: MonitorState,
              fuel: int = DEFAULT_FUEL) -> MonitorState:
    """Big-step execution; shared writes become visible to all threads."""
    out = sigma.copy()
    budget = [fuel]
    _exec(s, thread, out, budget)
    return out


def _exec(s: Stmt, thread: int, sigma: MonitorState, budget: list) -> None:
    if isinstance(s, Skip):
        return
    if isinstance(s, Assign):
        v = eval_expr(s.expr, thread, sigma)
        if s.var in sigma.shared:
            sigma.shared[s.var] = v
        else:
            sigma.locals.setdefault(thread, {})[s.var] = v
        return
    if isinstance(s, Seq):
        for x in s.stmts:
            _exec(x, thread, sigma, budget)
        return
    if isinstance(s, If):
        branch = s.then if eval_expr(s.cond, thread, sigma) else s.els
        _exec(branch, thread, sigma, budget)
        return
    if isinstance(s, While):
        while eval_expr(s.cond, thread, sigma):
            budget[0] -= 1
            if budget[0] <= 0:
                raise FuelExhausted("loop exceeded execution fuel")
            _exec(s.body, thread, sigma, budget)
        return
    raise TypeError(f"cannot execute {s!r}")


# ---------------------------------------------------------------------------
# Compiled monitor: index-based fast paths for the enumerator
# ---------------------------------------------------------------------------

class CompiledMonitor:
    def __init__(self, m: Monitor):
        self.monitor = m
        self.shared_names = list(m.shared_names)
        self.local_names = list(m.local_names)
        self.sidx = {n: i for i, n in enumerate(self.shared_names)}
        self.lidx = {n: i for i, n in enumerate(self.local_names)}
        self.ccrs: list[CCR] = monitor_ccrs(m)
        self.cidx = {c.id: i for i, c in enumerate(self.ccrs)}
        self.guard_exprs: list[Expr] = []
        self.guard_id: list[Optional[int]] = []
        for c in self.ccrs:
            g = simplify(c.guard)
            if g == TRUE:
                self.guard_id.append(None)
                continue
            if g not in self.guard_exprs:
                self.guard_exprs.append(g)
            self.guard_id.append(self.guard_exprs.index(g))
        self.is_last = []
        self.is_first = []
        for c in self.ccrs:
            meth = m.method(c.method)
            self.is_last.append(c.index == len(meth.ccrs) - 1)
            self.is_first.append(c.index == 0)
        self.entry_params: list[tuple] = []
        for c in self.ccrs:
            meth = m.method(c.method)
            if c.index == 0:
                self.entry_params.append(tuple(
                    (self.lidx[p.name], p.sort) for p in meth.params))
            else:
                self.entry_params.append(())
        self.guard_fn = [self._compile_expr(simplify(c.guard)) for c in self.ccrs]
        self.body_fn = [self._compile_stmt(c.body) for c in self.ccrs]
        self.shared_defaults = tuple(
            f.default_value() for f in m.fields)
        self.local_defaults = tuple(
            0 if self._local_sort(n) is Sort.INT else False
            for n in self.local_names)

    def _local_sort(self, name: str) -> Sort:
        return self.monitor.sort_of(name)

    # expressions compile to fn(shared_list, locals_list) -> value
    def _compile_expr(self, e: Expr):
        if isinstance(e, IntLit):
            v = e.value
            return lambda s, l: v
        if isinstance(e, BoolLit):
            v = e.value
            return lambda s, l: v
        if isinstance(e, Var):
            if e.name in self.sidx:
                i = self.sidx[e.name]
                return lambda s, l: s[i]
            j = self.lidx[e.name]
            return lambda s, l: l[j]
        if isinstance(e, Unary):
            f = self._compile_expr(e.operand)
            if e.op == "!":
                return lambda s, l: not f(s, l)
            return lambda s, l: -f(s, l)
        if isinstance(e, Binary):
            fa = self._compile_expr(e.left)
            fb = self._compile_expr(e.right)
            op = e.op
            if op == "&&":
                return lambda s, l: fa(s, l) and fb(s, l)
            if op == "||":
                return lambda s, l: fa(s, l) or fb(s, l)
            if op == "==>":
                return lambda s, l: (not fa(s, l)) or fb(s, l)
            import operator
            fn = {"==": operator.eq, "!=": operator.ne, "<": operator.lt,
                  "<=": operator.le, ">": operator.gt, ">=": operator.ge,
                  "+": operator.add, "-": operator.sub,
                  "*": operator.mul}[op]
            return lambda s, l: fn(fa(s, l), fb(s, l))
        raise TypeError(f"cannot compile {e!r}")

    # statements compile to fn(shared_list, locals_list, budget) mutating both
    def _compile_stmt(self, st: Stmt):
        if isinstance(st, Skip):
            return lambda s, l, b: None
        if isinstance(st, Assign):
            f = self._compile_expr(st.expr)
            if st.var in self.sidx:
                i = self.sidx[st.var]

                def run(s, l, b, i=i, f=f):
                    s[i] = f(s, l)
                return run
            j = self.lidx[st.var]

            def run(s, l, b, j=j, f=f):
                l[j] = f(s, l)
            return run
        if isinstance(st, Seq):
            fns = [self._compile_stmt(x) for x in st.stmts]

            def run(s, l, b, fns=fns):
                for fn in fns:
                    fn(s, l, b)
            return run
        if isinstance(st, If):
            fc = self._compile_expr(st.cond)
            ft = self._compile_stmt(st.then)
            fe = self._compile_stmt(st.els)

            def run(s, l, b, fc=fc, ft=ft, fe=fe):
                (ft if fc(s, l) else fe)(s, l, b)
            return run
        if isinstance(st, While):
            fc = self._compile_expr(st.cond)
            fb = self._compile_stmt(st.body)

            def run(s, l, b, fc=fc, fb=fb):
                while fc(s, l):
                    b[0] -= 1
                    if b[0] <= 0:
                        raise FuelExhausted("loop exceeded execution fuel")
                    fb(s, l, b)
            return run
        raise TypeError(f"cannot compile {st!r}")


_compiled_cache: dict[int, tuple[Monitor, CompiledMonitor]] = {}


def compiled(m: Monitor) -> CompiledMonitor:
    hit = _compiled_cache.get(id(m))
    if hit is not None and hit[0] is m:
        return hit[1]
    cm = CompiledMonitor(m)
    _compiled_cache[id(m)] = (m, cm)
    return cm

# ---------------------------------------------------------------------------
# Syntactic well-formedness
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class WellFormedness:
    ok: bool
    reason: Optional[str] = None  # 'a' | 'b' | 'c'
    detail: str = ""
    at: Optional[int] = None


def classify_trace(tau: Trace, m: Monitor) -> WellFormedness:
    """Check the three syntactic well-formedness conditions.

    (a) events of one thread respect the statement order within a method;
    (b) a thread cannot enter another method before finishing the current one
        (being blocked counts as being inside);
    (c) methods are atomic between guards: after a thread fires a CCR that is
        not the last of its method, the very next event in the trace must be
        that thread at the successor CCR.
    """
    cm = compiled(m)
    # per-thread cursor: None = idle, else (ccr index, blocked?)
    cursor: dict[int, Optional[tuple[int, bool]]] = {}
    pending: Optional[tuple[int, int]] = None  # (thread, expected ccr index)
    for i, e in enumerate(tau):
        if e.ccr not in cm.cidx:
            return WellFormedness(False, "a", f"unknown CCR {e.ccr}", i)
        ci = cm.cidx[e.ccr]
        if pending is not None:
            pt, pc = pending
            if e.thread != pt or ci != pc:
                return WellFormedness(
                    False, "c",
                    f"thread {pt} left the monitor mid-method before {cm.ccrs[pc].id}",
                    i)
            pending = None
        cur = cursor.get(e.thread)
        if cur is None:
            if not cm.is_first[ci]:
                target = cm.ccrs[ci]
                return WellFormedness(
                    False, "a",
                    f"thread {e.thread} enters {target.method} at statement "
                    f"{target.id}, not at its first statement", i)
        else:
            expect, _was_blocked = cur
            if ci != expect:
                same_method = cm.ccrs[ci].method == cm.ccrs[expect].method
                return WellFormedness(
                    False, "a" if same_method else "b",
                    f"thread {e.thread} must execute {cm.ccrs[expect].id} next, "
                    f"found {cm.ccrs[ci].id}", i)
        if e.args is not None:
            if not cm.is_first[ci] or (cur is not None and cur[1]):
                return WellFormedness(
                    False, "a", "entry arguments outside a method entry", i)
        if e.fired:
            if cm.is_last[ci]:
                cursor[e.thread] = None
            else:
                cursor[e.thread] = (ci + 1, False)
                pending = (e.thread, ci + 1)
        else:
            cursor[e.thread] = (ci, True)
    return WellFormedness(True)


def is_well_formed(tau: Trace, m: Monitor) -> bool:
    return classify_trace(tau, m).ok


# ---------------------------------------------------------------------------
# Core stepping (index-based)
# ---------------------------------------------------------------------------

def _order_key(pair: tuple) -> tuple:
    return pair  # (thread id, ccr index): fixed lexicographic order


def _min_pair(pairs) -> Optional[tuple]:
    return min(pairs, key=_order_key) if pairs else None


def resolve_sigma(cm: CompiledMonitor, sigma_map: SignalMap) -> list:
    """Per-CCR notification triples with guards resolved to guard ids:
    [(gid, unconditional, broadcast), ...] per CCR index. Triples whose
    predicate no blockable guard matches are dropped (nothing can wait on
    them)."""
    resolved: list[list[tuple]] = []
    for c in cm.ccrs:
        row: list[tuple] = []
        for trip in sorted(sigma_map.entries.get(c.id, frozenset()), key=str):
            g = simplify(trip.pred)
            if g in cm.guard_exprs:
                row.append((cm.guard_exprs.index(g), trip.unconditional,
                            trip.broadcast))
        resolved.append(row)
    return resolved


def _core_step(cm: CompiledMonitor, resolved_sigma: Optional[list],
               shared: list, locmap: dict, B: frozenset, N: frozenset,
               e: Event, fuel: int = DEFAULT_FUEL):
    """One step of either engine over mutable working state.

    `shared` is mutated in place; `locmap[t]` (a list) likewise. Returns
    (rule, B', N', changed) or None when no rule applies. `resolved_sigma`
    selects the engine: None = implicit, else explicit with that resolved
    notification map (see resolve_sigma).
    """
    ci = cm.cidx[e.ccr]
    t = e.thread
    key = (t, ci)
    locs = locmap.setdefault(t, list(cm.local_defaults))
    if e.args is not None:
        params = cm.entry_params[ci]
        if len(params) != len(e.args):
            raise ValueError(f"event {e} carries {len(e.args)} args, "
                             f"method expects {len(params)}")
        for (j, _sort), v in zip(params, e.args):
            locs[j] = v
    guard_true = bool(cm.guard_fn[ci](shared, locs))
    if not e.fired:
        if guard_true:
            return None
        if key not in B:
            return ("1a", B | {key}, N, ())
        if key in N:
            return ("1b", B, N - {key}, ())
        return None
    if not guard_true:
        return None
    if key in B:
        if _min_pair(N) != key:
            return None
        rule = "2b"
    else:
        rule = "2a"
    before = list(shared)
    budget = [fuel]
    cm.body_fn[ci](shared, locs, budget)
    changed = tuple((cm.shared_names[i], shared[i])
                    for i in range(len(shared)) if shared[i] != before[i])
    # In rule 2b the firing thread has left the wait set, so notifications
    # are computed over B minus it. For the implicit engine this is a no-op
    # (its own entry would be removed from the union anyway); for explicit
    # signals it keeps the minimum from shadowing the next waiter.
    base_b = B if rule == "2a" else B - {key}
    if resolved_sigma is None:
        fresh = {(t2, c2) for (t2, c2) in base_b
                 if bool(cm.guard_fn[c2](shared, locmap.setdefault(
                     t2, list(cm.local_defaults))))}
    else:
        fresh = _explicit_notifications(cm, resolved_sigma[ci], shared,
                                        locmap, base_b)
    if rule == "2a":
        return ("2a", B, N | fresh, changed)
    return ("2b", B - {key}, (N | fresh) - {key}, changed)


def _explicit_notifications(cm: CompiledMonitor, row: list, shared: list,
                            locmap: dict, B: frozenset) -> set:
    """Signal + broadcast targets for one firing CCR: a signal wakes the
    minimum blocked pair waiting on the predicate, a broadcast wakes all of
    them; conditional notifications check the predicate for each candidate."""
    out: set = set()
    for gid, unconditional, broadcast in row:
        waiters = [(t2, c2) for (t2, c2) in B if cm.guard_id[c2] == gid]
        if not waiters:
            continue
        cands = waiters if broadcast else [_min_pair(waiters)]
        for (t2, c2) in cands:
            if unconditional or bool(cm.guard_fn[c2](
                    shared, locmap.setdefault(t2, list(cm.local_defaults)))):
                out.add((t2, c2))
    return out


# ---------------------------------------------------------------------------
# Public stepping API over MonitorState / StepState
# ---------------------------------------------------------------------------

def _to_working(cm: CompiledMonitor, st: StepState):
    shared = [st.sigma.shared.get(n, d)
              for n, d in zip(cm.shared_names, cm.shared_defaults)]
    locmap: dict[int, list] = {}
    for t, env in st.sigma.locals.items():
        locmap[t] = [env.get(n, d)
                     for n, d in zip(cm.local_names, cm.local_defaults)]
    B = frozenset((t, cm.cidx[c]) for t, c in st.blocked)
    N = frozenset((t, cm.cidx[c]) for t, c in st.notified)
    return shared, locmap, B, N


def _from_working(cm: CompiledMonitor, shared: list, locmap: dict,
                  B: frozenset, N: frozenset) -> StepState:
    sigma = MonitorState(
        {n: v for n, v in zip(cm.shared_names, shared)},
        {t: {n: v for n, v in zip(cm.local_names, locs)}
         for t, locs in locmap.items()})
    to_id = lambda pairs: frozenset((t, cm.ccrs[c].id) for t, c in pairs)
    return StepState(sigma, to_id(B), to_id(N))


def step_implicit(st: StepState, e: Event, m: Monitor):
    """Implicit-engine step; returns the new StepState or Infeasible."""
    cm = compiled(m)
    shared, locmap, B, N = _to_working(cm, st)
    r = _core_step(cm, None, shared, locmap, B, N, e)
    if r is None:
        return Infeasible(f"no implicit rule applies to {e}")
    _, B2, N2, _ = r
    return _from_working(cm, shared, locmap, B2, N2)


def step_explicit(st: StepState, e: Event, em: ExplicitMonitor):
    """Explicit-engine step; returns the new StepState or Infeasible."""
    cm = compiled(em.base)
    shared, locmap, B, N = _to_working(cm, st)
    r = _core_step(cm, resolve_sigma(cm, em.sigma_map), shared, locmap,
                   B, N, e)
    if r is None:
        return Infeasible(f"no explicit rule applies to {e}")
    _, B2, N2, _ = r
    return _from_working(cm, shared, locmap, B2, N2)


def run(sigma0: MonitorState, tau: Trace, target, engine: str = "implicit",
        fuel: int = DEFAULT_FUEL) -> RunResult:
    """Fold the chosen engine over a well-formed trace from (sigma0, {}, {})."""
    if engine == "explicit":
        if not isinstance(target, ExplicitMonitor):
            raise TypeError("explicit engine needs an ExplicitMonitor")
        m, sigma_map = target.base, target.sigma_map
    else:
        m = target.base if isinstance(target, ExplicitMonitor) else target
        sigma_map = None
    wf = classify_trace(tau, m)
    if not wf.ok:
        raise ValueError(f"trace is not well-formed "
                         f"(reason {wf.reason} at {wf.at}: {wf.detail})")
    cm = compiled(m)
    resolved = None if sigma_map is None else resolve_sigma(cm, sigma_map)
    shared = [sigma0.shared.get(n, d)
              for n, d in zip(cm.shared_names, cm.shared_defaults)]
    locmap = {t: [env.get(n, d)
                  for n, d in zip(cm.local_names, cm.local_defaults)]
              for t, env in sigma0.locals.items()}
    B: frozenset = frozenset()
    N: frozenset = frozenset()
    records: list[StepRecord] = []
    used_1b = False
    for i, e in enumerate(tau):
        r = _core_step(cm, resolved, shared, locmap, B, N, e, fuel)
        if r is None:
            return RunResult(False, None, i, f"event {e} infeasible",
                             records, used_1b)
        rule, B, N, changed = r
        used_1b = used_1b or rule == "1b"
        records.append(StepRecord(i, rule, e,
                                  frozenset((t, cm.ccrs[c].id) for t, c in B),
                                  frozenset((t, cm.ccrs[c].id) for t, c in N),
                                  changed))
    final = _from_working(cm, shared, locmap, B, N)
    return RunResult(True, final, None, None, records, used_1b)


def is_normalized(sigma0: MonitorState, tau: Trace, m: Monitor) -> bool:
    """True iff the (deterministic) implicit run never applies rule 1b."""
    r = run(sigma0, tau, m, "implicit")
    if not r.feasible:
        raise ValueError(f"trace is infeasible at {r.infeasible_at}: {r.reason}")
    return not r.used_1b

# ---------------------------------------------------------------------------
# Bounded differential equivalence
# ---------------------------------------------------------------------------

@dataclass
class EquivalenceConfig:
    max_threads: int = 3
    max_len: int = 8
    values: tuple = (0, 1, 2, 3)
    max_expansions: int = 1_000_000
    sigma0: Optional[MonitorState] = None


@dataclass
class EquivalenceResult:
    passed: bool
    complete: bool  # False when the expansion budget was exhausted
    counterexample: Optional[list]
    violation: Optional[str]  # 'explicit-not-implicit' | 'normalized-not-explicit'
    stats: dict

    def __bool__(self) -> bool:
        return self.passed


IDLE = ("i",)


def _entry_spaces(cm: CompiledMonitor, values: tuple) -> list:
    """For each method-entry CCR index: the tuple of argument tuples to try
    (a single None when the method has no parameters)."""
    spaces: list = [None] * len(cm.ccrs)
    from itertools import product
    for ci, params in enumerate(cm.entry_params):
        if not cm.is_first[ci]:
            continue
        if not params:
            spaces[ci] = (None,)
        else:
            doms = [values if sort is Sort.INT else (False, True)
                    for (_j, sort) in params]
            spaces[ci] = tuple(product(*doms))
    return spaces


def check_equivalence_bounded(m: Monitor, em: ExplicitMonitor,
                              cfg: Optional[EquivalenceConfig] = None
                              ) -> EquivalenceResult:
    """Breadth-first product search for Def-3.4 violations within bounds.

    A configuration bundles the state both engines share (sigma, thread
    positions, B) with the two notification sets and a flag telling whether
    the implicit derivation is still normalized. Both engines step every
    candidate event: an event the explicit engine accepts but the implicit
    rejects violates condition (1); an event the implicit engine accepts
    without rule 1b on a still-normalized path but the explicit rejects
    violates condition (2). Configurations repeat across interleavings, so
    they are deduplicated (keyed with the normalized flag) and revisited only
    at a strictly smaller depth.
    """
    cfg = cfg or EquivalenceConfig()
    if em.base is not m:
        # allow separately parsed but equal monitors
        if em.base != m:
            raise ValueError("explicit monitor was built from a different source")
    cm = compiled(m)
    resolved = resolve_sigma(cm, em.sigma_map)
    threads = tuple(range(1, cfg.max_threads + 1))
    sigma_init = cfg.sigma0 or MonitorState.initial(m)
    shared0 = tuple(sigma_init.shared.get(n, d)
                    for n, d in zip(cm.shared_names, cm.shared_defaults))
    locs0 = tuple(
        tuple(sigma_init.locals.get(t, {}).get(n, d)
              for n, d in zip(cm.local_names, cm.local_defaults))
        for t in threads)
    entry_spaces = _entry_spaces(cm, cfg.values)
    first_ccrs = [ci for ci in range(len(cm.ccrs)) if cm.is_first[ci]]

    root = (shared0, locs0, tuple(IDLE for _ in threads), frozenset(),
            frozenset(), True)
    visited: dict = {root: 0}
    parents: dict = {root: None}
    frontier = deque([root])
    expansions = 0
    configs = 1
    rule_hist: dict[str, int] = {}
    capped = False

    def rebuild(config, extra_event=None) -> list:
        path = []
        node = config
        while parents[node] is not None:
            node, ev = parents[node]
            path.append(ev)
        path.reverse()
        if extra_event is not None:
            path.append(extra_event)
        return [Event(t, cm.ccrs[ci].id, fired, args)
                for (t, ci, fired, args) in path]

    def candidate_events(positions, pending):
        if pending is not None:
            t, ci = pending
            yield (t, ci, True, None)
            yield (t, ci, False, None)
            return
        for k, t in enumerate(threads):
            pos = positions[k]
            if pos == IDLE:
                for ci in first_ccrs:
                    for args in entry_spaces[ci]:
                        yield (t, ci, True, args)
                        yield (t, ci, False, args)
            elif pos[0] == "b":
                ci = pos[1]
                yield (t, ci, True, None)
                yield (t, ci, False, None)

    while frontier:
        node = frontier.popleft()
        depth = visited[node]
        if depth >= cfg.max_len:
            continue
        shared_t, locs_t, positions, n_imp, n_exp, norm = node
        pending = None
        for k, t in enumerate(threads):
            if positions[k][0] == "m":
                pending = (t, positions[k][1])
                break
        B = frozenset((t, positions[k][1])
                      for k, t in enumerate(threads)
                      if positions[k][0] == "b")
        for (t, ci, fired, args) in candidate_events(positions, pending):
            expansions += 1
            if expansions > cfg.max_expansions:
                capped = True
                frontier.clear()
                break
            ev = Event(t, cm.ccrs[ci].id, fired, args)
            # implicit attempt
            sh_i = list(shared_t)
            lm_i = {th: list(locs_t[j]) for j, th in enumerate(threads)}
            ri = _core_step(cm, None, sh_i, lm_i, B, n_imp, ev)
            # explicit attempt
            sh_e = list(shared_t)
            lm_e = {th: list(locs_t[j]) for j, th in enumerate(threads)}
            re_ = _core_step(cm, resolved, sh_e, lm_e, B, n_exp, ev)
            if ri is None and re_ is None:
                continue
            if re_ is not None and ri is None:
                return EquivalenceResult(
                    False, True, rebuild(node, (t, ci, fired, args)),
                    "explicit-not-implicit",
                    {"configs": configs, "expansions": expansions,
                     "rules": rule_hist})
            if ri is not None and re_ is None:
                rule_i = ri[0]
                if norm and rule_i != "1b":
                    return EquivalenceResult(
                        False, True, rebuild(node, (t, ci, fired, args)),
                        "normalized-not-explicit",
                        {"configs": configs, "expansions": expansions,
                         "rules": rule_hist})
                continue  # non-normalized implicit-only continuation: no demand
            rule_i, b_i, n_i2, _ = ri
            rule_e, b_e, n_e2, _ = re_
            assert b_i == b_e and sh_i == sh_e and lm_i == lm_e, \
                "engines diverged on shared data under the same event"
            rule_hist[rule_i] = rule_hist.get(rule_i, 0) + 1
            # next positions
            npos = list(positions)
            k = threads.index(t)
            if fired:
                if cm.is_last[ci]:
                    npos[k] = IDLE
                else:
                    npos[k] = ("m", ci + 1)
            else:
                npos[k] = ("b", ci)
            child = (tuple(sh_i),
                     tuple(tuple(lm_i[th]) for th in threads),
                     tuple(npos), n_i2, n_e2,
                     norm and rule_i != "1b")
            prev = visited.get(child)
            if prev is not None and prev <= depth + 1:
                continue
            visited[child] = depth + 1
            parents[child] = (node, (t, ci, fired, args))
            configs += 1
            frontier.append(child)
        if capped:
            break
    return EquivalenceResult(
        True, not capped, None, None,
        {"configs": configs, "expansions": expansions, "rules": rule_hist})


# ---------------------------------------------------------------------------
# Implicit-run enumeration (property-test support)
# ---------------------------------------------------------------------------

def enumerate_implicit_runs(m: Monitor, max_threads: int = 2,
                            max_len: int = 6, values: tuple = (0, 1),
                            max_runs: int = 200_000,
                            sigma0: Optional[MonitorState] = None):
    """Depth-first enumeration of implicit-feasible traces within bounds.

    Yields (trace, records, used_1b, final) for every nonempty feasible
    trace (each yielded prefix is itself a feasible trace).
    """
    cm = compiled(m)
    threads = tuple(range(1, max_threads + 1))
    sigma_init = sigma0 or MonitorState.initial(m)
    shared_init = [sigma_init.shared.get(n, d)
                   for n, d in zip(cm.shared_names, cm.shared_defaults)]
    locs_init = {t: [sigma_init.locals.get(t, {}).get(n, d)
                     for n, d in zip(cm.local_names, cm.local_defaults)]
                 for t in threads}
    entry_spaces = _entry_spaces(cm, values)
    first_ccrs = [ci for ci in range(len(cm.ccrs)) if cm.is_first[ci]]
    count = [0]

    def snapshot(shared, locmap):
        return (tuple(shared), tuple(tuple(locmap[t]) for t in threads))

    def walk(shared, locmap, B, N, positions, pending, trace, records,
             used_1b, depth):
        if depth >= max_len or count[0] >= max_runs:
            return
        if pending is not None:
            cands = [(pending[0], pending[1], True, None),
                     (pending[0], pending[1], False, None)]
        else:
            cands = []
            for k, t in enumerate(threads):
                pos = positions[k]
                if pos == IDLE:
                    for ci in first_ccrs:
                        for args in entry_spaces[ci]:
                            cands.append((t, ci, True, args))
                            cands.append((t, ci, False, args))
                elif pos[0] == "b":
                    cands.append((t, pos[1], True, None))
                    cands.append((t, pos[1], False, None))
        for (t, ci, fired, args) in cands:
            if count[0] >= max_runs:
                return
            sh = list(shared)
            lm = {th: list(env) for th, env in locmap.items()}
            ev = Event(t, cm.ccrs[ci].id, fired, args)
            r = _core_step(cm, None, sh, lm, B, N, ev)
            if r is None:
                continue
            rule, B2, N2, changed = r
            rec = StepRecord(depth, rule, ev,
                             frozenset((x, cm.ccrs[c].id) for x, c in B2),
                             frozenset((x, cm.ccrs[c].id) for x, c in N2),
                             changed)
            npos = list(positions)
            k = threads.index(t)
            if fired:
                npos[k] = IDLE if cm.is_last[ci] else ("m", ci + 1)
                npend = None if cm.is_last[ci] else (t, ci + 1)
            else:
                npos[k] = ("b", ci)
                npend = None
            count[0] += 1
            trace.append(ev)
            records.append(rec)
            yield (list(trace), list(records), used_1b or rule == "1b",
                   snapshot(sh, lm), B2, N2)
            yield from walk(sh, lm, B2, N2, tuple(npos), npend, trace,
                            records, used_1b or rule == "1b", depth + 1)
            trace.pop()
            records.pop()

    yield from walk(shared_init, locs_init, frozenset(), frozenset(),
                    tuple(IDLE for _ in threads), None, [], [], False, 0)

# ---------------------------------------------------------------------------
# Invalidation and agreement (cross-engine test helpers)
# ---------------------------------------------------------------------------

def invalidates(e: tuple, t2: int, p: Expr, m: Monitor,
                domain: tuple = (0, 1, 2, 3)) -> bool:
    """Does executing e's body falsify p for thread t2 from *every* state?

    e is (thread, ccr or ccr id). States are enumerated over the given value
    domain for the shared variables, the executing method's locals, and the
    locals read by p. The same fact can be checked symbolically as
    check_valid(wp(body, !p)) with p's locals renamed apart.
    """
    te, c = e
    ccr = m.ccr(c) if isinstance(c, str) else c
    meth = m.method(ccr.method)
    from .ast import free_vars as _fv
    shared_vars = [(f.name, f.sort) for f in m.fields]
    body_locals = [(pr.name, pr.sort) for pr in meth.params]
    p_locals = []
    local_names = set(m.local_names)
    for v in sorted(_fv(p)):
        if v in local_names and all(v != n for n, _ in body_locals):
            p_locals.append((v, m.sort_of(v)))
    from itertools import product

    def dom(sort: Sort):
        return domain if sort is Sort.INT else (False, True)

    names = shared_vars + body_locals + p_locals
    for values in product(*(dom(s) for _, s in names)):
        env = dict(zip((n for n, _ in names), values))
        sigma = MonitorState(
            {n: env[n] for n, _ in shared_vars},
            {te: {n: env[n] for n, _ in body_locals},
             **({} if t2 == te else
                {t2: {n: env[n] for n, _ in p_locals}})})
        if t2 == te:
            for n, _ in p_locals:
                sigma.locals[te][n] = env[n]
        after = exec_body(ccr.body, te, sigma)
        if eval_pred(after, t2, p):
            return False
    return True


def agreement_holds(implicit_st: StepState, explicit_st: StepState,
                    m: Monitor, domain: tuple = (0, 1, 2),
                    _invalidate_cache: Optional[dict] = None) -> bool:
    """The agreement relation between paired implicit/explicit configurations:
    same blocked set, implicit notifications superset of explicit ones, and
    every implicit-only notification either has a false guard now or is
    shadowed by a smaller explicit notification on the same predicate whose
    body invalidates it."""
    if implicit_st.blocked != explicit_st.blocked:
        return False
    if not (explicit_st.notified <= implicit_st.notified):
        return False
    if implicit_st.sigma != explicit_st.sigma:
        return False
    cm = compiled(m)
    cache = _invalidate_cache if _invalidate_cache is not None else {}

    def key(pair):
        t, cid = pair
        return (t, cm.cidx[cid])

    extra = implicit_st.notified - explicit_st.notified
    for pair in extra:
        t, cid = pair
        pred = simplify(m.ccr(cid).guard)
        if not eval_pred(implicit_st.sigma, t, pred):
            continue
        ok = False
        for other in explicit_st.notified:
            if key(other) >= key(pair):
                continue
            opred = simplify(m.ccr(other[1]).guard)
            if opred != pred:
                continue
            ck = (other[1], cid)
            if ck not in cache:
                cache[ck] = invalidates((other[0], other[1]), t, pred, m,
                                        domain)
            if cache[ck]:
                ok = True
                break
        if not ok:
            return False
    return True


# ---------------------------------------------------------------------------
# Normalized-variant search (wakeup reordering)
# ---------------------------------------------------------------------------

def find_normalized_variant(m: Monitor, trace: Trace,
                            sigma0: Optional[MonitorState] = None,
                            max_states: int = 200_000) -> Optional[Trace]:
    """Search for a normalized feasible trace with the same per-thread work
    and the same final state as the given implicit-feasible trace.

    The variant keeps each thread's fired CCR instances (with their entry
    arguments) in order, re-blocks at most once per instance, keeps threads
    that ended blocked blocked (same entry arguments), and never uses rule
    1b. Returns the variant trace or None when none exists within bounds.
    """
    base = run(sigma0 or MonitorState.initial(m), trace, m, "implicit")
    if not base.feasible:
        raise ValueError("trace must be implicit-feasible")
    cm = compiled(m)
    threads = sorted({e.thread for e in trace}) or [1]
    sigma_init = sigma0 or MonitorState.initial(m)

    # per-thread instance list: (ci, args, will_fire)
    instances: dict[int, list] = {t: [] for t in threads}
    open_instance: dict[int, Optional[int]] = {t: None for t in threads}
    for e in trace:
        ci = cm.cidx[e.ccr]
        t = e.thread
        if open_instance[t] == ci and e.args is None:
            if e.fired:
                idx = len(instances[t]) - 1
                ci0, args0, _ = instances[t][idx]
                instances[t][idx] = (ci0, args0, True)
                open_instance[t] = None
            continue
        instances[t].append((ci, e.args, e.fired))
        open_instance[t] = None if e.fired else ci

    target_shared = tuple(base.final.sigma.shared.get(n)
                          for n in cm.shared_names)
    target_locs = tuple(
        tuple(base.final.sigma.locals.get(t, {}).get(
            n, d) for n, d in zip(cm.local_names, cm.local_defaults))
        for t in threads)

    shared_init = [sigma_init.shared.get(n, d)
                   for n, d in zip(cm.shared_names, cm.shared_defaults)]
    locs_init = {t: [sigma_init.locals.get(t, {}).get(n, d)
                     for n, d in zip(cm.local_names, cm.local_defaults)]
                 for t in threads}

    seen: set = set()
    budget = [max_states]

    def dfs(shared, locmap, B, N, progress, blocked_flag, pending, acc):
        if budget[0] <= 0:
            return None
        budget[0] -= 1
        done = all(progress[t] >= len(instances[t]) for t in threads)
        if done:
            if (tuple(shared) == target_shared
                    and tuple(tuple(locmap[t]) for t in threads) == target_locs):
                return list(acc)
            return None
        key = (tuple(shared), tuple(tuple(locmap[t]) for t in threads),
               B, N, tuple(progress[t] for t in threads),
               tuple(blocked_flag[t] for t in threads), pending)
        if key in seen:
            return None
        seen.add(key)
        cand_threads = [pending[0]] if pending is not None else threads
        for t in cand_threads:
            if progress[t] >= len(instances[t]):
                continue
            ci, args, will_fire = instances[t][progress[t]]
            if pending is not None and ci != pending[1]:
                continue
            moves = []
            if blocked_flag[t]:
                if will_fire:
                    moves.append((True, None))   # 2b
            else:
                if will_fire:
                    moves.append((True, args))   # 2a
                moves.append((False, args))       # 1a (block once)
            for fired, a in moves:
                ev = Event(t, cm.ccrs[ci].id, fired, a)
                sh = list(shared)
                lm = {th: list(env) for th, env in locmap.items()}
                r = _core_step(cm, None, sh, lm, B, N, ev)
                if r is None or r[0] == "1b":
                    continue
                rule, B2, N2, _ = r
                nprog = dict(progress)
                nbf = dict(blocked_flag)
                if fired:
                    nprog[t] = progress[t] + 1
                    nbf[t] = False
                    npend = None if cm.is_last[ci] else (t, ci + 1)
                else:
                    nbf[t] = True
                    npend = None
                    if not will_fire:
                        nprog[t] = progress[t] + 1  # stays blocked: done
                acc.append(ev)
                out = dfs(sh, lm, B2, N2, nprog, nbf, npend, acc)
                if out is not None:
                    return out
                acc.pop()
        return None

    return dfs(shared_init, locs_init, frozenset(), frozenset(),
               {t: 0 for t in threads}, {t: False for t in threads},
               None, [])
