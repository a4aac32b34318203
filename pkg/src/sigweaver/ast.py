"""Abstract syntax for implicit-signal monitors.

A monitor is a set of integer/boolean fields (shared across threads) plus a
set of atomic methods. Each method body is a sequence of conditional critical
regions (CCRs): waituntil(guard){body} units. A plain statement is a CCR whose
guard is the literal `true`.

Expressions double as logical formulas for the verification-condition side of
the toolchain: they are immutable, hashable trees with structural equality, so
guards can be deduplicated and candidate invariants stored in sets. Quantifiers
(`Forall`/`Exists`) never appear in parsed programs; they are introduced
internally by weakest preconditions over unannotated loops and by the
commutativity encoding.

Thread-local variables (method parameters) are renamed on construction to
`method$name` so that locals of different methods never collide; `display_name`
recovers the surface name for pretty-printing.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Iterator, Optional


class Sort(Enum):
    INT = "Int"
    BOOL = "Bool"


class Kind(Enum):
    SHARED = "shared"
    LOCAL = "local"


# ---------------------------------------------------------------------------
# Expressions
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Expr:
    pass


@dataclass(frozen=True)
class IntLit(Expr):
    value: int


@dataclass(frozen=True)
class BoolLit(Expr):
    value: bool


@dataclass(frozen=True)
class Var(Expr):
    name: str


@dataclass(frozen=True)
class Unary(Expr):
    op: str  # '!' or '-'
    operand: Expr


@dataclass(frozen=True)
class Binary(Expr):
    op: str  # && || ==> == != < <= > >= + - *
    left: Expr
    right: Expr


@dataclass(frozen=True)
class Forall(Expr):
    vars: tuple[tuple[str, Sort], ...]
    body: Expr


@dataclass(frozen=True)
class Exists(Expr):
    vars: tuple[tuple[str, Sort], ...]
    body: Expr


TRUE = BoolLit(True)
FALSE = BoolLit(False)

COMPARISONS = ("==", "!=", "<", "<=", ">", ">=")
BOOL_OPS = ("&&", "||", "==>")
ARITH_OPS = ("+", "-", "*")


def display_name(name: str) -> str:
    """Surface form of a possibly method-qualified, possibly freshened name.

    `enterReader$x` displays as `x`; a freshened copy `enterReader$x!1`
    displays as `x'`.
    """
    base = name.split("$", 1)[1] if "$" in name else name
    if "!" in base:
        stem, _, n = base.partition("!")
        return stem + "'" * max(int(n), 1)
    return base


# -------------------- smart constructors (light folding only) --------------

def not_(e: Expr) -> Expr:
    if isinstance(e, BoolLit):
        return BoolLit(not e.value)
    if isinstance(e, Unary) and e.op == "!":
        return e.operand
    return Unary("!", e)


def and_(*es: Expr) -> Expr:
    flat: list[Expr] = []
    for e in es:
        if isinstance(e, BoolLit):
            if not e.value:
                return FALSE
            continue
        if isinstance(e, Binary) and e.op == "&&":
            flat.extend(_conjuncts(e))
        else:
            flat.append(e)
    if not flat:
        return TRUE
    out = flat[0]
    for e in flat[1:]:
        out = Binary("&&", out, e)
    return out


def or_(*es: Expr) -> Expr:
    flat: list[Expr] = []
    for e in es:
        if isinstance(e, BoolLit):
            if e.value:
                return TRUE
            continue
        if isinstance(e, Binary) and e.op == "||":
            flat.extend(_disjuncts(e))
        else:
            flat.append(e)
    if not flat:
        return FALSE
    out = flat[0]
    for e in flat[1:]:
        out = Binary("||", out, e)
    return out


def implies(a: Expr, b: Expr) -> Expr:
    if a == TRUE:
        return b
    if a == FALSE or b == TRUE:
        return TRUE
    return Binary("==>", a, b)


def eq(a: Expr, b: Expr) -> Expr:
    return Binary("==", a, b)


def _conjuncts(e: Expr) -> list[Expr]:
    if isinstance(e, Binary) and e.op == "&&":
        return _conjuncts(e.left) + _conjuncts(e.right)
    return [e]


def _disjuncts(e: Expr) -> list[Expr]:
    if isinstance(e, Binary) and e.op == "||":
        return _disjuncts(e.left) + _disjuncts(e.right)
    return [e]


def conjuncts(e: Expr) -> list[Expr]:
    if e == TRUE:
        return []
    return _conjuncts(e)


def free_vars(e: Expr) -> set[str]:
    out: set[str] = set()

    def walk(x: Expr, bound: frozenset[str]) -> None:
        if isinstance(x, Var):
            if x.name not in bound:
                out.add(x.name)
        elif isinstance(x, Unary):
            walk(x.operand, bound)
        elif isinstance(x, Binary):
            walk(x.left, bound)
            walk(x.right, bound)
        elif isinstance(x, (Forall, Exists)):
            walk(x.body, bound | {v for v, _ in x.vars})

    walk(e, frozenset())
    return out


def subst(e: Expr, mapping: dict[str, Expr]) -> Expr:
    """Capture-avoiding substitution of variables by expressions."""
    if not mapping:
        return e
    if isinstance(e, Var):
        return mapping.get(e.name, e)
    if isinstance(e, (IntLit, BoolLit)):
        return e
    if isinstance(e, Unary):
        return Unary(e.op, subst(e.operand, mapping))
    if isinstance(e, Binary):
        return Binary(e.op, subst(e.left, mapping), subst(e.right, mapping))
    if isinstance(e, (Forall, Exists)):
        live = {k: v for k, v in mapping.items()
                if k not in {n for n, _ in e.vars}}
        clash = {n for n, _ in e.vars} & set().union(
            *(free_vars(v) for v in live.values()), set())
        if clash:
            renames = {}
            taken = free_vars(e.body) | set(live) | {n for n, _ in e.vars}
            for v in e.vars:
                if v[0] in clash:
                    k = 1
                    while f"{v[0]}#{k}" in taken:
                        k += 1
                    renames[v[0]] = Var(f"{v[0]}#{k}")
                    taken.add(f"{v[0]}#{k}")
            newvars = tuple((renames[n].name if n in renames else n, s)
                            for n, s in e.vars)
            body = subst(e.body, renames)
            return type(e)(newvars, subst(body, live))
        if not live:
            return e
        return type(e)(e.vars, subst(e.body, live))
    raise TypeError(f"unexpected expression node {e!r}")


def simplify(e: Expr) -> Expr:
    """Syntactic simplification: constant folding, flattening, double negation.

    Deliberately not a semantic canonicalizer; structural equality after
    simplify is the dedup notion for guards and invariant candidates.
    """
    if isinstance(e, (Var, IntLit, BoolLit)):
        return e
    if isinstance(e, Unary):
        x = simplify(e.operand)
        if e.op == "!":
            return not_(x)
        if isinstance(x, IntLit):
            return IntLit(-x.value)
        if isinstance(x, Unary) and x.op == "-":
            return x.operand
        return Unary("-", x)
    if isinstance(e, Binary):
        a, b = simplify(e.left), simplify(e.right)
        if e.op == "&&":
            return and_(a, b)
        if e.op == "||":
            return or_(a, b)
        if e.op == "==>":
            return implies(a, b)
        if isinstance(a, IntLit) and isinstance(b, IntLit):
            va, vb = a.value, b.value
            if e.op in COMPARISONS:
                return BoolLit(_cmp(e.op, va, vb))
            if e.op == "+":
                return IntLit(va + vb)
            if e.op == "-":
                return IntLit(va - vb)
            if e.op == "*":
                return IntLit(va * vb)
        if isinstance(a, BoolLit) and isinstance(b, BoolLit) and e.op in ("==", "!="):
            return BoolLit((a.value == b.value) == (e.op == "=="))
        if e.op == "+" and b == IntLit(0):
            return a
        if e.op == "+" and a == IntLit(0):
            return b
        if e.op == "-" and b == IntLit(0):
            return a
        if e.op == "*" and (a == IntLit(1)):
            return b
        if e.op == "*" and (b == IntLit(1)):
            return a
        return Binary(e.op, a, b)
    if isinstance(e, (Forall, Exists)):
        body = simplify(e.body)
        if isinstance(body, BoolLit):
            return body
        return type(e)(e.vars, body)
    raise TypeError(f"unexpected expression node {e!r}")


def _cmp(op: str, a, b) -> bool:
    return {"==": a == b, "!=": a != b, "<": a < b,
            "<=": a <= b, ">": a > b, ">=": a >= b}[op]


def negate_pred(e: Expr) -> Expr:
    """Negation pushed through connectives and comparisons, for readable output.

    `!(readers == 0 && !writerIn)` becomes `readers != 0 || writerIn`.
    """
    e = simplify(e)
    if isinstance(e, BoolLit):
        return BoolLit(not e.value)
    if isinstance(e, Unary) and e.op == "!":
        return e.operand
    if isinstance(e, Binary):
        flips = {"==": "!=", "!=": "==", "<": ">=", "<=": ">", ">": "<=", ">=": "<"}
        if e.op in flips and not isinstance(e.left, BoolLit):
            # boolean equality is left alone; integer comparisons flip
            if e.op in ("==", "!=") and _looks_boolean(e.left):
                return Unary("!", e)
            return Binary(flips[e.op], e.left, e.right)
        if e.op == "&&":
            return or_(negate_pred(e.left), negate_pred(e.right))
        if e.op == "||":
            return and_(negate_pred(e.left), negate_pred(e.right))
        if e.op == "==>":
            return and_(e.left, negate_pred(e.right))
    return not_(e)


def _looks_boolean(e: Expr) -> bool:
    if isinstance(e, BoolLit):
        return True
    if isinstance(e, Unary) and e.op == "!":
        return True
    if isinstance(e, Binary) and e.op in COMPARISONS + BOOL_OPS:
        return True
    return False


# ---------------------------------------------------------------------------
# Statements
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Stmt:
    pass


@dataclass(frozen=True)
class Skip(Stmt):
    pass


@dataclass(frozen=True)
class Assign(Stmt):
    var: str
    expr: Expr


@dataclass(frozen=True)
class Seq(Stmt):
    stmts: tuple[Stmt, ...]


@dataclass(frozen=True)
class If(Stmt):
    cond: Expr
    then: Stmt
    els: Stmt


@dataclass(frozen=True)
class While(Stmt):
    cond: Expr
    body: Stmt
    invariant: Optional[Expr] = None


SKIP = Skip()


def seq(stmts: list[Stmt]) -> Stmt:
    flat = [s for s in stmts if not isinstance(s, Skip)]
    if not flat:
        return SKIP
    if len(flat) == 1:
        return flat[0]
    return Seq(tuple(flat))


def stmt_list(s: Stmt) -> list[Stmt]:
    return list(s.stmts) if isinstance(s, Seq) else ([] if isinstance(s, Skip) else [s])


def assigned_vars(s: Stmt) -> set[str]:
    if isinstance(s, Assign):
        return {s.var}
    if isinstance(s, Seq):
        out: set[str] = set()
        for x in s.stmts:
            out |= assigned_vars(x)
        return out
    if isinstance(s, If):
        return assigned_vars(s.then) | assigned_vars(s.els)
    if isinstance(s, While):
        return assigned_vars(s.body)
    return set()


def stmt_vars(s: Stmt) -> set[str]:
    if isinstance(s, Assign):
        return {s.var} | free_vars(s.expr)
    if isinstance(s, Seq):
        out: set[str] = set()
        for x in s.stmts:
            out |= stmt_vars(x)
        return out
    if isinstance(s, If):
        return free_vars(s.cond) | stmt_vars(s.then) | stmt_vars(s.els)
    if isinstance(s, While):
        out = free_vars(s.cond) | stmt_vars(s.body)
        if s.invariant is not None:
            out |= free_vars(s.invariant)
        return out
    return set()


def rename_stmt(s: Stmt, mapping: dict[str, str]) -> Stmt:
    """Rename variables (including assignment targets) throughout a statement."""
    emap = {k: Var(v) for k, v in mapping.items()}
    if isinstance(s, Assign):
        return Assign(mapping.get(s.var, s.var), subst(s.expr, emap))
    if isinstance(s, Seq):
        return Seq(tuple(rename_stmt(x, mapping) for x in s.stmts))
    if isinstance(s, If):
        return If(subst(s.cond, emap), rename_stmt(s.then, mapping),
                  rename_stmt(s.els, mapping))
    if isinstance(s, While):
        inv = subst(s.invariant, emap) if s.invariant is not None else None
        return While(subst(s.cond, emap), rename_stmt(s.body, mapping), inv)
    return s


def has_loop(s: Stmt) -> bool:
    if isinstance(s, While):
        return True
    if isinstance(s, Seq):
        return any(has_loop(x) for x in s.stmts)
    if isinstance(s, If):
        return has_loop(s.then) or has_loop(s.els)
    return False


# ---------------------------------------------------------------------------
# Monitor structure
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Pos:
    line: int
    col: int


@dataclass(frozen=True)
class VarDecl:
    name: str
    sort: Sort
    kind: Kind
    init: Optional[Expr] = None
    pos: Optional[Pos] = field(default=None, compare=False)

    def default_value(self):
        if self.init is not None:
            lit = simplify(self.init)
            if isinstance(lit, IntLit):
                return lit.value
            if isinstance(lit, BoolLit):
                return lit.value
            raise ValueError(f"non-constant initializer for {self.name}")
        return 0 if self.sort is Sort.INT else False


@dataclass(frozen=True)
class CCR:
    """One waituntil(guard){body} unit; `id` is `method.ordinal`."""
    id: str
    guard: Expr
    body: Stmt
    method: str
    index: int  # position within the method
    pos: Optional[Pos] = field(default=None, compare=False)


@dataclass(frozen=True)
class Method:
    name: str
    params: tuple[VarDecl, ...]
    ccrs: tuple[CCR, ...]
    pos: Optional[Pos] = field(default=None, compare=False)


@dataclass(frozen=True)
class Monitor:
    name: str
    fields: tuple[VarDecl, ...]
    methods: tuple[Method, ...]

    @property
    def shared_names(self) -> tuple[str, ...]:
        return tuple(f.name for f in self.fields)

    @property
    def local_names(self) -> tuple[str, ...]:
        return tuple(p.name for m in self.methods for p in m.params)

    def var_decl(self, name: str) -> VarDecl:
        for f in self.fields:
            if f.name == name:
                return f
        for m in self.methods:
            for p in m.params:
                if p.name == name:
                    return p
        raise KeyError(name)

    def sort_of(self, name: str) -> Sort:
        return self.var_decl(name).sort

    def kind_of(self, name: str) -> Kind:
        return self.var_decl(name).kind

    @property
    def constructor(self) -> Stmt:
        """Field initializers as a statement (the monitor's Ctr)."""
        assigns: list[Stmt] = []
        for f in self.fields:
            v = f.default_value()
            lit: Expr = IntLit(v) if f.sort is Sort.INT else BoolLit(v)
            assigns.append(Assign(f.name, lit))
        return seq(assigns)

    def method(self, name: str) -> Method:
        for m in self.methods:
            if m.name == name:
                return m
        raise KeyError(name)

    def ccr(self, ccr_id: str) -> CCR:
        for c in ccrs(self):
            if c.id == ccr_id:
                return c
        raise KeyError(ccr_id)


def ccrs(m: Monitor) -> list[CCR]:
    """All CCRs in method declaration order, then ordinal."""
    return [c for meth in m.methods for c in meth.ccrs]


def guards(m: Monitor) -> list[Expr]:
    """Syntactically distinct non-trivial guards, in first-occurrence order.

    The guard `true` is excluded: no thread can block on it, so it never
    needs a notification.
    """
    seen: list[Expr] = []
    for c in ccrs(m):
        g = simplify(c.guard)
        if g == TRUE:
            continue
        if g not in seen:
            seen.append(g)
    return seen


def locals_of(p: Expr, m: Monitor) -> set[str]:
    """Thread-local variables occurring free in a predicate."""
    loc = set(m.local_names)
    return {v for v in free_vars(p) if v in loc}


# ---------------------------------------------------------------------------
# Pretty-printing (surface syntax)
# ---------------------------------------------------------------------------

_PREC = {"==>": 1, "||": 2, "&&": 3,
         "==": 4, "!=": 4, "<": 4, "<=": 4, ">": 4, ">=": 4,
         "+": 5, "-": 5, "*": 6}


def pretty_expr(e: Expr, qualified: bool = False) -> str:
    """Render an expression in surface syntax.

    With qualified=False, method-qualified locals print with their surface
    name (`x` rather than `m1$x`).
    """
    def name(n: str) -> str:
        return n if qualified else display_name(n)

    def go(x: Expr, parent: int) -> str:
        if isinstance(x, IntLit):
            s = str(x.value)
            return f"({s})" if x.value < 0 and parent >= 5 else s
        if isinstance(x, BoolLit):
            return "true" if x.value else "false"
        if isinstance(x, Var):
            return name(x.name)
        if isinstance(x, Unary):
            inner = go(x.operand, 7)
            return f"{x.op}{inner}"
        if isinstance(x, Binary):
            p = _PREC[x.op]
            lhs = go(x.left, p)
            rhs = go(x.right, p + 1)  # left-assoc
            s = f"{lhs} {x.op} {rhs}"
            return f"({s})" if p < parent else s
        if isinstance(x, (Forall, Exists)):
            q = "forall" if isinstance(x, Forall) else "exists"
            vs = ", ".join(f"{name(v)}: {s.value}" for v, s in x.vars)
            return f"({q} {vs}. {go(x.body, 0)})"
        raise TypeError(f"unexpected expression node {x!r}")

    return go(e, 0)


def pretty_stmt(s: Stmt, indent: int = 0, qualified: bool = False) -> list[str]:
    pad = "    " * indent
    pe = lambda e: pretty_expr(e, qualified)
    if isinstance(s, Skip):
        return [pad + ";"]
    if isinstance(s, Assign):
        return [pad + f"{pretty_expr(Var(s.var), qualified)} = {pe(s.expr)};"]
    if isinstance(s, Seq):
        out: list[str] = []
        for x in s.stmts:
            out.extend(pretty_stmt(x, indent, qualified))
        return out
    if isinstance(s, If):
        out = [pad + f"if ({pe(s.cond)}) {{"]
        out.extend(pretty_stmt(s.then, indent + 1, qualified))
        if not isinstance(s.els, Skip):
            out.append(pad + "} else {")
            out.extend(pretty_stmt(s.els, indent + 1, qualified))
        out.append(pad + "}")
        return out
    if isinstance(s, While):
        head = f"while ({pe(s.cond)})"
        if s.invariant is not None:
            head += f" invariant ({pe(s.invariant)})"
        out = [pad + head + " {"]
        out.extend(pretty_stmt(s.body, indent + 1, qualified))
        out.append(pad + "}")
        return out
    raise TypeError(f"unexpected statement node {s!r}")


def pretty_monitor(m: Monitor) -> str:
    lines = [f"monitor {m.name} {{"]
    for f in m.fields:
        ty = "int" if f.sort is Sort.INT else "bool"
        init = "" if f.init is None else f" = {pretty_expr(f.init)}"
        lines.append(f"    {ty} {f.name}{init};")
    for meth in m.methods:
        params = ", ".join(
            ("int " if p.sort is Sort.INT else "bool ") + display_name(p.name)
            for p in meth.params)
        lines.append("")
        lines.append(f"    {meth.name}({params}) {{")
        for c in meth.ccrs:
            g = simplify(c.guard)
            body_lines = pretty_stmt(c.body, 3)
            if g == TRUE and c.index == 0:
                # leading plain statements keep their bare form
                for bl in pretty_stmt(c.body, 2):
                    lines.append(bl)
                continue
            if isinstance(c.body, Skip):
                lines.append(f"        waituntil({pretty_expr(g)});")
            else:
                lines.append(f"        waituntil({pretty_expr(g)}) {{")
                lines.extend(body_lines)
                lines.append("        }")
        lines.append("    }")
    lines.append("}")
    return "\n".join(lines) + "\n"
