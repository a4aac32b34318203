"""Recursive-descent parser for the implicit-signal monitor surface syntax.

Surface syntax (Java-flavored):

    monitor RWLock {
        int readers = 0;
        bool writerIn = false;

        atomic void enterReader() {
            waituntil(!writerIn) { readers++; }
        }
        exitReader() {
            if (readers > 0) readers--;
        }
    }

`atomic` and `void` are optional noise words. `waituntil(p);` abbreviates an
empty body, `x++;`/`x--;` abbreviate increments, and `unsigned int`/`boolean`
are accepted as aliases for int/bool. waituntil statements are only legal as
top-level statements of a method body; plain statements before the first
waituntil form a leading region guarded by `true`, and plain statements after
a waituntil are folded into that region's body (the method stays a sequence
of conditional critical regions, and execution only interleaves at guards).

Method parameters are the only thread-local variables. The parser renames
them to `method$name`, which keeps locals of different methods distinct by
construction; a same-method duplicate surfaces as a renaming collision.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

from .ast import (
    BoolLit, CCR, Expr, IntLit, Kind, Method, Monitor, Pos, Sort, Stmt,
    Var, VarDecl, Assign, If, Skip, While, Binary, Unary,
    SKIP, seq, simplify, TRUE, free_vars,
)


class ParseError(Exception):
    """Syntax or well-formedness error with a source position."""

    def __init__(self, message: str, line: int, col: int, filename: str = "<input>"):
        self.message = message
        self.line = line
        self.col = col
        self.filename = filename
        super().__init__(f"{filename}:{line}:{col}: {message}")


KEYWORDS = {
    "monitor", "atomic", "void", "int", "bool", "boolean", "unsigned",
    "waituntil", "if", "else", "while", "invariant", "true", "false",
    "forall", "exists",
}

SYMBOLS = [
    "==>", "&&", "||", "==", "!=", "<=", ">=", "++", "--",
    "{", "}", "(", ")", ";", ",", "=", "<", ">", "+", "-", "*", "!", ".",
]


@dataclass
class Token:
    kind: str  # 'ident' | 'int' | 'sym' | 'kw' | 'eof'
    text: str
    line: int
    col: int


def _lex(text: str, filename: str) -> list[Token]:
    toks: list[Token] = []
    i, line, col = 0, 1, 1
    n = len(text)
    while i < n:
        c = text[i]
        if c in " \t\r":
            i += 1
            col += 1
            continue
        if c == "\n":
            i += 1
            line += 1
            col = 1
            continue
        if text.startswith("//", i):
            while i < n and text[i] != "\n":
                i += 1
            continue
        if text.startswith("/*", i):
            j = text.find("*/", i + 2)
            if j < 0:
                raise ParseError("unterminated comment", line, col, filename)
            for ch in text[i:j + 2]:
                if ch == "\n":
                    line += 1
                    col = 1
                else:
                    col += 1
            i = j + 2
            continue
        if c.isdigit():
            j = i
            while j < n and text[j].isdigit():
                j += 1
            toks.append(Token("int", text[i:j], line, col))
            col += j - i
            i = j
            continue
        if c.isalpha() or c == "_":
            j = i
            while j < n and (text[j].isalnum() or text[j] == "_"):
                j += 1
            word = text[i:j]
            toks.append(Token("kw" if word in KEYWORDS else "ident", word, line, col))
            col += j - i
            i = j
            continue
        for sym in SYMBOLS:
            if text.startswith(sym, i):
                toks.append(Token("sym", sym, line, col))
                i += len(sym)
                col += len(sym)
                break
        else:
            raise ParseError(f"unexpected character {c!r}", line, col, filename)
    toks.append(Token("eof", "", line, col))
    return toks


class _Parser:
    def __init__(self, text: str, filename: str):
        self.toks = _lex(text, filename)
        self.pos = 0
        self.filename = filename

    # -- token plumbing -----------------------------------------------------

    def peek(self) -> Token:
        return self.toks[self.pos]

    def next(self) -> Token:
        t = self.toks[self.pos]
        self.pos += 1
        return t

    def at(self, text: str) -> bool:
        t = self.peek()
        return t.text == text and t.kind in ("sym", "kw")

    def accept(self, text: str) -> bool:
        if self.at(text):
            self.pos += 1
            return True
        return False

    def expect(self, text: str) -> Token:
        t = self.peek()
        if not self.at(text):
            raise ParseError(f"expected {text!r}, found {t.text!r}",
                             t.line, t.col, self.filename)
        return self.next()

    def expect_ident(self) -> Token:
        t = self.peek()
        if t.kind != "ident":
            raise ParseError(f"expected identifier, found {t.text!r}",
                             t.line, t.col, self.filename)
        return self.next()

    def err(self, msg: str, tok: Optional[Token] = None) -> ParseError:
        t = tok or self.peek()
        return ParseError(msg, t.line, t.col, self.filename)

    # -- grammar ------------------------------------------------------------

    def parse_monitor(self) -> Monitor:
        self.expect("monitor")
        name_tok = self.expect_ident()
        self.expect("{")
        fields: list[VarDecl] = []
        methods: list[RawMethod] = []
        while not self.at("}"):
            if self._looks_like_field():
                fields.append(self.parse_field())
            else:
                methods.append(self.parse_method())
        self.expect("}")
        if self.peek().kind != "eof":
            raise self.err("trailing input after monitor")
        return _resolve(name_tok.text, fields, methods, self.filename)

    def _looks_like_field(self) -> bool:
        t = self.peek()
        return t.kind == "kw" and t.text in ("int", "bool", "boolean", "unsigned")

    def parse_sort(self) -> Sort:
        t = self.next()
        if t.text == "unsigned":
            self.expect("int")
            return Sort.INT
        if t.text == "int":
            return Sort.INT
        if t.text in ("bool", "boolean"):
            return Sort.BOOL
        raise self.err(f"expected a type, found {t.text!r}", t)

    def parse_field(self) -> VarDecl:
        sort = self.parse_sort()
        name = self.expect_ident()
        init: Optional[Expr] = None
        if self.accept("="):
            init = self.parse_literal(sort)
        self.expect(";")
        return VarDecl(name.text, sort, Kind.SHARED, init,
                       Pos(name.line, name.col))

    def parse_literal(self, sort: Sort) -> Expr:
        t = self.peek()
        neg = self.accept("-")
        t = self.peek()
        if sort is Sort.INT:
            if t.kind != "int":
                raise self.err("field initializer must be an integer constant")
            self.next()
            v = int(t.text)
            return IntLit(-v if neg else v)
        if neg:
            raise self.err("boolean initializer cannot be negated arithmetically")
        if t.text in ("true", "false"):
            self.next()
            return BoolLit(t.text == "true")
        raise self.err("field initializer must be true or false")

    def parse_method(self) -> "RawMethod":
        self.accept("atomic")
        self.accept("void")
        name = self.expect_ident()
        self.expect("(")
        params: list[tuple[str, Sort, Pos]] = []
        if not self.at(")"):
            while True:
                sort = self.parse_sort()
                p = self.expect_ident()
                params.append((p.text, sort, Pos(p.line, p.col)))
                if not self.accept(","):
                    break
        self.expect(")")
        self.expect("{")
        items: list[RawItem] = []
        while not self.at("}"):
            items.append(self.parse_top_stmt())
        self.expect("}")
        return RawMethod(name.text, params, items, Pos(name.line, name.col))

    def parse_top_stmt(self) -> "RawItem":
        t = self.peek()
        if self.at("waituntil"):
            self.next()
            self.expect("(")
            guard = self.parse_expr()
            self.expect(")")
            if self.accept(";"):
                body: Stmt = SKIP
            else:
                body = self.parse_block()
            return RawItem(guard=guard, stmt=body, pos=Pos(t.line, t.col))
        return RawItem(guard=None, stmt=self.parse_stmt(), pos=Pos(t.line, t.col))

    def parse_block(self) -> Stmt:
        self.expect("{")
        stmts: list[Stmt] = []
        while not self.at("}"):
            stmts.append(self.parse_stmt())
        self.expect("}")
        return seq(stmts)

    def parse_stmt(self) -> Stmt:
        t = self.peek()
        if self.at("waituntil"):
            raise self.err("waituntil must be a top-level statement of a method body")
        if self.accept(";"):
            return SKIP
        if self.at("{"):
            return self.parse_block()
        if self.accept("if"):
            self.expect("(")
            cond = self.parse_expr()
            self.expect(")")
            then = self.parse_stmt()
            els: Stmt = SKIP
            if self.accept("else"):
                els = self.parse_stmt()
            return If(cond, then, els)
        if self.accept("while"):
            self.expect("(")
            cond = self.parse_expr()
            self.expect(")")
            inv: Optional[Expr] = None
            if self.accept("invariant"):
                self.expect("(")
                inv = self.parse_expr()
                self.expect(")")
            body = self.parse_stmt()
            return While(cond, body, inv)
        # assignment / increment, optionally `this.`-qualified
        if t.kind == "ident" and t.text == "this":
            self.next()
            self.expect(".")
        name = self.expect_ident()
        if self.accept("++"):
            self.expect(";")
            return Assign(name.text, Binary("+", Var(name.text), IntLit(1)))
        if self.accept("--"):
            self.expect(";")
            return Assign(name.text, Binary("-", Var(name.text), IntLit(1)))
        self.expect("=")
        rhs = self.parse_expr()
        self.expect(";")
        return Assign(name.text, rhs)

    # expression grammar: ==> < || < && < comparison < additive < mult < unary
    def parse_expr(self) -> Expr:
        return self.parse_implies()

    def parse_implies(self) -> Expr:
        lhs = self.parse_or()
        if self.accept("==>"):
            return Binary("==>", lhs, self.parse_implies())
        return lhs

    def parse_or(self) -> Expr:
        e = self.parse_and()
        while self.accept("||"):
            e = Binary("||", e, self.parse_and())
        return e

    def parse_and(self) -> Expr:
        e = self.parse_cmp()
        while self.accept("&&"):
            e = Binary("&&", e, self.parse_cmp())
        return e

    def parse_cmp(self) -> Expr:
        e = self.parse_add()
        for op in ("==", "!=", "<=", ">=", "<", ">"):
            if self.accept(op):
                return Binary(op, e, self.parse_add())
        return e

    def parse_add(self) -> Expr:
        e = self.parse_mul()
        while True:
            if self.accept("+"):
                e = Binary("+", e, self.parse_mul())
            elif self.accept("-"):
                e = Binary("-", e, self.parse_mul())
            else:
                return e

    def parse_mul(self) -> Expr:
        e = self.parse_unary()
        while self.accept("*"):
            e = Binary("*", e, self.parse_unary())
        return e

    def parse_unary(self) -> Expr:
        if self.accept("!"):
            return Unary("!", self.parse_unary())
        if self.accept("-"):
            return Unary("-", self.parse_unary())
        return self.parse_atom()

    def parse_atom(self) -> Expr:
        t = self.peek()
        if self.accept("("):
            e = self.parse_expr()
            self.expect(")")
            return e
        if t.kind == "int":
            self.next()
            return IntLit(int(t.text))
        if self.accept("true"):
            return BoolLit(True)
        if self.accept("false"):
            return BoolLit(False)
        if t.text == "this":
            self.next()
            self.expect(".")
            t = self.expect_ident()
            return Var(t.text)
        if t.kind == "ident":
            self.next()
            return Var(t.text)
        raise self.err(f"expected an expression, found {t.text!r}")


@dataclass
class RawItem:
    guard: Optional[Expr]  # None for a plain statement
    stmt: Stmt
    pos: Pos


@dataclass
class RawMethod:
    name: str
    params: list[tuple[str, Sort, Pos]]
    items: list[RawItem]
    pos: Pos


# ---------------------------------------------------------------------------
# Resolution: renaming, sort checking, CCR splitting
# ---------------------------------------------------------------------------

def _resolve(name: str, fields: list[VarDecl], raw_methods: list[RawMethod],
             filename: str) -> Monitor:
    field_names: dict[str, VarDecl] = {}
    for f in fields:
        if f.name in field_names:
            raise ParseError(f"duplicate field {f.name!r}",
                             f.pos.line, f.pos.col, filename)
        field_names[f.name] = f

    seen_methods: set[str] = set()
    methods: list[Method] = []
    for rm in raw_methods:
        if rm.name in seen_methods:
            raise ParseError(f"duplicate method {rm.name!r}",
                             rm.pos.line, rm.pos.col, filename)
        seen_methods.add(rm.name)

        rename: dict[str, str] = {}
        params: list[VarDecl] = []
        taken = set(field_names)
        for pname, sort, ppos in rm.params:
            if pname in field_names:
                raise ParseError(
                    f"parameter {pname!r} shadows a monitor field",
                    ppos.line, ppos.col, filename)
            qual = f"{rm.name}${pname}"
            if qual in taken or pname in rename:
                raise ParseError(
                    f"duplicate local {pname!r} (renaming collision on {qual!r})",
                    ppos.line, ppos.col, filename)
            rename[pname] = qual
            taken.add(qual)
            params.append(VarDecl(qual, sort, Kind.LOCAL, None, ppos))

        env = {f.name: f.sort for f in fields}
        env.update({p.name: p.sort for p in params})

        def res_expr(e: Expr, pos: Pos) -> Expr:
            from .ast import subst
            e = subst(e, {k: Var(v) for k, v in rename.items()})
            for v in sorted(free_vars(e)):
                if v not in env:
                    raise ParseError(f"unknown identifier {v!r}",
                                     pos.line, pos.col, filename)
            _sort_check(e, env, pos, filename)
            return e

        def res_stmt(s: Stmt, pos: Pos) -> Stmt:
            from .ast import rename_stmt
            s = rename_stmt(s, rename)
            _sort_check_stmt(s, env, pos, filename)
            return s

        # split into CCRs: leading plain run -> guard-true region; plain
        # statements after a waituntil fold into the preceding region's body
        groups: list[tuple[Expr, list[Stmt], Pos]] = []
        for item in rm.items:
            if item.guard is not None:
                g = res_expr(item.guard, item.pos)
                if _expr_sort(g, env) is not Sort.BOOL:
                    raise ParseError("guard must be boolean",
                                     item.pos.line, item.pos.col, filename)
                groups.append((g, [res_stmt(item.stmt, item.pos)], item.pos))
            else:
                s = res_stmt(item.stmt, item.pos)
                if not groups:
                    groups.append((TRUE, [s], item.pos))
                else:
                    groups[-1][1].append(s)
        if not groups:
            groups.append((TRUE, [SKIP], rm.pos))

        ccr_list = tuple(
            CCR(id=f"{rm.name}.{i}", guard=g, body=seq(body), method=rm.name,
                index=i, pos=pos)
            for i, (g, body, pos) in enumerate(groups))
        methods.append(Method(rm.name, tuple(params), ccr_list, rm.pos))

    return Monitor(name, tuple(fields), tuple(methods))


def _expr_sort(e: Expr, env: dict[str, Sort]) -> Sort:
    from .ast import IntLit, BoolLit, Var, Unary, Binary, COMPARISONS
    if isinstance(e, IntLit):
        return Sort.INT
    if isinstance(e, BoolLit):
        return Sort.BOOL
    if isinstance(e, Var):
        return env[e.name]
    if isinstance(e, Unary):
        return Sort.BOOL if e.op == "!" else Sort.INT
    if isinstance(e, Binary):
        if e.op in ("&&", "||", "==>") or e.op in COMPARISONS:
            return Sort.BOOL
        return Sort.INT
    return Sort.BOOL


def _sort_check(e: Expr, env: dict[str, Sort], pos: Pos, filename: str) -> Sort:
    from .ast import IntLit, BoolLit, Var, Unary, Binary, COMPARISONS

    def fail(msg: str):
        raise ParseError(msg, pos.line, pos.col, filename)

    if isinstance(e, IntLit):
        return Sort.INT
    if isinstance(e, BoolLit):
        return Sort.BOOL
    if isinstance(e, Var):
        if e.name not in env:
            fail(f"unknown identifier {e.name!r}")
        return env[e.name]
    if isinstance(e, Unary):
        t = _sort_check(e.operand, env, pos, filename)
        want = Sort.BOOL if e.op == "!" else Sort.INT
        if t is not want:
            fail(f"operator {e.op!r} applied to {t.value}")
        return want
    if isinstance(e, Binary):
        lt = _sort_check(e.left, env, pos, filename)
        rt = _sort_check(e.right, env, pos, filename)
        if e.op in ("&&", "||", "==>"):
            if lt is not Sort.BOOL or rt is not Sort.BOOL:
                fail(f"operator {e.op!r} needs boolean operands")
            return Sort.BOOL
        if e.op in ("==", "!="):
            if lt is not rt:
                fail(f"sort mismatch in {e.op!r} comparison")
            return Sort.BOOL
        if e.op in COMPARISONS:
            if lt is not Sort.INT or rt is not Sort.INT:
                fail(f"operator {e.op!r} needs integer operands")
            return Sort.BOOL
        if lt is not Sort.INT or rt is not Sort.INT:
            fail(f"operator {e.op!r} needs integer operands")
        return Sort.INT
    fail("quantifiers are not allowed in monitor source")
    raise AssertionError


def _sort_check_stmt(s: Stmt, env: dict[str, Sort], pos: Pos, filename: str) -> None:
    from .ast import Seq
    if isinstance(s, Assign):
        if s.var not in env:
            raise ParseError(f"unknown identifier {s.var!r}",
                             pos.line, pos.col, filename)
        t = _sort_check(s.expr, env, pos, filename)
        if t is not env[s.var]:
            raise ParseError(f"sort mismatch assigning to {s.var!r}",
                             pos.line, pos.col, filename)
    elif isinstance(s, Seq):
        for x in s.stmts:
            _sort_check_stmt(x, env, pos, filename)
    elif isinstance(s, If):
        if _sort_check(s.cond, env, pos, filename) is not Sort.BOOL:
            raise ParseError("if condition must be boolean",
                             pos.line, pos.col, filename)
        _sort_check_stmt(s.then, env, pos, filename)
        _sort_check_stmt(s.els, env, pos, filename)
    elif isinstance(s, While):
        if _sort_check(s.cond, env, pos, filename) is not Sort.BOOL:
            raise ParseError("while condition must be boolean",
                             pos.line, pos.col, filename)
        if s.invariant is not None:
            if _sort_check(s.invariant, env, pos, filename) is not Sort.BOOL:
                raise ParseError("loop invariant must be boolean",
                                 pos.line, pos.col, filename)
        _sort_check_stmt(s.body, env, pos, filename)


def parse_monitor(text: str, filename: str = "<input>") -> Monitor:
    """Parse monitor source text into a validated AST."""
    return _Parser(text, filename).parse_monitor()


def parse_expression(text: str, monitor: Monitor,
                     allow_locals: bool = True,
                     filename: str = "<expr>") -> Expr:
    """Parse a standalone expression over a monitor's variables.

    Used for `--invariant` on the command line and in tests. Unqualified
    names resolve to fields first, then (if allow_locals) to any method's
    local by surface name when unambiguous.
    """
    p = _Parser(text, filename)
    e = p.parse_expr()
    if p.peek().kind != "eof":
        raise p.err("trailing input after expression")
    env: dict[str, Sort] = {f.name: f.sort for f in monitor.fields}
    rename: dict[str, Var] = {}
    if allow_locals:
        by_surface: dict[str, list[VarDecl]] = {}
        for m in monitor.methods:
            for prm in m.params:
                by_surface.setdefault(prm.name.split("$", 1)[1], []).append(prm)
        for surface, decls in by_surface.items():
            if surface in env:
                continue
            if len(decls) == 1:
                rename[surface] = Var(decls[0].name)
                env[decls[0].name] = decls[0].sort
    from .ast import subst
    e = subst(e, rename)
    for v in sorted(free_vars(e)):
        if v not in env:
            raise ParseError(f"unknown identifier {v!r}", 1, 1, filename)
    _sort_check(e, env, Pos(1, 1), filename)
    if _expr_sort(e, env) is not Sort.BOOL:
        raise ParseError("expression must be boolean", 1, 1, filename)
    return simplify(e)
