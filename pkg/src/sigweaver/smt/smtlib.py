"""Expression trees <-> SMT-LIB 2 text."""

from __future__ import annotations

from typing import Optional

from ..ast import (
    Expr, IntLit, BoolLit, Var, Unary, Binary, Forall, Exists, Sort,
)
from .sexpr import SExpr, parse_one

_OPS = {"&&": "and", "||": "or", "==>": "=>", "==": "=", "!=": "distinct",
        "<": "<", "<=": "<=", ">": ">", ">=": ">=",
        "+": "+", "-": "-", "*": "*"}


def symbol(name: str) -> str:
    """Quote a symbol when it is not a simple SMT-LIB symbol."""
    simple = all(c.isalnum() or c in "~!@$%^&*_-+=<>.?/" for c in name)
    if simple and name and not name[0].isdigit():
        return name
    return f"|{name}|"


def unsymbol(tok: str) -> str:
    if tok.startswith("|") and tok.endswith("|"):
        return tok[1:-1]
    return tok


def to_smt(e: Expr) -> str:
    if isinstance(e, IntLit):
        return str(e.value) if e.value >= 0 else f"(- {-e.value})"
    if isinstance(e, BoolLit):
        return "true" if e.value else "false"
    if isinstance(e, Var):
        return symbol(e.name)
    if isinstance(e, Unary):
        op = "not" if e.op == "!" else "-"
        return f"({op} {to_smt(e.operand)})"
    if isinstance(e, Binary):
        return f"({_OPS[e.op]} {to_smt(e.left)} {to_smt(e.right)})"
    if isinstance(e, (Forall, Exists)):
        q = "forall" if isinstance(e, Forall) else "exists"
        binds = " ".join(f"({symbol(n)} {s.value})" for n, s in e.vars)
        return f"({q} ({binds}) {to_smt(e.body)})"
    raise TypeError(f"unexpected expression node {e!r}")


def sort_from_smt(s: SExpr) -> Sort:
    if s == "Int":
        return Sort.INT
    if s == "Bool":
        return Sort.BOOL
    raise ValueError(f"unsupported sort {s!r}")


def term_from_smt(s: SExpr) -> Expr:
    """Parse a term of the emitted subset back into an expression tree."""
    if isinstance(s, str):
        if s == "true":
            return BoolLit(True)
        if s == "false":
            return BoolLit(False)
        if s.lstrip("-").isdigit():
            return IntLit(int(s))
        return Var(unsymbol(s))
    if not s:
        raise ValueError("empty term")
    head = s[0]
    if head == "-" and len(s) == 2:
        return Unary("-", term_from_smt(s[1]))
    if head == "not":
        return Unary("!", term_from_smt(s[1]))
    if head in ("forall", "exists"):
        binds = tuple((unsymbol(b[0]), sort_from_smt(b[1])) for b in s[1])
        body = term_from_smt(s[2])
        return (Forall if head == "forall" else Exists)(binds, body)
    rev = {"and": "&&", "or": "||", "=>": "==>", "=": "==", "distinct": "!=",
           "<": "<", "<=": "<=", ">": ">", ">=": ">=",
           "+": "+", "-": "-", "*": "*"}
    if isinstance(head, str) and head in rev:
        args = [term_from_smt(a) for a in s[1:]]
        out = args[0]
        for a in args[1:]:
            out = Binary(rev[head], out, a)
        return out
    raise ValueError(f"unsupported term {s!r}")


def value_from_smt(s: SExpr):
    if isinstance(s, str):
        if s == "true":
            return True
        if s == "false":
            return False
        if s.lstrip("-").isdigit():
            return int(s)
    if isinstance(s, list) and len(s) == 2 and s[0] == "-":
        return -value_from_smt(s[1])
    raise ValueError(f"unsupported model value {s!r}")


def parse_model(text: str) -> dict:
    """Parse `(get-model)` output (with or without a leading `model` tag)."""
    tree = parse_one(text)
    if isinstance(tree, list) and tree and tree[0] == "model":
        entries = tree[1:]
    else:
        entries = tree if isinstance(tree, list) else []
    model: dict = {}
    for entry in entries:
        if (isinstance(entry, list) and len(entry) >= 5
                and entry[0] == "define-fun" and entry[2] == []):
            model[unsymbol(entry[1])] = value_from_smt(entry[4])
    return model


def query_text(logic: str, decls: dict[str, Sort], assertions: list[Expr],
               comment: Optional[str] = None, get_model: bool = False) -> str:
    lines = []
    if comment:
        for ln in comment.splitlines():
            lines.append(f"; {ln}")
    lines.append(f"(set-logic {logic})")
    for name in sorted(decls):
        lines.append(f"(declare-const {symbol(name)} {decls[name].value})")
    for a in assertions:
        lines.append(f"(assert {to_smt(a)})")
    lines.append("(check-sat)")
    if get_model:
        lines.append("(get-model)")
    return "\n".join(lines) + "\n"
