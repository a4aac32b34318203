"""Minimal s-expression reader/writer for the SMT-LIB 2 wire format."""

from __future__ import annotations

from typing import Union

SExpr = Union[str, list]


class SExprError(ValueError):
    pass


def tokenize(text: str) -> list[str]:
    toks: list[str] = []
    i, n = 0, len(text)
    while i < n:
        c = text[i]
        if c.isspace():
            i += 1
        elif c in "()":
            toks.append(c)
            i += 1
        elif c == ";":
            while i < n and text[i] != "\n":
                i += 1
        elif c == "|":
            j = text.find("|", i + 1)
            if j < 0:
                raise SExprError("unterminated quoted symbol")
            toks.append(text[i:j + 1])
            i = j + 1
        elif c == '"':
            j = i + 1
            while j < n and text[j] != '"':
                j += 1
            if j >= n:
                raise SExprError("unterminated string")
            toks.append(text[i:j + 1])
            i = j + 1
        else:
            j = i
            while j < n and not text[j].isspace() and text[j] not in "();":
                j += 1
            toks.append(text[i:j])
            i = j
    return toks


def parse_all(text: str) -> list[SExpr]:
    toks = tokenize(text)
    out: list[SExpr] = []
    pos = 0

    def read() -> SExpr:
        nonlocal pos
        if pos >= len(toks):
            raise SExprError("unexpected end of input")
        t = toks[pos]
        pos += 1
        if t == "(":
            items: list[SExpr] = []
            while pos < len(toks) and toks[pos] != ")":
                items.append(read())
            if pos >= len(toks):
                raise SExprError("unbalanced parenthesis")
            pos += 1
            return items
        if t == ")":
            raise SExprError("unexpected ')'")
        return t

    while pos < len(toks):
        out.append(read())
    return out


def parse_one(text: str) -> SExpr:
    exprs = parse_all(text)
    if len(exprs) != 1:
        raise SExprError(f"expected one s-expression, got {len(exprs)}")
    return exprs[0]


def to_text(e: SExpr) -> str:
    if isinstance(e, str):
        return e
    return "(" + " ".join(to_text(x) for x in e) + ")"


def balanced(text: str) -> bool:
    """True when every opening parenthesis is closed (quoted atoms respected)."""
    depth = 0
    i, n = 0, len(text)
    while i < n:
        c = text[i]
        if c == ";":
            while i < n and text[i] != "\n":
                i += 1
            continue
        if c == "|":
            j = text.find("|", i + 1)
            if j < 0:
                return False
            i = j + 1
            continue
        if c == '"':
            j = text.find('"', i + 1)
            if j < 0:
                return False
            i = j + 1
            continue
        if c == "(":
            depth += 1
        elif c == ")":
            depth -= 1
        i += 1
    return depth <= 0
