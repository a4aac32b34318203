"""SMT-LIB 2 solver over stdin/stdout, backed by the LIA decision procedure.

This is the fallback solver the compiler spawns when no external solver (z3
and friends) is available. It supports the command subset the client emits:
set-logic/set-option/set-info, declare-const, declare-fun (0-ary), assert,
push/pop, check-sat, get-model, reset, echo, exit. Assertions may contain
forall/exists (LIA); nonlinear terms answer `unknown`.

Run as `sigweaver-smt` or `python -m sigweaver.smt.server`.
"""

from __future__ import annotations

import sys
from typing import Optional

from ..ast import Expr, Sort
from . import lia
from .sexpr import SExpr, parse_all, balanced
from .smtlib import term_from_smt, sort_from_smt, symbol, unsymbol


class _Scope:
    def __init__(self):
        self.decls: dict[str, Sort] = {}
        self.assertions: list[Expr] = []


class Server:
    def __init__(self, out=None):
        self.out = out or sys.stdout
        self.scopes: list[_Scope] = [_Scope()]
        self.print_success = False
        self.last_model: Optional[dict] = None
        self.last_status: Optional[str] = None

    # -- helpers -------------------------------------------------------------

    def _decls(self) -> dict[str, Sort]:
        out: dict[str, Sort] = {}
        for s in self.scopes:
            out.update(s.decls)
        return out

    def _assertions(self) -> list[Expr]:
        out: list[Expr] = []
        for s in self.scopes:
            out.extend(s.assertions)
        return out

    def _reply(self, text: str) -> None:
        self.out.write(text + "\n")
        self.out.flush()

    def _ok(self) -> None:
        if self.print_success:
            self._reply("success")

    # -- command dispatch ----------------------------------------------------

    def handle(self, cmd: SExpr) -> bool:
        """Execute one command; returns False on (exit)."""
        try:
            return self._handle(cmd)
        except Exception as e:  # malformed input must not kill the session
            self._reply(f'(error "{type(e).__name__}: {e}")')
            return True

    def _handle(self, cmd: SExpr) -> bool:
        if not isinstance(cmd, list) or not cmd:
            raise ValueError("command must be a list")
        head = cmd[0]
        if head == "exit":
            return False
        if head in ("set-logic", "set-info"):
            self._ok()
        elif head == "set-option":
            if len(cmd) >= 3 and cmd[1] == ":print-success":
                self.print_success = cmd[2] == "true"
                if self.print_success:
                    self._reply("success")
                return True
            self._ok()
        elif head in ("declare-const", "declare-fun"):
            name = unsymbol(cmd[1])
            if head == "declare-fun":
                if cmd[2] != []:
                    raise ValueError("only 0-ary declare-fun is supported")
                sort = sort_from_smt(cmd[3])
            else:
                sort = sort_from_smt(cmd[2])
            self.scopes[-1].decls[name] = sort
            self._ok()
        elif head == "assert":
            self.scopes[-1].assertions.append(term_from_smt(cmd[1]))
            self._ok()
        elif head == "push":
            n = int(cmd[1]) if len(cmd) > 1 else 1
            for _ in range(n):
                self.scopes.append(_Scope())
            self._ok()
        elif head == "pop":
            n = int(cmd[1]) if len(cmd) > 1 else 1
            if n >= len(self.scopes):
                raise ValueError("pop past the bottom of the stack")
            del self.scopes[-n:]
            self._ok()
        elif head == "reset":
            self.scopes = [_Scope()]
            self.last_model = None
            self.last_status = None
            self._ok()
        elif head == "echo":
            self._reply(cmd[1].strip('"') if isinstance(cmd[1], str) else "")
        elif head == "check-sat":
            self._check_sat()
        elif head == "get-model":
            self._get_model()
        else:
            raise ValueError(f"unsupported command {head!r}")
        return True

    def _check_sat(self) -> None:
        decls = self._decls()
        sorts = dict(decls)
        try:
            ir = lia.mk_and(lia.from_expr(a, sorts) for a in self._assertions())
            sat, model = lia.decide(ir)
        except lia.NonLinearError:
            self.last_status = "unknown"
            self.last_model = None
            self._reply("unknown")
            return
        self.last_status = "sat" if sat else "unsat"
        self.last_model = model if sat else None
        self._reply(self.last_status)

    def _get_model(self) -> None:
        if self.last_status != "sat":
            self._reply('(error "model is not available")')
            return
        decls = self._decls()
        model = self.last_model or {}
        lines = ["("]
        for name in sorted(decls):
            sort = decls[name]
            if sort is Sort.INT:
                v = int(model.get(name, 0))
                vs = str(v) if v >= 0 else f"(- {-v})"
            else:
                b = model.get(name, False)
                vs = "true" if bool(b) else "false"
            lines.append(f"  (define-fun {symbol(name)} () {sort.value} {vs})")
        lines.append(")")
        self._reply("\n".join(lines))


def main(argv: Optional[list[str]] = None) -> int:
    server = Server()
    buf = ""
    for line in sys.stdin:
        buf += line
        if not balanced(buf):
            continue
        try:
            cmds = parse_all(buf)
        except Exception as e:
            server._reply(f'(error "parse: {e}")')
            buf = ""
            continue
        buf = ""
        for cmd in cmds:
            if not server.handle(cmd):
                return 0
    return 0


if __name__ == "__main__":
    sys.exit(main())
