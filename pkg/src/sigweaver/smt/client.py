"""Solver session: SMT-LIB 2 over a child process's stdin/stdout.

One session per compilation; each query is wrapped in push/pop so the process
stays clean. Discovery order for the solver executable:

    1. an explicit command (--solver / SolverConfig.command),
    2. the SIGWEAVER_SOLVER environment variable,
    3. `z3` on PATH (invoked as `z3 -smt2 -in`),
    4. the bundled LIA solver (`python -m sigweaver.smt.server`).

With `dump_dir` set, every query is also written as a numbered, self-contained
`.smt2` file for offline replay, and the session keeps a manifest mapping the
files to the checks that generated them.
"""

from __future__ import annotations

import os
import queue
import shlex
import shutil
import subprocess
import sys
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from ..ast import Expr, Sort, Forall, Exists
from .sexpr import balanced
from .smtlib import parse_model, query_text, symbol, to_smt

ENV_VAR = "SIGWEAVER_SOLVER"


class SolverUnavailable(Exception):
    """The solver process could not be started."""


class SolverProtocolError(Exception):
    pass


def builtin_solver_command() -> list[str]:
    return [sys.executable, "-m", "sigweaver.smt.server"]


def resolve_solver_command(spec: Optional[str] = None) -> list[str]:
    if spec:
        return shlex.split(spec)
    env = os.environ.get(ENV_VAR)
    if env:
        return shlex.split(env)
    z3 = shutil.which("z3")
    if z3:
        return [z3, "-smt2", "-in"]
    return builtin_solver_command()


@dataclass
class QueryRecord:
    index: int
    label: str
    logic: str
    result: str
    filename: Optional[str] = None


@dataclass
class SolverConfig:
    command: Optional[str] = None  # raw command string; None = discover
    timeout: float = 5.0           # seconds per query
    dump_dir: Optional[Path] = None


class SmtSession:
    """A stateful solver connection; confine to one worker at a time."""

    def __init__(self, config: Optional[SolverConfig] = None):
        self.config = config or SolverConfig()
        self.command = resolve_solver_command(self.config.command)
        self.proc: Optional[subprocess.Popen] = None
        self._lines: "queue.Queue[Optional[str]]" = queue.Queue()
        self.queries: list[QueryRecord] = []
        self._counter = 0
        if self.config.dump_dir is not None:
            Path(self.config.dump_dir).mkdir(parents=True, exist_ok=True)

    # -- process management ---------------------------------------------------

    def _spawn(self) -> None:
        try:
            self.proc = subprocess.Popen(
                self.command, stdin=subprocess.PIPE, stdout=subprocess.PIPE,
                stderr=subprocess.DEVNULL, text=True)
        except (OSError, ValueError) as e:
            self.proc = None
            raise SolverUnavailable(
                f"cannot start solver {' '.join(self.command)}: {e}") from e
        self._lines = queue.Queue()
        t = threading.Thread(target=self._pump, args=(self.proc,), daemon=True)
        t.start()
        self._send("(set-option :print-success true)")
        self._expect("success")
        self._send("(set-logic LIA)")
        self._expect("success")

    def _pump(self, proc: subprocess.Popen) -> None:
        assert proc.stdout is not None
        for line in proc.stdout:
            self._lines.put(line.rstrip("\n"))
        self._lines.put(None)

    def _ensure(self) -> None:
        if self.proc is None or self.proc.poll() is not None:
            self._spawn()

    def _send(self, text: str) -> None:
        assert self.proc is not None and self.proc.stdin is not None
        try:
            self.proc.stdin.write(text + "\n")
            self.proc.stdin.flush()
        except (BrokenPipeError, OSError) as e:
            raise SolverProtocolError(f"solver pipe closed: {e}") from e

    def _read_response(self, deadline: float) -> str:
        """Read one response: a bare word or a balanced s-expression."""
        buf = ""
        while True:
            remaining = deadline - time.monotonic()
            if remaining <= 0:
                raise TimeoutError("solver query timed out")
            try:
                line = self._lines.get(timeout=remaining)
            except queue.Empty:
                raise TimeoutError("solver query timed out") from None
            if line is None:
                raise SolverProtocolError("solver process exited")
            buf = (buf + "\n" + line) if buf else line
            if balanced(buf) and buf.strip():
                return buf.strip()

    def _expect(self, word: str) -> None:
        deadline = time.monotonic() + max(self.config.timeout, 1.0)
        resp = self._read_response(deadline)
        if resp != word:
            raise SolverProtocolError(f"expected {word!r}, got {resp!r}")

    def _kill(self) -> None:
        if self.proc is not None:
            try:
                self.proc.kill()
            except OSError:
                pass
            self.proc = None

    def close(self) -> None:
        if self.proc is not None and self.proc.poll() is None:
            try:
                self._send("(exit)")
            except SolverProtocolError:
                pass
        self._kill()

    def __enter__(self) -> "SmtSession":
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    # -- queries ---------------------------------------------------------------

    def check_sat(self, decls: dict[str, Sort], assertions: list[Expr],
                  label: str = "", timeout: Optional[float] = None,
                  want_model: bool = True) -> tuple[str, Optional[dict]]:
        """Check satisfiability of the conjunction; returns (status, model).

        status is 'sat' | 'unsat' | 'unknown'. Raises SolverUnavailable only
        when the process cannot be spawned at all.
        """
        logic = "LIA" if any(_quantified(a) for a in assertions) else "QF_LIA"
        qindex, fname = self._dump(logic, decls, assertions, label)
        self._ensure()
        t = timeout if timeout is not None else self.config.timeout
        deadline = time.monotonic() + t
        status = "unknown"
        model = None
        try:
            self._send("(push 1)")
            self._expect("success")
            for name in sorted(decls):
                self._send(f"(declare-const {symbol(name)} {decls[name].value})")
                self._expect("success")
            for a in assertions:
                self._send(f"(assert {to_smt(a)})")
                self._expect("success")
            self._send("(check-sat)")
            status = self._read_response(deadline)
            if status not in ("sat", "unsat", "unknown"):
                raise SolverProtocolError(f"unexpected check-sat answer {status!r}")
            if status == "sat" and want_model:
                self._send("(get-model)")
                model_text = self._read_response(deadline)
                try:
                    model = parse_model(model_text)
                except Exception:
                    model = None
            self._send("(pop 1)")
            self._expect("success")
        except (TimeoutError, SolverProtocolError):
            self._kill()  # next query respawns
            status, model = "unknown", None
        self.queries.append(QueryRecord(
            index=qindex, label=label, logic=logic, result=status,
            filename=fname))
        return status, model

    def dump_aux(self, logic: str, decls: dict[str, Sort],
                 assertions: list[Expr], label: str) -> Optional[str]:
        """Record a non-interactive query (e.g. a quantifier-elimination
        problem solved in-process) as a replayable .smt2 file."""
        qindex, fname = self._dump(logic, decls, assertions, label)
        self.queries.append(QueryRecord(
            index=qindex, label=label, logic=logic, result="(offline)",
            filename=fname))
        return fname

    def _next(self) -> int:
        n = self._counter
        self._counter += 1
        return n

    def _dump(self, logic: str, decls: dict[str, Sort],
              assertions: list[Expr], label: str) -> tuple[int, Optional[str]]:
        n = self._next()
        if self.config.dump_dir is None:
            return n, None
        fname = f"{n:04d}.smt2"
        path = Path(self.config.dump_dir) / fname
        path.write_text(query_text(logic, decls, assertions, comment=label))
        return n, fname


class DisabledSession(SmtSession):
    """Stands in when the solver is unavailable but the user asked to proceed;
    every query answers `unknown`."""

    def __init__(self, config: Optional[SolverConfig] = None,
                 reason: str = "solver unavailable"):
        self.config = config or SolverConfig()
        self.command = ["<disabled>"]
        self.proc = None
        self.queries = []
        self._counter = 0
        self.reason = reason
        if self.config.dump_dir is not None:
            Path(self.config.dump_dir).mkdir(parents=True, exist_ok=True)

    def check_sat(self, decls, assertions, label="", timeout=None,
                  want_model=True):
        logic = "LIA" if any(_quantified(a) for a in assertions) else "QF_LIA"
        qindex, fname = self._dump(logic, decls, assertions, label)
        self.queries.append(QueryRecord(
            index=qindex, label=label, logic=logic, result="unknown",
            filename=fname))
        return "unknown", None

    def close(self) -> None:
        pass


def _quantified(e: Expr) -> bool:
    if isinstance(e, (Forall, Exists)):
        return True
    for attr in ("operand", "left", "right", "body"):
        child = getattr(e, attr, None)
        if isinstance(child, Expr) and _quantified(child):
            return True
    return False
