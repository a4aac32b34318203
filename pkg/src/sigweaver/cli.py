"""Command-line front end.

    sigweaver compile   FILE [--invariant EXPR | --infer] [--emit java|ir|none]
                             [--use-commutativity] [--no-rename-locals]
                             [--lazy-broadcast | --no-lazy-broadcast]
                             [--explain] [--dump-vcs DIR] [-o DIR]
    sigweaver infer-inv FILE [--dump-vcs DIR]
    sigweaver difftest  FILE... [placement flags] [--max-threads N]
                             [--max-len N] [--max-value N] [--max-traces N]
                             [--trace-log FILE]
    sigweaver dump-vcs  FILE... [--invariant EXPR | --infer] [--out DIR]
    sigweaver explain   FILE [--invariant EXPR | --infer]

Exit codes: 0 success; 1 semantic failure (equivalence counterexample or
invalid invariant); 2 usage or parse error; 3 solver unavailable (suppressed
by --allow-unknown, which proceeds with every verdict Unknown and therefore
conservative broadcast-everything placement); 4 internal or I/O error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path
from typing import Optional

from .ast import Monitor, guards, pretty_expr, simplify, TRUE
from .codegen import EmitOptions, emit, emit_ir
from .invariants import infer_monitor_invariant, seed_triples, verify_invariant
from .logic import Status, Vocabulary
from .parser import ParseError, parse_expression, parse_monitor
from .placement import (
    InvalidInvariant, PlacementOptions, PlacementResult, explain_report,
    place_signals, summary_table,
)
from .smt.client import (
    DisabledSession, SmtSession, SolverConfig, SolverUnavailable,
)
from .trace import (
    EquivalenceConfig, MonitorState, check_equivalence_bounded, run,
)

EXIT_OK = 0
EXIT_SEMANTIC = 1
EXIT_USAGE = 2
EXIT_NO_SOLVER = 3
EXIT_INTERNAL = 4


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="sigweaver",
        description="Compile implicit-signal (waituntil) monitors into "
                    "explicit-signal monitors with minimized signaling.")
    ap.add_argument("--solver", metavar="CMD",
                    help="solver command line (default: $SIGWEAVER_SOLVER, "
                         "then z3 on PATH, then the bundled LIA solver)")
    ap.add_argument("--solver-timeout", type=float, default=5.0,
                    metavar="SECONDS", help="per-query timeout (default 5)")
    ap.add_argument("--allow-unknown", action="store_true",
                    help="proceed with Unknown verdicts when the solver is "
                         "unreachable instead of exiting with code 3")
    ap.add_argument("--json", action="store_true",
                    help="machine-readable report on stdout")
    sub = ap.add_subparsers(dest="command", required=True)

    def placement_flags(p: argparse.ArgumentParser, infer_default=False):
        g = p.add_mutually_exclusive_group()
        g.add_argument("--invariant", metavar="EXPR",
                       help="use this monitor invariant (verified first)")
        g.add_argument("--infer", action="store_true",
                       help="infer the monitor invariant")
        cg = p.add_mutually_exclusive_group()
        cg.add_argument("--use-commutativity", dest="use_commutativity",
                        action="store_true", default=False,
                        help="enable the commutativity-based broadcast "
                             "refinement")
        cg.add_argument("--no-commutativity", dest="use_commutativity",
                        action="store_false",
                        help="disable the commutativity refinement (default)")
        p.add_argument("--no-rename-locals", dest="rename_locals",
                       action="store_false", default=True,
                       help="disable thread-local renaming (unsound; for "
                            "demonstration)")
        p.add_argument("--dump-vcs", metavar="DIR",
                       help="write every solver query as a numbered .smt2 "
                            "file plus an index")

    pc = sub.add_parser("compile", help="compile one monitor")
    pc.add_argument("file")
    placement_flags(pc)
    pc.add_argument("--emit", choices=["java", "ir", "none"], default="java")
    lz = pc.add_mutually_exclusive_group()
    lz.add_argument("--lazy-broadcast", dest="lazy_broadcast",
                    action="store_true", default=True,
                    help="render broadcasts as relayed single signals "
                         "(default)")
    lz.add_argument("--no-lazy-broadcast", dest="lazy_broadcast",
                    action="store_false")
    pc.add_argument("--explain", action="store_true",
                    help="print every proof obligation and verdict")
    pc.add_argument("-o", "--out-dir", default=".")

    pi = sub.add_parser("infer-inv", help="infer and print the monitor invariant")
    pi.add_argument("file")
    pi.add_argument("--dump-vcs", metavar="DIR")

    pd = sub.add_parser("difftest",
                        help="bounded differential test: source vs compiled")
    pd.add_argument("files", nargs="+")
    placement_flags(pd)
    pd.add_argument("--max-threads", type=int, default=3)
    pd.add_argument("--max-len", type=int, default=8)
    pd.add_argument("--max-value", type=int, default=3)
    pd.add_argument("--max-traces", type=int, default=1_000_000)
    pd.add_argument("--trace-log", metavar="FILE",
                    help="write per-step records of the decisive trace")

    pv = sub.add_parser("dump-vcs", help="write verification conditions and index")
    pv.add_argument("files", nargs="+")
    placement_flags(pv)
    pv.add_argument("--out", default="vcs")

    pe = sub.add_parser("explain", help="print proof obligations and decisions")
    pe.add_argument("file")
    placement_flags(pe)
    return ap


class CliFailure(Exception):
    def __init__(self, code: int, message: str):
        self.code = code
        self.message = message
        super().__init__(message)


def _load_monitor(path: str) -> Monitor:
    try:
        text = Path(path).read_text()
    except OSError as e:
        raise CliFailure(EXIT_INTERNAL, f"cannot read {path}: {e}")
    try:
        return parse_monitor(text, path)
    except ParseError as e:
        raise CliFailure(EXIT_USAGE, str(e))


def _open_session(args, dump_dir: Optional[str]) -> SmtSession:
    cfg = SolverConfig(command=args.solver, timeout=args.solver_timeout,
                       dump_dir=Path(dump_dir) if dump_dir else None)
    session = SmtSession(cfg)
    try:
        session._ensure()
    except SolverUnavailable as e:
        if args.allow_unknown:
            return DisabledSession(cfg, reason=str(e))
        raise CliFailure(EXIT_NO_SOLVER, str(e))
    return session


def _resolve_invariant(args, m: Monitor, session, vocab: Vocabulary):
    if getattr(args, "invariant", None):
        try:
            inv = parse_expression(args.invariant, m, allow_locals=False)
        except ParseError as e:
            raise CliFailure(EXIT_USAGE, f"--invariant: {e}")
        v = verify_invariant(m, inv, session, vocab)
        if v.status is Status.INVALID:
            raise CliFailure(
                EXIT_SEMANTIC,
                f"--invariant {pretty_expr(inv)!r} is not a monitor "
                f"invariant: {v}")
        if v.status is Status.UNKNOWN:
            print(f"warning: invariant not verified ({v.reason}); "
                  f"placement stays conservative", file=sys.stderr)
        return inv
    if getattr(args, "infer", False):
        theta = seed_triples(m, vocab)
        return infer_monitor_invariant(m, theta, session, vocab).rendered
    return TRUE


def _placement(args, m: Monitor, session, vocab: Vocabulary) -> PlacementResult:
    inv = _resolve_invariant(args, m, session, vocab)
    opts = PlacementOptions(
        use_commutativity=getattr(args, "use_commutativity", False),
        rename_locals=getattr(args, "rename_locals", True))
    return place_signals(m, inv, session, vocab, opts,
                         skip_invariant_check=True)


def _sigma_json(result: PlacementResult) -> dict:
    m = result.explicit.base
    order = guards(m)
    out = {}
    for cid, trips in sorted(result.explicit.sigma_map.entries.items()):
        out[cid] = [
            {"pred": pretty_expr(t.pred),
             "conditional": not t.unconditional,
             "broadcast": t.broadcast}
            for t in sorted(trips, key=lambda t: order.index(t.pred))]
    return out


def _write_vcs_index(session, result: Optional[PlacementResult],
                     out_dir: Path) -> dict:
    index = {
        "queries": [
            {"file": q.filename, "label": q.label, "logic": q.logic,
             "result": q.result}
            for q in session.queries],
        "checks": [],
    }
    if result is not None:
        for dec in result.decisions:
            for ch in dec.checks:
                files = [q.filename
                         for q in session.queries[slice(*ch.query_range)]
                         if q.filename]
                index["checks"].append({
                    "ccr": dec.ccr_id,
                    "pred": pretty_expr(dec.pred),
                    "kind": ch.kind,
                    "verdict": ch.verdict.status.value,
                    "files": files,
                })
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "index.json").write_text(json.dumps(index, indent=2) + "\n")
    return index


def cmd_compile(args) -> int:
    m = _load_monitor(args.file)
    session = _open_session(args, args.dump_vcs)
    try:
        vocab = Vocabulary(m)
        result = _placement(args, m, session, vocab)
        artifacts = []
        out_dir = Path(args.out_dir)
        if args.emit != "none":
            out_dir.mkdir(parents=True, exist_ok=True)
        if args.emit == "java":
            rendered = emit(result.explicit,
                            EmitOptions(lazy_broadcast=args.lazy_broadcast))
            path = out_dir / f"{m.name}.java.txt"
            path.write_text(rendered.text)
            artifacts.append(str(path))
        elif args.emit == "ir":
            path = out_dir / f"{m.name}.ir.sexp"
            path.write_text(emit_ir(result.explicit))
            artifacts.append(str(path))
        if args.dump_vcs:
            _write_vcs_index(session, result, Path(args.dump_vcs))
        if args.json:
            print(json.dumps({
                "monitor": m.name,
                "invariant": pretty_expr(result.invariant),
                "sigma": _sigma_json(result),
                "artifacts": artifacts,
                "queries": len(session.queries),
            }, indent=2))
        else:
            print(summary_table(result))
            for a in artifacts:
                print(f"wrote {a}")
        if args.explain:
            print(explain_report(result, session))
        return EXIT_OK
    finally:
        session.close()


def cmd_infer_inv(args) -> int:
    m = _load_monitor(args.file)
    session = _open_session(args, args.dump_vcs)
    try:
        from .smt.smtlib import to_smt
        vocab = Vocabulary(m)
        inv = infer_monitor_invariant(m, seed_triples(m, vocab), session,
                                      vocab)
        if args.json:
            print(json.dumps({
                "monitor": m.name,
                "invariant": pretty_expr(inv.rendered),
                "invariant_smt": to_smt(simplify(inv.rendered)),
                "conjuncts": [pretty_expr(c) for c in inv.conjuncts],
            }, indent=2))
        else:
            print(f"monitor invariant for {m.name}:")
            print(f"  expression: {pretty_expr(inv.rendered)}")
            print(f"  smt-lib:    {to_smt(simplify(inv.rendered))}")
        if args.dump_vcs:
            _write_vcs_index(session, None, Path(args.dump_vcs))
        return EXIT_OK
    finally:
        session.close()


def cmd_difftest(args) -> int:
    failures = 0
    reports = []
    log_lines: list[str] = []
    for path in args.files:
        m = _load_monitor(path)
        session = _open_session(args, args.dump_vcs)
        try:
            vocab = Vocabulary(m)
            result = _placement(args, m, session, vocab)
        finally:
            session.close()
        cfg = EquivalenceConfig(
            max_threads=args.max_threads, max_len=args.max_len,
            values=tuple(range(args.max_value + 1)),
            max_expansions=args.max_traces)
        eq = check_equivalence_bounded(m, result.explicit, cfg)
        report = {
            "file": path,
            "monitor": m.name,
            "passed": eq.passed,
            "complete": eq.complete,
            "violation": eq.violation,
            "configs": eq.stats.get("configs"),
            "expansions": eq.stats.get("expansions"),
            "rules": eq.stats.get("rules"),
            "counterexample": [str(e) for e in (eq.counterexample or [])],
        }
        reports.append(report)
        if not args.json:
            status = "PASS" if eq.passed else f"FAIL ({eq.violation})"
            extra = "" if eq.complete else " [trace budget exhausted]"
            print(f"{path}: {status}{extra}  "
                  f"configs={report['configs']} "
                  f"expansions={report['expansions']} rules={report['rules']}")
        if not eq.passed:
            failures += 1
            if not args.json:
                print("  counterexample trace:")
                for e in eq.counterexample:
                    print(f"    {e}")
            if args.trace_log:
                log_lines.append(f"# {path} {eq.violation}")
                for engine, target in (("implicit", m),
                                       ("explicit", result.explicit)):
                    rr = run(MonitorState.initial(m), eq.counterexample,
                             target, engine)
                    log_lines.append(f"## engine={engine} "
                                     f"feasible={rr.feasible} "
                                     f"stops_at={rr.infeasible_at}")
                    for rec in rr.records:
                        changed = ",".join(f"{k}={v}"
                                           for k, v in rec.changed_shared)
                        log_lines.append(
                            f"{rec.index}\t{rec.rule}\t{rec.event}\t"
                            f"B={sorted(rec.blocked)}\t"
                            f"N={sorted(rec.notified)}\t{changed}")
    if args.trace_log:
        Path(args.trace_log).write_text(
            "\n".join(log_lines) + ("\n" if log_lines else ""))
    if args.json:
        print(json.dumps(reports, indent=2))
    return EXIT_SEMANTIC if failures else EXIT_OK


def cmd_dump_vcs(args) -> int:
    out = Path(args.out)
    for path in args.files:
        m = _load_monitor(path)
        target = out / m.name if len(args.files) > 1 else out
        args.dump_vcs = str(target)
        session = _open_session(args, str(target))
        try:
            vocab = Vocabulary(m)
            result = _placement(args, m, session, vocab)
            index = _write_vcs_index(session, result, target)
            if args.json:
                print(json.dumps({"file": path, "out": str(target),
                                  "queries": len(index["queries"]),
                                  "checks": len(index["checks"])}))
            else:
                print(f"{path}: wrote {len(index['queries'])} queries, "
                      f"{len(index['checks'])} checks to {target}/")
        finally:
            session.close()
    return EXIT_OK


def cmd_explain(args) -> int:
    m = _load_monitor(args.file)
    session = _open_session(args, args.dump_vcs)
    try:
        vocab = Vocabulary(m)
        result = _placement(args, m, session, vocab)
        print(explain_report(result, session))
        return EXIT_OK
    finally:
        session.close()


def main(argv: Optional[list[str]] = None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as e:
        return EXIT_USAGE if e.code not in (0, None) else EXIT_OK
    handlers = {
        "compile": cmd_compile,
        "infer-inv": cmd_infer_inv,
        "difftest": cmd_difftest,
        "dump-vcs": cmd_dump_vcs,
        "explain": cmd_explain,
    }
    try:
        return handlers[args.command](args)
    except CliFailure as e:
        print(e.message, file=sys.stderr)
        return e.code
    except InvalidInvariant as e:
        print(str(e), file=sys.stderr)
        return EXIT_SEMANTIC
    except AssertionError as e:
        print(f"internal soundness self-check failed: {e}", file=sys.stderr)
        return EXIT_INTERNAL
    except OSError as e:
        print(f"i/o error: {e}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
