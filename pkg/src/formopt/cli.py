"""Command-line front end.

    formopt tensor   --form F --mode M --dim D --degree K [--format text|json]
    formopt optimize --form F --mode M --dim D --degree K [-O] [--out DIR]
    formopt bench    [--form F ...] [--mode M ...] [--dim D] [--degree K ...] [--mesh-n N] [--out DIR]
    formopt verify   [--form F ...] [--mode M ...] [--dim D] [--degree K ...] [--mesh-n N] [--seed S]

Exit codes: 0 success, 1 verification failure (or no benchmark case
completed), 2 usage error.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from typing import List, Optional, Sequence

from formopt import __version__
from formopt.form_tensors import FORMS, MODES, FormSpec, build_reference_tensor
from formopt.simplex_poly import SUPPORTED_DEGREES

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2

log = logging.getLogger("formopt")


def _add_selector(p: argparse.ArgumentParser, multi: bool):
    if multi:
        p.add_argument("--form", action="append", choices=FORMS, help="repeatable; default: all forms")
        p.add_argument("--mode", action="append", choices=MODES, help="repeatable; default: both modes")
        p.add_argument("--dim", type=int, choices=(2, 3), default=2)
        p.add_argument("--degree", action="append", type=int, help="repeatable; default: all supported degrees")
    else:
        p.add_argument("--form", required=True, choices=FORMS)
        p.add_argument("--mode", required=True, choices=MODES)
        p.add_argument("--dim", required=True, type=int, choices=(2, 3))
        p.add_argument("--degree", required=True, type=int)
    p.add_argument("-O", "--optimize", action="store_true", help="use the relation-optimized kernel")
    p.add_argument("--mesh-n", type=int, default=None, help="mesh subdivisions per axis")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--format", choices=("text", "json"), default="text")
    p.add_argument("--out", default=None, help="directory for output files")
    p.add_argument("--time-budget", type=float, default=600.0, help="seconds per case before it is skipped")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="formopt", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version="%(prog)s " + __version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("tensor", help="print the flattened reference tensor")
    _add_selector(p, multi=False)

    p = sub.add_parser("optimize", help="build the dependency forest and emit kernel artifacts")
    _add_selector(p, multi=False)

    p = sub.add_parser("bench", help="time naive vs optimized local kernels and global assembly")
    _add_selector(p, multi=True)
    p.add_argument("--min-reps", type=int, default=10)
    p.add_argument("--min-cpu", type=float, default=1.0, help="CPU seconds per measurement")

    p = sub.add_parser("verify", help="run oracle, program and assembly checks")
    _add_selector(p, multi=True)
    p.add_argument("--ncells", type=int, default=20, help="random cells per oracle check")
    p.add_argument("--nvec", type=int, default=100, help="random geometry vectors per program check")
    p.add_argument("--inject-fault", action="store_true", help=argparse.SUPPRESS)
    return parser


def _single_spec(parser, args) -> FormSpec:
    if args.degree not in SUPPORTED_DEGREES[args.dim]:
        parser.error("degree %d is not supported in %dD (supported: %s)" % (
            args.degree, args.dim, ", ".join(map(str, SUPPORTED_DEGREES[args.dim]))))
    return FormSpec(args.form, args.mode, args.dim, args.degree)


def _suite(parser, args) -> List[FormSpec]:
    degrees = args.degree or list(SUPPORTED_DEGREES[args.dim])
    for k in degrees:
        if k not in SUPPORTED_DEGREES[args.dim]:
            parser.error("degree %d is not supported in %dD" % (k, args.dim))
    forms = args.form or list(FORMS)
    modes = args.mode or list(MODES)
    return [FormSpec(f, m, args.dim, k) for f in forms for m in modes for k in degrees]


def _write(out_dir: str, name: str, text: str) -> str:
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, name)
    with open(path, "w") as fh:
        fh.write(text)
    return path


def cmd_tensor(parser, args) -> int:
    spec = _single_spec(parser, args)
    tensor = build_reference_tensor(spec)
    text = json.dumps(tensor.to_json(), indent=1) + "\n" if args.format == "json" else tensor.to_text()
    sys.stdout.write(text)
    if args.out:
        _write(args.out, "tensor.json" if args.format == "json" else "tensor.txt", text)
    return EXIT_OK


def cmd_optimize(parser, args) -> int:
    from formopt.progir import count_ops, emit_dot, emit_text, generate, generate_direct
    from formopt.relations import forest_cost, optimize

    spec = _single_spec(parser, args)
    tensor = build_reference_tensor(spec)
    start = time.perf_counter()
    forest = optimize(tensor)
    elapsed = time.perf_counter() - start
    counts = forest_cost(forest, tensor)
    if elapsed > args.time_budget:
        print("SKIPPED %s: optimizer took %.1f s (budget %.1f s)" % (spec.label(), elapsed, args.time_budget))
        return EXIT_OK
    program = generate(forest, tensor) if args.optimize else generate_direct(tensor)
    ops = count_ops(program)
    summary = {
        "spec": spec.to_dict(),
        "optimized_kernel": bool(args.optimize),
        "nrows": tensor.nrows,
        "ncols": tensor.ncols,
        "op_counts": counts.to_json(),
        "kernel_ops": ops.to_json(),
        "optimizer_seconds": elapsed,
    }
    out = args.out or "formopt-out"
    _write(out, "kernel.txt", emit_text(program))
    _write(out, "forest.dot", emit_dot(forest))
    _write(out, "program.json", json.dumps(program.to_json()) + "\n")
    if args.format == "json":
        print(json.dumps(summary, indent=1))
    else:
        print("case      %s" % spec.label())
        print("shape     %d x %d" % (tensor.nrows, tensor.ncols))
        print("base      %d" % counts.base)
        print("ffc       %d" % counts.ffc)
        print("ferari    %d" % counts.maps)
        print("kernel    %s: maps %d, multiplies %d, additions %d" % (
            "optimized" if args.optimize else "direct", ops.maps, ops.multiplies, ops.additions))
        print("optimizer %.3f s" % elapsed)
        print("wrote     %s/{kernel.txt,forest.dot,program.json}" % out)
    return EXIT_OK


def cmd_bench(parser, args) -> int:
    from formopt.bench import benchmark, format_report

    specs = _suite(parser, args)
    if args.mesh_n is not None and args.mesh_n < 1:
        parser.error("--mesh-n must be >= 1")

    def progress(res):
        log.info("%s %s", res.spec.label(), res.status)

    report = benchmark(specs, args.mesh_n, args.seed, args.time_budget, args.min_reps, args.min_cpu, progress)
    text = format_report(report)
    if args.format == "json":
        print(json.dumps(report, indent=1))
    else:
        sys.stdout.write(text)
    if args.out:
        _write(args.out, "report.json", json.dumps(report, indent=1) + "\n")
        _write(args.out, "report.txt", text)
    completed = sum(1 for c in report["cases"] if c["status"] == "ok")
    return EXIT_OK if completed else EXIT_FAIL


def cmd_verify(parser, args) -> int:
    from formopt.checks import verify_case

    specs = _suite(parser, args)
    results = []
    lines = ["# seed %d" % args.seed]
    for spec in specs:
        res = verify_case(spec, args.seed, ncells=args.ncells, nvec=args.nvec, mesh_n=args.mesh_n,
                          inject_fault=args.inject_fault)
        results.append(res)
        lines.append(res.line())
    npass = sum(r.passed for r in results)
    lines.append("%d/%d cases passed" % (npass, len(results)))
    text = "\n".join(lines) + "\n"
    if args.format == "json":
        payload = {"seed": args.seed, "cases": [
            {"case": r.spec.label(), "passed": r.passed, "errors": r.errors, "limits": r.limits} for r in results]}
        print(json.dumps(payload, indent=1))
    else:
        sys.stdout.write(text)
    if args.out:
        _write(args.out, "verify.txt", text)
    return EXIT_OK if npass == len(results) else EXIT_FAIL


COMMANDS = {"tensor": cmd_tensor, "optimize": cmd_optimize, "bench": cmd_bench, "verify": cmd_verify}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    return COMMANDS[args.command](parser, args)


if __name__ == "__main__":
    sys.exit(main())
