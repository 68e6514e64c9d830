"""Command-line interface.

Exit codes: 0 solved / ok, 2 no solution within the budget, 1 error.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from . import compiler as cc
from . import device as dm
from . import integrator as ig
from . import netlist as nl
from . import runner
from .assembler import AssemblyError, assemble
from .gates import GateKind, GateParamTable, check_gate
from .util import atomic_write_text

EXIT_OK, EXIT_ERROR, EXIT_BUDGET = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on bad usage; 2 is reserved for "no solution"
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_ERROR, f"{self.prog}: error: {message}\n")


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    g = p.add_argument_group("run options")
    g.add_argument("--params", help="device parameter file (default: $SOLC_PARAMS)")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--dt", type=float)
    g.add_argument("--t-max", type=float)
    g.add_argument("--method", choices=ig.METHODS)
    g.add_argument("--out", "-o", help="output file")
    g.add_argument("--record-every", type=int)
    g.add_argument("--trials", type=int, default=10)
    g.add_argument("--retries", type=int, default=5)
    g.add_argument("--fold-constants", action="store_true",
                   help="subset-sum: wire set bits straight to the selectors")
    g.add_argument("--workers", type=int, default=1)
    g.add_argument("-v", "--verbose", action="store_true")
    return p


def _int_list(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(t) for t in text.split(",") if t.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _range(text: str) -> list[int]:
    """a:b[:step], inclusive of b."""
    try:
        parts = [int(t) for t in text.split(":")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad range {text!r}")
    if len(parts) == 1:
        return parts
    if len(parts) not in (2, 3) or (len(parts) == 3 and parts[2] < 1) or parts[1] < parts[0]:
        raise argparse.ArgumentTypeError(f"bad range {text!r}")
    step = parts[2] if len(parts) == 3 else 1
    return list(range(parts[0], parts[1] + 1, step))


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    ap = _Parser(prog="solc", description="Self-organizing logic circuit solver.")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    f = sub.add_parser("factor", parents=[common], help="factor an integer")
    f.add_argument("n", type=int)
    f.add_argument("--bits", type=int, help="n_n (default: bit length of n)")
    f.add_argument("--trajectory", help="CSV of node voltages for the final attempt")

    s = sub.add_parser("subset-sum", parents=[common], help="solve a subset-sum instance")
    s.add_argument("--set", dest="elements", type=_int_list, required=True)
    s.add_argument("--target", type=int, required=True)
    s.add_argument("--precision", type=int, help="bits per element (default: fit the set)")

    m = sub.add_parser("simulate", parents=[common], help="integrate a netlist file")
    m.add_argument("netlist")
    m.add_argument("--csv", help="trajectory CSV path (default: stdout is JSON only)")

    c = sub.add_parser("compile", parents=[common], help="write a netlist file")
    c.add_argument("problem", choices=["factor", "subset-sum", "adder3"])
    c.add_argument("n", type=int, nargs="?", help="number to factor")
    c.add_argument("--bits", type=int)
    c.add_argument("--set", dest="elements", type=_int_list)
    c.add_argument("--target", type=int)
    c.add_argument("--precision", type=int)

    w = sub.add_parser("sweep", parents=[common], help="scaling sweep (CSV)")
    w.add_argument("family", choices=["factor", "subset-sum"])
    w.add_argument("--bits", type=_range, help="factor sizes a:b[:step]")
    w.add_argument("--precision", type=_range, help="subset-sum sizes a:b[:step]")
    w.add_argument("--set-size", type=int, default=3)
    w.add_argument("--json", help="also write the report as JSON")

    sub.add_parser("check-gates", parents=[common], help="gate constraint self-test")
    return ap


# --------------------------------------------------------------------------
# configuration


def load_params(args) -> tuple[dm.DeviceParams, GateParamTable | None]:
    """Defaults, then the params file (flag or $SOLC_PARAMS)."""
    path = args.params or os.environ.get("SOLC_PARAMS")
    if not path:
        return dm.DeviceParams(), None
    params, gate = dm.load_config(path)
    table = GateParamTable.default().with_overrides(gate) if gate else None
    return params, table


def make_opts(args, **extra) -> ig.IntegrationOpts:
    kw = dict(seed=args.seed)
    for name in ("dt", "t_max", "method", "record_every"):
        val = getattr(args, name, None)
        if val is not None:
            kw[name] = val
    kw.update(extra)
    return ig.IntegrationOpts(**kw)


def _emit(args, text: str) -> None:
    if args.out:
        atomic_write_text(args.out, text)
    else:
        sys.stdout.write(text)


def _dump(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, default=str) + "\n"


# --------------------------------------------------------------------------
# commands


def _factor_spec(n: int, bits: int | None) -> cc.FactorSpec:
    if n < 4:
        raise UsageError("n must be >= 4")
    spec = cc.FactorSpec(n, bits)
    if spec.n_n < 3:
        raise UsageError(f"--bits {spec.n_n} gives n_q = {spec.n_q}; need at least 3 bits")
    return spec


def _subset_spec(elements, target, precision) -> cc.SubsetSumSpec:
    if not elements:
        raise UsageError("--set is empty")
    if precision is None:
        precision = max(max(elements).bit_length(), 1)
    return cc.SubsetSumSpec(tuple(elements), target, precision)


def _solve_and_report(args, problem, params, table) -> int:
    opts = make_opts(args)
    out = runner.solve(problem, params, opts, args.retries, table, args.fold_constants)
    _emit(args, out.to_json())
    traj_path = getattr(args, "trajectory", None)
    if traj_path and out.trajectory is not None:
        atomic_write_text(traj_path, out.trajectory.to_csv())
    if out.verified:
        return EXIT_OK
    return EXIT_ERROR if out.status == "fault" else EXIT_BUDGET


def cmd_factor(args) -> int:
    spec = _factor_spec(args.n, args.bits)
    params, table = load_params(args)
    return _solve_and_report(args, spec, params, table)


def cmd_subset_sum(args) -> int:
    spec = _subset_spec(args.elements, args.target, args.precision)
    params, table = load_params(args)
    return _solve_and_report(args, spec, params, table)


def cmd_simulate(args) -> int:
    try:
        net = nl.load(args.netlist)
    except nl.NetlistError as exc:
        raise UsageError(f"{args.netlist}: {exc}") from None
    params, table = load_params(args)
    try:
        sys_ = assemble(net, params, table)
    except AssemblyError as exc:
        raise UsageError(f"{args.netlist}: {exc}") from None
    opts = make_opts(args)
    st0 = ig.initial_state(sys_, seed=args.seed)
    if opts.method == "trapezoidal":
        res = ig.integrate_compiled(sys_, st0, opts)
    else:
        res = ig.integrate(sys_, st0, opts)
    report = dict(outcome=res.outcome, t=res.t, steps=res.trajectory.steps,
                  residual=res.residual, message=res.message,
                  max_abs_i=res.trajectory.max_abs_i, violations=res.trajectory.violations)
    if net.readout:
        try:
            bits = runner.decode_readout(sys_, res.state, eq_tol_v=opts.eq_tol_v)
            report["bits"] = {k: "".join(map(str, v)) for k, v in bits.items()}
            report["values"] = {k: cc.value_of(v) for k, v in bits.items()}
        except runner.AmbiguousBit as exc:
            report["bits"] = None
            report["decode_error"] = str(exc)
        report["advisory"] = res.outcome != "converged"
    if args.csv:
        atomic_write_text(args.csv, res.trajectory.to_csv())
    _emit(args, _dump(report))
    if res.outcome == "converged":
        return EXIT_OK
    return EXIT_BUDGET if res.outcome == "budget_exhausted" else EXIT_ERROR


def cmd_compile(args) -> int:
    if args.problem == "factor":
        if args.bits is None and args.n is None:
            raise UsageError("compile factor needs n or --bits")
        n = args.n if args.n is not None else runner.factor_instance(args.bits).n
        net = cc.compile_factorization(_factor_spec(n, args.bits))
    elif args.problem == "subset-sum":
        if args.elements is None or args.target is None:
            raise UsageError("compile subset-sum needs --set and --target")
        spec = _subset_spec(args.elements, args.target, args.precision)
        net = cc.compile_subset_sum(spec, fold_constants=args.fold_constants)
    else:
        net = cc.compile_boolean(cc.build_adder(3), metadata=dict(problem="adder", width=3))
    diag = nl.validate(net)
    if not diag.ok:
        raise UsageError("; ".join(diag.errors))
    text = nl.serialize(net)
    report = dict(gate_count=cc.gate_count_report(net), warnings=diag.warnings)
    if args.out:
        atomic_write_text(args.out, text)
        report["netlist"] = str(args.out)
        sys.stdout.write(_dump(report))
    else:
        sys.stdout.write(text)
        sys.stderr.write(_dump(report))
    return EXIT_OK


def cmd_sweep(args) -> int:
    sizes = args.bits if args.family == "factor" else args.precision
    if not sizes:
        raise UsageError("--bits (factor) or --precision (subset-sum) is required")
    if args.trials < 0:
        raise UsageError("--trials must be >= 0")
    params, _ = load_params(args)
    rep = runner.scaling_sweep(args.family, sizes, args.trials, make_opts(args), params,
                               args.workers, args.set_size)
    _emit(args, rep.to_csv())
    if args.json:
        atomic_write_text(args.json, rep.to_json())
    return EXIT_OK


def cmd_check_gates(args) -> int:
    params, table = load_params(args)
    rows = []
    counts = {True: [0, 0], False: [0, 0]}
    for kind in GateKind:
        for chk in check_gate(kind, params, table, seed=args.seed):
            counts[chk.consistent][0] += chk.passed
            counts[chk.consistent][1] += 1
            bits = "".join(map(str, chk.bits))
            rows.append(f"{kind.value:<4} {bits}  {'consistent  ' if chk.consistent else 'inconsistent'}"
                        f"  {'PASS' if chk.passed else 'FAIL'}  {chk.detail}")
    lines = ["gate bits  class         result  detail", *rows,
             f"zero-current checks (consistent): {counts[True][0]}/{counts[True][1]} pass",
             f"corrective checks (inconsistent): {counts[False][0]}/{counts[False][1]} pass"]
    _emit(args, "\n".join(lines) + "\n")
    ok = counts[True][0] == counts[True][1] and counts[False][0] == counts[False][1]
    return EXIT_OK if ok else EXIT_ERROR


COMMANDS = {
    "factor": cmd_factor,
    "subset-sum": cmd_subset_sum,
    "simulate": cmd_simulate,
    "compile": cmd_compile,
    "sweep": cmd_sweep,
    "check-gates": cmd_check_gates,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except (UsageError, cc.CompileError, dm.ParamError, ValueError, OSError) as exc:
        sys.stderr.write(f"solc {args.command}: error: {exc}\n")
        return EXIT_ERROR


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
