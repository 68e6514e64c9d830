"""End-to-end solving: compile, assemble, integrate, decode, verify.

Every reported success is re-checked with integer arithmetic; voltages are
only used to read bits.
"""
from __future__ import annotations

import csv
import io
import itertools
import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import stats

from . import compiler as cc
from . import device as dm
from . import integrator as ig
from .assembler import AssembledSystem, assemble
from .compiler import FactorSpec, SubsetSumSpec, TrivialInstance, value_of
from .gates import GateParamTable


class AmbiguousBit(ValueError):
    """A readout node sits too close to 0 V to be read as a bit."""


# --------------------------------------------------------------------------
# readout


def decode_readout(sys: AssembledSystem, st, readout: dict | None = None,
                   eq_tol_v: float = 1e-3) -> dict[str, tuple[int, ...]]:
    """Bits per readout group, MSB first; 1 where the node voltage is positive.

    Nodes held by generators are read at their final level.
    """
    readout = sys.netlist.readout_map() if readout is None else readout
    free = {int(n): k for k, n in enumerate(sys.free_nodes)}
    fixed = {int(n): float(lv) for n, lv in zip(sys.fixed_nodes, sys.fixed_level)}
    out = {}
    for name, group in readout.items():
        bits = []
        for node in group:
            v = st.v[free[node]] if node in free else fixed[node]
            if abs(v) <= eq_tol_v:
                raise AmbiguousBit(f"node {node} of group {name!r} at {v:.3g} V")
            bits.append(1 if v > 0 else 0)
        out[name] = tuple(bits)
    return out


def _answer(problem, bits) -> tuple[int, ...]:
    if isinstance(problem, FactorSpec):
        return value_of(bits["p"]), value_of(bits["q"])
    # c_1 first in the readout map
    return tuple(int(b) for b in bits["c"])


def verify_solution(problem, bits) -> bool:
    """Integer check of decoded bits against the source problem."""
    try:
        ans = _answer(problem, bits)
    except (KeyError, ValueError):
        return False
    if isinstance(problem, FactorSpec):
        p, q = ans
        return p > 1 and q > 1 and p * q == problem.n
    if len(ans) != problem.n or not any(ans):
        return False
    return sum(c * e for c, e in zip(ans, problem.elements)) == problem.target


# --------------------------------------------------------------------------
# problems


def compile_problem(problem, fold_constants: bool = False):
    if isinstance(problem, FactorSpec):
        return cc.compile_factorization(problem)
    if isinstance(problem, SubsetSumSpec):
        return cc.compile_subset_sum(problem, fold_constants=fold_constants)
    raise TypeError(f"unknown problem type {type(problem).__name__}")


def brute_force(problem) -> list[tuple[int, ...]]:
    """All answers, by enumeration (reference oracle for small instances)."""
    if isinstance(problem, FactorSpec):
        return [(p, q) for q in range(2, 1 << problem.n_q)
                for p in range(2, 1 << problem.n_p) if p * q == problem.n]
    return [c for c in itertools.product((0, 1), repeat=problem.n)
            if any(c) and sum(a * b for a, b in zip(c, problem.elements)) == problem.target]


_SYSTEMS: dict = {}


def system_for(problem, params: dm.DeviceParams, table: GateParamTable | None = None,
               fold_constants: bool = False) -> AssembledSystem:
    """Compile and assemble, memoized per process for the default gate table."""
    key = (problem, params, fold_constants)
    if table is None and key in _SYSTEMS:
        return _SYSTEMS[key]
    sys = assemble(compile_problem(problem, fold_constants), params, table)
    if table is None:
        if len(_SYSTEMS) > 32:
            _SYSTEMS.clear()
        _SYSTEMS[key] = sys
    return sys


def seed_sequence(seed: int, count: int) -> list[int]:
    """Independent per-attempt seeds derived from one root seed."""
    children = np.random.SeedSequence(seed).spawn(count)
    return [int(c.generate_state(1, dtype=np.uint32)[0]) for c in children]


# --------------------------------------------------------------------------
# solve


@dataclass
class RunOutcome:
    status: str
    bits: dict = field(default_factory=dict)
    verified: bool = False
    answer: tuple | None = None
    steps: int = 0
    t: float | None = None          # simulated time of the final attempt
    wall_time: float = 0.0
    seed: int | None = None
    residual: float | None = None
    attempts: list = field(default_factory=list)
    message: str = ""
    trajectory: object = field(default=None, repr=False, compare=False)

    def to_dict(self) -> dict:
        traj, self.trajectory = self.trajectory, None
        try:
            d = asdict(self)
        finally:
            self.trajectory = traj
        d.pop("trajectory")
        d["bits"] = {k: "".join(map(str, v)) for k, v in self.bits.items()}
        d["answer"] = list(self.answer) if self.answer is not None else None
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


def run_once(sys: AssembledSystem, problem, opts: ig.IntegrationOpts,
             seed: int) -> tuple[ig.IntegrationResult, dict, RunOutcome]:
    """One attempt from a fresh random memristor state."""
    t0 = time.perf_counter()
    st0 = ig.initial_state(sys, seed=seed)
    if opts.method == "trapezoidal":
        res = ig.integrate_compiled(sys, st0, opts)
    else:
        res = ig.integrate(sys, st0, opts)
    out = RunOutcome(status=res.outcome, steps=res.trajectory.steps, t=res.t, seed=seed,
                     residual=res.residual, message=res.message,
                     trajectory=res.trajectory)
    bits = {}
    if res.outcome == "converged":
        try:
            bits = decode_readout(sys, res.state, eq_tol_v=opts.eq_tol_v)
        except AmbiguousBit as exc:
            out.status, out.message = "ambiguous", str(exc)
        else:
            out.bits = bits
            out.answer = _answer(problem, bits)
            out.verified = verify_solution(problem, bits)
            out.status = "solved" if out.verified else "wrong_answer"
    out.wall_time = time.perf_counter() - t0
    return res, bits, out


def _trivial_outcome(problem) -> RunOutcome | None:
    if isinstance(problem, FactorSpec) and problem.n % 2 == 0 and problem.n >= 4:
        bits = dict(p=tuple(cc.bits_of(problem.n // 2, problem.n_p)[::-1]),
                    q=tuple(cc.bits_of(2, problem.n_q)[::-1]))
        ok = problem.n // 2 < 1 << problem.n_p and verify_solution(problem, bits)
        if ok:
            return RunOutcome("solved", bits, True, (problem.n // 2, 2),
                              message="even input: factor 2 taken directly")
    return None


def solve(problem, params: dm.DeviceParams | None = None,
          opts: ig.IntegrationOpts | None = None, max_retries: int = 5,
          table: GateParamTable | None = None, fold_constants: bool = False) -> RunOutcome:
    """Retry from fresh random initial conditions until a verified answer or
    the retry budget runs out.  Seeds derive from ``opts.seed``."""
    params = params or dm.DeviceParams()
    opts = opts or ig.IntegrationOpts()
    if max_retries < 1:
        raise ValueError("max_retries must be >= 1")
    t_start = time.perf_counter()
    quick = _trivial_outcome(problem)
    if quick is not None:
        return quick
    try:
        sys = system_for(problem, params, table, fold_constants)
    except TrivialInstance as exc:
        return RunOutcome("trivial_instance", message=str(exc))
    last = None
    attempts = []
    for seed in seed_sequence(opts.seed, max_retries):
        _, _, last = run_once(sys, problem, opts, seed)
        attempts.append(dict(seed=seed, status=last.status, t=last.t, steps=last.steps))
        if last.verified:
            break
    if last.status != "solved":
        last.status = "budget_exhausted" if last.status != "fault" else "fault"
        last.verified = False
    last.attempts = attempts
    last.steps = sum(a["steps"] for a in attempts)
    last.wall_time = time.perf_counter() - t_start
    return last


# --------------------------------------------------------------------------
# Monte Carlo


@dataclass
class SuccessEstimate:
    trials: int
    successes: int
    estimate: float
    ci_low: float
    ci_high: float
    times: list = field(default_factory=list)      # simulated time per success
    records: list = field(default_factory=list)    # one dict per trial

    def to_dict(self) -> dict:
        return asdict(self)


def wilson_interval(successes: int, trials: int, level: float = 0.95) -> tuple[float, float]:
    ci = stats.binomtest(successes, trials).proportion_ci(confidence_level=level,
                                                          method="wilson")
    return float(ci.low), float(ci.high)


def _trial(args) -> dict:
    problem, params, opts, seed, fold = args
    sys = system_for(problem, params, None, fold)
    res, _, out = run_once(sys, problem, opts, seed)
    return dict(seed=seed, status=out.status, verified=out.verified, t=out.t,
                steps=out.steps, wall_time=out.wall_time, residual=out.residual,
                answer=list(out.answer) if out.answer else None,
                max_abs_i=res.trajectory.max_abs_i,
                max_overshoot_x=res.trajectory.max_overshoot_x,
                max_overshoot_s=res.trajectory.max_overshoot_s)


def run_trials(problem, params: dm.DeviceParams, opts: ig.IntegrationOpts, trials: int,
               workers: int = 1, fold_constants: bool = False) -> list[dict]:
    """Independent single-attempt runs, keyed and sorted by seed."""
    seeds = seed_sequence(opts.seed, trials)
    jobs = [(problem, params, opts, s, fold_constants) for s in seeds]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            recs = list(ex.map(_trial, jobs))
    else:
        recs = [_trial(j) for j in jobs]
    order = {s: k for k, s in enumerate(seeds)}
    return sorted(recs, key=lambda r: order[r["seed"]])


def estimate_success_probability(problem, params: dm.DeviceParams | None = None,
                                 trials: int = 20, opts: ig.IntegrationOpts | None = None,
                                 workers: int = 1) -> SuccessEstimate:
    """Fraction of seeded runs that converge to a verified answer within t_max."""
    if trials < 1:
        raise ValueError("trials must be >= 1")
    params = params or dm.DeviceParams()
    opts = opts or ig.IntegrationOpts()
    if _trivial_outcome(problem) is not None:
        return SuccessEstimate(trials, trials, 1.0, *wilson_interval(trials, trials))
    recs = run_trials(problem, params, opts, trials, workers)
    k = sum(r["verified"] for r in recs)
    lo, hi = wilson_interval(k, trials)
    return SuccessEstimate(trials, k, k / trials, lo, hi,
                           [r["t"] for r in recs if r["verified"]], recs)


# --------------------------------------------------------------------------
# scaling


@dataclass
class PowerFit:
    exponent: float
    prefactor: float
    ci_low: float
    ci_high: float
    r2: float


def fit_power_law(x, y, level: float = 0.95) -> PowerFit | None:
    """Least squares on log y = a + b log x; None with fewer than two points."""
    x, y = np.asarray(x, float), np.asarray(y, float)
    ok = (x > 0) & (y > 0) & np.isfinite(y)
    if ok.sum() < 2:
        return None
    r = stats.linregress(np.log(x[ok]), np.log(y[ok]))
    dof = int(ok.sum()) - 2
    half = stats.t.ppf(0.5 + level / 2, dof) * r.stderr if dof > 0 else math.inf
    return PowerFit(float(r.slope), float(math.exp(r.intercept)),
                    float(r.slope - half), float(r.slope + half), float(r.rvalue ** 2))


def fit_linear(x, y) -> dict:
    r = stats.linregress(np.asarray(x, float), np.asarray(y, float))
    return dict(slope=float(r.slope), intercept=float(r.intercept), r2=float(r.rvalue ** 2))


def _is_prime(k: int) -> bool:
    return k >= 2 and all(k % d for d in range(2, math.isqrt(k) + 1))


def factor_instance(n_n: int) -> FactorSpec:
    """A fixed odd semiprime with exactly n_n bits whose factors fit the
    (n_p, n_q) registers; the one with the largest smaller factor, then the
    smallest n."""
    spec0 = FactorSpec(1 << (n_n - 1), n_n)
    best = None
    for q in range(3, 1 << spec0.n_q, 2):
        if not _is_prime(q):
            continue
        for p in range(q, 1 << spec0.n_p, 2):
            n = p * q
            if n >= 1 << n_n:
                break
            if n >= 1 << (n_n - 1) and _is_prime(p):
                key = (-q, n)
                if best is None or key < best[0]:
                    best = (key, n)
    if best is None:
        raise ValueError(f"no odd semiprime instance with {n_n} bits")
    return FactorSpec(best[1], n_n)


def subset_sum_instance(precision: int, n: int = 3, seed: int = 0) -> SubsetSumSpec:
    """Distinct random elements below 2^precision; target is the sum of a
    random non-empty subset, so a solution exists."""
    rng = np.random.default_rng(seed)
    hi = 1 << precision
    elems = rng.choice(np.arange(1, hi), size=min(n, hi - 1), replace=False)
    pick = rng.integers(0, 2, size=len(elems))
    pick[rng.integers(len(elems))] = 1
    return SubsetSumSpec(tuple(int(e) for e in elems), int(np.dot(pick, elems)), precision)


@dataclass
class SweepRecord:
    size: int
    instance: str
    gates: int
    state_dim: int
    trials: int
    successes: int
    success_fraction: float | None
    median_time: float | None
    trial_records: list = field(default_factory=list)


@dataclass
class SweepReport:
    family: str
    records: list
    gate_fit: PowerFit | None
    time_fit: PowerFit | None
    linear_gate_fit: dict | None = None

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["size", "instance", "gates", "state_dim", "seed", "status",
                    "verified", "t", "steps", "wall_time"])
        for r in self.records:
            for tr in r.trial_records:
                w.writerow([r.size, r.instance, r.gates, r.state_dim, tr["seed"], tr["status"],
                            int(tr["verified"]), tr["t"], tr["steps"],
                            f"{tr['wall_time']:.6g}"])
        w.writerow([])
        w.writerow(["# summary"])
        w.writerow(["size", "instance", "gates", "state_dim", "trials", "successes",
                    "success_fraction", "median_time"])
        for r in self.records:
            w.writerow([r.size, r.instance, r.gates, r.state_dim, r.trials, r.successes,
                        "" if r.success_fraction is None else r.success_fraction,
                        "" if r.median_time is None else r.median_time])
        for name, fit in (("gates", self.gate_fit), ("time", self.time_fit)):
            if fit is not None:
                w.writerow([f"# fit {name}", "exponent", fit.exponent, "ci", fit.ci_low,
                            fit.ci_high, "r2", fit.r2])
        if self.linear_gate_fit:
            f = self.linear_gate_fit
            w.writerow(["# linear gates", "slope", f["slope"], "intercept", f["intercept"],
                        "r2", f["r2"]])
        return buf.getvalue()


def _instance_label(problem) -> str:
    if isinstance(problem, FactorSpec):
        return str(problem.n)
    return f"{','.join(map(str, problem.elements))}:{problem.target}"


def scaling_sweep(family: str, sizes, trials: int = 10,
                  opts: ig.IntegrationOpts | None = None,
                  params: dm.DeviceParams | None = None, workers: int = 1,
                  subset_n: int = 3) -> SweepReport:
    """Gate counts, state dimensions and (with trials > 0) convergence times
    per size.  ``family`` is "factor" (size = n_n) or "subset-sum"
    (size = precision p at fixed n)."""
    sizes = [int(s) for s in sizes]
    if sizes != sorted(sizes):
        raise ValueError("sizes must be ascending")
    if trials < 0:
        raise ValueError("trials must be >= 0")
    params = params or dm.DeviceParams()
    opts = opts or ig.IntegrationOpts()
    records = []
    for size in sizes:
        if family == "factor":
            problem = factor_instance(size)
        elif family == "subset-sum":
            problem = subset_sum_instance(size, subset_n, seed=opts.seed)
        else:
            raise ValueError(f"unknown family {family!r}")
        rep = cc.gate_count_report(compile_problem(problem))
        recs = run_trials(problem, params, opts, trials, workers) if trials else []
        k = sum(r["verified"] for r in recs)
        times = [r["t"] for r in recs if r["verified"]]
        records.append(SweepRecord(
            size, _instance_label(problem), rep["total"], rep["state_dim"], trials, k,
            k / trials if trials else None,
            float(np.median(times)) if times else None, recs))
    xs = [r.size for r in records]
    gate_fit = fit_power_law(xs, [r.gates for r in records])
    timed = [(r.size, r.median_time) for r in records if r.median_time is not None]
    time_fit = fit_power_law(*zip(*timed)) if len(timed) >= 2 else None
    lin = fit_linear(xs, [r.gates for r in records]) if len(xs) >= 2 else None
    return SweepReport(family, records, gate_fit, time_fit, lin)
