"""Time integration, invariant guards and equilibrium detection."""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field, asdict

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import device as dm
from .assembler import AssembledSystem, IntegrationFault, StateVector, eval_rhs

METHODS = ("euler", "rk4", "trapezoidal")
OUTCOMES = ("converged", "budget_exhausted", "fault")


@dataclass
class IntegrationOpts:
    method: str = "trapezoidal"
    dt: float = 1e-3
    t_max: float = 50.0
    record_every: int = 100
    eq_tol_v: float = 1e-3
    eq_tol_i: float = 1e-6
    eq_tol_rhs: float = 1e-2
    eq_dwell: float | None = None  # default 100 dt
    strict_currents: bool = False
    residual_blocks: str = "voltage"  # or "full"
    seed: int = 0
    record_nodes: tuple[int, ...] | None = None

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}")
        if not self.dt > 0 or not self.t_max > 0:
            raise ValueError("dt and t_max must be positive")
        if min(self.eq_tol_v, self.eq_tol_i, self.eq_tol_rhs) <= 0:
            raise ValueError("tolerances must be positive")
        if self.record_every < 1:
            raise ValueError("record_every must be >= 1")
        if self.residual_blocks not in ("voltage", "full"):
            raise ValueError("residual_blocks must be 'voltage' or 'full'")

    @property
    def dwell(self) -> float:
        return 100.0 * self.dt if self.eq_dwell is None else self.eq_dwell

    @property
    def voltage_only(self) -> bool:
        # the strict test always looks at the whole state
        return self.residual_blocks == "voltage" and not self.strict_currents


@dataclass
class Trajectory:
    times: list = field(default_factory=list)
    voltages: list = field(default_factory=list)
    node_ids: list = field(default_factory=list)
    violations: list = field(default_factory=list)
    steps: int = 0
    max_overshoot_x: float = 0.0
    max_overshoot_s: float = 0.0
    max_abs_i: float = 0.0
    clamp_events: int = 0

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t"] + [f"node_{n}" for n in self.node_ids])
        for t, row in zip(self.times, self.voltages):
            w.writerow([repr(float(t))] + [repr(float(v)) for v in row])
        return buf.getvalue()

    def violations_text(self) -> str:
        return "".join(json.dumps(v, sort_keys=True) + "\n" for v in self.violations)


@dataclass
class IntegrationResult:
    outcome: str
    t: float
    state: StateVector
    trajectory: Trajectory
    residual: float | None = None
    message: str = ""


def initial_state(sys: AssembledSystem, p: dm.DeviceParams | None = None,
                  seed: int = 0) -> StateVector:
    p = p or sys.params
    rng = np.random.default_rng(seed)
    s_max = (sys.s_bounds or dm.solve_s_bounds(p)).s_max
    return StateVector(
        v=np.zeros(sys.n_free),
        x=rng.uniform(0.0, 1.0, sys.n_M),
        i=np.zeros(sys.n_DCG),
        s=np.full(sys.n_DCG, s_max),
    )


# --------------------------------------------------------------------------
# steppers


class _Clamp:
    """Clamp x and s into their invariant boxes, recording overshoot."""

    def __init__(self, sys: AssembledSystem, traj: Trajectory | None):
        b = sys.s_bounds or dm.solve_s_bounds(sys.params)
        self.s_lo, self.s_hi = b.s_min, b.s_max
        self.traj = traj

    def __call__(self, st: StateVector) -> StateVector:
        ox = max(float(np.max(-st.x, initial=0.0)), float(np.max(st.x - 1.0, initial=0.0)))
        os_ = max(float(np.max(self.s_lo - st.s, initial=0.0)),
                  float(np.max(st.s - self.s_hi, initial=0.0)))
        if self.traj is not None:
            self.traj.max_overshoot_x = max(self.traj.max_overshoot_x, ox)
            self.traj.max_overshoot_s = max(self.traj.max_overshoot_s, os_)
            if ox > 0 or os_ > 0:
                self.traj.clamp_events += 1
        if ox > 0:
            np.clip(st.x, 0.0, 1.0, out=st.x)
        if os_ > 0:
            np.clip(st.s, self.s_lo, self.s_hi, out=st.s)
        return st


def _axpy(st: StateVector, h: float, d: StateVector) -> StateVector:
    return StateVector(st.v + h * d.v, st.x + h * d.x, st.i + h * d.i, st.s + h * d.s)


def _euler(sys, st, t, dt):
    return _axpy(st, dt, eval_rhs(sys, st, t))


def _rk4(sys, st, t, dt):
    k1 = eval_rhs(sys, st, t)
    k2 = eval_rhs(sys, _axpy(st, dt / 2, k1), t + dt / 2)
    k3 = eval_rhs(sys, _axpy(st, dt / 2, k2), t + dt / 2)
    k4 = eval_rhs(sys, _axpy(st, dt, k3), t + dt)
    return StateVector(*(a + dt / 6 * (b1 + 2 * b2 + 2 * b3 + b4) for a, b1, b2, b3, b4 in zip(
        (st.v, st.x, st.i, st.s), (k1.v, k1.x, k1.i, k1.s), (k2.v, k2.x, k2.i, k2.s),
        (k3.v, k3.x, k3.i, k3.s), (k4.v, k4.x, k4.i, k4.s))))


class SemiImplicit:
    """Linearly implicit step for the stiff parts of the system.

    * v: trapezoidal rule on the linear node equations with x and i frozen
      at the start of the step (theta = 1/2; theta = 1 is backward Euler);
    * x: exact flow under the new branch voltages (forward Euler when the
      edge window is smooth);
    * i: forward Euler using the new voltages;
    * s: backward Euler solved by Newton on the scalar cubics.

    The conductance operator K(x) is refilled in place on a fixed sparsity
    pattern every step.
    """

    DENSE_LIMIT = 200

    def __init__(self, sys: AssembledSystem, theta: float = 0.5):
        self.sys = sys
        self.theta = theta
        p = sys.params
        nf = sys.n_free
        # K(x) = sum_b g_b A[:, b] W_free[b, :]
        Wf = sys.W_free.tocoo()
        term = np.asarray(sys.A.tocsc().argmax(axis=0)).ravel()
        has_free = np.asarray(abs(sys.A).sum(axis=0)).ravel() > 0
        keep = has_free[Wf.row]
        self.k_branch = Wf.row[keep]
        self.k_row = term[self.k_branch]
        self.k_col = Wf.col[keep]
        self.k_val = Wf.data[keep]
        M0 = sys.M0.tocoo()
        rows = np.concatenate([self.k_row, M0.row])
        cols = np.concatenate([self.k_col, M0.col])
        self.dense = nf <= self.DENSE_LIMIT
        if self.dense:
            self.k_flat = self.k_row * nf + self.k_col
            self.m_flat = M0.row * nf + M0.col
        else:
            pat = sp.csc_matrix((np.ones(len(rows)), (rows, cols)), shape=(nf, nf))
            pat.sum_duplicates()
            pat.sort_indices()
            lookup = sp.csc_matrix((np.arange(pat.nnz) + 1.0, pat.indices, pat.indptr),
                                   shape=(nf, nf))
            self.pattern = pat
            self.k_slot = np.asarray(lookup[self.k_row, self.k_col]).ravel().astype(int) - 1
            self.m_slot = np.asarray(lookup[M0.row, M0.col]).ravel().astype(int) - 1
        self.m_data = M0.data
        self.g_full = np.empty(len(sys.is_mem))
        self.g_full[sys.res_rows] = 1.0 / p.R_off
        bounds = sys.s_bounds or dm.solve_s_bounds(p)
        self.s_lo, self.s_hi = bounds.s_min, bounds.s_max
        self.last_overshoot_x = np.zeros(0)

    def _matrix(self, scale_m: float, scale_k: float, g_full):
        nf = self.sys.n_free
        kv = scale_k * g_full[self.k_branch] * self.k_val
        mv = scale_m * self.m_data
        if self.dense:
            flat = np.bincount(np.concatenate([self.k_flat, self.m_flat]),
                               weights=np.concatenate([kv, mv]), minlength=nf * nf)
            return flat.reshape(nf, nf)
        data = np.bincount(np.concatenate([self.k_slot, self.m_slot]),
                           weights=np.concatenate([kv, mv]), minlength=self.pattern.nnz)
        return sp.csc_matrix((data, self.pattern.indices, self.pattern.indptr), shape=(nf, nf))

    def _kmul(self, g_full, v):
        return np.bincount(self.k_row, weights=g_full[self.k_branch] * self.k_val * v[self.k_col],
                           minlength=self.sys.n_free)

    def step(self, st: StateVector, t: float, dt: float) -> StateVector:
        sys = self.sys
        p = sys.params
        th = self.theta
        g_full = self.g_full
        g_full[sys.mem_rows] = sys.conductances(st.x)
        v = st.v
        if sys.n_free:
            c0 = sys.source_current(st.x, t)
            c1 = sys.source_current(st.x, t + dt)
            rhs = (sys.M0 @ v) / dt - (1 - th) * self._kmul(g_full, v) \
                - ((1 - th) * c0 + th * c1) + sys.S @ st.i
            if len(sys.fixed_nodes) and sys.cap_mode == "branch":
                _, d0 = sys.fixed_voltages(t)
                _, d1 = sys.fixed_voltages(t + dt)
                rhs -= p.C * (sys.Am @ (sys.Wm_fix @ ((1 - th) * d0 + th * d1)))
            mat = self._matrix(1.0 / dt, th, g_full)
            if self.dense:
                v_new = sla.solve(mat, rhs, check_finite=False, overwrite_a=True,
                                  overwrite_b=True)
            else:
                v_new = spla.splu(mat).solve(rhs)
        else:
            v_new = v
        vm = sys.pol * sys.branch_voltages(v_new, t + dt)[sys.mem_rows]
        x_new, self.last_overshoot_x = dm.memristor_step(st.x, vm, dt, p)
        vd = v_new[sys.dcg_free]
        i_new = st.i + dt * (dm.rho(st.s, p) * dm.f_dcg(vd, p)
                             - p.gamma * dm.rho(1.0 - st.s, p) * st.i)
        s_new = self._s_backward(st.s, i_new, dt)
        return StateVector(np.asarray(v_new, float), x_new, np.atleast_1d(i_new), s_new)

    def _s_backward(self, s0, i, dt):
        p = self.sys.params
        if len(s0) == 0:
            return s0.copy()
        pmin, pmax = dm.current_products(i, p)
        c = p.k_i * (pmin + pmax - 1.0)
        s = s0.copy()
        for _ in range(50):
            F = s - dt * (dm.s_cubic(s, p) + c) - s0
            dF = 1.0 - dt * dm.s_cubic_deriv(s, p)
            # dF can vanish only for large dt near the cubic's extrema
            dF = np.where(np.abs(dF) < 1e-12, 1e-12, dF)
            ds = F / dF
            s = s - ds
            if np.max(np.abs(ds)) < 1e-13 * (1 + np.max(np.abs(s))):
                break
        return s


def step(sys: AssembledSystem, st: StateVector, t: float, dt: float,
         method: str = "trapezoidal", traj: Trajectory | None = None,
         _stepper=None) -> StateVector:
    """One step followed by clamping of x and s into their boxes."""
    if method == "euler":
        new = _euler(sys, st, t, dt)
    elif method == "rk4":
        new = _rk4(sys, st, t, dt)
    elif method == "trapezoidal":
        new = (_stepper or SemiImplicit(sys)).step(st, t, dt)
    else:
        raise ValueError(f"unknown method {method!r}")
    for arr in (new.v, new.x, new.i, new.s):
        if not np.all(np.isfinite(arr)):
            raise IntegrationFault(f"non-finite state after step at t={t + dt}", st.copy())
    return _Clamp(sys, traj)(new)


# --------------------------------------------------------------------------
# equilibrium


def rhs_residual(sys: AssembledSystem, st: StateVector, t: float,
                 voltage_only: bool = False) -> float:
    """Max-norm of the derivative, with the voltage block scaled by C so that
    every block is a current or a rate of order one."""
    d = eval_rhs(sys, st, t)
    parts = [np.abs(d.v) * sys.params.C]
    if not voltage_only:
        parts += [np.abs(d.x), np.abs(d.i), np.abs(d.s) / sys.params.k_s]
    return float(max((np.max(a) for a in parts if a.size), default=0.0))


def equilibrium_conditions(sys: AssembledSystem, st: StateVector, opts: IntegrationOpts,
                           t: float = math.inf) -> bool:
    """Instantaneous check (no dwell).

    Every VCDCG node voltage within eq_tol_v of +-v_c, every VCDCG in drive
    mode with |i| below i_max, and a small residual.  With
    ``strict_currents`` the currents must also vanish (|i| <= eq_tol_i) and
    s must sit at s_max.
    """
    p = sys.params
    vd = st.v[sys.dcg_free]
    if np.any(np.abs(np.abs(vd) - p.v_c) > opts.eq_tol_v):
        return False
    if np.any(st.s <= 0.5) or np.any(np.abs(st.i) >= p.i_max):
        return False
    if opts.strict_currents:
        s_max = (sys.s_bounds or dm.solve_s_bounds(p)).s_max
        if np.any(np.abs(st.i) > opts.eq_tol_i):
            return False
        if np.any(np.abs(st.s - s_max) > opts.eq_tol_i * max(1.0, s_max)):
            return False
    return rhs_residual(sys, st, t, opts.voltage_only) <= opts.eq_tol_rhs


def detect_equilibrium(sys: AssembledSystem, st: StateVector, opts: IntegrationOpts,
                       t: float = math.inf, held_for: float | None = None) -> bool:
    """Equilibrium test; ``held_for`` is the time the conditions have already
    held continuously (None means the caller does not track dwell)."""
    if not equilibrium_conditions(sys, st, opts, t):
        return False
    return held_for is None or held_for >= opts.dwell


# --------------------------------------------------------------------------
# driver


def integrate(sys: AssembledSystem, st0: StateVector, opts: IntegrationOpts,
              check_every: int = 10) -> IntegrationResult:
    """Integrate until a dwelled equilibrium or t_max."""
    traj = Trajectory()
    if opts.record_nodes is None:
        rec_idx = np.arange(sys.n_free)
        traj.node_ids = [int(n) for n in sys.free_nodes]
    else:
        pos = {int(n): k for k, n in enumerate(sys.free_nodes)}
        rec_idx = np.array([pos[n] for n in opts.record_nodes], dtype=int)
        traj.node_ids = list(opts.record_nodes)
    stepper = SemiImplicit(sys) if opts.method == "trapezoidal" else None
    clamp = _Clamp(sys, traj)
    st = st0.copy()
    t = 0.0
    n = 0
    held_since = None
    n_max = int(math.ceil(opts.t_max / opts.dt - 1e-9))
    ramp_end = float(np.max(sys.fixed_ramp, initial=0.0))
    traj.times.append(t)
    traj.voltages.append(st.v[rec_idx].copy())
    residual = None
    outcome = "budget_exhausted"
    message = ""
    i_cap = 1.05 * sys.params.i_max
    try:
        while n < n_max:
            if opts.method == "euler":
                new = _euler(sys, st, t, opts.dt)
            elif opts.method == "rk4":
                new = _rk4(sys, st, t, opts.dt)
            else:
                new = stepper.step(st, t, opts.dt)
                over = float(np.max(stepper.last_overshoot_x, initial=0.0))
                if over > 0:
                    traj.max_overshoot_x = max(traj.max_overshoot_x, over)
                    traj.clamp_events += 1
            if not (np.all(np.isfinite(new.v)) and np.all(np.isfinite(new.i))
                    and np.all(np.isfinite(new.x)) and np.all(np.isfinite(new.s))):
                raise IntegrationFault(f"non-finite state at t={t + opts.dt:g}", st.copy())
            st = clamp(new)
            n += 1
            t = n * opts.dt
            imax = float(np.max(np.abs(st.i), initial=0.0))
            if imax > traj.max_abs_i:
                traj.max_abs_i = imax
                if imax > i_cap:
                    traj.violations.append(dict(t=t, kind="i_dcg_bound", value=imax))
            if n % opts.record_every == 0:
                traj.times.append(t)
                traj.voltages.append(st.v[rec_idx].copy())
            if n % check_every == 0 and t >= ramp_end:
                if equilibrium_conditions(sys, st, opts, t):
                    if held_since is None:
                        held_since = t
                    if t - held_since >= opts.dwell:
                        residual = rhs_residual(sys, st, t, opts.voltage_only)
                        outcome = "converged"
                        break
                else:
                    held_since = None
    except IntegrationFault as exc:
        outcome = "fault"
        message = str(exc)
    except (np.linalg.LinAlgError, RuntimeError) as exc:
        outcome = "fault"
        message = f"linear solve failed at t={t:g}: {exc}"
    traj.steps = n
    if traj.times[-1] != t:
        traj.times.append(t)
        traj.voltages.append(st.v[rec_idx].copy())
    if traj.max_overshoot_x > 0 or traj.max_overshoot_s > 0:
        traj.violations.append(dict(kind="clamp", events=traj.clamp_events,
                                    max_overshoot_x=traj.max_overshoot_x,
                                    max_overshoot_s=traj.max_overshoot_s))
    return IntegrationResult(outcome, t, st, traj, residual, message)


# --------------------------------------------------------------------------
# compiled path for the semi-implicit method


class KernelData:
    """Flat arrays describing an assembled system for the compiled loop."""

    def __init__(self, sys: AssembledSystem):
        from . import _kernels as K

        p = sys.params
        bounds = sys.s_bounds or dm.solve_s_bounds(p)
        self.P = K.pack_params(p, bounds)
        self.coeffs = np.array(dm.smoothstep_coeffs(p.r), dtype=float)
        wf = sys.W_free.tocsr()
        wx = sys.W_fix.tocsr()
        self.wf = (wf.indptr.astype(np.int64), wf.indices.astype(np.int64), wf.data.copy())
        self.wx = (wx.indptr.astype(np.int64), wx.indices.astype(np.int64), wx.data.copy())
        self.d = sys.d.copy()
        A = sys.A.tocsc()
        term = np.full(A.shape[1], -1, dtype=np.int64)
        for b in range(A.shape[1]):
            rows = A.indices[A.indptr[b]:A.indptr[b + 1]]
            if len(rows):
                term[b] = rows[0]
        self.term_node = term
        self.is_mem = sys.is_mem.copy()
        self.mem_rows = sys.mem_rows.astype(np.int64)
        self.res_rows = sys.res_rows.astype(np.int64)
        self.pol = sys.pol.copy()
        self.dcg = sys.dcg_free.astype(np.int64)
        self.M0 = sys.M0.toarray()
        if sys.cap_mode == "branch" and len(sys.fixed_nodes):
            self.E = (p.C * (sys.Am @ sys.Wm_fix)).toarray()
        else:
            self.E = np.zeros((sys.n_free, len(sys.fixed_nodes)))
        self.level = sys.fixed_level.copy()
        self.ramp = sys.fixed_ramp.copy()
        self.M0inv = np.linalg.inv(self.M0) if sys.n_free else np.zeros((0, 0))


def integrate_compiled(sys: AssembledSystem, st0: StateVector, opts: IntegrationOpts,
                       theta: float = 0.5, check_every: int = 10,
                       chunk: int = 200_000, t0: float = 0.0) -> IntegrationResult:
    """Same contract as :func:`integrate` for the trapezoidal method, run by
    the compiled kernel."""
    from . import _kernels as K

    if opts.strict_currents:
        # the kernel only implements the relaxed equilibrium test
        if t0:
            raise ValueError("strict_currents runs must start at t0 = 0")
        return integrate(sys, st0, opts, check_every)
    kd = getattr(sys, "_kernel_data", None)
    if kd is None:
        kd = KernelData(sys)
        sys._kernel_data = kd
    traj = Trajectory()
    if opts.record_nodes is None:
        rec_idx = np.arange(sys.n_free, dtype=np.int64)
        traj.node_ids = [int(n) for n in sys.free_nodes]
    else:
        pos = {int(n): k for k, n in enumerate(sys.free_nodes)}
        rec_idx = np.array([pos[n] for n in opts.record_nodes], dtype=np.int64)
        traj.node_ids = list(opts.record_nodes)
    st = st0.copy()
    traj.times.append(t0)
    traj.voltages.append(st.v[rec_idx].copy())
    n_max = int(math.ceil(opts.t_max / opts.dt - 1e-9))
    ramp_end = float(np.max(sys.fixed_ramp, initial=0.0))
    stats = np.zeros(5)
    held = -1.0
    n_done = 0
    outcome = "budget_exhausted"
    message = ""
    while n_done < n_max:
        n = min(chunk, n_max - n_done)
        cap = n // opts.record_every + 1
        rec_t = np.empty(cap)
        rec_v = np.empty((cap, len(rec_idx)))
        try:
            status, taken, n_rec, held = K.run_chunk(
                st.v, st.x, st.i, st.s, t0, opts.dt, n, theta,
                kd.P, kd.coeffs, *kd.wf, *kd.wx, kd.d, kd.term_node, kd.is_mem, kd.mem_rows,
                kd.res_rows, kd.pol, kd.dcg, kd.M0, kd.E, kd.level, kd.ramp,
                check_every, opts.eq_tol_v, opts.eq_tol_rhs, opts.dwell, ramp_end,
                opts.record_every, rec_idx, rec_t, rec_v, kd.M0inv, held, stats,
                opts.voltage_only, n_done)
        except np.linalg.LinAlgError as exc:
            outcome = "fault"
            message = f"linear solve failed at t={t0 + n_done * opts.dt:g}: {exc}"
            break
        for k in range(n_rec):
            traj.times.append(float(rec_t[k]))
            traj.voltages.append(rec_v[k].copy())
        n_done += taken
        if status == 1:
            outcome = "converged"
            break
        if status < 0:
            outcome = "fault"
            message = f"non-finite state at t={n_done * opts.dt:g}"
            break
    t = t0 + n_done * opts.dt
    traj.steps = n_done
    traj.max_overshoot_x, traj.max_overshoot_s = float(stats[0]), float(stats[1])
    traj.max_abs_i, traj.clamp_events = float(stats[2]), int(stats[3])
    if traj.times[-1] != t:
        traj.times.append(t)
        traj.voltages.append(st.v[rec_idx].copy())
    if traj.max_abs_i > 1.05 * sys.params.i_max:
        traj.violations.append(dict(kind="i_dcg_bound", value=traj.max_abs_i))
    if traj.clamp_events:
        traj.violations.append(dict(kind="clamp", events=traj.clamp_events,
                                    max_overshoot_x=traj.max_overshoot_x,
                                    max_overshoot_s=traj.max_overshoot_s))
    residual = float(stats[4]) if outcome == "converged" else None
    return IntegrationResult(outcome, t, st, traj, residual, message)
