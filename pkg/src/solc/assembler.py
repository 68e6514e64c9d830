"""Assemble a netlist into the node-voltage ODE system.

State layout: ``y = [v (n_free), x (n_M), i (n_DCG), s (n_DCG)]``.

Every gate terminal has five branches; branch ``b`` of terminal ``t`` of
gate ``g`` is row ``15 g + 5 t + b`` of the branch matrix ``W``, so that
``W @ v_all - d`` gives ``v_t - L_b`` for every branch.  Memristor ``m``
(``b < 4``) is ``x[12 g + 4 t + b]`` and sees ``v_M = pol * (v_t - L_b)``.

KCL at a free node, with capacitance ``C`` across every memristor branch:

    M0 dv/dt = -A (G (W v - d)) + S i - C A_m W_m,fix dv_fix/dt

``i`` is the current drawn from the node by its VCDCG, so ``S`` holds -1.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import device as dm
from .gates import DEFAULT_TABLE, MEMRISTOR_POLARITY, GateParamTable
from .netlist import Netlist

CAP_MODES = ("branch", "node")


class AssemblyError(ValueError):
    pass


class IntegrationFault(RuntimeError):
    def __init__(self, message: str, snapshot=None):
        super().__init__(message)
        self.snapshot = snapshot


@dataclass
class StateVector:
    v: np.ndarray
    x: np.ndarray
    i: np.ndarray
    s: np.ndarray

    def flat(self) -> np.ndarray:
        return np.concatenate([self.v, self.x, self.i, self.s])

    def copy(self) -> "StateVector":
        return StateVector(self.v.copy(), self.x.copy(), self.i.copy(), self.s.copy())


@dataclass
class AssembledSystem:
    netlist: Netlist
    params: dm.DeviceParams
    table: GateParamTable
    cap_mode: str
    node_index: dict          # node id -> column of W
    free_nodes: np.ndarray    # node ids, in state order
    fixed_nodes: np.ndarray
    fixed_level: np.ndarray   # volts (level * v_c)
    fixed_ramp: np.ndarray
    W: sp.csr_matrix          # n_branch x n_nodes
    d: np.ndarray
    A: sp.csr_matrix          # n_free x n_branch
    S: sp.csr_matrix          # n_free x n_DCG
    M0: sp.csc_matrix
    is_mem: np.ndarray        # bool per branch
    mem_rows: np.ndarray      # branch row of each memristor
    res_rows: np.ndarray
    pol: np.ndarray           # per memristor
    dcg_free: np.ndarray      # free-state index of each VCDCG node
    branch_map: list = field(repr=False, default_factory=list)  # branch -> (gate, terminal, slot)
    s_bounds: dm.SBounds | None = None
    _lu: object = field(default=None, repr=False)

    # derived blocks
    def __post_init__(self):
        free_cols = [self.node_index[n] for n in self.free_nodes]
        fix_cols = [self.node_index[n] for n in self.fixed_nodes]
        self.W_free = self.W[:, free_cols].tocsr()
        self.W_fix = self.W[:, fix_cols].tocsr()
        self.Wm_free = self.W_free[self.mem_rows]
        self.Wm_fix = self.W_fix[self.mem_rows]
        self.Am = self.A[:, self.mem_rows].tocsr()
        self.Ar = self.A[:, self.res_rows].tocsr()
        self.Wr_free = self.W_free[self.res_rows]
        self.Wr_fix = self.W_fix[self.res_rows]
        # constant resistor part of the conductance operator
        self.K_res = (self.Ar @ self.Wr_free / self.params.R_off).tocsr()
        # term-to-node gather for the conductance operator sum over memristors
        self.mem_node = np.asarray(self.Am.argmax(axis=0)).ravel()

    @property
    def n_free(self) -> int:
        return len(self.free_nodes)

    @property
    def n_M(self) -> int:
        return len(self.mem_rows)

    @property
    def n_R(self) -> int:
        return len(self.res_rows)

    @property
    def n_DCG(self) -> int:
        return len(self.dcg_free)

    @property
    def dim(self) -> int:
        return self.n_free + self.n_M + 2 * self.n_DCG

    @property
    def slices(self):
        a = self.n_free
        b = a + self.n_M
        c = b + self.n_DCG
        return slice(0, a), slice(a, b), slice(b, c), slice(c, c + self.n_DCG)

    def split(self, y) -> StateVector:
        sv, sx, si, ss = self.slices
        y = np.asarray(y, dtype=float)
        return StateVector(y[sv], y[sx], y[si], y[ss])

    def m0_solve(self, rhs):
        if self._lu is None:
            self._lu = spla.splu(self.M0)
        return self._lu.solve(np.asarray(rhs, dtype=float))

    # generator schedule ----------------------------------------------------
    def fixed_voltages(self, t: float):
        """(v_fix(t), dv_fix/dt) with a C^r smooth ramp."""
        ramp = self.fixed_ramp
        with np.errstate(divide="ignore", invalid="ignore"):
            u = np.where(ramp > 0, t / np.where(ramp > 0, ramp, 1.0), 1.0)
        r = self.params.r
        val = self.fixed_level * dm.smoothstep_eval(r, u)
        der = np.where(ramp > 0,
                       self.fixed_level * dm.smoothstep_deriv(r, u)
                       / np.where(ramp > 0, ramp, 1.0), 0.0)
        return np.atleast_1d(val).astype(float), np.atleast_1d(der).astype(float)

    def branch_voltages(self, v, t: float) -> np.ndarray:
        vf, _ = self.fixed_voltages(t)
        return self.W_free @ v + self.W_fix @ vf - self.d

    def memristor_voltages(self, v, t: float) -> np.ndarray:
        return self.pol * self.branch_voltages(v, t)[self.mem_rows]

    def conductances(self, x) -> np.ndarray:
        return 1.0 / (self.params.R_on + self.params.R_1 * np.asarray(x))

    def conductance_operator(self, x) -> sp.csr_matrix:
        """K(x) = A diag(g) W_free, so that the branch currents are K v + const."""
        g = np.zeros(len(self.is_mem))
        g[self.mem_rows] = self.conductances(x)
        g[self.res_rows] = 1.0 / self.params.R_off
        return (self.A @ sp.diags(g) @ self.W_free).tocsr()

    def source_current(self, x, t: float) -> np.ndarray:
        """Branch currents leaving each free node when v_free = 0."""
        vf, _ = self.fixed_voltages(t)
        g = np.zeros(len(self.is_mem))
        g[self.mem_rows] = self.conductances(x)
        g[self.res_rows] = 1.0 / self.params.R_off
        return self.A @ (g * (self.W_fix @ vf - self.d))


def assemble(net: Netlist, p: dm.DeviceParams, table: GateParamTable | None = None,
             cap_mode: str = "branch") -> AssembledSystem:
    if cap_mode not in CAP_MODES:
        raise AssemblyError(f"cap_mode must be one of {CAP_MODES}")
    table = table or DEFAULT_TABLE
    node_ids = [n.id for n in net.nodes]
    node_index = {nid: k for k, nid in enumerate(node_ids)}
    gens = {g.node: g for g in net.generators}
    free_nodes = np.array([n for n in node_ids if n not in gens], dtype=int)
    fixed_nodes = np.array([n for n in node_ids if n in gens], dtype=int)
    free_index = {n: k for k, n in enumerate(free_nodes)}

    rows, cols, vals = [], [], []
    d = []
    a_rows, a_cols = [], []
    is_mem = []
    pol = []
    branch_map = []
    br = 0
    for gi, gate in enumerate(net.gates):
        coeffs = table[gate.kind]
        terms = gate.terminals
        for ti, node in enumerate(terms):
            for bi in range(5):
                a = coeffs[ti, bi]
                acc = {node_index[node]: 1.0}
                for k in range(3):
                    if a[k]:
                        col = node_index[terms[k]]
                        acc[col] = acc.get(col, 0.0) - a[k]
                for col, val in acc.items():
                    if val:
                        rows.append(br)
                        cols.append(col)
                        vals.append(val)
                d.append(a[3] * p.v_c)
                if node in free_index:
                    a_rows.append(free_index[node])
                    a_cols.append(br)
                is_mem.append(bi < 4)
                if bi < 4:
                    pol.append(MEMRISTOR_POLARITY[bi])
                branch_map.append((gi, ti, bi))
                br += 1
    n_br = br
    W = sp.csr_matrix((vals, (rows, cols)), shape=(n_br, len(node_ids)))
    A = sp.csr_matrix((np.ones(len(a_rows)), (a_rows, a_cols)), shape=(len(free_nodes), n_br))
    is_mem = np.array(is_mem, dtype=bool)
    mem_rows = np.flatnonzero(is_mem)
    res_rows = np.flatnonzero(~is_mem)

    dcg_free = np.array([free_index[n] for n in net.vcdcg_nodes if n in free_index], dtype=int)
    S = sp.csr_matrix((-np.ones(len(dcg_free)), (dcg_free, np.arange(len(dcg_free)))),
                      shape=(len(free_nodes), len(dcg_free)))

    free_cols = [node_index[n] for n in free_nodes]
    if cap_mode == "branch":
        M0 = (p.C * A[:, mem_rows] @ W[mem_rows][:, free_cols]).tocsc()
    else:
        M0 = (p.C * sp.identity(len(free_nodes), format="csc"))
    M0.eliminate_zeros()
    _check_nonsingular(M0, free_nodes)

    levels = np.array([gens[n].level * p.v_c for n in fixed_nodes], dtype=float)
    ramps = np.array([gens[n].ramp for n in fixed_nodes], dtype=float)
    try:
        bounds = dm.solve_s_bounds(p)
    except (ValueError, dm.ParamError):
        bounds = None
    return AssembledSystem(
        netlist=net, params=p, table=table, cap_mode=cap_mode, node_index=node_index,
        free_nodes=free_nodes, fixed_nodes=fixed_nodes, fixed_level=levels,
        fixed_ramp=ramps, W=W, d=np.array(d, dtype=float), A=A, S=S, M0=M0,
        is_mem=is_mem, mem_rows=mem_rows, res_rows=res_rows,
        pol=np.array(pol, dtype=float), dcg_free=dcg_free, branch_map=branch_map,
        s_bounds=bounds)


def _check_nonsingular(M0: sp.csc_matrix, free_nodes) -> None:
    n = M0.shape[0]
    if n == 0:
        return
    empty = np.flatnonzero(np.diff(M0.tocsr().indptr) == 0)
    if len(empty):
        raise AssemblyError(f"degenerate netlist: no capacitive path at node(s) "
                            f"{free_nodes[empty].tolist()}")
    try:
        lu = spla.splu(M0)
    except RuntimeError:
        lu = None
    diag = np.abs(lu.U.diagonal()) if lu is not None else np.zeros(n)
    scale = abs(M0).max()
    bad = diag <= 1e-12 * scale
    if np.any(bad):
        # null-space support names the culprits
        dense = M0.toarray()
        _, sv, vt = np.linalg.svd(dense)
        null = vt[-1]
        culprits = free_nodes[np.abs(null) > 1e-6 * np.abs(null).max()]
        raise AssemblyError(f"degenerate netlist: singular mass matrix, culpable node set "
                            f"{culprits.tolist()}")


# --------------------------------------------------------------------------
# right-hand side


def eval_rhs(sys: AssembledSystem, st: StateVector, t: float) -> StateVector:
    p = sys.params
    v, x, i, s = st.v, st.x, st.i, st.s
    vf, dvf = sys.fixed_voltages(t)
    vb = sys.W_free @ v + sys.W_fix @ vf - sys.d
    g = sys.conductances(x)
    cur = np.empty_like(vb)
    cur[sys.mem_rows] = g * vb[sys.mem_rows]
    cur[sys.res_rows] = vb[sys.res_rows] / p.R_off
    rhs = -(sys.A @ cur) + sys.S @ i
    if len(dvf):
        if sys.cap_mode == "branch":
            rhs -= p.C * (sys.Am @ (sys.Wm_fix @ dvf))
    dv = sys.m0_solve(rhs) if sys.n_free else np.zeros(0)
    vm = sys.pol * vb[sys.mem_rows]
    dx = dm.memristor_rate(x, vm, p)
    vd = v[sys.dcg_free]
    di = dm.rho(s, p) * dm.f_dcg(vd, p) - p.gamma * dm.rho(1.0 - s, p) * i
    ds = dm.f_s(i, s, p)
    out = StateVector(np.asarray(dv, float), np.atleast_1d(dx), np.atleast_1d(di),
                      np.atleast_1d(ds))
    if not all(np.all(np.isfinite(a)) for a in (out.v, out.x, out.i, out.s)):
        raise IntegrationFault(f"non-finite derivative at t={t}", st.copy())
    return out


def eval_rhs_flat(sys: AssembledSystem, y, t: float) -> np.ndarray:
    return eval_rhs(sys, sys.split(y), t).flat()


def eval_jacobian(sys: AssembledSystem, st: StateVector, t: float = math.inf) -> sp.csr_matrix:
    """Analytic Jacobian of :func:`eval_rhs` with respect to the flat state.

    Ideal steps contribute zero derivative (one-sided in the current regime).
    The v-rows are M0^{-1} times sparse blocks; they are formed with dense
    solves and sparsified, which is fine at the sizes where Jacobians are used.
    """
    p = sys.params
    v, x, i, s = st.v, st.x, st.i, st.s
    nf, nm, nd = sys.n_free, sys.n_M, sys.n_DCG
    vf, _ = sys.fixed_voltages(t)
    vb = sys.W_free @ v + sys.W_fix @ vf - sys.d
    vbm = vb[sys.mem_rows]
    g = sys.conductances(x)
    dg = dm.conductance_deriv(x, p)

    # v rows
    K = sys.conductance_operator(x)
    B_x = sys.Am @ sp.diags(dg * vbm)
    blocks_v = sp.hstack([-K, -B_x, sys.S, sp.csr_matrix((nf, nd))]).tocsc()
    if nf:
        Jv = sp.csr_matrix(sys.m0_solve(blocks_v.toarray()))
    else:
        Jv = sp.csr_matrix((0, sys.dim))

    # x rows: dx = -alpha h(x, vm) g(x) vm,  vm = pol * (Wm v + ...)
    vm = sys.pol * vbm
    h = np.asarray(dm.window_h(x, vm, p), dtype=float)
    hx, hv = dm.window_h_partials(x, vm, p)
    dxdx = -p.alpha * (hx * g * vm + h * dg * vm)
    dxdvm = -p.alpha * (hv * g * vm + h * g)
    Jx_v = sp.diags(dxdvm * sys.pol) @ sys.Wm_free
    Jx = sp.hstack([Jx_v, sp.diags(dxdx), sp.csr_matrix((nm, 2 * nd))])

    # i rows
    vd = v[sys.dcg_free]
    r_s = dm.rho(s, p)
    r_1s = dm.rho(1.0 - s, p)
    Ji_v = sp.csr_matrix((r_s * dm.f_dcg_deriv(vd, p), (np.arange(nd), sys.dcg_free)),
                         shape=(nd, nf))
    Ji_s = dm.rho_deriv(s, p) * dm.f_dcg(vd, p) + p.gamma * dm.rho_deriv(1.0 - s, p) * i
    Ji = sp.hstack([Ji_v, sp.csr_matrix((nd, nm)), sp.diags(-p.gamma * r_1s * np.ones(nd)),
                    sp.diags(Ji_s * np.ones(nd))])

    # s rows
    Js_i = _products_grad(i, p) * p.k_i
    Js = sp.hstack([sp.csr_matrix((nd, nf + nm)),
                    sp.csr_matrix(np.ones((nd, 1)) * Js_i[None, :]) if nd else
                    sp.csr_matrix((0, 0)),
                    sp.diags(dm.s_cubic_deriv(s, p) * np.ones(nd))])
    return sp.vstack([Jv, Jx, Ji, Js]).tocsr()


def _products_grad(i, p: dm.DeviceParams) -> np.ndarray:
    """Gradient of P_min + P_max with respect to each current."""
    i = np.asarray(i, dtype=float)
    out = np.zeros_like(i)
    for bound in (p.i_min, p.i_max):
        arg = bound ** 2 - i ** 2
        f = np.atleast_1d(dm.step_eval(arg, p.delta_i, p.r))
        fd = np.atleast_1d(dm.step_deriv(arg, p.delta_i, p.r))
        for j in range(len(i)):
            others = np.prod(np.delete(f, j))
            out[j] += fd[j] * (-2.0 * i[j]) * others
    return out


def linear_eigen_check(sys: AssembledSystem, x, max_dim: int = 2000) -> float:
    """Spectral abscissa of the v-subsystem at frozen x with VCDCGs off."""
    if sys.n_free > max_dim:
        raise AssemblyError(f"linear_eigen_check limited to {max_dim} free nodes")
    if sys.n_free == 0:
        return -math.inf
    K = sys.conductance_operator(np.asarray(x, dtype=float)).toarray()
    L = -sys.m0_solve(K)
    return float(np.max(np.linalg.eigvals(L).real))


# --------------------------------------------------------------------------
# memristor-voltage formulation (reference form for the coordinate change)


def vm_formulation_rhs(sys: AssembledSystem, vb, st: StateVector, t: float) -> np.ndarray:
    """d/dt of all branch voltages written directly in branch coordinates.

    With ``P = W_free M0^{-1}``, branch voltages evolve as
    ``d(vb)/dt = P (-A (D[g] vb_m + vb_r / R_off) + S i - C A_m W_m,fix dv_fix)
    + W_fix dv_fix``, a linear form in ``v_M``.  Used to certify the
    node-voltage coordinates.
    """
    p = sys.params
    _, dvf = sys.fixed_voltages(t)
    g = sys.conductances(st.x)
    cur = np.empty_like(vb)
    cur[sys.mem_rows] = g * vb[sys.mem_rows]
    cur[sys.res_rows] = vb[sys.res_rows] / p.R_off
    rhs = -(sys.A @ cur) + sys.S @ st.i
    if len(dvf) and sys.cap_mode == "branch":
        rhs -= p.C * (sys.Am @ (sys.Wm_fix @ dvf))
    return sys.W_free @ sys.m0_solve(rhs) + sys.W_fix @ dvf


def rhs_bound(sys: AssembledSystem) -> float:
    """Crude bound on |eval_rhs| components over the invariant box
    (|v| <= v_sat, x in [0,1], |i| <= i_max, s in [s_min, s_max])."""
    p = sys.params
    vmax = max(p.v_saturation, p.v_c) * 2
    w = float(abs(sys.W).sum(axis=1).max()) if sys.W.nnz else 0.0
    vb_max = w * vmax + float(np.abs(sys.d).max(initial=0.0))
    # v rows: |M0^{-1}| * (currents)
    node_branches = float(abs(sys.A).sum(axis=1).max()) if sys.A.nnz else 0.0
    cur = node_branches * vb_max / p.R_on + p.i_max + p.C * node_branches * w * 2
    if sys.n_free:
        inv = np.abs(sys.m0_solve(np.eye(sys.n_free))).sum(axis=1).max()
    else:
        inv = 0.0
    bounds = sys.s_bounds or dm.solve_s_bounds(p)
    smax = max(abs(bounds.s_max), abs(bounds.s_min))
    return float(max(inv * cur,
                     p.alpha * vb_max / p.R_on ** 2 * p.R_on,
                     dm.f_dcg_bound(p) + p.gamma * p.i_max,
                     p.k_s * (smax * (smax + 1) * (2 * smax + 1)) + 2 * p.k_i))


def dump_matrices(sys: AssembledSystem) -> str:
    """Matrix-market style coordinate dump of W, d, A, S and the index maps."""
    out = []

    def emit(name, M):
        M = sp.coo_matrix(M)
        out.append(f"%%MatrixMarket matrix coordinate real general")
        out.append(f"% {name}")
        out.append(f"{M.shape[0]} {M.shape[1]} {M.nnz}")
        for r, c, v in zip(M.row, M.col, M.data):
            out.append(f"{r + 1} {c + 1} {v:.17g}")

    emit("W", sys.W)
    emit("A", sys.A)
    emit("S", sys.S)
    emit("d", sp.csr_matrix(sys.d.reshape(-1, 1)))
    out.append("% node_index (node_id column)")
    out += [f"{k} {v}" for k, v in sys.node_index.items()]
    out.append("% free_nodes")
    out.append(" ".join(map(str, sys.free_nodes)))
    out.append("% branch_map (branch gate terminal slot)")
    out += [f"{b} {g} {t} {s}" for b, (g, t, s) in enumerate(sys.branch_map)]
    out.append("% vcdcg_free")
    out.append(" ".join(map(str, sys.dcg_free)))
    return "\n".join(out) + "\n"
