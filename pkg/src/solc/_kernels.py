"""Compiled inner loop of the semi-implicit integrator.

The device functions here mirror :mod:`solc.device` for scalars; the test
suite checks them against the numpy versions.
"""
from __future__ import annotations

import math

import numba as nb
import numpy as np

# parameter vector layout
(P_RON, P_ROFF, P_C, P_ALPHA, P_K, P_VT, P_VC, P_GAMMA, P_Q, P_M0, P_M1, P_IMIN, P_IMAX,
 P_KI, P_KS, P_DS, P_DI, P_R, P_VSAT, P_SMIN, P_SMAX, P_LEN) = range(22)


def pack_params(p, s_bounds) -> np.ndarray:
    out = np.zeros(P_LEN)
    out[P_RON], out[P_ROFF], out[P_C], out[P_ALPHA] = p.R_on, p.R_off, p.C, p.alpha
    out[P_K], out[P_VT], out[P_VC], out[P_GAMMA] = p.k, p.V_t, p.v_c, p.gamma
    out[P_Q], out[P_M0], out[P_M1] = p.q, p.m0, p.m1
    out[P_IMIN], out[P_IMAX], out[P_KI], out[P_KS] = p.i_min, p.i_max, p.k_i, p.k_s
    out[P_DS], out[P_DI], out[P_R] = p.delta_s, p.delta_i, p.r
    out[P_VSAT] = p.v_saturation
    out[P_SMIN], out[P_SMAX] = s_bounds.s_min, s_bounds.s_max
    return out


@nb.njit(cache=True)
def smooth(y, coeffs, r):
    if y <= 0.0:
        return 0.0
    if y >= 1.0:
        return 1.0
    acc = 0.0
    for k in range(len(coeffs) - 1, -1, -1):
        acc = acc * y + coeffs[k]
    return acc * y ** (r + 1)


@nb.njit(cache=True)
def step_fn(y, delta, coeffs, r):
    if delta == 0.0:
        return 1.0 if y > 0.0 else 0.0
    return smooth(y / delta, coeffs, r)


@nb.njit(cache=True)
def edge(x, k):
    if math.isinf(k):
        return 1.0 if x > 0.0 else 0.0
    return -math.expm1(-k * x)


@nb.njit(cache=True)
def mem_rate(x, vm, P, coeffs):
    r = int(P[P_R])
    w = 2.0 * P[P_VT]
    h = edge(x, P[P_K]) * step_fn(vm, w, coeffs, r) + edge(1.0 - x, P[P_K]) * step_fn(-vm, w, coeffs, r)
    g = 1.0 / ((P[P_ROFF] - P[P_RON]) * x + P[P_RON])
    return -P[P_ALPHA] * h * g * vm


@nb.njit(cache=True)
def mem_step(x, vm, dt, P, coeffs):
    """(x_new, overshoot); exact frozen-voltage flow for the ideal window."""
    if not math.isinf(P[P_K]):
        xn = x + dt * mem_rate(x, vm, P, coeffs)
        if xn < 0.0:
            return 0.0, -xn
        if xn > 1.0:
            return 1.0, xn - 1.0
        return xn, 0.0
    r = int(P[P_R])
    w = 2.0 * P[P_VT]
    hv = step_fn(vm, w, coeffs, r) if vm > 0.0 else step_fn(-vm, w, coeffs, r)
    Ron = P[P_RON]
    R1 = P[P_ROFF] - Ron
    phi = Ron * x + 0.5 * R1 * x * x - P[P_ALPHA] * hv * vm * dt
    if phi <= 0.0:
        return 0.0, 0.0
    top = Ron + 0.5 * R1
    if phi >= top:
        return 1.0, 0.0
    xn = (math.sqrt(Ron * Ron + 2.0 * R1 * phi) - Ron) / R1
    return min(max(xn, 0.0), 1.0), 0.0


@nb.njit(cache=True)
def hermite(t, h, y0, y1, d0, d1):
    t2 = t * t
    t3 = t2 * t
    return ((2 * t3 - 3 * t2 + 1) * y0 + (t3 - 2 * t2 + t) * h * d0
            + (-2 * t3 + 3 * t2) * y1 + (t3 - t2) * h * d1)


@nb.njit(cache=True)
def fdcg(v, P):
    a = abs(v)
    vc = P[P_VC]
    vs = P[P_VSAT]
    if a <= vc:
        mag = hermite(a / vc, vc, 0.0, 0.0, -P[P_M0], P[P_M1])
    elif a <= vs:
        mag = hermite((a - vc) / (vs - vc), vs - vc, 0.0, P[P_Q], P[P_M1], 0.0)
    else:
        mag = P[P_Q]
    if v > 0:
        return mag
    if v < 0:
        return -mag
    return 0.0


@nb.njit(cache=True)
def scubic(s, ks):
    return -ks * s * (s - 1.0) * (2.0 * s - 1.0)


@nb.njit(cache=True)
def products(i, P, coeffs):
    r = int(P[P_R])
    pmin = 1.0
    pmax = 1.0
    a = P[P_IMIN] ** 2
    b = P[P_IMAX] ** 2
    for j in range(len(i)):
        i2 = i[j] * i[j]
        pmin *= step_fn(a - i2, P[P_DI], coeffs, r)
        pmax *= step_fn(b - i2, P[P_DI], coeffs, r)
    return pmin, pmax


@nb.njit(cache=True)
def ramp_values(t, level, ramp, coeffs, r, vf, dvf):
    for k in range(len(level)):
        if ramp[k] > 0.0:
            u = t / ramp[k]
            vf[k] = level[k] * smooth(u, coeffs, r)
            if 0.0 < u < 1.0:
                acc = 0.0
                for j in range(len(coeffs)):
                    pw = r + 1 + j
                    acc += coeffs[j] * pw * u ** (pw - 1)
                dvf[k] = level[k] * acc / ramp[k]
            else:
                dvf[k] = 0.0
        else:
            vf[k] = level[k]
            dvf[k] = 0.0


@nb.njit(cache=True)
def csr_matvec(indptr, indices, data, x, out):
    for r in range(len(indptr) - 1):
        acc = 0.0
        for k in range(indptr[r], indptr[r + 1]):
            acc += data[k] * x[indices[k]]
        out[r] = acc


@nb.njit(cache=True)
def run_chunk(v, x, i, s, t0, dt, n_steps, theta,
              P, coeffs,
              wf_ptr, wf_idx, wf_dat, wx_ptr, wx_idx, wx_dat, d,
              term_node, is_mem, mem_rows, res_rows, pol, dcg,
              M0, E, level, ramp,
              check_every, eq_tol_v, eq_tol_rhs, dwell, ramp_end, record_every,
              rec_idx, rec_t, rec_v, M0inv, held_since, stats, voltage_only, n_off):
    """Advance in place by up to ``n_steps`` steps, starting after global step
    ``n_off`` of a run that began at ``t0``.

    Returns (status, steps_taken, n_recorded, held_since): status 1 means a
    dwelled equilibrium, 0 means the step budget ran out.  ``stats`` holds
    [max x overshoot, max s overshoot, max |i|, clamp events, residual].
    """
    nf = v.shape[0]
    nb_ = d.shape[0]
    nm = x.shape[0]
    nd = i.shape[0]
    nfix = level.shape[0]
    r = int(P[P_R])
    Roff = P[P_ROFF]
    Ron = P[P_RON]
    R1 = Roff - Ron
    gamma = P[P_GAMMA]
    ks = P[P_KS]
    ki = P[P_KI]
    smin = P[P_SMIN]
    smax = P[P_SMAX]
    vc = P[P_VC]
    imax = P[P_IMAX]

    g = np.empty(nb_)
    vb = np.empty(nb_)
    bfix0 = np.empty(nb_)
    bfix1 = np.empty(nb_)
    vf0 = np.empty(nfix)
    dvf0 = np.empty(nfix)
    vf1 = np.empty(nfix)
    dvf1 = np.empty(nfix)
    rhs = np.empty(nf)
    mat = np.empty((nf, nf))
    kv = np.empty(nf)
    tmp = np.empty(nf)
    n_rec = 0
    for k in range(res_rows.shape[0]):
        g[res_rows[k]] = 1.0 / Roff

    t = t0 + n_off * dt
    for n in range(1, n_steps + 1):
        ng = n_off + n
        for k in range(nm):
            g[mem_rows[k]] = 1.0 / (Ron + R1 * x[k])
        ramp_values(t, level, ramp, coeffs, r, vf0, dvf0)
        ramp_values(t + dt, level, ramp, coeffs, r, vf1, dvf1)
        csr_matvec(wx_ptr, wx_idx, wx_dat, vf0, bfix0)
        csr_matvec(wx_ptr, wx_idx, wx_dat, vf1, bfix1)
        # rhs = M0 v / dt - (1-th) K v - c - S-term - E dvf
        for a in range(nf):
            acc = 0.0
            for b in range(nf):
                acc += M0[a, b] * v[b]
                mat[a, b] = M0[a, b] / dt
            rhs[a] = acc / dt
        csr_matvec(wf_ptr, wf_idx, wf_dat, v, vb)
        for b in range(nb_):
            node = term_node[b]
            if node < 0:
                continue
            gb = g[b]
            rhs[node] -= (1.0 - theta) * gb * vb[b]
            rhs[node] -= gb * ((1.0 - theta) * (bfix0[b] - d[b]) + theta * (bfix1[b] - d[b]))
            for k in range(wf_ptr[b], wf_ptr[b + 1]):
                mat[node, wf_idx[k]] += theta * gb * wf_dat[k]
        for j in range(nd):
            rhs[dcg[j]] -= i[j]
        for a in range(nf):
            acc = 0.0
            for k in range(nfix):
                acc += E[a, k] * ((1.0 - theta) * dvf0[k] + theta * dvf1[k])
            rhs[a] -= acc
        vnew = np.linalg.solve(mat, rhs)
        for a in range(nf):
            v[a] = vnew[a]
        t = t0 + ng * dt
        # memristors with the new voltages
        csr_matvec(wf_ptr, wf_idx, wf_dat, v, vb)
        for k in range(nm):
            b = mem_rows[k]
            vm = pol[k] * (vb[b] + bfix1[b] - d[b])
            xn, over = mem_step(x[k], vm, dt, P, coeffs)
            if over > 0.0:
                if over > stats[0]:
                    stats[0] = over
                stats[3] += 1
            x[k] = xn
        # VCDCG currents
        for j in range(nd):
            rs = step_fn(s[j] - 0.5, P[P_DS], coeffs, r)
            r1 = step_fn(0.5 - s[j], P[P_DS], coeffs, r)
            i[j] = i[j] + dt * (rs * fdcg(v[dcg[j]], P) - gamma * r1 * i[j])
            if abs(i[j]) > stats[2]:
                stats[2] = abs(i[j])
        pmin, pmax = products(i, P, coeffs)
        c = ki * (pmin + pmax - 1.0)
        # backward Euler for s, scalar Newton per component
        for j in range(nd):
            s0 = s[j]
            sj = s0
            for _ in range(50):
                F = sj - dt * (scubic(sj, ks) + c) - s0
                dF = 1.0 + dt * ks * (6.0 * sj * sj - 6.0 * sj + 1.0)
                if abs(dF) < 1e-12:
                    dF = 1e-12
                step = F / dF
                sj -= step
                if abs(step) < 1e-13 * (1.0 + abs(sj)):
                    break
            if sj < smin:
                if smin - sj > stats[1]:
                    stats[1] = smin - sj
                stats[3] += 1
                sj = smin
            elif sj > smax:
                if sj - smax > stats[1]:
                    stats[1] = sj - smax
                stats[3] += 1
                sj = smax
            s[j] = sj
        if not np.isfinite(v).all():
            return -1, n, n_rec, held_since
        if record_every > 0 and ng % record_every == 0 and n_rec < rec_t.shape[0]:
            rec_t[n_rec] = t
            for k in range(rec_idx.shape[0]):
                rec_v[n_rec, k] = v[rec_idx[k]]
            n_rec += 1
        if ng % check_every == 0 and t >= ramp_end:
            ok = True
            for j in range(nd):
                vd = abs(v[dcg[j]])
                if abs(vd - vc) > eq_tol_v or s[j] <= 0.5 or abs(i[j]) >= imax:
                    ok = False
                    break
            if ok:
                res = residual(v, x, i, s, t, P, coeffs, wf_ptr, wf_idx, wf_dat, wx_ptr,
                               wx_idx, wx_dat, d, term_node, mem_rows, res_rows, pol, dcg,
                               E, level, ramp, M0inv, voltage_only)
                if res > eq_tol_rhs:
                    ok = False
                else:
                    stats[4] = res
            if ok:
                if held_since < 0.0:
                    held_since = t
                if t - held_since >= dwell - 1e-12:
                    return 1, n, n_rec, held_since
            else:
                held_since = -1.0
    return 0, n_steps, n_rec, held_since


@nb.njit(cache=True)
def residual(v, x, i, s, t, P, coeffs, wf_ptr, wf_idx, wf_dat, wx_ptr, wx_idx, wx_dat, d,
             term_node, mem_rows, res_rows, pol, dcg, E, level, ramp, M0inv, voltage_only):
    """Scaled max-norm of the right-hand side (voltage block times C).  With
    ``voltage_only`` the x, i and s blocks are skipped."""
    nf = v.shape[0]
    nb_ = d.shape[0]
    r = int(P[P_R])
    Ron = P[P_RON]
    R1 = P[P_ROFF] - Ron
    nfix = level.shape[0]
    vf = np.empty(nfix)
    dvf = np.empty(nfix)
    ramp_values(t, level, ramp, coeffs, r, vf, dvf)
    vb = np.empty(nb_)
    bf = np.empty(nb_)
    csr_matvec(wf_ptr, wf_idx, wf_dat, v, vb)
    csr_matvec(wx_ptr, wx_idx, wx_dat, vf, bf)
    cur = np.zeros(nf)
    g = np.empty(nb_)
    for k in range(res_rows.shape[0]):
        g[res_rows[k]] = 1.0 / P[P_ROFF]
    for k in range(mem_rows.shape[0]):
        g[mem_rows[k]] = 1.0 / (Ron + R1 * x[k])
    for b in range(nb_):
        node = term_node[b]
        if node >= 0:
            cur[node] -= g[b] * (vb[b] + bf[b] - d[b])
    for j in range(dcg.shape[0]):
        cur[dcg[j]] -= i[j]
    for a in range(nf):
        for k in range(nfix):
            cur[a] -= E[a, k] * dvf[k]
    out = 0.0
    for a in range(nf):
        acc = 0.0
        for b in range(nf):
            acc += M0inv[a, b] * cur[b]
        if abs(acc) * P[P_C] > out:
            out = abs(acc) * P[P_C]
    if voltage_only:
        return out
    for k in range(mem_rows.shape[0]):
        b = mem_rows[k]
        vm = pol[k] * (vb[b] + bf[b] - d[b])
        q = abs(mem_rate(x[k], vm, P, coeffs))
        if q > out:
            out = q
    rr = int(P[P_R])
    for j in range(dcg.shape[0]):
        rs = step_fn(s[j] - 0.5, P[P_DS], coeffs, rr)
        r1 = step_fn(0.5 - s[j], P[P_DS], coeffs, rr)
        q = abs(rs * fdcg(v[dcg[j]], P) - P[P_GAMMA] * r1 * i[j])
        if q > out:
            out = q
    pmin, pmax = products(i, P, coeffs)
    for j in range(s.shape[0]):
        q = abs(scubic(s[j], P[P_KS]) + P[P_KI] * (pmin + pmax - 1.0)) / P[P_KS]
        if q > out:
            out = q
    return out
