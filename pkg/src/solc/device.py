"""Device nonlinearities: smooth steps, memristors, VCDCG drive and the
bistable internal variable.

All functions accept scalars or numpy arrays and are pure.
"""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field, fields
from functools import lru_cache
from pathlib import Path

import numpy as np


class ParamError(ValueError):
    """Raised when device parameters violate a hard invariant."""


# Reference parameter set verbatim; k_s and k_i are 1e-7 there, see DeviceParams.
PRINTED_TABLE2 = dict(
    R_on=1e-2, R_off=1.0, v_c=1.0,
    alpha=60.0, C=1e-9, k=math.inf,
    V_t=0.0, gamma=60.0, q=10.0,
    m0=400.0, m1=400.0, i_min=1e-8,
    i_max=20.0, k_i=1e-7, k_s=1e-7,
    delta_s=0.0, delta_i=0.0,
)


@dataclass(frozen=True)
class DeviceParams:
    """Physical constants of memristors, VCVGs and VCDCGs.

    Defaults follow the reference parameter set with two exceptions.
    ``k_s = k_i = 1e7`` replaces 1e-7, which freezes ``s`` for ~1e7 time
    units and lets ``i_DCG`` grow without bound.  ``C = 0.05`` replaces
    1e-9, which makes the capacitor and VCDCG loop oscillate violently.
    ``PRINTED_TABLE2`` and :meth:`printed_table2` keep the verbatim
    values.  ``m0`` is stored as a positive magnitude.
    """

    R_on: float = 1e-2
    R_off: float = 1.0
    C: float = 0.05
    alpha: float = 60.0
    k: float = math.inf
    V_t: float = 0.0
    v_c: float = 1.0
    gamma: float = 60.0
    q: float = 10.0
    m0: float = 400.0
    m1: float = 400.0
    i_min: float = 1e-8
    i_max: float = 20.0
    k_i: float = 1e7
    k_s: float = 1e7
    delta_s: float = 0.0
    delta_i: float = 0.0
    r: int = 1
    K_wrong: float = 1.0
    v_sat: float | None = None  # f_DCG saturation knot; None -> 2*v_c

    def __post_init__(self):
        # "m0 = -400" in the table is the signed slope; keep the magnitude
        if self.m0 < 0:
            object.__setattr__(self, "m0", -self.m0)

    @property
    def R_1(self) -> float:
        return self.R_off - self.R_on

    @property
    def v_saturation(self) -> float:
        return 2.0 * self.v_c if self.v_sat is None else self.v_sat

    def replace(self, **changes) -> "DeviceParams":
        return dataclasses.replace(self, **changes)

    @classmethod
    def printed_table2(cls) -> "DeviceParams":
        return cls(**PRINTED_TABLE2)

    @classmethod
    def from_mapping(cls, values: dict) -> "DeviceParams":
        known = {f.name: f for f in fields(cls)}
        kwargs = {}
        for key, raw in values.items():
            if key not in known:
                raise ParamError(f"unknown device parameter {key!r}")
            kwargs[key] = _coerce(known[key], raw)
        return cls(**kwargs)

    @classmethod
    def from_file(cls, path) -> "DeviceParams":
        params, _ = load_config(path)
        return params

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            value = getattr(self, f.name)
            if value is None:
                continue
            lines.append(f"{f.name} = {value!r}")
        return "\n".join(lines) + "\n"


def _coerce(f: dataclasses.Field, raw):
    if isinstance(raw, str):
        raw = raw.strip()
        if f.name == "v_sat" and raw.lower() in ("", "none"):
            return None
        if f.name == "r":
            return int(raw)
        return float(raw)
    return raw


def load_config(path) -> tuple[DeviceParams, dict[str, float]]:
    """Parse a flat ``key = value`` file.

    Device keys map to :class:`DeviceParams` fields (missing keys keep
    their defaults).  Keys beginning with ``gate.`` are returned
    separately as gate-table overrides.  ``#`` starts a comment.
    """
    device: dict[str, str] = {}
    gate: dict[str, float] = {}
    text = Path(path).read_text()
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ParamError(f"{path}:{lineno}: expected key = value, got {line!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key.startswith("gate."):
            try:
                gate[key] = float(value)
            except ValueError:
                raise ParamError(f"{path}:{lineno}: bad number {value!r}") from None
        else:
            device[key] = value
    try:
        return DeviceParams.from_mapping(device), gate
    except ValueError as exc:
        raise ParamError(f"{path}: {exc}") from None


# --------------------------------------------------------------------------
# smooth steps


@lru_cache(maxsize=None)
def smoothstep_coeffs(r: int) -> tuple[float, ...]:
    """Coefficients a_{r+1}..a_{2r+1} of the C^r polynomial step.

    Solves sum(a_i) = 1 and sum(binom(i, l) a_i) = 0 for l = 1..r.
    The system is small and integer-valued, so it is solved exactly.
    """
    if int(r) != r or r < 1:
        raise ValueError(f"smoothness order must be a positive integer, got {r}")
    r = int(r)
    from fractions import Fraction

    powers = list(range(r + 1, 2 * r + 2))
    rows = [[Fraction(1)] * len(powers)]
    rhs = [Fraction(1)]
    for l in range(1, r + 1):
        rows.append([Fraction(math.comb(i, l)) for i in powers])
        rhs.append(Fraction(0))
    # Gauss-Jordan over the rationals
    n = len(powers)
    aug = [row + [b] for row, b in zip(rows, rhs)]
    for col in range(n):
        pivot = next(i for i in range(col, n) if aug[i][col] != 0)
        aug[col], aug[pivot] = aug[pivot], aug[col]
        piv = aug[col][col]
        aug[col] = [v / piv for v in aug[col]]
        for i in range(n):
            if i != col and aug[i][col] != 0:
                factor = aug[i][col]
                aug[i] = [a - factor * b for a, b in zip(aug[i], aug[col])]
    return tuple(float(aug[i][n]) for i in range(n))


def smoothstep_eval(r: int, y):
    """theta~^r(y): 0 below 0, 1 above 1, flat to order r at both ends."""
    coeffs = smoothstep_coeffs(r)
    y = np.asarray(y, dtype=float)
    yc = np.clip(y, 0.0, 1.0)
    poly = np.zeros_like(yc)
    for a in reversed(coeffs):
        poly = poly * yc + a
    out = poly * yc ** (r + 1)
    return out if out.ndim else float(out)


def smoothstep_deriv(r: int, y):
    """d/dy theta~^r(y); zero outside (0, 1)."""
    coeffs = smoothstep_coeffs(r)
    y = np.asarray(y, dtype=float)
    inside = (y > 0.0) & (y < 1.0)
    yc = np.clip(y, 0.0, 1.0)
    out = np.zeros_like(yc)
    for j, a in enumerate(coeffs):
        p = r + 1 + j
        out = out + a * p * yc ** (p - 1)
    out = np.where(inside, out, 0.0)
    return out if out.ndim else float(out)


def step_eval(y, delta: float, r: int = 1):
    """Smooth step of width ``delta``; exact Heaviside (0 at 0) if delta == 0."""
    if delta < 0:
        raise ValueError("step width must be non-negative")
    if delta == 0:
        out = (np.asarray(y, dtype=float) > 0.0).astype(float)
        return out if out.ndim else float(out)
    return smoothstep_eval(r, np.asarray(y, dtype=float) / delta)


def step_deriv(y, delta: float, r: int = 1):
    """Derivative of :func:`step_eval`; identically 0 for the ideal step."""
    y = np.asarray(y, dtype=float)
    if delta == 0:
        out = np.zeros_like(y)
        return out if out.ndim else float(out)
    return smoothstep_deriv(r, y / delta) / delta


# --------------------------------------------------------------------------
# memristor


def _check_unit_interval(x, tol=1e-9):
    x = np.asarray(x, dtype=float)
    if np.any(x < -tol) or np.any(x > 1 + tol):
        raise ValueError("memristor state outside [0, 1]")
    return x


def memristance(x, p: DeviceParams):
    x = _check_unit_interval(x)
    out = p.R_on * (1.0 - x) + p.R_off * x
    return out if out.ndim else float(out)


def conductance(x, p: DeviceParams):
    x = _check_unit_interval(x)
    out = 1.0 / (p.R_1 * x + p.R_on)
    return out if out.ndim else float(out)


def conductance_deriv(x, p: DeviceParams):
    x = np.asarray(x, dtype=float)
    g = 1.0 / (p.R_1 * x + p.R_on)
    out = -p.R_1 * g * g
    return out if out.ndim else float(out)


def _edge_factor(x, k: float):
    """1 - exp(-k x), with the k = inf limit giving the Heaviside step."""
    x = np.asarray(x, dtype=float)
    if math.isinf(k):
        return (x > 0.0).astype(float)
    return -np.expm1(-k * x)


def _edge_factor_deriv(x, k: float):
    x = np.asarray(x, dtype=float)
    if math.isinf(k):
        return np.zeros_like(x)
    return k * np.exp(-k * x)


def window_h(x, v_M, p: DeviceParams):
    """Window that pins x inside [0, 1]."""
    x = np.asarray(x, dtype=float)
    v_M = np.asarray(v_M, dtype=float)
    width = 2.0 * p.V_t
    out = (_edge_factor(x, p.k) * step_eval(v_M, width, p.r)
           + _edge_factor(1.0 - x, p.k) * step_eval(-v_M, width, p.r))
    out = np.asarray(out, dtype=float)
    return out if out.ndim else float(out)


def window_h_partials(x, v_M, p: DeviceParams):
    """(dh/dx, dh/dv_M), one-sided (zero) at ideal step discontinuities."""
    x = np.asarray(x, dtype=float)
    v_M = np.asarray(v_M, dtype=float)
    width = 2.0 * p.V_t
    up = step_eval(v_M, width, p.r)
    down = step_eval(-v_M, width, p.r)
    dx = _edge_factor_deriv(x, p.k) * up - _edge_factor_deriv(1.0 - x, p.k) * down
    dv = (_edge_factor(x, p.k) * step_deriv(v_M, width, p.r)
          - _edge_factor(1.0 - x, p.k) * step_deriv(-v_M, width, p.r))
    return np.asarray(dx, dtype=float), np.asarray(dv, dtype=float)


def memristor_rate(x, v_M, p: DeviceParams):
    """dx/dt = -alpha h(x, v_M) g(x) v_M.  v_M > 0 drives x toward 0 (R_on)."""
    x = np.asarray(x, dtype=float)
    v_M = np.asarray(v_M, dtype=float)
    g = 1.0 / (p.R_1 * x + p.R_on)
    out = -p.alpha * window_h(x, v_M, p) * g * v_M
    out = np.asarray(out, dtype=float)
    return out if out.ndim else float(out)


def memristor_step(x, v_M, dt: float, p: DeviceParams):
    """Advance x by ``dt`` with v_M held fixed, clipped to [0, 1].

    With the ideal edge window (k = inf) the flow is solved exactly:
    R_on x + R_1 x^2 / 2 moves linearly in time until x reaches a bound,
    where the window stops it.  Otherwise one forward Euler step.
    Returns (x_new, overshoot) where overshoot is the amount clipped.
    """
    x = np.asarray(x, dtype=float)
    v_M = np.asarray(v_M, dtype=float)
    if not math.isinf(p.k):
        xn = x + dt * memristor_rate(x, v_M, p)
        over = np.maximum(np.maximum(-xn, xn - 1.0), 0.0)
        return np.clip(xn, 0.0, 1.0), over
    width = 2.0 * p.V_t
    hv = np.where(v_M > 0, step_eval(v_M, width, p.r), step_eval(-v_M, width, p.r))
    phi = p.R_on * x + 0.5 * p.R_1 * x * x - p.alpha * hv * v_M * dt
    phi = np.clip(phi, 0.0, p.R_on + 0.5 * p.R_1)
    xn = (np.sqrt(p.R_on ** 2 + 2.0 * p.R_1 * phi) - p.R_on) / p.R_1
    return np.clip(xn, 0.0, 1.0), np.zeros_like(xn)


# --------------------------------------------------------------------------
# VCDCG


def _hermite(t, h, y0, y1, d0, d1):
    t2 = t * t
    t3 = t2 * t
    return ((2 * t3 - 3 * t2 + 1) * y0 + (t3 - 2 * t2 + t) * h * d0
            + (-2 * t3 + 3 * t2) * y1 + (t3 - t2) * h * d1)


def _hermite_deriv(t, h, y0, y1, d0, d1):
    t2 = t * t
    return ((6 * t2 - 6 * t) * y0 + (3 * t2 - 4 * t + 1) * h * d0
            + (-6 * t2 + 6 * t) * y1 + (3 * t2 - 2 * t) * h * d1) / h


def _dcg_knots(p: DeviceParams):
    vs, vc = p.v_saturation, p.v_c
    if not vs > vc:
        raise ParamError("v_sat must exceed v_c")
    return ((0.0, 0.0, -p.m0), (vc, 0.0, p.m1), (vs, p.q, 0.0))


def f_dcg(v, p: DeviceParams):
    """VCDCG drive: odd C^1 piecewise cubic, zeros at 0 and +-v_c,
    slope -m0 at 0, +m1 at +-v_c, constant +-q beyond +-v_sat."""
    v = np.asarray(v, dtype=float)
    a = np.abs(v)
    (x0, y0, d0), (x1, y1, d1), (x2, y2, d2) = _dcg_knots(p)
    h1, h2 = x1 - x0, x2 - x1
    inner = _hermite((a - x0) / h1, h1, y0, y1, d0, d1)
    outer = _hermite((a - x1) / h2, h2, y1, y2, d1, d2)
    mag = np.where(a <= x1, inner, np.where(a <= x2, outer, p.q))
    out = np.sign(v) * mag
    return out if out.ndim else float(out)


def f_dcg_deriv(v, p: DeviceParams):
    v = np.asarray(v, dtype=float)
    a = np.abs(v)
    (x0, y0, d0), (x1, y1, d1), (x2, y2, d2) = _dcg_knots(p)
    h1, h2 = x1 - x0, x2 - x1
    inner = _hermite_deriv((a - x0) / h1, h1, y0, y1, d0, d1)
    outer = _hermite_deriv((a - x1) / h2, h2, y1, y2, d1, d2)
    out = np.where(a <= x1, inner, np.where(a <= x2, outer, 0.0))
    return out if out.ndim else float(out)


def f_dcg_bound(p: DeviceParams) -> float:
    """max |f_DCG| (attained inside the Hermite pieces, not only at +-q)."""
    grid = np.linspace(0.0, p.v_saturation, 4001)
    return float(np.max(np.abs(f_dcg(grid, p))))


def rho(s, p: DeviceParams):
    """Drive-mode gate: 1 for s above 1/2, 0 below."""
    return step_eval(np.asarray(s, dtype=float) - 0.5, p.delta_s, p.r)


def rho_deriv(s, p: DeviceParams):
    return step_deriv(np.asarray(s, dtype=float) - 0.5, p.delta_s, p.r)


def current_products(i_vec, p: DeviceParams) -> tuple[float, float]:
    """(P_min, P_max): products of steps over i_min^2 - i^2 and i_max^2 - i^2."""
    i2 = np.asarray(i_vec, dtype=float) ** 2
    p_min = float(np.prod(step_eval(p.i_min ** 2 - i2, p.delta_i, p.r)))
    p_max = float(np.prod(step_eval(p.i_max ** 2 - i2, p.delta_i, p.r)))
    return p_min, p_max


def s_cubic(s, p: DeviceParams):
    s = np.asarray(s, dtype=float)
    return -p.k_s * s * (s - 1.0) * (2.0 * s - 1.0)


def s_cubic_deriv(s, p: DeviceParams):
    s = np.asarray(s, dtype=float)
    return -p.k_s * (6.0 * s * s - 6.0 * s + 1.0)


def f_s(i_vec, s, p: DeviceParams):
    """ds/dt for every VCDCG internal variable.

    The current term enters as ``+k_i (P_min + P_max - 1)``: all currents
    small pushes ``s`` up to ``s_max`` (drive mode), any current above
    ``i_max`` pushes it down to ``s_min`` (decay mode).
    """
    p_min, p_max = current_products(i_vec, p)
    out = s_cubic(s, p) + p.k_i * (p_min + p_max - 1.0)
    return out if np.ndim(out) else float(out)


@dataclass(frozen=True)
class SBounds:
    s_min: float
    s_max: float


def solve_s_bounds(p: DeviceParams, rtol: float = 1e-12) -> SBounds:
    """Root s_max > 1 of -k_s s(s-1)(2s-1) + k_i = 0, and s_min = 1 - s_max."""
    if p.k_s <= 0 or p.k_i <= 0:
        raise ParamError("k_s and k_i must be positive")
    ratio = p.k_i / p.k_s
    # local extrema of s(s-1)(2s-1) are +-sqrt(3)/18
    if ratio <= math.sqrt(3.0) / 18.0 * (1 + 1e-12):
        raise ParamError(
            f"k_i/k_s = {ratio:g} too small: the s-cubic has several roots in [0, 1]")

    def c(s):
        return 2.0 * s ** 3 - 3.0 * s ** 2 + s - ratio

    lo, hi = 1.0, 2.0
    while c(hi) < 0:
        hi = 1.0 + 2.0 * (hi - 1.0)
    while hi - lo > rtol * hi:
        mid = 0.5 * (lo + hi)
        if c(mid) < 0:
            lo = mid
        else:
            hi = mid
    s = 0.5 * (lo + hi)
    for _ in range(3):
        d = 6.0 * s * s - 6.0 * s + 1.0
        s_new = s - c(s) / d
        if not lo <= s_new <= hi:
            break
        s = s_new
    return SBounds(s_min=1.0 - s, s_max=s)


# --------------------------------------------------------------------------
# validation


@dataclass
class ValidationReport:
    errors: list[str] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.errors

    def raise_for_errors(self):
        if self.errors:
            raise ParamError("; ".join(self.errors))


def validate_params(p: DeviceParams, strict: bool = False) -> ValidationReport:
    """Check hard invariants (errors) and the sufficient conditions of the
    model (warnings).  ``strict`` raises on errors."""
    rep = ValidationReport()
    err = rep.errors.append
    warn = rep.warnings.append

    if not p.R_on > 0:
        err("R_on must be positive")
    if not p.R_off > p.R_on:
        err("R_off must exceed R_on")
    for name in ("C", "alpha", "gamma", "v_c", "q", "m0", "m1", "k_s", "k_i"):
        if not getattr(p, name) > 0:
            err(f"{name} must be positive")
    if not 0 < p.i_min < p.i_max:
        err("need 0 < i_min < i_max")
    if int(p.r) != p.r or p.r < 1:
        err("r must be a positive integer")
    if p.delta_s < 0 or p.delta_i < 0:
        err("step widths must be non-negative")
    if p.V_t < 0:
        err("V_t must be non-negative")
    if not p.k > 0:
        err("k must be positive")
    if p.v_sat is not None and not p.v_sat > p.v_c:
        err("v_sat must exceed v_c")
    if p.R_on > 0 and p.v_c > 0 and not p.i_max < p.K_wrong * p.v_c / p.R_on:
        err(f"i_max = {p.i_max:g} must be below K_wrong*v_c/R_on = "
            f"{p.K_wrong * p.v_c / p.R_on:g}")

    if rep.errors:
        if strict:
            rep.raise_for_errors()
        return rep

    if p.k_i <= math.sqrt(3.0 / 18.0) * p.k_s:
        warn(f"k_i = {p.k_i:g} is not above sqrt(3/18)*k_s = "
             f"{math.sqrt(3.0 / 18.0) * p.k_s:g}")
    fmax = f_dcg_bound(p)
    if p.k_s < 10.0 * fmax:
        warn(f"k_s = {p.k_s:g} is not much larger than max|f_DCG| = {fmax:g}; "
             "the decay mode will not bound i_DCG near i_max")
    tau_c = p.R_on * p.C
    tau_m = p.R_on / (p.alpha * p.v_c)
    tau_dcg = p.i_max / p.q
    if not tau_c < tau_m:
        warn(f"capacitive time R_on*C = {tau_c:g} is not below the memristor "
             f"switching time {tau_m:g}")
    if not 1.0 / p.gamma < tau_dcg:
        warn(f"decay time 1/gamma = {1 / p.gamma:g} is not below i_max/q = {tau_dcg:g}")
    if p.delta_i > p.i_min:
        warn("delta_i is not small compared to i_min")
    if strict:
        rep.raise_for_errors()
    return rep
