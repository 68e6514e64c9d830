import math

import numpy as np
import pytest
from scipy.integrate import solve_ivp

from solc import _kernels as K
from solc import device as dm


def test_smoothstep_coeffs_known_orders():
    assert dm.smoothstep_coeffs(1) == pytest.approx((3.0, -2.0))
    assert dm.smoothstep_coeffs(2) == pytest.approx((10.0, -15.0, 6.0))
    assert dm.smoothstep_coeffs(3) == pytest.approx((35.0, -84.0, 70.0, -20.0))


@pytest.mark.parametrize("r", [1, 2, 3, 4, 5])
def test_smoothstep_coeffs_conditions(r):
    a = dm.smoothstep_coeffs(r)
    assert sum(a) == pytest.approx(1.0)
    powers = range(r + 1, 2 * r + 2)
    for l in range(1, r + 1):
        assert sum(math.comb(i, l) * ai for i, ai in zip(powers, a)) == pytest.approx(0.0, abs=1e-9)


@pytest.mark.parametrize("r", [0, -1, 1.5])
def test_smoothstep_rejects_bad_order(r):
    with pytest.raises(ValueError):
        dm.smoothstep_coeffs(r)


def test_smoothstep_eval_values():
    assert dm.smoothstep_eval(1, -0.3) == 0.0
    assert dm.smoothstep_eval(1, 2.0) == 1.0
    assert dm.smoothstep_eval(1, 0.5) == pytest.approx(0.5)
    y = np.linspace(0, 1, 101)
    for r in (1, 2, 3):
        assert np.all(np.diff(dm.smoothstep_eval(r, y)) >= 0)


@pytest.mark.parametrize("r", [1, 2, 3])
def test_smoothstep_derivative_matches_differences(r):
    y = np.linspace(0.01, 0.99, 50)
    h = 1e-6
    fd = (dm.smoothstep_eval(r, y + h) - dm.smoothstep_eval(r, y - h)) / (2 * h)
    assert np.allclose(dm.smoothstep_deriv(r, y), fd, atol=1e-6)
    # flat at both ends
    assert dm.smoothstep_deriv(r, 0.0) == 0.0
    assert dm.smoothstep_deriv(r, 1.0) == 0.0
    # leading term near 0 is (r+1) a_{r+1} y^r
    lead = (r + 1) * dm.smoothstep_coeffs(r)[0]
    assert dm.smoothstep_deriv(r, 1e-4) == pytest.approx(lead * 1e-4 ** r, rel=1e-2)


def test_ideal_step_is_zero_at_zero():
    assert dm.step_eval(0.0, 0.0) == 0.0
    assert dm.step_eval(1e-12, 0.0) == 1.0
    assert dm.step_eval(0.05, 0.1) == pytest.approx(0.5)
    with pytest.raises(ValueError):
        dm.step_eval(0.1, -1.0)


def test_memristance_endpoints(params):
    assert dm.memristance(0.0, params) == pytest.approx(params.R_on)
    assert dm.memristance(1.0, params) == pytest.approx(params.R_off)
    assert dm.conductance(0.0, params) == pytest.approx(1 / params.R_on)
    with pytest.raises(ValueError):
        dm.memristance(1.5, params)
    x = np.linspace(0, 1, 11)
    h = 1e-7
    fd = (1 / (params.R_1 * (x + h) + params.R_on) - 1 / (params.R_1 * (x - h) + params.R_on)) / (2 * h)
    assert np.allclose(dm.conductance_deriv(x, params), fd, rtol=1e-5)


def test_window_pins_state(params):
    # positive v_M drives x down, so it must stop at x = 0 and move at x = 1
    assert dm.window_h(0.0, 1.0, params) == 0.0
    assert dm.window_h(1.0, 1.0, params) == 1.0
    assert dm.window_h(1.0, -1.0, params) == 0.0
    assert dm.window_h(0.0, -1.0, params) == 1.0
    assert dm.memristor_rate(0.5, 1.0, params) < 0
    assert dm.memristor_rate(0.5, -1.0, params) > 0


def test_window_partials_smooth_case():
    p = dm.DeviceParams(k=20.0, V_t=0.05, r=2)
    x, v, h = 0.3, 0.04, 1e-7
    dx, dv = dm.window_h_partials(x, v, p)
    assert dx == pytest.approx((dm.window_h(x + h, v, p) - dm.window_h(x - h, v, p)) / (2 * h), rel=1e-5)
    assert dv == pytest.approx((dm.window_h(x, v + h, p) - dm.window_h(x, v - h, p)) / (2 * h), rel=1e-5)


@pytest.mark.parametrize("x0,vm", [(0.3, 0.02), (0.9, -0.01), (0.05, 0.5), (0.999, -2.0)])
def test_memristor_step_matches_ode(params, x0, vm):
    dt = 1e-3

    def at_lo(t, x):
        return x[0]

    def at_hi(t, x):
        return x[0] - 1.0

    at_lo.terminal = at_hi.terminal = True
    sol = solve_ivp(lambda t, x: [dm.memristor_rate(x[0], vm, params)], (0, dt), [x0],
                    rtol=1e-11, atol=1e-13, method="DOP853", events=(at_lo, at_hi))
    # the window stops the state once it reaches a bound
    ref = min(max(sol.y[0, -1], 0.0), 1.0)
    got, over = dm.memristor_step(x0, vm, dt, params)
    assert float(got) == pytest.approx(ref, abs=1e-8)
    assert float(over) == 0.0


def test_memristor_step_stays_in_box(params):
    rng = np.random.default_rng(1)
    x = rng.uniform(size=1000)
    vm = rng.normal(scale=5, size=1000)
    xn, over = dm.memristor_step(x, vm, 1e-2, params)
    assert np.all((xn >= 0) & (xn <= 1)) and np.all(over == 0)


def test_f_dcg_shape(params):
    vc = params.v_c
    assert dm.f_dcg(0.0, params) == 0.0
    assert dm.f_dcg(vc, params) == pytest.approx(0.0, abs=1e-12)
    assert dm.f_dcg(-vc, params) == pytest.approx(0.0, abs=1e-12)
    assert dm.f_dcg(10 * vc, params) == pytest.approx(params.q)
    v = np.linspace(-3, 3, 601)
    assert np.allclose(dm.f_dcg(-v, params), -dm.f_dcg(v, params))
    h = 1e-6
    assert dm.f_dcg_deriv(h, params) == pytest.approx(-params.m0, rel=1e-3)
    assert dm.f_dcg_deriv(vc, params) == pytest.approx(params.m1, rel=1e-6)
    fd = (dm.f_dcg(v + h, params) - dm.f_dcg(v - h, params)) / (2 * h)
    assert np.allclose(dm.f_dcg_deriv(v, params), fd, atol=1e-3)
    # C^1 at the saturation knot
    vs = params.v_saturation
    assert dm.f_dcg_deriv(vs - 1e-9, params) == pytest.approx(0.0, abs=1e-5)


def test_f_dcg_linearization_signs(params):
    # negative inductor at 0, positive one at +-v_c
    assert dm.f_dcg(0.01, params) < 0
    assert dm.f_dcg(params.v_c + 0.01, params) > 0
    assert dm.f_dcg(params.v_c - 0.01, params) < 0


def test_rho_and_s_drive(params):
    assert dm.rho(1.0, params) == 1.0
    assert dm.rho(0.0, params) == 0.0
    # all currents tiny: s pushed up; any current over i_max: pushed down
    assert dm.f_s([0.0, 0.0], 1.0, params) == pytest.approx(params.k_i)
    assert dm.f_s([0.0, 2 * params.i_max], 0.0, params) == pytest.approx(-params.k_i)
    assert dm.f_s([1.0], 0.5, params) == pytest.approx(0.0)


def test_s_bounds(params):
    b = dm.solve_s_bounds(params)
    assert b.s_min < 0 < 1 < b.s_max
    assert b.s_min == pytest.approx(1 - b.s_max)
    assert dm.s_cubic(b.s_max, params) + params.k_i == pytest.approx(0.0, abs=1e-6 * params.k_s)
    with pytest.raises(dm.ParamError):
        dm.solve_s_bounds(params.replace(k_i=1e-3 * params.k_s))


def test_validate_params_errors_and_warnings(params):
    assert dm.validate_params(params).ok
    bad = params.replace(R_off=params.R_on / 2)
    assert not dm.validate_params(bad).ok
    with pytest.raises(dm.ParamError):
        dm.validate_params(bad, strict=True)
    # i_max must stay below K_wrong v_c / R_on
    assert not dm.validate_params(params.replace(i_max=200.0)).ok
    rep = dm.validate_params(dm.DeviceParams.printed_table2())
    assert rep.ok
    assert any("k_s" in w for w in rep.warnings)


def test_printed_table_keeps_verbatim_values():
    p = dm.DeviceParams.printed_table2()
    assert p.k_s == 1e-7 and p.C == 1e-9 and p.m0 == 400.0
    assert dm.DeviceParams(m0=-400.0).m0 == 400.0


def test_load_config(tmp_path):
    f = tmp_path / "p.cfg"
    f.write_text("# comment\nC = 0.01\nalpha = 30  # trailing\nr = 2\n"
                 "gate.AND.T1.LR.a1 = 5\n")
    p, gate = dm.load_config(f)
    assert (p.C, p.alpha, p.r) == (0.01, 30.0, 2)
    assert gate == {"gate.AND.T1.LR.a1": 5.0}
    f.write_text("nonsense = 1\n")
    with pytest.raises(dm.ParamError):
        dm.load_config(f)
    f.write_text("C 0.1\n")
    with pytest.raises(dm.ParamError, match=":1:"):
        dm.load_config(f)


def test_params_text_round_trip(tmp_path, params):
    f = tmp_path / "p.cfg"
    f.write_text(params.to_text())
    assert dm.DeviceParams.from_file(f) == params


def test_kernel_scalars_match_numpy():
    p = dm.DeviceParams(k=15.0, V_t=0.02, delta_s=0.1, delta_i=1e-3, r=2)
    P = K.pack_params(p, dm.solve_s_bounds(p))
    coeffs = np.array(dm.smoothstep_coeffs(p.r))
    rng = np.random.default_rng(0)
    for _ in range(200):
        x, vm, v = rng.uniform(), rng.normal(scale=0.1), rng.uniform(-3, 3)
        assert K.mem_rate(x, vm, P, coeffs) == pytest.approx(dm.memristor_rate(x, vm, p), rel=1e-12, abs=1e-12)
        assert K.fdcg(v, P) == pytest.approx(dm.f_dcg(v, p), rel=1e-12, abs=1e-12)
        y = rng.uniform(-0.2, 1.2)
        assert K.smooth(y, coeffs, p.r) == pytest.approx(dm.smoothstep_eval(p.r, y), abs=1e-14)
    ideal = dm.DeviceParams()
    Pi = K.pack_params(ideal, dm.solve_s_bounds(ideal))
    c1 = np.array(dm.smoothstep_coeffs(1))
    for _ in range(200):
        x, vm = rng.uniform(), rng.normal(scale=3)
        xn, _ = K.mem_step(x, vm, 1e-3, Pi, c1)
        assert xn == pytest.approx(float(dm.memristor_step(x, vm, 1e-3, ideal)[0]), abs=1e-13)
