import numpy as np
import pytest

from conftest import one_gate
from solc import assembler as asm
from solc import compiler as cc
from solc import device as dm
from solc import netlist as nl

SMOOTH = dm.DeviceParams(k=20.0, V_t=0.05, delta_s=0.1, delta_i=0.05, r=2)


def random_state(sys, rng):
    return asm.StateVector(rng.uniform(-1.5, 1.5, sys.n_free), rng.uniform(0.05, 0.95, sys.n_M),
                           rng.uniform(-5, 5, sys.n_DCG), rng.uniform(0.1, 0.9, sys.n_DCG))


def test_layout(and_system):
    sys = and_system
    assert (sys.n_free, sys.n_M, sys.n_R, sys.n_DCG) == (2, 12, 3, 2)
    assert sys.dim == 2 + 12 + 4
    st = sys.split(np.arange(sys.dim, dtype=float))
    assert st.v.tolist() == [0.0, 1.0] and len(st.s) == 2
    assert np.array_equal(st.flat(), np.arange(sys.dim))


def test_branch_voltages_follow_gate_table(params):
    net = one_gate("AND")
    sys = asm.assemble(net, params)
    v = np.array([0.3, -0.7])
    vb = sys.branch_voltages(v, t=np.inf)
    g = net.gates[0]
    volts = dict(zip(sys.free_nodes.tolist(), v))
    volts[int(sys.fixed_nodes[0])] = params.v_c
    for row, (_, ti, bi) in enumerate(sys.branch_map):
        a = sys.table[g.kind][ti, bi]
        vt = volts[g.terminals[ti]]
        level = sum(a[k] * volts[g.terminals[k]] for k in range(3)) + a[3] * params.v_c
        assert vb[row] == pytest.approx(vt - level)


@pytest.mark.parametrize("builder", [lambda: one_gate("XOR", 0), lambda: cc.compile_boolean(cc.build_adder(2))])
def test_jacobian_matches_finite_differences(builder):
    sys = asm.assemble(builder(), SMOOTH)
    rng = np.random.default_rng(4)
    for _ in range(3):
        st = random_state(sys, rng)
        y = st.flat()
        J = asm.eval_jacobian(sys, st).toarray()
        fd = np.empty_like(J)
        for k in range(sys.dim):
            h = 1e-6 * max(1.0, abs(y[k]))
            yp, ym = y.copy(), y.copy()
            yp[k] += h
            ym[k] -= h
            fd[:, k] = (asm.eval_rhs_flat(sys, yp, np.inf) - asm.eval_rhs_flat(sys, ym, np.inf)) / (2 * h)
        scale = np.abs(fd).max()
        assert np.allclose(J, fd, rtol=1e-4, atol=1e-6 * scale)


def test_vm_formulation_is_equivalent(and_system):
    sys = and_system
    rng = np.random.default_rng(5)
    for t in (0.01, 0.3, np.inf):
        st = random_state(sys, rng)
        vb = sys.branch_voltages(st.v, t)
        dv = asm.eval_rhs(sys, st, t).v
        _, dvf = sys.fixed_voltages(t)
        ref = sys.W_free @ dv + sys.W_fix @ dvf
        got = asm.vm_formulation_rhs(sys, vb, st, t)
        assert np.allclose(got, ref, rtol=1e-10, atol=1e-12 * np.abs(ref).max())


def test_all_free_single_gate_is_singular(params):
    net = nl.build([(0, "a"), (1, "b"), (2, "o")], [("AND", 0, 1, 2)])
    with pytest.raises(asm.AssemblyError, match="singular"):
        asm.assemble(net, params)
    # a lumped node capacitance removes the degeneracy
    assert asm.assemble(net, params, cap_mode="node").n_free == 3


def test_bad_cap_mode(params):
    with pytest.raises(asm.AssemblyError):
        asm.assemble(one_gate("AND"), params, cap_mode="wire")


def test_fixed_ramp_is_smooth(params):
    net = nl.build([(0, "a"), (1, "b"), (2, "o")], [("AND", 0, 1, 2)],
                   generators=[(2, 1.0, 2.0)], vcdcgs=[0, 1])
    sys = asm.assemble(net, params)
    v0, d0 = sys.fixed_voltages(0.0)
    v1, d1 = sys.fixed_voltages(1.0)
    v2, d2 = sys.fixed_voltages(5.0)
    assert v0[0] == 0.0 and d0[0] == 0.0
    assert v1[0] == pytest.approx(0.5 * params.v_c) and d1[0] > 0
    assert v2[0] == pytest.approx(params.v_c) and d2[0] == 0.0


def test_vcdcg_current_enters_kcl(and_system):
    sys = and_system
    st = asm.StateVector(np.zeros(2), np.full(12, 0.5), np.zeros(2), np.full(2, 0.5))
    base = asm.eval_rhs(sys, st, np.inf).v
    st.i[:] = [1.0, 0.0]
    moved = asm.eval_rhs(sys, st, np.inf).v
    # the generator draws current from its node
    assert np.allclose(moved - base, sys.m0_solve(np.array([-1.0, 0.0])))


def test_nonfinite_state_raises(and_system):
    st = asm.StateVector(np.array([np.nan, 0.0]), np.full(12, 0.5), np.zeros(2), np.zeros(2))
    with pytest.raises(asm.IntegrationFault):
        asm.eval_rhs(and_system, st, 0.0)


def test_linear_eigen_check_returns_abscissa(and_system):
    x = np.full(and_system.n_M, 0.5)
    a = asm.linear_eigen_check(and_system, x)
    K = and_system.conductance_operator(x).toarray()
    M0 = and_system.M0.toarray()
    assert a == pytest.approx(np.max(np.linalg.eigvals(-np.linalg.solve(M0, K)).real))


def test_rhs_bound_covers_random_states(adder_system):
    sys = adder_system
    bound = asm.rhs_bound(sys)
    rng = np.random.default_rng(6)
    b = sys.s_bounds
    for _ in range(20):
        st = asm.StateVector(rng.uniform(-1, 1, sys.n_free), rng.uniform(size=sys.n_M),
                             rng.uniform(-1, 1, sys.n_DCG) * sys.params.i_max,
                             rng.uniform(b.s_min, b.s_max, sys.n_DCG))
        assert np.abs(asm.eval_rhs(sys, st, np.inf).flat()).max() <= bound


def test_dump_matrices(and_system):
    text = asm.dump_matrices(and_system)
    assert text.count("%%MatrixMarket") == 4
    assert "% branch_map" in text
    header = text.splitlines()[2].split()
    assert header[:2] == ["15", "3"]
