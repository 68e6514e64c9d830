import csv
import io
import math

import numpy as np
import pytest

from solc import compiler as cc
from solc import integrator as ig
from solc import runner as rn
from solc.assembler import StateVector
from solc.compiler import FactorSpec, SubsetSumSpec


def test_brute_force_oracle():
    assert sorted(rn.brute_force(FactorSpec(35, 6))) == [(5, 7), (7, 5)]
    assert rn.brute_force(FactorSpec(47, 6)) == []
    assert rn.brute_force(SubsetSumSpec((5, 6, 7), 13, 3)) == [(0, 1, 1)]


def test_verify_solution():
    f = FactorSpec(35, 6)
    assert rn.verify_solution(f, dict(p=(0, 0, 1, 1, 1), q=(1, 0, 1)))
    assert not rn.verify_solution(f, dict(p=(1, 0, 0, 0, 1), q=(0, 0, 1)))
    assert not rn.verify_solution(f, dict(p=(0, 0, 1, 1, 1)))
    s = SubsetSumSpec((5, 6, 7), 13, 3)
    assert rn.verify_solution(s, dict(c=(0, 1, 1)))
    assert not rn.verify_solution(s, dict(c=(1, 1, 0)))
    assert not rn.verify_solution(SubsetSumSpec((5, 6, 7), 1, 3), dict(c=(0, 0, 0)))


def test_decode_readout(adder_system):
    sys = adder_system
    v = np.where(np.arange(sys.n_free) % 2, 1.0, -1.0)
    st = StateVector(v, np.zeros(sys.n_M), np.zeros(sys.n_DCG), np.zeros(sys.n_DCG))
    bits = rn.decode_readout(sys, st)
    free = {int(n): k for k, n in enumerate(sys.free_nodes)}
    for name, group in sys.netlist.readout_map().items():
        assert bits[name] == tuple(int(v[free[n]] > 0) for n in group)
    st.v[free[sys.netlist.readout_map()["a"][0]]] = 1e-4
    with pytest.raises(rn.AmbiguousBit):
        rn.decode_readout(sys, st)


def test_decode_reads_pinned_lines(params):
    from conftest import one_gate
    from solc.assembler import assemble

    sys = assemble(one_gate("AND", readout=False), params)
    out = int(sys.fixed_nodes[0])
    st = StateVector(np.array([1.0, 1.0]), np.zeros(12), np.zeros(2), np.zeros(2))
    assert rn.decode_readout(sys, st, readout={"o": [out]}) == {"o": (1,)}


def test_wilson_interval_known_values():
    lo, hi = rn.wilson_interval(18, 20)
    # closed form of the score interval
    z = 1.959963984540054
    p, n = 0.9, 20
    c = (p + z * z / (2 * n)) / (1 + z * z / n)
    h = z / (1 + z * z / n) * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n))
    assert (lo, hi) == pytest.approx((c - h, c + h), abs=1e-12)
    assert rn.wilson_interval(0, 5)[0] == 0.0
    assert rn.wilson_interval(5, 5)[1] == pytest.approx(1.0)


def test_fit_power_law_recovers_exponent():
    x = np.array([2, 4, 8, 16, 32.0])
    fit = rn.fit_power_law(x, 3.0 * x ** 2.5)
    assert fit.exponent == pytest.approx(2.5)
    assert fit.prefactor == pytest.approx(3.0)
    assert fit.r2 == pytest.approx(1.0)
    assert rn.fit_power_law([1], [1]) is None
    noisy = rn.fit_power_law(x, 3.0 * x ** 2 * np.array([1.1, 0.9, 1.05, 0.95, 1.0]))
    assert noisy.ci_low < 2.0 < noisy.ci_high


def test_fit_linear():
    f = rn.fit_linear([1, 2, 3], [5, 7, 9])
    assert (f["slope"], f["intercept"], f["r2"]) == pytest.approx((2, 3, 1))


def test_seed_sequence_is_deterministic():
    a = rn.seed_sequence(7, 5)
    assert a == rn.seed_sequence(7, 5)
    assert a[:3] == rn.seed_sequence(7, 3)
    assert len(set(a)) == 5
    assert a != rn.seed_sequence(8, 5)


@pytest.mark.parametrize("n_n,n", [(6, 49), (9, 299), (12, 3721)])
def test_factor_instance(n_n, n):
    spec = rn.factor_instance(n_n)
    assert spec.n == n and spec.n.bit_length() == n_n
    assert rn.brute_force(spec)


def test_subset_sum_instance_is_solvable():
    for p in range(2, 8):
        spec = rn.subset_sum_instance(p, 3, seed=p)
        assert len(set(spec.elements)) == 3
        assert max(spec.elements) < 1 << p
        assert rn.brute_force(spec)


def test_trivial_even_input():
    out = rn.solve(FactorSpec(26, 6))
    assert out.status == "solved" and out.answer == (13, 2) and out.verified
    assert rn.estimate_success_probability(FactorSpec(26, 6), trials=3).estimate == 1.0


def test_trivial_subset_sum_target():
    assert rn.solve(SubsetSumSpec((1, 2), 0, 3)).status == "trivial_instance"


def test_solve_small_factorization():
    out = rn.solve(FactorSpec(35, 6), opts=ig.IntegrationOpts(seed=7), max_retries=3)
    assert out.status == "solved"
    assert out.answer in {(5, 7), (7, 5)}
    assert out.attempts and out.attempts[-1]["status"] == "solved"
    d = out.to_dict()
    assert d["bits"]["p"] in {"00101", "00111"}


def test_solve_subset_sum():
    out = rn.solve(SubsetSumSpec((5, 6, 7), 13, 3), opts=ig.IntegrationOpts(t_max=20, seed=0))
    assert out.status == "solved" and out.answer == (0, 1, 1)


def test_unsolvable_instance_never_verifies():
    out = rn.solve(SubsetSumSpec((5, 6, 7), 4, 3), opts=ig.IntegrationOpts(t_max=5), max_retries=2)
    assert out.status in {"budget_exhausted", "fault"} and not out.verified
    assert len(out.attempts) == 2


def test_solve_rejects_bad_retries():
    with pytest.raises(ValueError):
        rn.solve(FactorSpec(35, 6), max_retries=0)


def test_run_trials_order_and_estimate():
    o = ig.IntegrationOpts(t_max=20, seed=3)
    est = rn.estimate_success_probability(SubsetSumSpec((5, 6, 7), 13, 3), trials=3, opts=o)
    assert [r["seed"] for r in est.records] == rn.seed_sequence(3, 3)
    assert est.successes == len(est.times)
    assert est.ci_low <= est.estimate <= est.ci_high


def test_scaling_sweep_structure_only():
    rep = rn.scaling_sweep("factor", [6, 9, 12], trials=0)
    assert [r.gates for r in rep.records] == [
        cc.gate_count_report(cc.compile_factorization(rn.factor_instance(k)))["total"]
        for k in (6, 9, 12)]
    assert rep.time_fit is None and rep.gate_fit.exponent > 1
    rows = list(csv.reader(io.StringIO(rep.to_csv())))
    assert ["# summary"] in rows
    assert '"family": "factor"' in rep.to_json()
    with pytest.raises(ValueError):
        rn.scaling_sweep("factor", [9, 6], trials=0)
    with pytest.raises(ValueError):
        rn.scaling_sweep("sat", [6], trials=0)


def test_sweep_csv_has_one_row_per_trial():
    rep = rn.scaling_sweep("subset-sum", [3], trials=2, opts=ig.IntegrationOpts(t_max=2))
    rows = list(csv.reader(io.StringIO(rep.to_csv())))
    assert rows[0][:3] == ["size", "instance", "gates"]
    assert len([r for r in rows[1:] if r and r[0] == "3"]) == 3
