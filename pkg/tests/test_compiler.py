import itertools
import re

import numpy as np
import pytest

from solc import compiler as cc
from solc import netlist as nl


def assign_word(lines_lsb, value):
    return {line: (value >> k) & 1 for k, line in enumerate(lines_lsb)}


def test_bits_helpers():
    assert cc.bits_of(6, 4) == [0, 1, 1, 0]
    assert cc.value_of([1, 1, 0]) == 6


def test_full_adder_truth_table():
    c = cc.BoolCircuit()
    a, b, ci = c.line(), c.line(), c.line()
    s, co = cc.full_adder(c, a, b, ci)
    for x, y, z in itertools.product((0, 1), repeat=3):
        v = c.evaluate({a: x, b: y, ci: z})
        assert v[s] + 2 * v[co] == x + y + z


@pytest.mark.parametrize("wa,wb", [(3, 3), (4, 2), (1, 3)])
def test_ripple_add_exhaustive(wa, wb):
    c = cc.BoolCircuit()
    a, b = c.lines("a", wa), c.lines("b", wb)
    out = c.lines("unused", 0) or cc.ripple_add(c, a, b)
    for x in range(1 << wa):
        for y in range(1 << wb):
            v = c.evaluate({**assign_word(a, x), **assign_word(b, y)})
            assert sum(v[line] << k for k, line in enumerate(out)) == x + y


def test_multiplier_exhaustive():
    c = cc.BoolCircuit()
    p, q = c.lines("p", 4), c.lines("q", 3)
    prod = cc.multiplier(c, p, q)
    assert len(prod) == 7
    for x in range(16):
        for y in range(8):
            v = c.evaluate({**assign_word(p, x), **assign_word(q, y)})
            assert sum(v[line] << k for k, line in enumerate(prod)) == x * y


def factor_solutions(spec, forbid_trivial=True):
    c = cc.factor_circuit(spec, forbid_trivial)
    p = c.unknowns["p"][::-1]
    q = c.unknowns["q"][::-1]
    sols = []
    for x in range(1 << spec.n_p):
        for y in range(1 << spec.n_q):
            if c.satisfied({**assign_word(p, x), **assign_word(q, y)}):
                sols.append((x, y))
    return sols


def test_factor_circuit_solutions_match_brute_force():
    assert factor_solutions(cc.FactorSpec(35, 6)) == [(5, 7), (7, 5)]
    assert factor_solutions(cc.FactorSpec(47, 6)) == []
    # without the exclusion the trivial factorization survives
    assert (21, 1) in factor_solutions(cc.FactorSpec(21, 6), forbid_trivial=False)
    assert (21, 1) not in factor_solutions(cc.FactorSpec(21, 6))


def test_factor_spec_bounds():
    assert (cc.FactorSpec(35, 6).n_p, cc.FactorSpec(35, 6).n_q) == (5, 3)
    assert cc.FactorSpec(35).n_n == 6
    with pytest.raises(cc.CompileError):
        cc.FactorSpec(70, 6)
    with pytest.raises(cc.CompileError):
        cc.compile_factorization(cc.FactorSpec(3, 2))


def test_factor_gate_counts():
    counts = [cc.gate_count_report(cc.compile_factorization(cc.FactorSpec((1 << k) - 1, k)))["total"]
              for k in (6, 9, 12, 15, 18)]
    assert counts == [56, 140, 323, 497, 806]


def test_compiled_netlist_is_valid_and_pins_product():
    net = cc.compile_factorization(cc.FactorSpec(35, 6))
    assert nl.validate(net).ok
    levels = {g.node: g.level for g in net.generators}
    names = {n.id: n.label for n in net.nodes}
    prod_bits = {int(names[k][1:]): lv for k, lv in levels.items() if re.fullmatch(r"m\d+", names[k])}
    assert prod_bits
    for k, lv in prod_bits.items():
        assert (1 if lv > 0 else 0) == cc.bits_of(35, 8)[k]
    meta = net.meta()
    assert (meta["n"], meta["n_p"], meta["n_q"]) == ("35", "5", "3")
    assert [len(g) for _, g in net.readout] == [5, 3]


def test_not_maps_to_xor_with_one():
    c = cc.BoolCircuit()
    a = c.line("a")
    b = c.gate("NOT", a)
    c.constrain(b, 0)
    c.unknowns["a"] = [a]
    net = cc.compile_boolean(c)
    (g,) = net.gates
    assert g.kind.value == "XOR"
    assert {gen.node: gen.level for gen in net.generators}[g.t2] == 1.0


def test_circuit_errors():
    c = cc.BoolCircuit()
    a = c.line()
    with pytest.raises(cc.CompileError):
        c.gate("NAND", a, a)
    with pytest.raises(cc.CompileError):
        c.gate("AND", a)
    c.constrain(a, 1)
    with pytest.raises(cc.CompileError):
        c.constrain(a, 0)
    c = cc.BoolCircuit()
    x, y = c.line(), c.line()
    c.gates.append(cc.BoolGate("AND", (x, y), y))
    with pytest.raises(cc.CompileError, match="cycle"):
        c.check()


def subset_solutions(spec, fold):
    c = cc.subset_sum_circuit(spec, fold)
    sel = c.unknowns["c"]
    return [bits for bits in itertools.product((0, 1), repeat=spec.n)
            if c.satisfied(dict(zip(sel, bits)))]


@pytest.mark.parametrize("fold", [False, True])
@pytest.mark.parametrize("elements,target", [((5, 6, 7), 13), ((5, 6, 7), 4), ((1, 2, 3), 3),
                                             ((3, 5, 6), 14)])
def test_subset_sum_circuit_matches_brute_force(elements, target, fold):
    spec = cc.SubsetSumSpec(elements, target, 3)
    expect = [b for b in itertools.product((0, 1), repeat=3)
              if sum(x * e for x, e in zip(b, elements)) == target]
    assert subset_solutions(spec, fold) == expect


def test_subset_sum_spec_errors():
    with pytest.raises(cc.CompileError):
        cc.SubsetSumSpec((9,), 9, 3)
    with pytest.raises(cc.CompileError):
        cc.SubsetSumSpec((), 1, 3)
    with pytest.raises(cc.CompileError):
        cc.SubsetSumSpec((1, 2), 64, 3)
    with pytest.raises(cc.TrivialInstance):
        cc.compile_subset_sum(cc.SubsetSumSpec((1, 2), 0, 3))


def test_subset_sum_gate_count_linear_in_precision():
    counts = [cc.gate_count_report(cc.compile_subset_sum(
        cc.SubsetSumSpec(((1 << p) - 1, (1 << p) - 2, (1 << p) - 3), 1, p)))["total"]
        for p in range(2, 8)]
    assert counts == [22, 35, 48, 61, 74, 87]
    assert np.all(np.diff(counts) == 13)


def test_gate_count_report_fields():
    rep = cc.gate_count_report(cc.compile_factorization(cc.FactorSpec(35, 6)))
    assert rep["n_M"] == 12 * rep["total"]
    assert rep["state_dim"] == rep["n_free"] + rep["n_M"] + 2 * rep["n_DCG"]
    assert rep["by_kind"] == {"AND": 32, "OR": 7, "XOR": 17}


def test_adder_readout():
    c = cc.build_adder(3)
    assert list(c.unknowns) == ["a", "b", "cin", "sum"]
    assert len(c.unknowns["sum"]) == 4
    assert "cin" not in cc.build_adder(1).unknowns
