import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from solc import compiler as cc
from solc import netlist as nl
from solc.gates import GateKind


def small_net():
    return nl.build(
        nodes=[(0, "a"), (1, "b"), (2, "o"), (3, "c"), (4, "s")],
        gates=[("AND", 0, 1, 2), ("XOR", 2, 3, 4)],
        generators=[(4, 1.0, 1.0)],
        readout={"ab": [0, 1]},
        metadata={"problem": "demo"},
    )


def test_build_places_vcdcgs_on_free_touched_nodes():
    net = small_net()
    assert net.vcdcg_nodes == (0, 1, 2, 3)
    assert net.generator_nodes == {4}
    assert nl.validate(net).stats["n_M"] == 24


def test_round_trip_text():
    net = small_net()
    text = nl.serialize(net)
    assert nl.deserialize(text) == net
    assert nl.serialize(nl.deserialize(text)) == text


def test_save_load(tmp_path):
    net = cc.compile_factorization(cc.FactorSpec(35, 6))
    path = tmp_path / "f.net"
    nl.save(net, path)
    assert nl.load(path) == net


@pytest.mark.parametrize("gates,msg", [
    ([("AND", 0, 1, 9)], "missing node"),
    ([("AND", 0, 0, 1)], "same node"),
])
def test_validate_gate_errors(gates, msg):
    with pytest.raises(nl.NetlistError, match=msg):
        nl.build([(0, "a"), (1, "b"), (2, "c")], gates)


def test_validate_other_errors():
    nodes = [(0, "a"), (1, "b"), (2, "c")]
    with pytest.raises(nl.NetlistError, match="duplicate node ids"):
        nl.build(nodes + [(0, "z")], [("OR", 0, 1, 2)])
    with pytest.raises(nl.NetlistError, match="level"):
        nl.build(nodes, [("OR", 0, 1, 2)], generators=[(2, 0.5, 0.0)])
    with pytest.raises(nl.NetlistError, match="without VCDCG"):
        nl.build(nodes, [("OR", 0, 1, 2)], vcdcgs=[0, 1])
    with pytest.raises(nl.NetlistError, match="same node"):
        nl.build(nodes, [("OR", 0, 1, 2)], generators=[(2, 1.0, 0.0)], vcdcgs=[0, 1, 2])


def test_validate_warns_on_floating_nodes():
    net = nl.build([(0, "a"), (1, "b"), (2, "c"), (3, "loose")], [("OR", 0, 1, 2)])
    assert any("not connected" in w for w in nl.validate(net).warnings)


@pytest.mark.parametrize("text,line", [
    ("garbage\n", 1),
    ("SOLC-NETLIST v1\n[NODES]\n0 a b\n", 3),
    ("SOLC-NETLIST v1\n[NODES]\n0 a\n[GATES]\nNAND 0 0 0\n", 5),
    ("SOLC-NETLIST v1\n[NODES]\n-1 a\n", 3),
    ("SOLC-NETLIST v1\n[GATES]\n", 2),
    ("SOLC-NETLIST v1\n0 a\n", 2),
])
def test_parse_errors_report_line(text, line):
    with pytest.raises(nl.NetlistParseError) as exc:
        nl.deserialize(text)
    assert exc.value.lineno == line


def test_missing_section():
    with pytest.raises(nl.NetlistParseError, match="missing section"):
        nl.deserialize("SOLC-NETLIST v1\n[NODES]\n0 a\n")


@st.composite
def netlists(draw):
    n = draw(st.integers(3, 12))
    ids = draw(st.lists(st.integers(0, 10_000), min_size=n, max_size=n, unique=True))
    labels = draw(st.lists(st.from_regex(r"[A-Za-z_][A-Za-z0-9_]{0,6}", fullmatch=True),
                           min_size=n, max_size=n))
    nodes = list(zip(ids, labels))
    gates = []
    for _ in range(draw(st.integers(1, 6))):
        t = draw(st.lists(st.sampled_from(ids), min_size=3, max_size=3, unique=True))
        gates.append((draw(st.sampled_from(list(GateKind))), *t))
    touched = sorted({t for g in gates for t in g[1:]})
    pinned = draw(st.lists(st.sampled_from(touched), unique=True, max_size=len(touched) - 1))
    gens = [(k, draw(st.sampled_from([1.0, -1.0])),
             draw(st.floats(0, 10, allow_nan=False))) for k in pinned]
    readout = {}
    if draw(st.booleans()):
        readout["r"] = draw(st.lists(st.sampled_from(ids), min_size=1, max_size=4))
    meta = {"seed": str(draw(st.integers(0, 99)))}
    return nl.build(nodes, gates, gens, None, readout, meta)


@settings(max_examples=150, deadline=None)
@given(netlists())
def test_round_trip_property(net):
    text = nl.serialize(net)
    back = nl.deserialize(text)
    assert back == net
    assert nl.serialize(back) == text
