import pytest

from solc import compiler as cc
from solc import device as dm
from solc.assembler import assemble


@pytest.fixture
def params():
    return dm.DeviceParams()


def one_gate(kind, out_bit=1, readout=True):
    """A single gate with free inputs and the output pinned to ``out_bit``."""
    c = cc.BoolCircuit()
    a, b = c.line("a"), c.line("b")
    o = c.gate(kind, a, b)
    c.constrain(o, out_bit)
    if readout:
        c.unknowns["ab"] = [a, b]
    return cc.compile_boolean(c)


@pytest.fixture
def and_system(params):
    return assemble(one_gate("AND"), params)


@pytest.fixture
def adder_system(params):
    return assemble(cc.compile_boolean(cc.build_adder(2)), params)
