"""Compile boolean problems (factorization, subset-sum, adders, generic
combinational circuits) into SOLC netlists."""
from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field

from . import netlist as nl
from .gates import GateKind

DEFAULT_RAMP = 1.0
_OPS = ("AND", "OR", "XOR", "NOT")


class CompileError(ValueError):
    pass


class TrivialInstance(CompileError):
    """The instance is decided without simulation (e.g. empty subset)."""


@dataclass
class BoolGate:
    op: str
    inputs: tuple[int, ...]
    output: int


@dataclass
class BoolCircuit:
    """Combinational description: lines, gates, constants and unknowns.

    ``constraints`` fixes line values; ``unknowns`` maps readout names to
    line ids, MSB first.
    """

    names: list[str] = field(default_factory=list)
    gates: list[BoolGate] = field(default_factory=list)
    constraints: dict[int, int] = field(default_factory=dict)
    unknowns: dict[str, list[int]] = field(default_factory=dict)
    _consts: dict[int, int] = field(default_factory=dict, repr=False)

    def line(self, name: str | None = None) -> int:
        self.names.append(name or f"n{len(self.names)}")
        return len(self.names) - 1

    def lines(self, prefix: str, count: int) -> list[int]:
        """``count`` new lines named prefix0..prefix{count-1} (LSB first)."""
        return [self.line(f"{prefix}{k}") for k in range(count)]

    def const(self, bit: int) -> int:
        """Shared line pinned to ``bit``."""
        bit = int(bit)
        if bit not in self._consts:
            self._consts[bit] = self.line(f"const{bit}")
            self.constrain(self._consts[bit], bit)
        return self._consts[bit]

    def gate(self, op: str, *inputs: int, name: str | None = None) -> int:
        op = op.upper()
        if op not in _OPS:
            raise CompileError(f"unknown boolean op {op!r}")
        arity = 1 if op == "NOT" else 2
        if len(inputs) != arity:
            raise CompileError(f"{op} takes {arity} input(s)")
        out = self.line(name)
        self.gates.append(BoolGate(op, tuple(inputs), out))
        return out

    def constrain(self, line: int, bit: int) -> None:
        bit = int(bit)
        if bit not in (0, 1):
            raise CompileError("constraint bits must be 0 or 1")
        old = self.constraints.get(line)
        if old is not None and old != bit:
            raise CompileError(f"line {self.names[line]!r} constrained to both 0 and 1")
        self.constraints[line] = bit

    def driven(self) -> set[int]:
        return {g.output for g in self.gates}

    def primary_lines(self) -> list[int]:
        d = self.driven()
        return [k for k in range(len(self.names)) if k not in d]

    def check(self) -> None:
        outs = Counter(g.output for g in self.gates)
        multi = [self.names[k] for k, c in outs.items() if c > 1]
        if multi:
            raise CompileError(f"lines driven by several gates: {multi}")
        order = self.topological_order()
        if len(order) != len(self.gates):
            raise CompileError("circuit has a combinational cycle")

    def topological_order(self) -> list[int]:
        driver = {g.output: k for k, g in enumerate(self.gates)}
        state: dict[int, int] = {}
        order: list[int] = []
        for start in range(len(self.gates)):
            stack = [(start, False)]
            while stack:
                k, done = stack.pop()
                if done:
                    state[k] = 2
                    order.append(k)
                    continue
                if state.get(k) == 2:
                    continue
                if state.get(k) == 1:
                    return order  # cycle; caller compares lengths
                state[k] = 1
                stack.append((k, True))
                for line in self.gates[k].inputs:
                    j = driver.get(line)
                    if j is not None and state.get(j) != 2:
                        if state.get(j) == 1:
                            return order
                        stack.append((j, False))
        return order

    def evaluate(self, assignment: dict[int, int]) -> dict[int, int]:
        """Propagate primary-line values through the gates."""
        values = dict(assignment)
        for line, bit in self.constraints.items():
            if line not in self.driven():
                values.setdefault(line, bit)
        for k in self.topological_order():
            g = self.gates[k]
            a = [values[i] for i in g.inputs]
            if g.op == "NOT":
                values[g.output] = 1 - a[0]
            else:
                values[g.output] = GateKind(g.op).apply(a[0], a[1])
        return values

    def satisfied(self, assignment: dict[int, int]) -> bool:
        values = self.evaluate(assignment)
        return all(values[k] == b for k, b in self.constraints.items())


def bits_of(value: int, width: int) -> list[int]:
    """LSB-first bits."""
    return [(value >> k) & 1 for k in range(width)]


def value_of(bits_msb_first) -> int:
    out = 0
    for b in bits_msb_first:
        out = (out << 1) | int(b)
    return out


# --------------------------------------------------------------------------
# arithmetic fragments (lines are LSB first)


def half_adder(c: BoolCircuit, a: int, b: int) -> tuple[int, int]:
    return c.gate("XOR", a, b), c.gate("AND", a, b)


def full_adder(c: BoolCircuit, a: int, b: int, cin: int) -> tuple[int, int]:
    s1 = c.gate("XOR", a, b)
    s = c.gate("XOR", s1, cin)
    c1 = c.gate("AND", a, b)
    c2 = c.gate("AND", s1, cin)
    return s, c.gate("OR", c1, c2)


def ripple_add(c: BoolCircuit, a: list[int], b: list[int], cin: int | None = None) -> list[int]:
    """Sum of two LSB-first words; result has max(len)+1 lines."""
    if len(a) < len(b):
        a, b = b, a
    out = []
    carry = cin
    for k, ak in enumerate(a):
        if k < len(b):
            if carry is None:
                s, carry = half_adder(c, ak, b[k])
            else:
                s, carry = full_adder(c, ak, b[k], carry)
        elif carry is None:
            s = ak
        else:
            s, carry = half_adder(c, ak, carry)
        out.append(s)
    if carry is not None:
        out.append(carry)
    return out


def build_adder(width: int, carry_in: bool | None = None) -> BoolCircuit:
    """Ripple-carry adder with free addends ``a``/``b`` and output ``sum``.

    ``carry_in`` defaults to True for width > 1 (a chain of ``width``
    full adders fed by line ``cin``) and False for width 1 (a half adder).
    Readout groups: a, b, (cin), sum (width + 1 bits, MSB first).
    """
    if width < 1:
        raise CompileError("adder width must be >= 1")
    if carry_in is None:
        carry_in = width > 1
    c = BoolCircuit()
    a = c.lines("a", width)
    b = c.lines("b", width)
    cin = c.line("cin") if carry_in else None
    s = ripple_add(c, a, b, cin)
    for k, line in enumerate(s):
        c.names[line] = f"sum{k}"
    c.unknowns["a"] = a[::-1]
    c.unknowns["b"] = b[::-1]
    if cin is not None:
        c.unknowns["cin"] = [cin]
    c.unknowns["sum"] = s[::-1]
    return c


def constrain_word(c: BoolCircuit, lines_msb_first: list[int], value: int) -> None:
    width = len(lines_msb_first)
    if value < 0 or value >= 1 << width:
        raise CompileError(f"value {value} does not fit in {width} bits")
    for line, bit in zip(lines_msb_first[::-1], bits_of(value, width)):
        c.constrain(line, bit)


# --------------------------------------------------------------------------
# netlist emission


def compile_boolean(c: BoolCircuit, ramp: float = DEFAULT_RAMP, metadata=None) -> nl.Netlist:
    """One node per line, one SOLG per gate, generators on constrained lines.

    NOT is realized as XOR with the second terminal on a line pinned to 1.
    Readout groups keep pinned lines; a decoder reads them at the
    generator level.
    """
    c.check()
    gates = []
    for g in c.gates:
        if g.op == "NOT":
            gates.append((GateKind.XOR, g.inputs[0], c.const(1), g.output))
        else:
            gates.append((GateKind(g.op), g.inputs[0], g.inputs[1], g.output))
    used = {t for g in gates for t in g[1:]}
    readout = {name: list(group) for name, group in c.unknowns.items() if group}
    keep = used | {k for grp in readout.values() for k in grp}
    pinned = {k: b for k, b in c.constraints.items() if k in keep}
    keep = sorted(keep)
    nodes = [(k, c.names[k]) for k in keep]
    generators = [(k, 1.0 if b else -1.0, ramp) for k, b in sorted(pinned.items())]
    return nl.build(nodes, gates, generators, None, readout, metadata)


# --------------------------------------------------------------------------
# factorization


@dataclass(frozen=True)
class FactorSpec:
    n: int
    n_n: int | None = None

    def __post_init__(self):
        if self.n < 1:
            raise CompileError("n must be positive")
        if self.n_n is None:
            object.__setattr__(self, "n_n", max(self.n.bit_length(), 2))
        if self.n_n < 2:
            raise CompileError("n_n must be >= 2")
        if self.n >= 1 << self.n_n:
            raise CompileError(f"{self.n} does not fit in {self.n_n} bits")

    @property
    def n_p(self) -> int:
        return self.n_n - 1

    @property
    def n_q(self) -> int:
        return self.n_n // 2


def multiplier(c: BoolCircuit, p: list[int], q: list[int]) -> list[int]:
    """Array multiplier: AND partial products reduced row by row with
    ripple adders.  Inputs and result LSB first; result has len(p)+len(q) lines."""
    rows = [[c.gate("AND", pi, qj, name=f"pp{i}_{j}") for i, pi in enumerate(p)]
            for j, qj in enumerate(q)]
    product = [rows[0][0]]
    acc = rows[0][1:]
    for j in range(1, len(q)):
        s = ripple_add(c, acc, rows[j])
        product.append(s[0])
        acc = s[1:]
    product.extend(acc)
    return product


def _nonzero_above_lsb(c: BoolCircuit, word: list[int]) -> int:
    """Line that is 1 iff some bit above the LSB is set."""
    acc = word[1]
    for line in word[2:]:
        acc = c.gate("OR", acc, line)
    return acc


def factor_circuit(spec: FactorSpec, forbid_trivial: bool = True) -> BoolCircuit:
    if spec.n_q < 1 or spec.n_p < 1:
        raise CompileError("n_n too small for a factorization circuit")
    c = BoolCircuit()
    p = c.lines("p", spec.n_p)
    q = c.lines("q", spec.n_q)
    prod = multiplier(c, p, q)
    for k, line in enumerate(prod):
        if c.names[line].startswith("n"):
            c.names[line] = f"m{k}"
    for line, bit in zip(prod, bits_of(spec.n, len(prod))):
        c.constrain(line, bit)
    if forbid_trivial:
        # q = 1 is a valid factorization iff p = n is representable, and vice versa
        if spec.n < 1 << spec.n_p:
            if spec.n_q < 2:
                raise CompileError("cannot exclude the trivial factor with n_q < 2")
            c.constrain(_nonzero_above_lsb(c, q) if spec.n_q > 2 else q[1], 1)
        if spec.n < 1 << spec.n_q:
            c.constrain(_nonzero_above_lsb(c, p) if spec.n_p > 2 else p[1], 1)
    c.unknowns["p"] = p[::-1]
    c.unknowns["q"] = q[::-1]
    return c


def compile_factorization(spec: FactorSpec, ramp: float = DEFAULT_RAMP,
                          forbid_trivial: bool = True) -> nl.Netlist:
    if spec.n_n < 3:
        raise CompileError(f"n_n = {spec.n_n} gives n_q = {spec.n_q}; need n_n >= 3")
    c = factor_circuit(spec, forbid_trivial)
    meta = dict(problem="factor", n=spec.n, n_n=spec.n_n, n_p=spec.n_p, n_q=spec.n_q)
    return compile_boolean(c, ramp, meta)


# --------------------------------------------------------------------------
# subset-sum


@dataclass(frozen=True)
class SubsetSumSpec:
    elements: tuple[int, ...]
    target: int
    precision: int

    def __post_init__(self):
        object.__setattr__(self, "elements", tuple(int(q) for q in self.elements))
        if not self.elements:
            raise CompileError("empty set")
        if self.precision < 1:
            raise CompileError("precision must be >= 1")
        for q in self.elements:
            if q <= 0:
                raise CompileError(f"element {q} is not a positive integer")
            if q >= 1 << self.precision:
                raise CompileError(f"element {q} needs more than {self.precision} bits")
        if self.target < 0:
            raise CompileError("target must be non-negative")
        if self.target >= 1 << self.width:
            raise CompileError(f"target {self.target} does not fit in {self.width} bits")

    @property
    def n(self) -> int:
        return len(self.elements)

    @property
    def width_bound(self) -> int:
        """The width estimate ceil(log2(n-1)) + p."""
        return (math.ceil(math.log2(self.n - 1)) if self.n > 2 else 0) + self.precision

    @property
    def width(self) -> int:
        """Bits needed to express the sum of all elements."""
        return max(1, sum(self.elements).bit_length())


def subset_sum_circuit(spec: SubsetSumSpec, fold_constants: bool = False) -> BoolCircuit:
    c = BoolCircuit()
    sel = [c.line(f"c{j + 1}") for j in range(spec.n)]
    words = []
    for j, (cj, qj) in enumerate(zip(sel, spec.elements)):
        word = []
        for k, bit in enumerate(bits_of(qj, spec.precision)):
            if fold_constants:
                word.append(cj if bit else c.const(0))
            else:
                word.append(c.gate("AND", cj, c.const(bit), name=f"g{j + 1}_{k}"))
        words.append(word)
    acc = words[0]
    for word in words[1:]:
        acc = ripple_add(c, acc, word)
    # target zero-padded to the accumulator width
    if spec.target >= 1 << len(acc):
        raise CompileError("target exceeds the adder width")
    for k, line in enumerate(acc):
        c.constrain(line, (spec.target >> k) & 1)
    c.unknowns["c"] = sel
    return c


def compile_subset_sum(spec: SubsetSumSpec, ramp: float = DEFAULT_RAMP,
                       fold_constants: bool = False, allow_empty: bool = False) -> nl.Netlist:
    """Readout group ``c`` lists c_1..c_n (c_1 first)."""
    if spec.target == 0 and not allow_empty:
        raise TrivialInstance("target 0 is reached only by the empty subset")
    c = subset_sum_circuit(spec, fold_constants)
    meta = dict(problem="subset-sum", set=",".join(map(str, spec.elements)),
                target=spec.target, precision=spec.precision, width=spec.width)
    return compile_boolean(c, ramp, meta)


# --------------------------------------------------------------------------
# reports


def gate_count_report(net: nl.Netlist) -> dict:
    kinds = Counter(g.kind.value for g in net.gates)
    by_kind = {k.value: kinds.get(k.value, 0) for k in GateKind}
    n_free = len(net.nodes) - len(net.generators)
    n_m = 12 * len(net.gates)
    n_dcg = len(net.vcdcg_nodes)
    return dict(total=len(net.gates), by_kind=by_kind, nodes=len(net.nodes),
                n_free=n_free, n_M=n_m, n_DCG=n_dcg,
                state_dim=n_free + n_m + 2 * n_dcg)
