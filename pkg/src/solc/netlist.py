"""SOLC netlists: nodes, gate instances, generators, VCDCG placement and
readout groups, plus the line-oriented v1 text format."""
from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field

from .gates import GateKind

FORMAT_HEADER = "SOLC-NETLIST v1"
SECTIONS = ("NODES", "GATES", "GENERATORS", "VCDCG", "READOUT", "META")


class NetlistError(ValueError):
    pass


class NetlistParseError(NetlistError):
    def __init__(self, message: str, lineno: int | None = None):
        prefix = f"line {lineno}: " if lineno is not None else ""
        super().__init__(prefix + message)
        self.lineno = lineno


@dataclass(frozen=True)
class Node:
    id: int
    label: str


@dataclass(frozen=True)
class GateInstance:
    kind: GateKind
    t1: int
    t2: int
    out: int

    @property
    def terminals(self) -> tuple[int, int, int]:
        return (self.t1, self.t2, self.out)


@dataclass(frozen=True)
class Generator:
    node: int
    level: float  # in units of v_c: +1 or -1
    ramp: float   # ramp duration (time units)


@dataclass
class Diagnostics:
    errors: list[str] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)
    stats: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return not self.errors


@dataclass(frozen=True)
class Netlist:
    nodes: tuple[Node, ...]
    gates: tuple[GateInstance, ...]
    generators: tuple[Generator, ...]
    vcdcg_nodes: tuple[int, ...]
    readout: tuple[tuple[str, tuple[int, ...]], ...]
    metadata: tuple[tuple[str, str], ...] = ()

    @property
    def node_ids(self) -> list[int]:
        return [n.id for n in self.nodes]

    @property
    def generator_nodes(self) -> set[int]:
        return {g.node for g in self.generators}

    def readout_map(self) -> dict[str, tuple[int, ...]]:
        return dict(self.readout)

    def meta(self) -> dict[str, str]:
        return dict(self.metadata)

    def touched_nodes(self) -> set[int]:
        return {t for g in self.gates for t in g.terminals}


def auto_vcdcg(nodes, gates, generators) -> tuple[int, ...]:
    """One VCDCG on every gate-touched node that is not driven by a generator."""
    pinned = {g.node for g in generators}
    touched = {t for g in gates for t in g.terminals}
    return tuple(n.id for n in nodes if n.id in touched and n.id not in pinned)


def build(nodes, gates, generators=(), vcdcgs=None, readout=None, metadata=None) -> Netlist:
    """Construct a netlist and validate it; ``vcdcgs=None`` auto-places VCDCGs."""
    nodes = tuple(n if isinstance(n, Node) else Node(int(n[0]), str(n[1])) for n in nodes)
    gates = tuple(g if isinstance(g, GateInstance)
                  else GateInstance(GateKind.parse(str(g[0]) if not isinstance(g[0], GateKind)
                                                   else g[0].value), *map(int, g[1:]))
                  for g in gates)
    generators = tuple(g if isinstance(g, Generator)
                       else Generator(int(g[0]), float(g[1]), float(g[2])) for g in generators)
    if vcdcgs is None:
        vcdcgs = auto_vcdcg(nodes, gates, generators)
    readout = tuple((str(k), tuple(int(i) for i in v))
                    for k, v in (readout.items() if isinstance(readout, dict) else readout or ()))
    metadata = tuple((str(k), str(v))
                     for k, v in (metadata.items() if isinstance(metadata, dict) else metadata or ()))
    net = Netlist(nodes, gates, generators, tuple(int(i) for i in vcdcgs), readout, metadata)
    diag = validate(net)
    if diag.errors:
        raise NetlistError("; ".join(diag.errors))
    return net


def validate(net: Netlist) -> Diagnostics:
    d = Diagnostics()
    ids = [n.id for n in net.nodes]
    idset = set(ids)
    dup = [k for k, c in Counter(ids).items() if c > 1]
    if dup:
        d.errors.append(f"duplicate node ids {sorted(dup)}")
    for label in (k for k, c in Counter(n.label for n in net.nodes).items() if c > 1):
        d.warnings.append(f"duplicate node label {label!r}")
    for k, g in enumerate(net.gates):
        missing = [t for t in g.terminals if t not in idset]
        if missing:
            d.errors.append(f"gate {k} references missing node(s) {missing}")
        if len(set(g.terminals)) < 3:
            d.errors.append(f"gate {k} connects two terminals to the same node")
    gen_nodes = [g.node for g in net.generators]
    for node, c in Counter(gen_nodes).items():
        if c > 1:
            d.errors.append(f"node {node} has {c} generators")
    for g in net.generators:
        if g.node not in idset:
            d.errors.append(f"generator on missing node {g.node}")
        if g.level not in (1.0, -1.0):
            d.errors.append(f"generator on node {g.node} has level {g.level}, expected +-1")
        if g.ramp < 0:
            d.errors.append(f"generator on node {g.node} has negative ramp time")
    for node, c in Counter(net.vcdcg_nodes).items():
        if c > 1:
            d.errors.append(f"node {node} carries {c} VCDCGs")
        if node not in idset:
            d.errors.append(f"VCDCG on missing node {node}")
    both = set(gen_nodes) & set(net.vcdcg_nodes)
    if both:
        d.errors.append(f"generator and VCDCG on the same node(s) {sorted(both)}")
    need = net.touched_nodes() - set(gen_nodes)
    lacking = need - set(net.vcdcg_nodes)
    if lacking:
        d.errors.append(f"gate-connected node(s) without VCDCG {sorted(lacking)}")
    names = [name for name, _ in net.readout]
    if len(set(names)) != len(names):
        d.errors.append("duplicate readout group names")
    for name, group in net.readout:
        for node in group:
            if node not in idset:
                d.errors.append(f"readout {name!r} references missing node {node}")
    floating = idset - net.touched_nodes()
    if floating and net.gates:
        d.warnings.append(f"{len(floating)} node(s) not connected to any gate")
    if not net.gates:
        d.warnings.append("no gates")
    kinds = Counter(g.kind.value for g in net.gates)
    d.stats = dict(
        nodes=len(ids),
        gates=len(net.gates),
        gates_by_kind={k.value: kinds.get(k.value, 0) for k in GateKind},
        n_M=12 * len(net.gates),
        n_R=3 * len(net.gates),
        n_DCG=len(net.vcdcg_nodes),
        generators=len(net.generators),
    )
    return d


# --------------------------------------------------------------------------
# text format


def _fmt_float(x: float) -> str:
    return repr(float(x))


def serialize(net: Netlist) -> str:
    out = [FORMAT_HEADER, "[NODES]"]
    out += [f"{n.id} {n.label}" for n in net.nodes]
    out.append("[GATES]")
    out += [f"{g.kind.value} {g.t1} {g.t2} {g.out}" for g in net.gates]
    out.append("[GENERATORS]")
    out += [f"{g.node} {_fmt_float(g.level)} {_fmt_float(g.ramp)}" for g in net.generators]
    out.append("[VCDCG]")
    out += [str(i) for i in net.vcdcg_nodes]
    out.append("[READOUT]")
    out += [" ".join([name, *map(str, group)]) for name, group in net.readout]
    out.append("[META]")
    out += [f"{k} {v}" for k, v in net.metadata]
    return "\n".join(out) + "\n"


def _int(tok: str, lineno: int, what: str) -> int:
    try:
        value = int(tok)
    except ValueError:
        raise NetlistParseError(f"{what}: expected unsigned integer, got {tok!r}", lineno) from None
    if value < 0:
        raise NetlistParseError(f"{what}: expected unsigned integer, got {tok!r}", lineno)
    return value


def _float(tok: str, lineno: int, what: str) -> float:
    try:
        return float(tok)
    except ValueError:
        raise NetlistParseError(f"{what}: expected number, got {tok!r}", lineno) from None


def deserialize(text: str, check: bool = True) -> Netlist:
    lines = text.splitlines()
    if not lines or lines[0].strip() != FORMAT_HEADER:
        raise NetlistParseError(f"missing header {FORMAT_HEADER!r}", 1)
    body: dict[str, list[tuple[int, str]]] = {}
    current = None
    for lineno, raw in enumerate(lines[1:], 2):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if line.startswith("[") and line.endswith("]"):
            name = line[1:-1].strip().upper()
            if name not in SECTIONS:
                raise NetlistParseError(f"unknown section [{name}]", lineno)
            if name in body:
                raise NetlistParseError(f"duplicate section [{name}]", lineno)
            expected = SECTIONS[len(body)]
            if name != expected:
                raise NetlistParseError(f"section [{name}] out of order, expected [{expected}]",
                                        lineno)
            body[name] = []
            current = name
            continue
        if current is None:
            raise NetlistParseError("record before first section", lineno)
        body[current].append((lineno, raw))
    # records are checked before section presence so errors point at a line
    missing = [s for s in SECTIONS if s not in body]
    for name in missing:
        body[name] = []

    nodes = []
    for lineno, raw in body["NODES"]:
        f = raw.split()
        if len(f) != 2:
            raise NetlistParseError("node record: expected 'id label'", lineno)
        nodes.append(Node(_int(f[0], lineno, "node id"), f[1]))
    gates = []
    for lineno, raw in body["GATES"]:
        f = raw.split()
        if len(f) != 4:
            raise NetlistParseError("gate record: expected 'KIND t1 t2 out'", lineno)
        try:
            kind = GateKind.parse(f[0])
        except ValueError as exc:
            raise NetlistParseError(str(exc), lineno) from None
        gates.append(GateInstance(kind, *(_int(t, lineno, "gate terminal") for t in f[1:])))
    gens = []
    for lineno, raw in body["GENERATORS"]:
        f = raw.split()
        if len(f) != 3:
            raise NetlistParseError("generator record: expected 'node level ramp_time'", lineno)
        gens.append(Generator(_int(f[0], lineno, "generator node"),
                              _float(f[1], lineno, "generator level"),
                              _float(f[2], lineno, "generator ramp")))
    vcdcg = []
    for lineno, raw in body["VCDCG"]:
        f = raw.split()
        if len(f) != 1:
            raise NetlistParseError("VCDCG record: expected one node id", lineno)
        vcdcg.append(_int(f[0], lineno, "VCDCG node"))
    readout = []
    for lineno, raw in body["READOUT"]:
        f = raw.split()
        if len(f) < 2:
            raise NetlistParseError("readout record: expected 'name node_msb ... node_lsb'",
                                    lineno)
        readout.append((f[0], tuple(_int(t, lineno, "readout node") for t in f[1:])))
    meta = []
    for lineno, raw in body["META"]:
        f = raw.strip().split(None, 1)
        meta.append((f[0], f[1] if len(f) > 1 else ""))
    if missing:
        raise NetlistParseError(f"missing section [{missing[0]}]")
    net = Netlist(tuple(nodes), tuple(gates), tuple(gens), tuple(vcdcg), tuple(readout),
                  tuple(meta))
    if check:
        diag = validate(net)
        if diag.errors:
            raise NetlistError("; ".join(diag.errors))
    return net


def load(path) -> Netlist:
    with open(path) as fh:
        return deserialize(fh.read())


def save(net: Netlist, path) -> None:
    from .util import atomic_write_text

    atomic_write_text(path, serialize(net))
