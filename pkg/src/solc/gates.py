"""Self-organizing logic gates: coefficient tables, VCVG evaluation and
single-gate current analysis.

Each gate terminal carries a dynamic correction module of five branches.
Branch ``b`` is a two-terminal element (memristor M1..M4 or the fixed
resistor R = R_off) in series with a ground-referenced VCVG whose value
is ``L_b = a1*v1 + a2*v2 + ao*vo + dc*v_c``.  The branch current leaving
the terminal is ``(v_t - L_b) / R_b``.

M1/M2 and M3/M4 are mounted with opposite orientation: the voltage seen
by the memristor is ``pol * (v_t - L_b)`` with ``pol = (+1, +1, -1, -1)``.
With that orientation every memristor that carries voltage in a
logically consistent configuration relaxes to R_off, and every
inconsistent configuration switches at least one memristor to R_on.
"""
from __future__ import annotations

import enum
import itertools
from dataclasses import dataclass

import numpy as np

from .device import DeviceParams, memristor_rate


class GateKind(str, enum.Enum):
    AND = "AND"
    OR = "OR"
    XOR = "XOR"

    @classmethod
    def parse(cls, token: str) -> "GateKind":
        key = token.upper()
        if key.startswith("SO_"):
            key = key[3:]
        try:
            return cls(key)
        except ValueError:
            raise ValueError(f"unknown gate kind {token!r}") from None

    def apply(self, b1: int, b2: int) -> int:
        if self is GateKind.AND:
            return b1 & b2
        if self is GateKind.OR:
            return b1 | b2
        return b1 ^ b2


TERMINALS = ("T1", "T2", "OUT")
BRANCHES = ("LM1", "LM2", "LM3", "LM4", "LR")
COEFFS = ("a1", "a2", "ao", "dc")
MEMRISTOR_POLARITY = np.array([1.0, 1.0, -1.0, -1.0])

# [terminal][branch] -> (a1, a2, ao, dc / v_c)
_TABLE1 = {
    GateKind.AND: (
        ((0, -1, 1, 1), (1, 0, 0, 0), (0, 0, 1, 0), (1, 0, 0, 0), (4, 1, -3, -1)),
        ((-1, 0, 1, 1), (0, 1, 0, 0), (0, 0, 1, 0), (0, 1, 0, 0), (1, 4, -3, -1)),
        ((1, 0, 0, 0), (0, 1, 0, 0), (0, 0, 1, 0), (2, 2, -1, -2), (-4, -4, 7, 2)),
    ),
    GateKind.OR: (
        ((0, 0, 1, 0), (1, 0, 0, 0), (0, -1, 1, -1), (1, 0, 0, 0), (4, 1, -3, 1)),
        ((0, 0, 1, 0), (0, 1, 0, 0), (-1, 0, 1, -1), (0, 1, 0, 0), (1, 4, -3, 1)),
        ((0, 0, 1, 0), (2, 2, -1, 2), (1, 0, 0, 0), (0, 1, 0, 0), (-4, -4, 7, -2)),
    ),
    GateKind.XOR: (
        ((0, -1, -1, 1), (0, 1, 1, 1), (0, -1, 1, -1), (0, 1, -1, -1), (6, 0, -1, 0)),
        ((-1, 0, -1, 1), (1, 0, 1, 1), (-1, 0, 1, -1), (1, 0, -1, -1), (0, 6, -1, 0)),
        ((-1, -1, 0, 1), (1, 1, 0, 1), (-1, 1, 0, -1), (1, -1, 0, -1), (-1, -1, 7, 0)),
    ),
}


@dataclass(frozen=True)
class GateParamTable:
    """Coefficient quadruples for all gate kinds.

    ``coeffs[kind]`` is a read-only float array of shape (3, 5, 4) indexed
    by terminal, branch and coefficient (a1, a2, ao, dc); dc is in units
    of v_c.
    """

    coeffs: dict

    @classmethod
    def default(cls) -> "GateParamTable":
        out = {}
        for kind, rows in _TABLE1.items():
            arr = np.array(rows, dtype=float)
            arr.setflags(write=False)
            out[kind] = arr
        return cls(out)

    def __getitem__(self, kind: GateKind) -> np.ndarray:
        return self.coeffs[GateKind(kind)]

    def with_overrides(self, overrides: dict[str, float]) -> "GateParamTable":
        """Apply ``gate.<KIND>.<TERM>.<BRANCH>.<coef>`` keys."""
        out = {k: np.array(v) for k, v in self.coeffs.items()}
        for key, value in overrides.items():
            parts = key.split(".")
            if len(parts) != 5 or parts[0] != "gate":
                raise ValueError(f"bad gate override key {key!r}")
            _, kind, term, branch, coef = parts
            try:
                out[GateKind.parse(kind)][TERMINALS.index(term.upper()),
                                          BRANCHES.index(branch.upper()),
                                          COEFFS.index(coef.lower())] = float(value)
            except ValueError:
                raise ValueError(f"bad gate override key {key!r}") from None
        for arr in out.values():
            arr.setflags(write=False)
        return GateParamTable(out)

    def to_text(self) -> str:
        lines = []
        for kind in GateKind:
            arr = self[kind]
            for ti, term in enumerate(TERMINALS):
                for bi, branch in enumerate(BRANCHES):
                    for ci, coef in enumerate(COEFFS):
                        lines.append(f"gate.{kind.value}.{term}.{branch}.{coef} = "
                                     f"{arr[ti, bi, ci]:g}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "GateParamTable":
        overrides = {}
        for line in text.splitlines():
            line = line.split("#", 1)[0].strip()
            if line:
                key, value = (s.strip() for s in line.split("=", 1))
                overrides[key] = float(value)
        return cls.default().with_overrides(overrides)

    def __eq__(self, other):
        if not isinstance(other, GateParamTable):
            return NotImplemented
        return all(np.array_equal(self[k], other[k]) for k in GateKind)

    __hash__ = None


DEFAULT_TABLE = GateParamTable.default()


def gate_table(kind: GateKind, table: GateParamTable | None = None) -> dict:
    """Nested dict view {terminal: {branch: (a1, a2, ao, dc)}} for one kind."""
    arr = (table or DEFAULT_TABLE)[kind]
    return {term: {branch: tuple(float(c) for c in arr[ti, bi])
                   for bi, branch in enumerate(BRANCHES)}
            for ti, term in enumerate(TERMINALS)}


def vcvg_value(kind, branch, terminal, v1, v2, vo, p: DeviceParams,
               table: GateParamTable | None = None):
    a1, a2, ao, dc = (table or DEFAULT_TABLE)[kind][
        TERMINALS.index(terminal), BRANCHES.index(branch)]
    return a1 * v1 + a2 * v2 + ao * vo + dc * p.v_c


def branch_voltages(kind, v, p: DeviceParams, table: GateParamTable | None = None):
    """(3, 5) array of v_t - L_b for terminal voltages ``v = (v1, v2, vo)``."""
    arr = (table or DEFAULT_TABLE)[kind]
    v = np.asarray(v, dtype=float)
    L = arr[:, :, :3] @ v + arr[:, :, 3] * p.v_c
    return v[:, None] - L


def truth_check(kind, b1: int, b2: int, bo: int) -> bool:
    return GateKind(kind).apply(int(b1), int(b2)) == int(bo)


def _decode(v, p: DeviceParams) -> tuple[int, ...]:
    bits = []
    for value in v:
        if np.isclose(value, p.v_c):
            bits.append(1)
        elif np.isclose(value, -p.v_c):
            bits.append(0)
        else:
            raise ValueError(f"terminal voltage {value} is not +-v_c")
    return tuple(bits)


def classify_config(kind, v1, v2, vo, p: DeviceParams) -> str:
    b1, b2, bo = _decode((v1, v2, vo), p)
    return "stable" if truth_check(kind, b1, b2, bo) else "unstable"


@dataclass
class GateState:
    v: tuple[float, float, float]
    x: np.ndarray  # (3, 4): terminal x memristor

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float).reshape(3, 4)
        if np.any(self.x < 0) or np.any(self.x > 1):
            raise ValueError("memristor states must lie in [0, 1]")


def terminal_currents(kind, state: GateState, p: DeviceParams,
                      table: GateParamTable | None = None) -> np.ndarray:
    """Current leaving each terminal into the gate (positive = out of the node)."""
    dv = branch_voltages(kind, state.v, p, table)
    g = 1.0 / (p.R_on + p.R_1 * state.x)
    return (dv[:, :4] * g).sum(axis=1) + dv[:, 4] / p.R_off


def memristor_voltages(kind, v, p: DeviceParams, table=None) -> np.ndarray:
    return branch_voltages(kind, v, p, table)[:, :4] * MEMRISTOR_POLARITY


def relax_memristors(kind, v, x0, p: DeviceParams, table=None,
                     t_end: float = 1.0, steps: int = 2000) -> np.ndarray:
    """Integrate the memristor states under frozen terminal voltages."""
    vm = memristor_voltages(kind, v, p, table)
    x = np.array(x0, dtype=float).reshape(3, 4)
    dt = t_end / steps
    for _ in range(steps):
        x = np.clip(x + dt * memristor_rate(x, vm, p), 0.0, 1.0)
    return x


def configurations(p: DeviceParams):
    """All 8 (bits, voltages) pairs for a two-input gate."""
    for bits in itertools.product((0, 1), repeat=3):
        yield bits, tuple(p.v_c if b else -p.v_c for b in bits)


@dataclass
class GateCheck:
    kind: GateKind
    bits: tuple[int, int, int]
    consistent: bool
    currents: np.ndarray  # after relaxation
    passed: bool
    detail: str


def check_gate(kind, p: DeviceParams, table=None, seed: int = 0) -> list[GateCheck]:
    """Relax every configuration from a random memristor state and test the
    gate constraints: consistent -> zero terminal currents; inconsistent ->
    the output terminal is driven away from its value with magnitude at
    least v_c/R_off."""
    kind = GateKind(kind)
    rng = np.random.default_rng(seed)
    out = []
    for bits, v in configurations(p):
        x = relax_memristors(kind, v, rng.uniform(size=(3, 4)), p, table)
        cur = terminal_currents(kind, GateState(v, x), p, table)
        consistent = truth_check(kind, *bits)
        if consistent:
            passed = bool(np.all(cur == 0.0))
            detail = "zero current" if passed else f"residual {np.round(cur, 6).tolist()}"
        else:
            # current delivered into the node is -cur; corrective = opposite to v
            injected = -cur[2]
            passed = bool(injected * v[2] < 0 and abs(injected) >= p.v_c / p.R_off)
            detail = f"out-terminal injection {injected:+.4g} vs v_o {v[2]:+g}"
        out.append(GateCheck(kind, bits, consistent, cur, passed, detail))
    return out
