"""Native gate vocabulary, Bell-state preparation/analysis circuits, execution.

Gate conventions (all act trivially on the leak level ``|L>``):

* ``GlobalRot(axis, theta, phase)`` = ``exp(-i theta/2 (X cos p + Y sin p))`` on
  every unshelved site of the matching type, with ``p = phase`` for axis X and
  ``p = phase + pi/2`` for axis Y.
* ``Rz(site, theta)`` = ``exp(-i theta Z / 2)``.
* ``Rzz(i, j, theta)`` = ``exp(-i theta/2 Z_i Z_j)``; with the echo byproduct
  the gate is followed by ``Y`` on every unshelved S-type site (the microwave
  echo embedded in the light-shift gate).
* ``EchoPi(t)`` = ``GlobalRot(Y, pi)`` on type ``t``.

The six-site layout is ``[C, M, M, M, M, C]``: coolants on sites 0 and 5,
memory qubits q1..q4 on sites 1..4.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np

from . import qstate
from .errors import InvalidArgument, ProtocolError, ValidationError
from .qstate import PAULI3, Register, apply_kraus, apply_unitary, kron_sites

PI = np.pi
LAYOUT = ("Coolant", "Memory", "Memory", "Memory", "Memory", "Coolant")
MEMORY_SITES = (1, 2, 3, 4)
COOLANT_SITES = (0, 5)
TARGETS = ("psi+", "psi-", "phi+", "phi-")


# ---------------------------------------------------------------------------
# Gate operations
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GlobalRot:
    axis: str
    angle: float
    phase: float = 0.0
    target_type: str = "S"

    def __post_init__(self):
        if self.axis not in ("X", "Y"):
            raise InvalidArgument(f"GlobalRot axis must be X or Y, got {self.axis!r}")
        if self.target_type not in ("S", "F"):
            raise InvalidArgument(f"GlobalRot target_type must be S or F, got {self.target_type!r}")


@dataclass(frozen=True)
class Rz:
    site: int
    angle: float


@dataclass(frozen=True)
class Rzz:
    site_i: int
    site_j: int
    angle: float
    with_echo_byproduct: bool = True

    def __post_init__(self):
        if self.site_i == self.site_j:
            raise InvalidArgument("Rzz needs two distinct sites")
        if not np.isclose(abs(self.angle), PI / 2, atol=1e-12):
            raise InvalidArgument(f"Rzz angle must be +-pi/2, got {self.angle}")


@dataclass(frozen=True)
class EchoPi:
    target_type: str = "F"


@dataclass(frozen=True)
class Shelve:
    site: int


@dataclass(frozen=True)
class Unshelve:
    site: int


@dataclass(frozen=True)
class ConvertType:
    sites: tuple
    from_type: str
    to_type: str


GateOp = Union[GlobalRot, Rz, Rzz, EchoPi, Shelve, Unshelve, ConvertType]


def _sites_of(op) -> list[int]:
    if isinstance(op, (Rz, Shelve, Unshelve)):
        return [op.site]
    if isinstance(op, Rzz):
        return [op.site_i, op.site_j]
    if isinstance(op, ConvertType):
        return list(op.sites)
    return []


@dataclass(frozen=True)
class Circuit:
    """Ordered, immutable list of native gate operations."""

    ops: tuple
    n_sites: int

    def __post_init__(self):
        object.__setattr__(self, "ops", tuple(self.ops))
        for op in self.ops:
            for s in _sites_of(op):
                if not 0 <= s < self.n_sites:
                    raise InvalidArgument(f"{op} addresses site {s} outside {self.n_sites} sites")

    def __len__(self):
        return len(self.ops)

    def __add__(self, other: "Circuit") -> "Circuit":
        if other.n_sites != self.n_sites:
            raise InvalidArgument("circuit sizes differ")
        return Circuit(self.ops + other.ops, self.n_sites)


# ---------------------------------------------------------------------------
# Local matrices
# ---------------------------------------------------------------------------

def rotation_matrix(angle: float, phase: float) -> np.ndarray:
    """Single-site rotation on the qubit block, identity on ``|L>``."""
    c, s = np.cos(angle / 2), np.sin(angle / 2)
    u = np.eye(3, dtype=complex)
    u[0, 0] = c
    u[1, 1] = c
    u[0, 1] = -1j * s * np.exp(-1j * phase)
    u[1, 0] = -1j * s * np.exp(1j * phase)
    return u


def _axis_phase(axis: str, phase: float) -> float:
    return phase + (PI / 2 if axis == "Y" else 0.0)


def rz_matrix(angle: float) -> np.ndarray:
    return np.diag([np.exp(-0.5j * angle), np.exp(0.5j * angle), 1.0])


# Z eigenvalues used in the ZZ generator: the leak level is untouched.
_ZVAL = np.array([1.0, -1.0, 0.0])


def rzz_matrix(angle: float) -> np.ndarray:
    """Two-site ``exp(-i angle/2 Z Z)`` (little-endian over the pair)."""
    zz = np.kron(_ZVAL, _ZVAL)  # symmetric, so endianness is irrelevant
    return np.diag(np.exp(-0.5j * angle * zz))


def _rotation_sites(labels, target_type):
    return [i for i, t in enumerate(labels) if t == target_type]


def gate_unitary(op: GateOp, n_sites: int, labels: Sequence[str] | None = None) -> np.ndarray:
    """Full ``3**n`` unitary of a gate for the given per-site type labels."""
    labels = list(labels) if labels is not None else ["S"] * n_sites
    eye = PAULI3["I"]
    mats = [eye] * n_sites
    if isinstance(op, (GlobalRot, EchoPi)):
        if isinstance(op, EchoPi):
            op = GlobalRot("Y", PI, 0.0, op.target_type)
        r = rotation_matrix(op.angle, _axis_phase(op.axis, op.phase))
        for i in _rotation_sites(labels, op.target_type):
            mats[i] = r
        return kron_sites(mats)
    if isinstance(op, Rz):
        mats[op.site] = rz_matrix(op.angle)
        return kron_sites(mats)
    if isinstance(op, Rzz):
        digits = (np.arange(3 ** n_sites)[:, None] // 3 ** np.arange(n_sites)) % 3
        zz = _ZVAL[digits[:, op.site_i]] * _ZVAL[digits[:, op.site_j]]
        u = np.diag(np.exp(-0.5j * op.angle * zz))
        if op.with_echo_byproduct:
            for i in _rotation_sites(labels, "S"):
                mats[i] = PAULI3["Y"]
            u = kron_sites(mats) @ u
        return u
    if isinstance(op, (Shelve, Unshelve, ConvertType)):
        return np.eye(3 ** n_sites, dtype=complex)
    raise InvalidArgument(f"unknown gate {op!r}")


# ---------------------------------------------------------------------------
# Noise attached to gates
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GateNoise:
    """Gate error strengths.

    p1 : per-site dephasing probability after each global rotation.
    p2 : two-site depolarizing probability after each Rzz.
    """

    p1: float = 0.0
    p2: float = 0.0

    def __post_init__(self):
        for name in ("p1", "p2"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValidationError(f"gate.{name} must lie in [0, 1], got {v}")


def dephasing_kraus(p: float) -> list[np.ndarray]:
    return [np.sqrt(1 - p) * PAULI3["I"], np.sqrt(p) * PAULI3["Z"]]


def two_site_depolarizing_kraus(p: float) -> list[np.ndarray]:
    """``rho -> (1-p) rho + p * (Pauli-twirled) rho`` on the qubit blocks."""
    ops = []
    for a in "IXYZ":
        for b in "IXYZ":
            w = 1 - p + p / 16 if a == b == "I" else p / 16
            ops.append(np.sqrt(w) * np.kron(PAULI3[b], PAULI3[a]))
    return ops


# ---------------------------------------------------------------------------
# Execution
# ---------------------------------------------------------------------------

def _require_unshelved(reg: Register, sites, op):
    for s in sites:
        if reg.type_label[s] == "ShelvedD":
            raise ProtocolError(f"{op} addresses shelved site {s}")


def apply_gate(reg: Register, op: GateOp, gate_noise: GateNoise | None = None) -> Register:
    """Apply one gate (and its attached noise) to ``reg`` in place."""
    if isinstance(op, EchoPi):
        op = GlobalRot("Y", PI, 0.0, op.target_type)
    if isinstance(op, GlobalRot):
        r = rotation_matrix(op.angle, _axis_phase(op.axis, op.phase))
        sites = _rotation_sites(reg.type_label, op.target_type)
        for s in sites:
            apply_unitary(reg, r, [s])
        if gate_noise is not None and gate_noise.p1 > 0:
            for s in sites:
                apply_kraus(reg, dephasing_kraus(gate_noise.p1), [s])
    elif isinstance(op, Rz):
        _require_unshelved(reg, [op.site], op)
        apply_unitary(reg, rz_matrix(op.angle), [op.site])
    elif isinstance(op, Rzz):
        pair = [op.site_i, op.site_j]
        _require_unshelved(reg, pair, op)
        apply_unitary(reg, rzz_matrix(op.angle), pair)
        if op.with_echo_byproduct:
            for s in _rotation_sites(reg.type_label, "S"):
                apply_unitary(reg, PAULI3["Y"], [s])
        if gate_noise is not None and gate_noise.p2 > 0:
            apply_kraus(reg, two_site_depolarizing_kraus(gate_noise.p2), pair)
    elif isinstance(op, Shelve):
        if reg.type_label[op.site] != "S":
            raise ProtocolError(f"cannot shelve site {op.site} of type {reg.type_label[op.site]}")
        reg.type_label[op.site] = "ShelvedD"
    elif isinstance(op, Unshelve):
        if reg.type_label[op.site] != "ShelvedD":
            raise ProtocolError(f"site {op.site} is not shelved")
        reg.type_label[op.site] = "S"
    elif isinstance(op, ConvertType):
        for s in op.sites:
            if reg.type_label[s] != op.from_type:
                raise ProtocolError(
                    f"site {s} has type {reg.type_label[s]}, expected {op.from_type}")
            reg.type_label[s] = op.to_type
    else:
        raise InvalidArgument(f"unknown gate {op!r}")
    return reg


def run_circuit(reg: Register, c: Circuit, gate_noise: GateNoise | None = None) -> Register:
    """Apply every op of ``c`` in order (in place; returns ``reg``)."""
    if c.n_sites != reg.n_sites:
        raise InvalidArgument(f"circuit has {c.n_sites} sites, register {reg.n_sites}")
    for op in c.ops:
        apply_gate(reg, op, gate_noise)
    return reg


# ---------------------------------------------------------------------------
# Logical states and compiled circuits
# ---------------------------------------------------------------------------

_SUPPORTS = {"psi": ("1001", "0110"), "phi": ("1010", "0101")}


def family_of(target: str) -> str:
    if target not in TARGETS:
        raise InvalidArgument(f"unknown target {target!r}; expected one of {TARGETS}")
    return target[:3]


def logical_state(target: str, with_coolants: bool = True) -> np.ndarray:
    """Target Bell state on q1..q4, optionally padded with coolants in ``|0>``.

    Returns a vector of length ``3**6`` (or ``3**4`` without coolants).
    """
    fam = family_of(target)
    sign = 1.0 if target.endswith("+") else -1.0
    a, b = _SUPPORTS[fam]
    if with_coolants:
        a, b = "0" + a + "0", "0" + b + "0"
    return (qstate.basis_state(a) + sign * qstate.basis_state(b)) / np.sqrt(2)


def build_prep_circuit(target: str = "psi+") -> Circuit:
    """Native-gate circuit preparing a logical Bell state from ``|000000>``.

    Three echoed light-shift gates (q2-q4, then q1-q2 and q3-q4) are
    interleaved with global microwave rotations.  The Rz(3pi/2) pair on the
    coolant sites undoes the echo byproducts there so both coolants return
    to ``|0>``.  The phi family differs only by the site of one Rz(pi)
    (q4 -> q3); the minus variants append Rz(pi) on q1.
    """
    fam = family_of(target)
    red_box = 4 if fam == "psi" else 3
    ops = [
        GlobalRot("Y", PI / 2),
        Rzz(2, 4, -PI / 2),
        GlobalRot("X", -PI / 2),
        Rz(0, 3 * PI / 2), Rz(5, 3 * PI / 2),
        Rz(2, PI / 2), Rz(4, PI / 2),
        GlobalRot("X", PI / 2),
        Rzz(1, 2, PI / 2),
        Rzz(3, 4, PI / 2),
        GlobalRot("Y", PI / 2),
        Rz(1, 3 * PI / 2), Rz(3, PI / 2),
        Rz(red_box, PI),
        GlobalRot("Y", -PI / 2),
        Rz(2, PI / 2),
    ]
    if target.endswith("-"):
        ops.append(Rz(1, PI))
    return Circuit(tuple(ops), 6)


def build_analysis_circuit(which: str, phi: float, state_family: str = "psi",
                           n_sites: int = 6, target_type: str = "S",
                           memory_sites: Sequence[int] = MEMORY_SITES) -> Circuit:
    """Analysis pulses measuring one term of the fidelity decomposition.

    ``O1`` is a direct Z readout (no ops).  ``O2`` is a global pi/2 pulse with
    phase ``phi``.  ``O3`` first adds Rz(pi/2) on (q2, q3) for the psi family
    or (q2, q4) for the phi family.
    """
    if state_family not in _SUPPORTS:
        raise InvalidArgument(f"unknown state family {state_family!r}")
    if which == "O1":
        return Circuit((), n_sites)
    if which not in ("O2", "O3"):
        raise InvalidArgument(f"unknown observable {which!r}")
    ops = []
    if which == "O3":
        q1, q2, q3, q4 = memory_sites
        second = q3 if state_family == "psi" else q4
        ops += [Rz(q2, PI / 2), Rz(second, PI / 2)]
    ops.append(GlobalRot("X", PI / 2, float(phi), target_type))
    return Circuit(tuple(ops), n_sites)


# ---------------------------------------------------------------------------
# Text serialization
# ---------------------------------------------------------------------------
#
# Grammar (one op per line, '#' starts a comment):
#   sites <n>                       (first line)
#   GlobalRot <X|Y> <angle> <phase> <S|F>
#   Rz <site> <angle>
#   Rzz <i> <j> <angle> <echo|noecho>
#   EchoPi <S|F>
#   Shelve <site> | Unshelve <site>
#   ConvertType <s1,s2,...> <from> <to>
# Angles are radians written with repr() so parsing round-trips exactly.


def dumps(c: Circuit) -> str:
    lines = [f"sites {c.n_sites}"]
    for op in c.ops:
        if isinstance(op, GlobalRot):
            lines.append(f"GlobalRot {op.axis} {op.angle!r} {op.phase!r} {op.target_type}")
        elif isinstance(op, Rz):
            lines.append(f"Rz {op.site} {op.angle!r}")
        elif isinstance(op, Rzz):
            echo = "echo" if op.with_echo_byproduct else "noecho"
            lines.append(f"Rzz {op.site_i} {op.site_j} {op.angle!r} {echo}")
        elif isinstance(op, EchoPi):
            lines.append(f"EchoPi {op.target_type}")
        elif isinstance(op, Shelve):
            lines.append(f"Shelve {op.site}")
        elif isinstance(op, Unshelve):
            lines.append(f"Unshelve {op.site}")
        elif isinstance(op, ConvertType):
            lines.append(f"ConvertType {','.join(map(str, op.sites))} {op.from_type} {op.to_type}")
    return "\n".join(lines) + "\n"


def loads(text: str) -> Circuit:
    lines = [ln.split("#")[0].strip() for ln in text.splitlines()]
    lines = [ln for ln in lines if ln]
    if not lines or not lines[0].startswith("sites "):
        raise ValidationError("circuit text must start with 'sites <n>'")
    n = int(lines[0].split()[1])
    ops = []
    for ln in lines[1:]:
        tok = ln.split()
        name, args = tok[0], tok[1:]
        try:
            if name == "GlobalRot":
                ops.append(GlobalRot(args[0], float(args[1]), float(args[2]), args[3]))
            elif name == "Rz":
                ops.append(Rz(int(args[0]), float(args[1])))
            elif name == "Rzz":
                ops.append(Rzz(int(args[0]), int(args[1]), float(args[2]), args[3] == "echo"))
            elif name == "EchoPi":
                ops.append(EchoPi(args[0]))
            elif name == "Shelve":
                ops.append(Shelve(int(args[0])))
            elif name == "Unshelve":
                ops.append(Unshelve(int(args[0])))
            elif name == "ConvertType":
                ops.append(ConvertType(tuple(int(s) for s in args[0].split(",")), args[1], args[2]))
            else:
                raise ValidationError(f"unknown op {name!r}")
        except (IndexError, ValueError) as exc:
            raise ValidationError(f"cannot parse line {ln!r}: {exc}") from exc
    return Circuit(tuple(ops), n)
