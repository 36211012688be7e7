"""Dense density-matrix engine over registers of three-level sites.

Every site carries the basis ``|0>, |1>, |L>`` where ``|L>`` aggregates all
leak destinations into one incoherent level.  Composite basis states are
indexed little-endian: the basis index of the product state
``|d_0 d_1 ... d_{n-1}>`` is ``sum_i d_i * 3**i`` and character ``i`` of an
outcome string always refers to site ``i``.

Internally ``rho`` is reshaped into a rank-``2n`` tensor; with C ordering
the row axis of site ``i`` is ``n - 1 - i`` and its column axis is
``2n - 1 - i``.  Local operators on several sites use the same
little-endian convention relative to the order of the ``sites`` list.

Operations mutate the register in place and also return it, so calls can
be chained; use :meth:`Register.copy` for an independent clone.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import reduce
from typing import Sequence

import numpy as np

from .errors import InvalidArgument, ValidationError

SITE_DIM = 3
LEVELS = "01L"

MEMORY = "Memory"
COOLANT = "Coolant"
TYPES = ("S", "F", "ShelvedD")

_ROLE_ALIASES = {"m": MEMORY, "memory": MEMORY, "c": COOLANT, "coolant": COOLANT}

# Pauli operators on the qubit block, identity on |L>.
PAULI3 = {
    "I": np.eye(3, dtype=complex),
    "X": np.array([[0, 1, 0], [1, 0, 0], [0, 0, 1]], dtype=complex),
    "Y": np.array([[0, -1j, 0], [1j, 0, 0], [0, 0, 1]], dtype=complex),
    "Z": np.diag([1, -1, 1]).astype(complex),
}
PAULI2 = {k: v[:2, :2].copy() for k, v in PAULI3.items()}


def _normalize_roles(roles, n):
    if roles is None:
        return (MEMORY,) * n
    if len(roles) != n:
        raise InvalidArgument(f"roles has length {len(roles)}, expected {n}")
    out = []
    for r in roles:
        key = str(r).lower()
        if key not in _ROLE_ALIASES:
            raise InvalidArgument(f"unknown role {r!r}")
        out.append(_ROLE_ALIASES[key])
    return tuple(out)


@dataclass
class Register:
    """Density matrix of ``n_sites`` three-level sites plus site labels.

    Attributes
    ----------
    n_sites : int
    roles : tuple of str
        ``"Memory"`` or ``"Coolant"`` per site.
    type_label : list of str
        ``"S"``, ``"F"`` or ``"ShelvedD"`` per site.
    rho : ndarray, shape (3**n, 3**n)
    """

    n_sites: int
    roles: tuple
    type_label: list
    rho: np.ndarray
    site_dim: int = field(default=SITE_DIM, init=False)

    @property
    def dim(self) -> int:
        return SITE_DIM ** self.n_sites

    @property
    def memory_sites(self) -> list[int]:
        return [i for i, r in enumerate(self.roles) if r == MEMORY]

    @property
    def coolant_sites(self) -> list[int]:
        return [i for i, r in enumerate(self.roles) if r == COOLANT]

    def copy(self) -> "Register":
        return Register(self.n_sites, tuple(self.roles), list(self.type_label), self.rho.copy())

    def check(self, atol: float = 1e-12, psd_tol: float = 1e-10) -> None:
        """Raise ``ValidationError`` if trace, Hermiticity or positivity fail."""
        tr = np.trace(self.rho)
        if abs(tr - 1) > atol:
            raise ValidationError(f"trace(rho) = {tr}")
        herm = np.max(np.abs(self.rho - self.rho.conj().T))
        if herm > atol:
            raise ValidationError(f"rho not Hermitian (max deviation {herm:.3e})")
        w = np.linalg.eigvalsh(0.5 * (self.rho + self.rho.conj().T))
        if w[0] < -psd_tol:
            raise ValidationError(f"rho not positive semidefinite (min eigenvalue {w[0]:.3e})")

    @classmethod
    def from_state(cls, psi, roles=None, type_label=None) -> "Register":
        """Build a pure-state register from a vector of length ``3**n``."""
        psi = np.asarray(psi, dtype=complex)
        n = _n_from_dim(psi.shape[0])
        return cls.from_density(np.outer(psi, psi.conj()), roles, type_label)

    @classmethod
    def from_density(cls, rho, roles=None, type_label=None) -> "Register":
        rho = np.array(rho, dtype=complex)
        n = _n_from_dim(rho.shape[0])
        labels = list(type_label) if type_label is not None else ["S"] * n
        return cls(n, _normalize_roles(roles, n), labels, rho)


def _n_from_dim(dim: int) -> int:
    n = int(round(np.log(dim) / np.log(SITE_DIM)))
    if SITE_DIM ** n != dim or n < 1:
        raise InvalidArgument(f"dimension {dim} is not a power of 3")
    return n


def init_register(n: int, roles: Sequence[str] | None = None) -> Register:
    """Register with every site in ``|0>`` and type label ``S``."""
    if n < 1:
        raise InvalidArgument("n must be >= 1")
    dim = SITE_DIM ** n
    rho = np.zeros((dim, dim), dtype=complex)
    rho[0, 0] = 1.0
    return Register(n, _normalize_roles(roles, n), ["S"] * n, rho)


# ---------------------------------------------------------------------------
# Embedding helpers
# ---------------------------------------------------------------------------

def basis_index(digits: Sequence[int] | str) -> int:
    """Little-endian index of a product basis state, e.g. ``"1001"``."""
    if isinstance(digits, str):
        digits = [LEVELS.index(c) for c in digits]
    return int(sum(int(d) * SITE_DIM ** i for i, d in enumerate(digits)))


def basis_state(digits: Sequence[int] | str) -> np.ndarray:
    n = len(digits)
    v = np.zeros(SITE_DIM ** n, dtype=complex)
    v[basis_index(digits)] = 1.0
    return v


def qubit_indices(n: int) -> np.ndarray:
    """Positions of the ``2**n`` qubit basis states inside the ``3**n`` space.

    Qubit index ``q = sum_i b_i 2**i`` (little-endian, like the register).
    """
    q = np.arange(2 ** n)
    bits = (q[:, None] >> np.arange(n)[None, :]) & 1
    return bits @ (SITE_DIM ** np.arange(n))


def embed_qubit_state(psi) -> np.ndarray:
    """Embed a ``2**n`` qubit vector into the ``3**n`` register space."""
    psi = np.asarray(psi, dtype=complex)
    n = int(round(np.log2(psi.shape[0])))
    out = np.zeros(SITE_DIM ** n, dtype=complex)
    out[qubit_indices(n)] = psi
    return out


def embed_qubit_density(rho) -> np.ndarray:
    rho = np.asarray(rho, dtype=complex)
    n = int(round(np.log2(rho.shape[0])))
    idx = qubit_indices(n)
    out = np.zeros((SITE_DIM ** n,) * 2, dtype=complex)
    out[np.ix_(idx, idx)] = rho
    return out


def kron_sites(mats: Sequence[np.ndarray]) -> np.ndarray:
    """Little-endian Kronecker product: ``mats[0]`` acts on the first site."""
    return reduce(np.kron, list(mats)[::-1])


# ---------------------------------------------------------------------------
# Core tensor contractions
# ---------------------------------------------------------------------------

def _check_sites(sites, n):
    sites = [int(s) for s in sites]
    if len(set(sites)) != len(sites):
        raise InvalidArgument(f"repeated sites {sites}")
    for s in sites:
        if not 0 <= s < n:
            raise InvalidArgument(f"site {s} outside register of {n} sites")
    return sites


def _apply_local(t: np.ndarray, op: np.ndarray, axes: list[int]) -> np.ndarray:
    """Contract ``op`` (local, little-endian over ``axes`` order) into tensor ``t``.

    ``axes[m]`` is the tensor axis of the m-th listed site.
    """
    k = len(axes)
    op_t = op.reshape((SITE_DIM,) * (2 * k))
    # op_t axis a (a < k) is the output digit of site index k-1-a.
    in_axes = [2 * k - 1 - m for m in range(k)]
    out = np.tensordot(op_t, t, axes=(in_axes, axes))
    # Output axes 0..k-1 correspond to sites k-1..0; move them back.
    src = list(range(k))
    dst = [axes[k - 1 - a] for a in range(k)]
    return np.moveaxis(out, src, dst)


def _row_axes(sites, n):
    return [n - 1 - s for s in sites]


def _col_axes(sites, n):
    return [2 * n - 1 - s for s in sites]


def _conjugate_by(rho_t: np.ndarray, op: np.ndarray, sites, n) -> np.ndarray:
    t = _apply_local(rho_t, op, _row_axes(sites, n))
    return _apply_local(t, op.conj(), _col_axes(sites, n))


def _as_tensor(reg: Register) -> np.ndarray:
    return reg.rho.reshape((SITE_DIM,) * (2 * reg.n_sites))


def _from_tensor(t: np.ndarray, dim: int) -> np.ndarray:
    return np.ascontiguousarray(t).reshape(dim, dim)


def is_unitary(u, atol: float = 1e-10) -> bool:
    u = np.asarray(u)
    return u.ndim == 2 and u.shape[0] == u.shape[1] and np.allclose(
        u.conj().T @ u, np.eye(u.shape[0]), atol=atol, rtol=0)


def apply_unitary(reg: Register, u, sites: Sequence[int]) -> Register:
    """``rho <- U rho U^dagger`` with ``U`` acting on ``sites``.

    Raises
    ------
    ValidationError
        ``u`` has the wrong shape or is not unitary within 1e-10.
    InvalidArgument
        Sites repeat or fall outside the register.
    """
    sites = _check_sites(sites, reg.n_sites)
    u = np.asarray(u, dtype=complex)
    if u.shape != (SITE_DIM ** len(sites),) * 2:
        raise ValidationError(f"unitary of shape {u.shape} does not match {len(sites)} sites")
    if not is_unitary(u):
        raise ValidationError("matrix is not unitary within 1e-10")
    if len(sites) == reg.n_sites and sites == list(range(reg.n_sites)):
        reg.rho = u @ reg.rho @ u.conj().T
        return reg
    t = _conjugate_by(_as_tensor(reg), u, sites, reg.n_sites)
    reg.rho = _from_tensor(t, reg.dim)
    return reg


def apply_diagonal_unitary(reg: Register, phases) -> Register:
    """Fast path for a full-register diagonal unitary ``diag(phases)``."""
    d = np.asarray(phases, dtype=complex)
    reg.rho = d[:, None] * reg.rho * d.conj()[None, :]
    return reg


def apply_kraus(reg: Register, kraus_ops: Sequence[np.ndarray], sites: Sequence[int]) -> Register:
    """``rho <- sum_k K rho K^dagger`` on ``sites``.

    Raises ``ValidationError`` unless ``sum K^dagger K = I`` within 1e-10.
    """
    sites = _check_sites(sites, reg.n_sites)
    ops = [np.asarray(k, dtype=complex) for k in kraus_ops]
    d = SITE_DIM ** len(sites)
    if not ops or any(k.shape != (d, d) for k in ops):
        raise ValidationError("Kraus operators must be square and match the sites")
    completeness = sum(k.conj().T @ k for k in ops)
    if not np.allclose(completeness, np.eye(d), atol=1e-10, rtol=0):
        raise ValidationError("Kraus set is not trace preserving within 1e-10")
    t = _as_tensor(reg)
    acc = None
    for k in ops:
        term = _conjugate_by(t, k, sites, reg.n_sites)
        acc = term if acc is None else acc + term
    reg.rho = _from_tensor(acc, reg.dim)
    return reg


# ---------------------------------------------------------------------------
# Reductions and queries
# ---------------------------------------------------------------------------

def reduced_density(reg: Register, sites: Sequence[int]) -> np.ndarray:
    """Partial trace keeping ``sites`` (returned in little-endian order of the list)."""
    sites = _check_sites(sites, reg.n_sites)
    n = reg.n_sites
    t = _as_tensor(reg)
    keep_rows = [n - 1 - s for s in sites[::-1]]
    keep_cols = [2 * n - 1 - s for s in sites[::-1]]
    traced = [s for s in range(n) if s not in sites]
    letters = "abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ"
    idx = list(letters[: 2 * n])
    for s in traced:
        idx[2 * n - 1 - s] = idx[n - 1 - s]
    out = "".join(idx[a] for a in keep_rows + keep_cols)
    r = np.einsum("".join(idx) + "->" + out, t)
    d = SITE_DIM ** len(sites)
    return r.reshape(d, d)


@dataclass(frozen=True)
class Observable:
    """Real linear combination of Pauli strings.

    ``terms`` holds ``(coefficient, string)`` pairs; character ``m`` of the
    string acts on the m-th site the observable is evaluated on.
    """

    terms: tuple

    def __post_init__(self):
        terms = tuple((float(c), str(s).upper()) for c, s in self.terms)
        if not terms:
            raise InvalidArgument("observable needs at least one term")
        k = len(terms[0][1])
        for _, s in terms:
            if len(s) != k or any(ch not in PAULI3 for ch in s):
                raise InvalidArgument(f"bad Pauli string {s!r}")
        object.__setattr__(self, "terms", terms)

    @property
    def n_sites(self) -> int:
        return len(self.terms[0][1])

    def matrix(self, qubit: bool = False) -> np.ndarray:
        table = PAULI2 if qubit else PAULI3
        return sum(c * kron_sites([table[ch] for ch in s]) for c, s in self.terms)

    def scaled(self, factor: float) -> "Observable":
        return Observable(tuple((factor * c, s) for c, s in self.terms))

    def __add__(self, other: "Observable") -> "Observable":
        return Observable(self.terms + other.terms)


def _default_obs_sites(reg: Register, k: int) -> list[int]:
    if k == reg.n_sites:
        return list(range(k))
    mem = reg.memory_sites
    if k == len(mem):
        return mem
    raise InvalidArgument(f"cannot place a {k}-site observable on {reg.n_sites} sites")


def expectation(reg: Register, obs: Observable, sites: Sequence[int] | None = None) -> float:
    """``tr(rho O)``; ``sites`` defaults to all sites or the memory sites."""
    if sites is None:
        sites = _default_obs_sites(reg, obs.n_sites)
    if len(sites) != obs.n_sites:
        raise InvalidArgument("observable length does not match sites")
    r = reduced_density(reg, sites)
    val = np.sum(r.T * obs.matrix())  # tr(r O)
    if abs(val.imag) > 1e-10:
        raise ValidationError(f"expectation has imaginary residue {val.imag:.3e}")
    return float(val.real)


def fidelity_pure(reg: Register, target, sites: Sequence[int] | None = None) -> float:
    """``<t|rho|t>`` for a normalized target over ``sites`` (default all)."""
    t = np.asarray(target, dtype=complex)
    if abs(np.vdot(t, t).real - 1) > 1e-10:
        raise ValidationError("target state is not normalized within 1e-10")
    r = reg.rho if sites is None else reduced_density(reg, sites)
    if t.shape[0] != r.shape[0]:
        raise InvalidArgument("target dimension does not match register")
    return float(np.vdot(t, r @ t).real)


def populations(reg: Register, site: int) -> np.ndarray:
    """Populations of ``|0>, |1>, |L>`` on one site."""
    return np.real(np.diag(reduced_density(reg, [site])))


def sample_zbasis(reg: Register, sites: Sequence[int], rng_seed=None) -> str:
    """Projective Z-basis readout of ``sites``; collapses the register.

    Returns a string over ``{0, 1, L}`` with one character per listed site.
    """
    sites = _check_sites(sites, reg.n_sites)
    rng = np.random.default_rng(rng_seed)
    p = np.clip(np.real(np.diag(reduced_density(reg, sites))), 0, None)
    idx = int(rng.choice(p.size, p=p / p.sum()))
    digits = [(idx // SITE_DIM ** m) % SITE_DIM for m in range(len(sites))]
    # collapse onto the product projector
    t = _as_tensor(reg)
    for s, d in zip(sites, digits):
        proj = np.zeros((SITE_DIM, SITE_DIM))
        proj[d, d] = 1.0
        t = _conjugate_by(t, proj, [s], reg.n_sites)
    reg.rho = _from_tensor(t, reg.dim) / p[idx]
    return "".join(LEVELS[d] for d in digits)


def outcome_probabilities(reg: Register, sites: Sequence[int]) -> np.ndarray:
    """Little-endian Z-basis outcome distribution over ``3**len(sites)`` strings."""
    return np.clip(np.real(np.diag(reduced_density(reg, sites))), 0, None)


def purity(reg: Register) -> float:
    return float(np.real(np.sum(reg.rho * reg.rho.T)))
