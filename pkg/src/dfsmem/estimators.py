"""GHZ fidelity estimation for the logical Bell states.

For ``|psi+_L> = (|1001> + |0110>)/sqrt(2)`` the fidelity splits as

    F = (2 <O1> + <O2> - <O3>) / 4

where ``O1`` is the projector onto the two-string support (a sum of eight
Z strings), and ``O2``/``O3`` are phase-averaged four-fold parities after a
global pi/2 analysis pulse, the latter with an extra Rz(pi/2) on two
qubits.  Their phase averages reduce to fixed Pauli sums which serve as the
analytic oracle; :func:`estimate_mc` reproduces the experimental procedure
with uniformly sampled analysis phases and single-shot readout.

The phi family ``(|1010> + |0101>)/sqrt(2)`` is handled by exchanging the
roles of q3 and q4 throughout.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from . import circuits
from .errors import InvalidArgument
from .qstate import (PAULI3, Observable, Register, expectation, kron_sites,
                     reduced_density)

FAMILIES = ("psi", "phi")

_O1_PSI = (
    (1, "IIII"), (1, "ZZZZ"), (1, "IZZI"), (1, "ZIIZ"),
    (-1, "ZIZI"), (-1, "IZIZ"), (-1, "ZZII"), (-1, "IIZZ"),
)
_O2 = (
    (3, "XXXX"), (3, "YYYY"),
    (1, "XYXY"), (1, "YXYX"), (1, "XXYY"), (1, "YYXX"), (1, "XYYX"), (1, "YXXY"),
)
_O3_PSI = (
    (1, "XXXX"), (1, "YYYY"),
    (-1, "XYXY"), (-1, "YXYX"), (-1, "XXYY"), (-1, "YYXX"),
    (3, "XYYX"), (3, "YXXY"),
)


def _swap34(s: str) -> str:
    return s[0] + s[1] + s[3] + s[2]


def _family_terms(terms, family):
    if family not in FAMILIES:
        raise InvalidArgument(f"unknown state family {family!r}")
    if family == "phi":
        terms = tuple((c, _swap34(s)) for c, s in terms)
    return Observable(tuple((c / 8.0, s) for c, s in terms))


def observable_o1(family: str = "psi") -> Observable:
    """Projector onto the Bell-state support as a sum of eight Z strings."""
    return _family_terms(_O1_PSI, family)


def observable_o2(family: str = "psi") -> Observable:
    """Phase-averaged parity after a global pi/2 pulse (family independent)."""
    return _family_terms(_O2, family)


def observable_o3(family: str = "psi") -> Observable:
    """Phase-averaged parity with the extra Rz(pi/2) pair."""
    return _family_terms(_O3_PSI, family)


def _memory(reg: Register, sites=None):
    if sites is not None:
        return list(sites)
    if reg.n_sites == 4:
        return [0, 1, 2, 3]
    mem = reg.memory_sites
    if len(mem) != 4:
        raise InvalidArgument("register must have exactly four memory sites")
    return mem


def analytic_o1(reg: Register, family: str = "psi", sites=None) -> float:
    return expectation(reg, observable_o1(family), _memory(reg, sites))


def analytic_o2(reg: Register, sites=None) -> float:
    return expectation(reg, observable_o2("psi"), _memory(reg, sites))


def analytic_o3(reg: Register, family: str = "psi", sites=None) -> float:
    return expectation(reg, observable_o3(family), _memory(reg, sites))


# ---------------------------------------------------------------------------
# Results
# ---------------------------------------------------------------------------

@dataclass
class TermEstimate:
    """Sample mean of one decomposition term.

    ``successes`` counts kept shots whose outcome agrees with the target
    sign (support hit for O1, parity +1 for O2, parity -1 for O3).
    """

    mean: float
    stderr: float
    kept: int
    discarded: int
    successes: int = 0

    @property
    def raw(self) -> int:
        return self.kept + self.discarded


@dataclass
class FidelityEstimate:
    o1: float
    o2: float
    o3: float
    o1_err: float = 0.0
    o2_err: float = 0.0
    o3_err: float = 0.0
    shots_per_term: dict = field(default_factory=dict)
    discarded_leak: int = 0
    mode: str = "analytic"
    family: str = "psi"

    @property
    def fidelity(self) -> float:
        return (2 * self.o1 + self.o2 - self.o3) / 4

    @property
    def fidelity_err(self) -> float:
        return float(np.sqrt(4 * self.o1_err ** 2 + self.o2_err ** 2 + self.o3_err ** 2) / 4)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["fidelity"] = self.fidelity
        d["fidelity_err"] = self.fidelity_err
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


# ---------------------------------------------------------------------------
# Monte-Carlo estimator
# ---------------------------------------------------------------------------

def _z_values(n: int) -> np.ndarray:
    """``z[idx, m]`` = +1/-1/0 for outcome digits 0/1/L of site m."""
    idx = np.arange(3 ** n)
    digits = (idx[:, None] // 3 ** np.arange(n)[None, :]) % 3
    return np.array([1, -1, 0])[digits], digits


def _analysis_unitary(which: str, phi: float, family: str) -> np.ndarray:
    """81x81 analysis unitary on four memory sites (little-endian q1..q4).

    Equivalent to executing :func:`circuits.build_analysis_circuit` on a
    four-site register; built directly for speed.
    """
    r = circuits.rotation_matrix(np.pi / 2, phi)
    u = kron_sites([r] * 4)
    if which == "O3":
        second = 2 if family == "psi" else 3
        rz = circuits.rz_matrix(np.pi / 2)
        mats = [PAULI3["I"]] * 4
        mats[1] = rz
        mats[second] = rz
        u = u @ np.diag(np.diag(kron_sites(mats)))
    return u


def _outcome_fourier(rho, which, family) -> np.ndarray:
    """Fourier coefficients ``c[:, k + 4]`` of the outcome distribution in phi.

    Each analysis rotation contributes ``exp(+-i phi)`` at most once per
    matrix element, so on four sites the outcome probabilities are
    trigonometric polynomials of degree 4; nine phase samples determine them
    exactly.
    """
    grid = 2 * np.pi * np.arange(9) / 9
    probs = np.empty((rho.shape[0], 9))
    for j, phi in enumerate(grid):
        u = _analysis_unitary(which, phi, family)
        probs[:, j] = np.real(np.sum((u @ rho) * u.conj(), axis=1))
    orders = np.arange(-4, 5)
    return probs @ np.exp(-1j * np.outer(grid, orders)) / 9


def estimate_mc(reg: Register, which: str, family: str = "psi", shots: int = 500,
                rng_seed=None, assignment=None, sites=None) -> TermEstimate:
    """Shot-based estimate of one term with uniformly random analysis phase.

    Each shot draws ``phi ~ U[0, 2 pi)``, applies the analysis circuit, reads
    the four memory sites in the Z basis and records the parity
    ``(-1)**(number of ones)`` (for ``O1`` the support indicator).  If an
    :class:`~dfsmem.detection.AssignmentModel` is given, readout goes through
    the multi-state detection simulation.  Shots with any ion decoded as
    Leak or EarlyLoss are discarded and counted.
    """
    from . import detection

    if shots < 1:
        raise InvalidArgument("shots must be >= 1")
    if which not in ("O1", "O2", "O3"):
        raise InvalidArgument(f"unknown observable {which!r}")
    if family not in FAMILIES:
        raise InvalidArgument(f"unknown state family {family!r}")
    rng = np.random.default_rng(rng_seed)
    rho = reduced_density(reg, _memory(reg, sites))
    zval, digits = _z_values(4)
    if which == "O1":
        o1 = observable_o1(family)
        diag_o1 = np.real(np.diag(o1.matrix()))
    target_sign = -1 if which == "O3" else 1

    values = []
    discarded = 0
    fixed_p = None
    if which == "O1":
        fixed_p = np.clip(np.real(np.diag(rho)), 0, None)
    else:
        coeffs = _outcome_fourier(rho, which, family)
        orders = np.arange(-4, 5)
    for _ in range(shots):
        if fixed_p is None:
            phi = rng.uniform(0, 2 * np.pi)
            p = np.clip(np.real(coeffs @ np.exp(1j * orders * phi)), 0, None)
        else:
            p = fixed_p
        idx = int(rng.choice(p.size, p=p / p.sum()))
        symbols = [detection.SYMBOLS_TRUE[d] for d in digits[idx]]
        if assignment is not None:
            decoded = detection.detect(symbols, assignment, rng).decoded
        else:
            decoded = symbols
        if any(s in (detection.LEAK, detection.EARLY_LOSS) for s in decoded):
            discarded += 1
            continue
        bits = [1 if s == detection.ONE else 0 for s in decoded]
        if which == "O1":
            values.append(diag_o1[sum(b * 3 ** m for m, b in enumerate(bits))])
        else:
            values.append(-1.0 if sum(bits) % 2 else 1.0)
    kept = len(values)
    if kept == 0:
        return TermEstimate(float("nan"), float("nan"), 0, discarded, 0)
    v = np.asarray(values)
    mean = float(v.mean())
    stderr = float(v.std() / np.sqrt(kept))
    if which == "O1":
        successes = int(np.sum(v > 0.5))
    else:
        successes = int(np.sum(v == target_sign))
    return TermEstimate(mean, stderr, kept, discarded, successes)


def _spawn(rng_seed, n):
    """Independent child seeds from an int, SeedSequence or Generator."""
    if isinstance(rng_seed, np.random.Generator):
        return rng_seed.bit_generator.seed_seq.spawn(n)
    if isinstance(rng_seed, np.random.SeedSequence):
        return rng_seed.spawn(n)
    return np.random.SeedSequence(rng_seed).spawn(n)


def ghz_fidelity(reg: Register, family: str = "psi", mode: str = "analytic", shots=250,
                 rng_seed=None, assignment=None, sites=None) -> FidelityEstimate:
    """Fidelity with the ``+`` Bell state of ``family`` via the decomposition.

    ``mode`` is ``"analytic"`` (exact Pauli sums) or ``"mc"``; ``shots`` is an
    int or a per-term mapping ``{"O1": m1, "O2": m2, "O3": m3}``.
    """
    if mode == "analytic":
        return FidelityEstimate(analytic_o1(reg, family, sites), analytic_o2(reg, sites),
                                analytic_o3(reg, family, sites), mode="analytic", family=family)
    if mode != "mc":
        raise InvalidArgument(f"unknown mode {mode!r}")
    per = shots if isinstance(shots, dict) else {k: int(shots) for k in ("O1", "O2", "O3")}
    seeds = _spawn(rng_seed, 3)
    terms = {}
    for key, ss in zip(("O1", "O2", "O3"), seeds):
        terms[key] = estimate_mc(reg, key, family, per[key], np.random.default_rng(ss),
                                 assignment, sites)
    return FidelityEstimate(
        terms["O1"].mean, terms["O2"].mean, terms["O3"].mean,
        terms["O1"].stderr, terms["O2"].stderr, terms["O3"].stderr,
        shots_per_term={k: t.kept for k, t in terms.items()},
        discarded_leak=sum(t.discarded for t in terms.values()),
        mode="mc", family=family,
    )


def mc_terms(reg, family, shots, rng_seed=None, assignment=None, sites=None):
    """Like :func:`ghz_fidelity` in mc mode but returning the raw term records."""
    per = shots if isinstance(shots, dict) else {k: int(shots) for k in ("O1", "O2", "O3")}
    seeds = _spawn(rng_seed, 3)
    return {key: estimate_mc(reg, key, family, per[key], np.random.default_rng(ss),
                             assignment, sites)
            for key, ss in zip(("O1", "O2", "O3"), seeds)}


# ---------------------------------------------------------------------------
# Parity
# ---------------------------------------------------------------------------

def parity_expectation(reg: Register, phi: float, sites=None) -> float:
    """``<Z...Z>`` over the memory sites after a global pi/2 pulse at phase ``phi``."""
    if sites is None:
        sites = reg.memory_sites
    k = len(sites)
    if k not in (2, 4):
        raise InvalidArgument("parity needs 2 or 4 memory sites")
    rho = reduced_density(reg, sites)
    r = circuits.rotation_matrix(np.pi / 2, phi)
    u = kron_sites([r] * k)
    zz = kron_sites([PAULI3["Z"]] * k)
    return float(np.real(np.trace(zz @ u @ rho @ u.conj().T)))


def phase_grid_average(reg: Register, which: str, family: str = "psi", n_phi: int = 64,
                       sites=None) -> float:
    """Average of the exact analysis parity over a uniform phase grid."""
    rho = reduced_density(reg, _memory(reg, sites))
    zval, _ = _z_values(4)
    parity = np.prod(np.where(zval == 0, 1, zval), axis=1)
    vals = []
    for phi in 2 * np.pi * np.arange(n_phi) / n_phi:
        u = _analysis_unitary(which, phi, family)
        p = np.real(np.sum((u @ rho) * u.conj(), axis=1))
        vals.append(np.dot(parity, p))
    return float(np.mean(vals))
