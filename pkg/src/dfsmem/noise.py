"""Storage-time noise: field-profile dephasing, OU field noise and leakage.

The qubit detuning of ion ``i`` during storage is

    delta_i(t) = m_i * (b0 + grad x_i + curv x_i**2 + c(t) + g(t) x_i)

with ``m_i`` the sensitivity mask (0 for clock states, 1 for a
field-sensitive encoding), ``c(t)`` a common-mode and ``g(t)`` a gradient
Ornstein-Uhlenbeck process.  Detunings are in Hz; the ``|1>`` amplitude
acquires ``exp(-2 pi i delta t)``.

Leakage moves ``|0>`` and ``|1>`` population incoherently to ``|L>`` with
per-ion rate ``leak_rate``.  A per-ion Markovian ``residual_dephasing``
rate models the slow decay of clock-state coherence.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from . import circuits
from .errors import InvalidArgument, ValidationError
from .qstate import PAULI3, Register, apply_diagonal_unitary, apply_kraus

LEAK_RATE_PAPER = -np.log(0.88) / 800.0  # 12 % per ion after 800 s


@lru_cache(maxsize=8)
def _default_positions(n: int) -> tuple:
    from .gatedesign import equilibrium_positions
    return tuple(equilibrium_positions(n))


@dataclass(frozen=True)
class FieldProfile:
    """Static qubit-detuning polynomial over ion positions.

    Parameters
    ----------
    b0 : float
        Uniform detuning (Hz).
    grad : float
        Linear coefficient (Hz per unit position).
    curv : float
        Quadratic coefficient (Hz per unit position squared).
    positions : tuple of float, optional
        Ion coordinates in units of the chain length scale.  Defaults to
        the six-ion equilibrium chain.
    """

    b0: float = 0.0
    grad: float = 0.0
    curv: float = 0.0
    positions: tuple = field(default_factory=lambda: _default_positions(6))

    def __post_init__(self):
        x = np.asarray(self.positions, dtype=float)
        object.__setattr__(self, "positions", tuple(x))
        if np.any(np.diff(x) <= 0):
            raise ValidationError("positions must be strictly increasing")

    @property
    def n_ions(self) -> int:
        return len(self.positions)

    def subset(self, sites) -> "FieldProfile":
        return FieldProfile(self.b0, self.grad, self.curv, tuple(self.positions[s] for s in sites))

    def is_symmetric(self, atol: float = 1e-12) -> bool:
        x = np.asarray(self.positions)
        return bool(np.allclose(x, -x[::-1], atol=atol, rtol=0))


@dataclass(frozen=True)
class NoiseModel:
    """Rates of the storage noise processes (all non-negative).

    leak_rate : per-ion leakage rate (1/s).
    ou_sigma : RMS of the gradient OU mode (Hz per unit position).
    ou_tau : correlation time of both OU modes (s).
    common_sigma : RMS of the common-mode OU detuning (Hz).
    sensitivity_mask : per-ion 0/1 flags; ``None`` means all sensitive.
    residual_dephasing : per-ion Markovian dephasing rate (1/s); single-ion
        coherence decays as ``exp(-rate t)``.
    """

    leak_rate: float = 0.0
    ou_sigma: float = 0.0
    ou_tau: float = 1.0
    common_sigma: float = 0.0
    sensitivity_mask: tuple | None = None
    residual_dephasing: float = 0.0

    def __post_init__(self):
        for name in ("leak_rate", "ou_sigma", "common_sigma", "residual_dephasing"):
            if getattr(self, name) < 0:
                raise ValidationError(f"noise.{name} must be >= 0")
        if self.ou_tau <= 0:
            raise ValidationError("noise.ou_tau must be > 0")
        if self.sensitivity_mask is not None:
            object.__setattr__(self, "sensitivity_mask",
                               tuple(float(m) for m in self.sensitivity_mask))

    def mask(self, n: int) -> np.ndarray:
        if self.sensitivity_mask is None:
            return np.ones(n)
        if len(self.sensitivity_mask) != n:
            raise InvalidArgument(f"sensitivity_mask has {len(self.sensitivity_mask)} entries, need {n}")
        return np.asarray(self.sensitivity_mask)


def detuning_vector(profile: FieldProfile, mask=None) -> np.ndarray:
    """Static per-ion detunings ``b0 + grad x + curv x**2`` (Hz), masked."""
    x = np.asarray(profile.positions)
    d = profile.b0 + profile.grad * x + profile.curv * x ** 2
    if mask is not None:
        d = d * np.asarray(mask, dtype=float)
    return d


def dephasing_phases(detunings, t: float) -> np.ndarray:
    """Diagonal of :func:`dephasing_unitary` (little-endian register order)."""
    if t < 0:
        raise InvalidArgument("t must be >= 0")
    return _phase_diagonal(2 * np.pi * np.asarray(detunings, dtype=float) * t)


def _phase_diagonal(phis) -> np.ndarray:
    """``prod_i diag(1, exp(-i phi_i), 1)`` as a vector of length ``3**n``."""
    out = np.ones(1, dtype=complex)
    for phi in phis:  # site 0 is least significant -> innermost kron factor last
        out = np.kron(np.array([1.0, np.exp(-1j * phi), 1.0]), out)
    return out


def dephasing_unitary(detunings, t: float) -> np.ndarray:
    """``(x)_i diag(1, exp(-2 pi i delta_i t), 1)`` as a dense matrix."""
    return np.diag(dephasing_phases(detunings, t))


def leakage_kraus(leak_rate: float, t: float) -> list[np.ndarray]:
    """Single-site Kraus set moving population to ``|L>`` with ``p = 1 - exp(-rate t)``."""
    if leak_rate < 0 or t < 0:
        raise InvalidArgument("leak_rate and t must be >= 0")
    p = -np.expm1(-leak_rate * t)
    k0 = np.diag([np.sqrt(1 - p), np.sqrt(1 - p), 1.0]).astype(complex)
    k1 = np.zeros((3, 3), dtype=complex)
    k1[2, 0] = np.sqrt(p)
    k2 = np.zeros((3, 3), dtype=complex)
    k2[2, 1] = np.sqrt(p)
    return [k0, k1, k2]


def residual_dephasing_kraus(rate: float, t: float) -> list[np.ndarray]:
    """Phase-flip channel shrinking the qubit coherence by ``exp(-rate t)``."""
    q = 0.5 * (-np.expm1(-rate * t))
    return [np.sqrt(1 - q) * PAULI3["I"], np.sqrt(q) * PAULI3["Z"]]


@dataclass(frozen=True)
class OUTrajectory:
    """Sampled noise path: ``modes[k] = (common, gradient)`` at ``times[k]``."""

    times: np.ndarray
    modes: np.ndarray
    detunings: np.ndarray


def ou_series(sigma: float, tau: float, n: int, dt: float, rng) -> np.ndarray:
    """Stationary OU samples with the exact AR(1) update."""
    if sigma == 0:
        return np.zeros(n)
    a = np.exp(-dt / tau)
    b = sigma * np.sqrt(-np.expm1(-2 * dt / tau))
    xi = rng.standard_normal(n)
    x = np.empty(n)
    x[0] = sigma * xi[0]
    # x_k = a x_{k-1} + b xi_k, written as a linear filter
    from scipy.signal import lfilter
    x[1:] = lfilter([b], [1.0, -a], xi[1:], zi=[a * x[0]])[0]
    return x


def ou_trajectory(model: NoiseModel, t_total: float, dt: float, rng_seed=None,
                  positions=None) -> OUTrajectory:
    """Per-ion stochastic detunings on the grid ``0, dt, ..., t_total``.

    Both OU modes start from their stationary distribution.  ``positions``
    defaults to the six-ion chain.
    """
    if dt <= 0:
        raise InvalidArgument("dt must be > 0")
    if t_total < 0:
        raise InvalidArgument("t_total must be >= 0")
    x = np.asarray(positions if positions is not None else _default_positions(6))
    n = int(np.floor(t_total / dt + 1e-9)) + 1
    rng = np.random.default_rng(rng_seed)
    common = ou_series(model.common_sigma, model.ou_tau, n, dt, rng)
    grad = ou_series(model.ou_sigma, model.ou_tau, n, dt, rng)
    det = (common[:, None] + grad[:, None] * x[None, :]) * model.mask(x.size)[None, :]
    return OUTrajectory(np.arange(n) * dt, np.stack([common, grad], axis=1), det)


def _apply_per_site(reg: Register, kraus, sites):
    for s in sites:
        apply_kraus(reg, kraus, [s])


def storage_evolution(reg: Register, T: float, model: NoiseModel, profile: FieldProfile,
                      echo: bool = True, n_steps: int = 200, rng_seed=None,
                      exact_slicing: bool = False, echo_type: str = "F") -> Register:
    """Evolve ``reg`` through storage time ``T`` (in place; returns ``reg``).

    Each of the ``n_steps`` slices applies the static-plus-OU dephasing
    unitary, leakage on the memory sites and the residual dephasing
    channel.  With ``echo`` set, ``EchoPi(echo_type)`` follows slice
    ``n_steps // 2``.

    All slice channels are diagonal in the computational basis and commute,
    so by default the slices inside each echo half are merged into one
    application (same result up to round-off); ``exact_slicing`` applies
    them one by one.
    """
    if n_steps < 2 or (echo and n_steps % 2):
        raise InvalidArgument("n_steps must be >= 2 and even when echo is set")
    if T < 0:
        raise InvalidArgument("T must be >= 0")
    n = reg.n_sites
    if profile.n_ions != n:
        raise InvalidArgument(f"profile has {profile.n_ions} positions, register {n} sites")
    mask = model.mask(n)
    dt = T / n_steps
    static = detuning_vector(profile, mask)
    if (model.ou_sigma > 0 or model.common_sigma > 0) and dt > 0:
        traj = ou_trajectory(model, dt * (n_steps - 1), dt, rng_seed, profile.positions)
        stoch = traj.detunings[:n_steps]
    else:
        stoch = np.zeros((n_steps, n))
    step_phase = 2 * np.pi * (static[None, :] + stoch) * dt  # (n_steps, n)
    leak_sites = reg.memory_sites

    halves = [(0, n_steps // 2), (n_steps // 2, n_steps)] if echo else [(0, n_steps)]
    for h, (a, b) in enumerate(halves):
        if exact_slicing:
            for k in range(a, b):
                _slice(reg, step_phase[k], model, dt, leak_sites)
        else:
            _slice(reg, step_phase[a:b].sum(axis=0), model, dt * (b - a), leak_sites)
        if echo and h == 0:
            circuits.apply_gate(reg, circuits.EchoPi(echo_type))
    return reg


def _slice(reg, phases, model, duration, leak_sites):
    if np.any(phases != 0):
        apply_diagonal_unitary(reg, _phase_diagonal(phases))
    if model.leak_rate > 0 and duration > 0:
        _apply_per_site(reg, leakage_kraus(model.leak_rate, duration), leak_sites)
    if model.residual_dephasing > 0 and duration > 0:
        _apply_per_site(reg, residual_dephasing_kraus(model.residual_dephasing, duration),
                        leak_sites)


def ou_phase_variance(sigma: float, tau: float, t) -> np.ndarray:
    """Variance of ``2 pi int_0^t x(s) ds`` for a stationary OU process ``x``."""
    t = np.asarray(t, dtype=float)
    return 2 * (2 * np.pi * sigma) ** 2 * tau ** 2 * (t / tau - 1 + np.exp(-t / tau))
