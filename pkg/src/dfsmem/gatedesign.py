"""Segmented, phase-modulated spin-dependent-force (SDF) gate design.

Chain model
    Equilibrium positions minimise ``sum x**2/2 + sum_{i<j} 1/|x_i - x_j|``
    in units of ``l = (e**2 / (4 pi eps0 m w_ax**2))**(1/3)``.  Transverse
    modes diagonalise ``A_ii = (w_t/w_ax)**2 - sum_j 1/|d_ij|**3``,
    ``A_ij = 1/|d_ij|**3``.

Gate model
    The force on mode ``k`` during segment ``s`` (duration ``tau``, phase
    ``phi_s``) has detuning ``delta_k = mu - omega_k``.  With
    ``G_ks = exp(i phi_s) (exp(i delta (t_s + tau)) - exp(i delta t_s)) / (i delta)``
    the displacement of ion ``i`` at the gate end is
    ``alpha_ki = eta_ki Omega/2 sum_s G_ks`` and the two-ion geometric phase is
    ``Theta = Omega**2 sum_k eta_ki eta_kj D_k`` with
    ``D_k = Im int_0^T dt int_0^t dt' f_k(t)* f_k(t')``,
    ``f_k = exp(i (delta_k t + phi(t)))``, evaluated segment by segment in
    closed form.  The resulting interaction is ``exp(-i Theta/2 Z_i Z_j)``.

All frequencies passed to public functions are in Hz; internally angular
frequencies (rad/s) are used.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.optimize import least_squares, minimize, minimize_scalar

from .errors import InvalidArgument, SolverError, ValidationError

TWO_PI = 2 * np.pi
PAPER_MODE_FREQS = (1.303e6, 1.347e6, 1.385e6, 1.416e6, 1.441e6, 1.458e6)

# 171Yb+, counter-propagating 411 nm beams
_HBAR = 1.054571817e-34
_AMU = 1.66053906660e-27
ION_MASS = 171 * _AMU
DELTA_K = 2 * TWO_PI / 411e-9


def lamb_dicke(freq_hz, delta_k: float = DELTA_K, mass: float = ION_MASS):
    """Single-ion Lamb-Dicke parameter ``dk sqrt(hbar / (2 m w))``."""
    return delta_k * np.sqrt(_HBAR / (2 * mass * TWO_PI * np.asarray(freq_hz, dtype=float)))


# ---------------------------------------------------------------------------
# Chain geometry and modes
# ---------------------------------------------------------------------------

def _coulomb_grad(x):
    d = x[:, None] - x[None, :]
    np.fill_diagonal(d, np.inf)
    return x - np.sum(np.sign(d) / d ** 2, axis=1)


def _coulomb_hess(x):
    d = np.abs(x[:, None] - x[None, :])
    np.fill_diagonal(d, np.inf)
    k = 2.0 / d ** 3
    h = -k
    np.fill_diagonal(h, 1 + k.sum(axis=1))
    return h


def equilibrium_positions(n: int, axial_freq: float | None = None) -> np.ndarray:
    """Dimensionless equilibrium coordinates of ``n`` ions in a harmonic trap.

    ``axial_freq`` only sets the length unit and does not change the result.

    Raises
    ------
    SolverError
        The gradient norm does not reach 1e-12.
    """
    if n < 1:
        raise InvalidArgument("n must be >= 1")
    if n == 1:
        return np.zeros(1)

    def energy(x):
        d = np.abs(x[:, None] - x[None, :])
        iu = np.triu_indices(n, 1)
        return 0.5 * np.sum(x ** 2) + np.sum(1.0 / d[iu])

    x0 = np.linspace(-1, 1, n) * n ** 0.6
    res = minimize(energy, x0, jac=_coulomb_grad, method="BFGS", options={"gtol": 1e-10})
    x = np.sort(res.x)
    for _ in range(20):  # Newton polish
        g = _coulomb_grad(x)
        if np.max(np.abs(g)) < 1e-14:
            break
        x = x - np.linalg.solve(_coulomb_hess(x), g)
    x = 0.5 * (x - x[::-1])
    gnorm = np.linalg.norm(_coulomb_grad(x))
    if gnorm > 1e-12:
        raise SolverError(f"equilibrium not converged (gradient norm {gnorm:.2e})")
    return x


def transverse_modes(positions, transverse_com_freq: float, axial_freq: float):
    """Transverse mode frequencies (Hz, ascending) and vectors (columns).

    Raises ``ValidationError`` when the linear chain is unstable.
    """
    x = np.asarray(positions, dtype=float)
    n = x.size
    if n == 1:
        return np.array([float(transverse_com_freq)]), np.ones((1, 1))
    d = np.abs(x[:, None] - x[None, :])
    np.fill_diagonal(d, np.inf)
    k = 1.0 / d ** 3
    a = k.copy()
    np.fill_diagonal(a, (transverse_com_freq / axial_freq) ** 2 - k.sum(axis=1))
    lam, vec = np.linalg.eigh(a)
    if lam[0] <= 0:
        raise ValidationError("transverse mode frequency is imaginary (zig-zag instability)")
    # deterministic sign: largest-magnitude component positive
    for c in range(n):
        j = np.argmax(np.abs(vec[:, c]) + 1e-9 * np.arange(n)[::-1])
        if vec[j, c] < 0:
            vec[:, c] *= -1
    return axial_freq * np.sqrt(lam), vec


def fit_axial_frequency(n: int, transverse_com_freq: float, target_freqs) -> float:
    """Axial frequency whose ideal-chain spectrum best matches ``target_freqs``."""
    x = equilibrium_positions(n)
    target = np.sort(np.asarray(target_freqs, dtype=float))

    def cost(wz):
        try:
            f, _ = transverse_modes(x, transverse_com_freq, wz)
        except ValidationError:
            return 1e30
        return float(np.sum((f - target) ** 2))

    hi = transverse_com_freq / np.sqrt(2.0 * n)
    res = minimize_scalar(cost, bounds=(1e-3 * transverse_com_freq, hi), method="bounded",
                          options={"xatol": 1e-6})
    return float(res.x)


@dataclass
class ChainModel:
    n_ions: int
    axial_freq: float
    transverse_com_freq: float
    positions: np.ndarray
    mode_freqs: np.ndarray
    mode_vectors: np.ndarray
    computed_freqs: np.ndarray = None

    def eta(self) -> np.ndarray:
        """``eta[k, i]`` = Lamb-Dicke factor of ion ``i`` in mode ``k``."""
        return lamb_dicke(self.mode_freqs)[:, None] * self.mode_vectors.T


def build_chain(n_ions: int = 6, transverse_com_freq: float = 1.458e6,
                axial_freq: float | None = None, measured_freqs=PAPER_MODE_FREQS,
                use_measured: bool = True) -> ChainModel:
    """Chain with computed modes, optionally overriding frequencies by a measured list.

    If ``axial_freq`` is None it is fitted to ``measured_freqs``.  With
    ``use_measured`` the measured list replaces the computed frequencies
    while the computed eigenvectors are kept.
    """
    x = equilibrium_positions(n_ions)
    if axial_freq is None:
        if measured_freqs is None:
            raise InvalidArgument("need axial_freq or measured_freqs")
        axial_freq = fit_axial_frequency(n_ions, transverse_com_freq, measured_freqs)
    f, v = transverse_modes(x, transverse_com_freq, axial_freq)
    freqs = f
    if use_measured and measured_freqs is not None:
        if len(measured_freqs) != n_ions:
            raise InvalidArgument("measured mode list has the wrong length")
        freqs = np.sort(np.asarray(measured_freqs, dtype=float))
    return ChainModel(n_ions, float(axial_freq), float(transverse_com_freq), x, freqs, v, f)


# ---------------------------------------------------------------------------
# Segment integrals
# ---------------------------------------------------------------------------

def _detunings(chain: ChainModel, mu_hz: float, drift_hz: float = 0.0) -> np.ndarray:
    return TWO_PI * (mu_hz - (chain.mode_freqs + drift_hz))


def _interval_integral(delta, t0, t1):
    """``int_{t0}^{t1} exp(i delta t) dt``, exact also at ``delta = 0``."""
    d = np.asarray(delta, dtype=float)
    w = t1 - t0
    return w * np.exp(0.5j * d * (t0 + t1)) * np.sinc(d * w / (2 * np.pi))


def segment_integrals(phases, delta, t_gate: float) -> np.ndarray:
    """``G[k, s] = int_seg exp(i (delta_k t + phi_s)) dt`` in closed form."""
    phases = np.asarray(phases, dtype=float)
    n = phases.size
    tau = t_gate / n
    ts = np.arange(n) * tau
    d = np.asarray(delta, dtype=float)[:, None]
    return np.exp(1j * phases)[None, :] * _interval_integral(d, ts[None, :], ts[None, :] + tau)


def closure(phases, delta, t_gate: float) -> np.ndarray:
    """``I_k = int_0^T exp(i (delta_k t + phi(t))) dt`` (s)."""
    return segment_integrals(phases, delta, t_gate).sum(axis=1)


def phase_area(phases, delta, t_gate: float) -> np.ndarray:
    """``D_k = Im int_0^T dt int_0^t dt' f*(t) f(t')`` per mode (s**2)."""
    g = segment_integrals(phases, delta, t_gate)
    n = g.shape[1]
    tau = t_gate / n
    d = np.asarray(delta, dtype=float)
    before = np.cumsum(g, axis=1) - g
    cross = np.imag(np.sum(np.conj(g) * before, axis=1))
    return cross + n * _self_area(d, tau)


def _self_area(d, tau):
    """Within-segment area ``(sin(d tau) - d tau) / d**2`` with its small-``d`` series."""
    x = d * tau
    small = np.abs(x) < 1e-3
    safe = np.where(small, 1.0, d)
    exact = (np.sin(safe * tau) - safe * tau) / safe ** 2
    series = -tau ** 2 * (x / 6 - x ** 3 / 120)
    return np.where(small, series, exact)


def _theta_raw(phases, delta, t_gate, eta_i, eta_j):
    return float(np.sum(eta_i * eta_j * phase_area(phases, delta, t_gate)))


# ---------------------------------------------------------------------------
# Solutions
# ---------------------------------------------------------------------------

@dataclass
class GateSolution:
    n_segments: int
    t_gate: float
    mu: float
    segment_phases: np.ndarray
    rabi: float
    residual_alpha: np.ndarray
    geom_phase: float
    target_pair: tuple
    parameterization: str = "antisymmetric"
    target_theta: float = np.pi / 10
    closure_residual: float = 0.0
    robust_cost: float = 0.0

    @property
    def omega(self) -> float:
        return TWO_PI * self.rabi

    def to_dict(self) -> dict:
        d = asdict(self)
        for k, v in d.items():
            if isinstance(v, np.ndarray):
                d[k] = v.tolist()
        d["target_pair"] = list(self.target_pair)
        return d

    def to_json(self, **extra) -> str:
        d = self.to_dict()
        d.update(extra)
        return json.dumps(d, indent=2, sort_keys=True)


def _expand(x, n, parameterization):
    if parameterization == "free":
        return np.concatenate([[0.0], x])  # gauge fixed by the first phase
    half = n // 2
    h = x[:half]
    mid = [] if n % 2 == 0 else ([0.0] if parameterization == "antisymmetric" else [x[half]])
    tail = -h[::-1] if parameterization == "antisymmetric" else h[::-1]
    return np.concatenate([h, mid, tail])


def _n_free(n, parameterization):
    if parameterization == "free":
        return n - 1
    if parameterization == "antisymmetric":
        return n // 2
    return n // 2 + n % 2


def _n_constraints(k, parameterization):
    # Antisymmetric phases make exp(-i delta T/2) I_k real, halving the constraints.
    return k if parameterization == "antisymmetric" else 2 * k


def _eta_pair(chain, pair):
    eta = chain.eta()
    i, j = pair
    if not (0 <= i < chain.n_ions and 0 <= j < chain.n_ions) or i == j:
        raise InvalidArgument(f"invalid ion pair {pair}")
    return eta[:, i], eta[:, j]


def solve_phases(chain: ChainModel, ion_pair=(2, 3), mu: float = 1.337e6, t_gate: float = 150e-6,
                 n_segments: int = 24, antisymmetric: bool = True, target_theta: float = np.pi / 10,
                 *, parameterization: str | None = None, robust_band=(-1e3, -500.0, 500.0, 1e3),
                 n_restarts: int = 8, rng_seed=0, tol: float = 1e-8,
                 allow_residual: bool = False) -> GateSolution:
    """Solve segment phases closing all phase-space loops, then scale Omega.

    Parameters
    ----------
    antisymmetric : bool
        ``phi_k = -phi_{N+1-k}``; otherwise an unconstrained sequence
        (unless ``parameterization`` says otherwise).
    parameterization : {"antisymmetric", "symmetric", "free"}, optional
        Overrides ``antisymmetric``.
    robust_band : sequence of Hz
        Uniform mode drifts at which displacement and phase errors are
        penalised during the first solver stage; empty disables it.
    allow_residual : bool
        Return the best effort instead of raising when closure fails
        (used for baseline comparisons).

    Raises
    ------
    SolverError
        Too few free phases for the closure constraints, or no restart
        reached the tolerance.
    """
    par = parameterization or ("antisymmetric" if antisymmetric else "free")
    if par not in ("antisymmetric", "symmetric", "free"):
        raise InvalidArgument(f"unknown parameterization {par!r}")
    if not 2 <= n_segments <= 64:
        raise InvalidArgument("n_segments must lie in [2, 64]")
    if mu <= 0 or t_gate <= 0:
        raise InvalidArgument("mu and t_gate must be positive")
    k = chain.n_ions
    n_free = _n_free(n_segments, par)
    n_con = _n_constraints(k, par)
    # a constant shift keeps a symmetric sequence symmetric: one direction is pure gauge
    n_eff = n_free - 1 if par == "symmetric" else n_free
    if n_eff < n_con and not allow_residual:
        raise SolverError(
            f"infeasible: {n_eff} effective free phases cannot satisfy {n_con} closure constraints "
            f"(Re/Im of alpha_k(T) = 0 for modes 0..{k - 1})")
    eta_i, eta_j = _eta_pair(chain, ion_pair)
    delta = _detunings(chain, mu)
    band = [_detunings(chain, mu, e) for e in robust_band]
    eta_rss = np.sqrt(eta_i ** 2 + eta_j ** 2)
    T = t_gate

    def close_res(x):
        c = closure(_expand(x, n_segments, par), delta, T)
        return np.concatenate([c.real, c.imag]) / T

    def robust_res(x, wc=30.0):
        ph = _expand(x, n_segments, par)
        th = _theta_raw(ph, delta, T, eta_i, eta_j)
        om = np.sqrt(target_theta / max(abs(th), 1e-300))
        c = closure(ph, delta, T)
        out = [wc * c.real / T, wc * c.imag / T]
        for d in band:
            a = 0.5 * om * eta_rss * closure(ph, d, T)
            dth = om ** 2 * _theta_raw(ph, d, T, eta_i, eta_j) - target_theta
            out += [a.real, a.imag, [2.5 * dth]]
        return np.concatenate(out)

    rng = np.random.default_rng(rng_seed)
    cands = []
    for _ in range(n_restarts):
        x0 = rng.uniform(-np.pi, np.pi, n_free)
        if band:
            x0 = least_squares(robust_res, x0, xtol=1e-10, ftol=1e-10).x
        r = least_squares(close_res, x0, xtol=1e-15, ftol=1e-15, gtol=1e-15)
        ph = _expand(r.x, n_segments, par)
        th = _theta_raw(ph, delta, T, eta_i, eta_j)
        resid = float(np.max(np.abs(r.fun)))
        cost = float(np.sum(robust_res(r.x, 0.0) ** 2)) if band else -th
        cands.append((resid, th, cost, np.mod(r.x + np.pi, TWO_PI) - np.pi))
    ok = [c for c in cands if c[1] > 0 and c[0] < tol * 1e-4]
    if not ok:
        if not allow_residual:
            best = min(cands, key=lambda c: c[0])
            raise SolverError(f"closure not reached: best max|I_k|/T = {best[0]:.2e}")
        ok = [c for c in cands if c[1] > 0] or cands
        ok = [min(ok, key=lambda c: (c[2] if band else c[0]))]
    resid, th, cost, x = min(ok, key=lambda c: c[2])
    ph = _expand(x, n_segments, par)
    omega = np.sqrt(target_theta / abs(th))
    alpha = 0.5 * omega * eta_rss * np.abs(closure(ph, delta, T))
    return GateSolution(
        n_segments=n_segments, t_gate=T, mu=mu, segment_phases=ph, rabi=omega / TWO_PI,
        residual_alpha=alpha, geom_phase=geometric_phase_raw(ph, chain, ion_pair, mu, T, omega),
        target_pair=tuple(ion_pair), parameterization=par, target_theta=target_theta,
        closure_residual=float(np.max(np.abs(closure(ph, delta, T))) / T), robust_cost=cost)


def geometric_phase_raw(phases, chain, ion_pair, mu, t_gate, omega, drift_hz=0.0) -> float:
    eta_i, eta_j = _eta_pair(chain, ion_pair)
    return omega ** 2 * _theta_raw(phases, _detunings(chain, mu, drift_hz), t_gate, eta_i, eta_j)


def geometric_phase(sol: GateSolution, chain: ChainModel, ion_pair=None, drift_hz: float = 0.0,
                    omega: float | None = None) -> float:
    """Two-ion geometric phase Theta of one sub-gate (radians)."""
    pair = sol.target_pair if ion_pair is None else ion_pair
    om = sol.omega if omega is None else omega
    return geometric_phase_raw(sol.segment_phases, chain, pair, sol.mu, sol.t_gate, om, drift_hz)


def final_displacements(sol: GateSolution, chain: ChainModel, ion_pair=None, drift_hz: float = 0.0,
                        omega: float | None = None) -> np.ndarray:
    """``alpha[ion, k]`` at the gate end for both ions of the pair."""
    pair = sol.target_pair if ion_pair is None else ion_pair
    om = sol.omega if omega is None else omega
    eta = chain.eta()
    c = closure(sol.segment_phases, _detunings(chain, sol.mu, drift_hz), sol.t_gate)
    return np.stack([0.5 * om * eta[:, i] * c for i in pair])


def trajectories(sol: GateSolution, chain: ChainModel, ion_pair=None, points_per_segment: int = 8,
                 omega: float | None = None):
    """Phase-space trajectories ``alpha[ion, k, t]`` sampled inside every segment.

    Returns ``(times, alpha)`` with ``times`` of length
    ``n_segments * points_per_segment + 1``.
    """
    pair = sol.target_pair if ion_pair is None else ion_pair
    om = sol.omega if omega is None else omega
    eta = chain.eta()
    delta = _detunings(chain, sol.mu)[:, None]
    n = sol.n_segments
    tau = sol.t_gate / n
    g = segment_integrals(sol.segment_phases, delta[:, 0], sol.t_gate)
    start = np.concatenate([np.zeros((g.shape[0], 1)), np.cumsum(g, axis=1)], axis=1)
    times = [0.0]
    integ = [np.zeros(g.shape[0], dtype=complex)]
    for s in range(n):
        ts = s * tau
        for m in range(1, points_per_segment + 1):
            t = ts + tau * m / points_per_segment
            part = np.exp(1j * sol.segment_phases[s]) * _interval_integral(delta[:, 0], ts, t)
            times.append(t)
            integ.append(start[:, s] + part)
    integ = np.array(integ).T  # (k, t)
    alpha = np.stack([0.5 * om * eta[:, i][:, None] * integ for i in pair])
    return np.array(times), alpha


# ---------------------------------------------------------------------------
# Error budget
# ---------------------------------------------------------------------------

def subgate_error(sol: GateSolution, chain: ChainModel, drift_hz: float = 0.0, nbar=0.0):
    """Displacement error ``sum_k |alpha_k|**2 (2 nbar_k + 1)/2`` and phase error of one sub-gate."""
    alpha = final_displacements(sol, chain, drift_hz=drift_hz)
    nb = np.broadcast_to(np.asarray(nbar, dtype=float), (chain.n_ions,))
    disp = float(np.sum(np.abs(alpha) ** 2 * (2 * nb + 1)[None, :]) / 2)
    dtheta = geometric_phase(sol, chain, drift_hz=drift_hz) - sol.target_theta
    return disp, dtheta


def composed_fidelity(disp_error: float, dtheta: float, n_sub: int = 5) -> float:
    """Bell fidelity after ``n_sub`` identical sub-gates.

    Displacement errors compound multiplicatively; the phase error adds
    coherently, giving ``cos**2(n_sub dtheta / 2)``.
    """
    return float((1 - disp_error) ** n_sub * np.cos(n_sub * dtheta / 2) ** 2)


def robustness_scan(sol: GateSolution, chain: ChainModel, drift_range, nbar=0.0) -> np.ndarray:
    """Infidelity of the composed gate with every mode shifted by each drift (Hz)."""
    out = []
    for d in drift_range:
        disp, dth = subgate_error(sol, chain, d, nbar)
        out.append(1 - composed_fidelity(disp, dth))
    return np.array(out)


def bell_fidelity_estimate(sol: GateSolution, chain: ChainModel, nbar=0.0, drift_hz: float = 0.0,
                           extra_alpha=None) -> float:
    """Bell fidelity of the full Rzz(pi/2) built from five sub-gates.

    ``extra_alpha`` optionally injects residual displacements ``[k]`` (same on
    both ions' budget, i.e. the per-mode ``|alpha_k|**2`` summed over the pair).
    """
    disp, dth = subgate_error(sol, chain, drift_hz, nbar)
    if extra_alpha is not None:
        nb = np.broadcast_to(np.asarray(nbar, dtype=float), (chain.n_ions,))
        disp += float(np.sum(np.abs(np.asarray(extra_alpha)) ** 2 * (2 * nb + 1)) / 2)
    return composed_fidelity(disp, dth)


def pairwise_fidelity_matrix(chain: ChainModel, pairs, solve_kwargs=None, nbar=0.0,
                             drift_hz: float = 0.0):
    """Solve every pair and return ``(matrix, solutions)`` with NaN on the diagonal."""
    solve_kwargs = dict(solve_kwargs or {})
    n = chain.n_ions
    mat = np.full((n, n), np.nan)
    sols = {}
    for p in pairs:
        s = solve_phases(chain, p, **solve_kwargs)
        f = bell_fidelity_estimate(s, chain, nbar, drift_hz)
        mat[p[0], p[1]] = mat[p[1], p[0]] = f
        sols[tuple(p)] = s
    return mat, sols
