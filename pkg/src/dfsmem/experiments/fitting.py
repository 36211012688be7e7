"""Maximum-likelihood lifetime fit and damped-sinusoid fit.

Lifetime model
    ``p(T) = (1 + A exp(-T/tau)) / 2`` with binomial counts ``k`` out of ``n``
    at each storage time.  The fit is parameterized by the decay rate
    ``r = 1/tau >= 0`` so that ``tau = inf`` is a regular boundary point.  The
    amplitude ``A in [0, 1]`` is profiled out exactly (the log-likelihood is
    concave in ``A``), and the 68 % interval for ``tau`` is the set where the
    profile log-likelihood stays within ``chi2_1(0.68)/2 ~= 0.4945`` of its
    maximum.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.optimize import brentq, least_squares, minimize_scalar
from scipy.special import xlogy
from scipy.stats import chi2

from ..errors import FitError, InvalidArgument

CI_LEVEL = 0.68
DELTA_LOGLIK = chi2.ppf(CI_LEVEL, 1) / 2


@dataclass
class FitResult:
    a: float
    tau: float
    loglik: float
    ci68: tuple
    n_points: int
    rate: float = 0.0
    degenerate: bool = False
    upper_unbounded: bool = False

    def to_dict(self) -> dict:
        d = asdict(self)
        d["ci68"] = [_json_float(v) for v in self.ci68]
        d["tau"] = _json_float(self.tau)
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def _json_float(v):
    return "inf" if np.isinf(v) else float(v)


class _Data:
    def __init__(self, data):
        arr = np.asarray(data, dtype=float)
        if arr.ndim != 2 or arr.shape[1] != 3:
            raise InvalidArgument("data must be a list of (T, k_successes, n_shots)")
        if arr.shape[0] < 2:
            raise InvalidArgument("need at least two time points")
        self.t, self.k, self.n = arr.T
        if np.any(self.n < 1) or np.any(self.k < 0) or np.any(self.k > self.n) or np.any(self.t < 0):
            raise InvalidArgument("need n_shots >= 1, 0 <= k <= n and T >= 0")
        self.f = self.n - self.k

    def loglik(self, a, r):
        """Vectorized over leading axes of ``a`` and ``r``."""
        e = np.exp(-np.multiply.outer(r, self.t))
        a = np.asarray(a)[..., None]
        p = 0.5 * (1 + a * e)
        with np.errstate(divide="ignore"):
            return np.sum(xlogy(self.k, p) + xlogy(self.f, 1 - p), axis=-1)

    def dl_da(self, a, e):
        p = 0.5 * (1 + a[..., None] * e)
        with np.errstate(divide="ignore", invalid="ignore"):
            w = self.k / p - np.where(self.f > 0, self.f / (1 - p), 0.0)
            h = -self.k / p ** 2 - np.where(self.f > 0, self.f / (1 - p) ** 2, 0.0)
        return np.sum(w * e / 2, axis=-1), np.sum(h * (e / 2) ** 2, axis=-1)

    def profile_a(self, r):
        """Maximizing amplitude for each rate in ``r`` (bracketed Newton)."""
        r = np.atleast_1d(np.asarray(r, dtype=float))
        e = np.exp(-np.multiply.outer(r, self.t))
        lo = np.zeros(r.shape)
        hi = np.ones(r.shape)
        g1, _ = self.dl_da(hi, e)
        g0, _ = self.dl_da(lo, e)
        a = np.full(r.shape, 0.5)
        for _ in range(100):
            g, h = self.dl_da(a, e)
            lo = np.where(g > 0, a, lo)
            hi = np.where(g > 0, hi, a)
            with np.errstate(divide="ignore", invalid="ignore"):
                step = a - g / h
            ok = np.isfinite(step) & (step > lo) & (step < hi)
            new = np.where(ok, step, 0.5 * (lo + hi))
            if np.all(np.abs(new - a) < 1e-15):
                a = new
                break
            a = new
        a = np.where(np.nan_to_num(g1, nan=-1.0, neginf=-1.0) >= 0, 1.0, a)
        a = np.where(g0 <= 0, 0.0, a)
        return a

    def profile(self, r):
        a = self.profile_a(r)
        return self.loglik(a, np.atleast_1d(r)), a


def _newton_polish(d: _Data, a, r, iters=20):
    """Joint Newton steps on (A, r) for an interior maximum."""
    for _ in range(iters):
        e = np.exp(-r * d.t)
        p = 0.5 * (1 + a * e)
        w = d.k / p - d.f / (1 - p)
        h = -d.k / p ** 2 - d.f / (1 - p) ** 2
        pa, pr = e / 2, -a * d.t * e / 2
        g = np.array([np.sum(w * pa), np.sum(w * pr)])
        haa = np.sum(h * pa * pa)
        har = np.sum(h * pa * pr + w * (-d.t * e / 2))
        hrr = np.sum(h * pr * pr + w * (a * d.t ** 2 * e / 2))
        hess = np.array([[haa, har], [har, hrr]])
        try:
            step = np.linalg.solve(hess, -g)
        except np.linalg.LinAlgError:
            break
        na, nr = a + step[0], r + step[1]
        if not (0 < na < 1 and nr > 0) or d.loglik(na, nr) < d.loglik(a, r) - 1e-12:
            break
        a, r = na, nr
        if np.max(np.abs(step / np.array([max(a, 1e-300), max(r, 1e-300)]))) < 1e-15:
            break
    return a, r


def mle_fit_exponential(data) -> FitResult:
    """Binomial maximum-likelihood fit of ``p(T) = (1 + A exp(-T/tau))/2``.

    Parameters
    ----------
    data : sequence of (T, k_successes, n_shots)
        ``k`` may be non-integer (exact-probability pseudo-data).

    Returns
    -------
    FitResult
        ``ci68`` is ``(tau_lower, tau_upper)``; ``tau_upper`` is ``inf`` when
        the profile likelihood never drops by the threshold as ``tau -> inf``.
        ``degenerate`` flags data with no failures at all.
    """
    d = _Data(data)
    tmax = float(np.max(d.t)) if np.max(d.t) > 0 else 1.0
    # coarse grid over the rate in units of 1/T_max, then bounded refinement
    grid = np.concatenate([[0.0], np.logspace(-8, 3, 221) / tmax])
    ll, _ = d.profile(grid)
    if not np.any(np.isfinite(ll)):
        raise FitError("log-likelihood is -inf everywhere")
    i = int(np.nanargmax(np.where(np.isfinite(ll), ll, -np.inf)))
    if i == 0:
        r_hat = 0.0
    else:
        lo = np.log(grid[max(i - 1, 1)])
        hi = np.log(grid[min(i + 1, grid.size - 1)])
        res = minimize_scalar(lambda s: -d.profile(np.exp(s))[0][0], bounds=(lo, hi),
                              method="bounded", options={"xatol": 1e-12})
        r_hat = float(np.exp(res.x))
        if d.profile(0.0)[0][0] >= -res.fun:
            r_hat = 0.0
    a_hat = float(d.profile_a(r_hat)[0])
    if r_hat > 0 and 0 < a_hat < 1:
        a_hat, r_hat = _newton_polish(d, a_hat, r_hat)
    l_hat = float(d.loglik(a_hat, r_hat))
    target = l_hat - DELTA_LOGLIK

    def f(r):
        return float(d.profile(r)[0][0]) - target

    # upper end of the rate interval -> lower bound on tau
    # (if even an instantaneous decay stays inside the threshold, tau_lower = 0)
    r_up = max(r_hat, 1e-6 / tmax) * 2
    while f(r_up) > 0 and r_up <= 1e6 / tmax:
        r_up *= 2
    if f(r_up) > 0:
        r_hi = np.inf
    else:
        r_hi = brentq(f, r_hat, r_up, xtol=1e-14 / tmax, rtol=1e-12)
    if f(0.0) >= 0:
        r_lo = 0.0
    else:
        r_lo = brentq(f, 0.0, r_hat, xtol=1e-14 / tmax, rtol=1e-12)
    tau = np.inf if r_hat == 0 else 1 / r_hat
    ci = (0.0 if np.isinf(r_hi) else 1 / r_hi, np.inf if r_lo == 0 else 1 / r_lo)
    return FitResult(a=a_hat, tau=float(tau), loglik=l_hat, ci68=ci, n_points=int(d.t.size),
                     rate=float(r_hat), degenerate=bool(np.all(d.f == 0)),
                     upper_unbounded=bool(np.isinf(ci[1])))


# ---------------------------------------------------------------------------
# Damped sinusoid
# ---------------------------------------------------------------------------

@dataclass
class SinusoidFit:
    period: float
    tau_d: float
    phase: float
    tau_d_lower: float
    decay_significant: bool
    covariance: np.ndarray = field(repr=False)
    rms_residual: float = 0.0

    def to_dict(self) -> dict:
        return {
            "period": self.period,
            "tau_d": _json_float(self.tau_d),
            "tau_d_lower": _json_float(self.tau_d_lower),
            "phase": self.phase,
            "decay_significant": self.decay_significant,
            "rms_residual": self.rms_residual,
            "covariance": np.asarray(self.covariance).tolist(),
        }


def _model(x, t):
    f, g, th = x
    return np.exp(-g * t) * np.cos(2 * np.pi * f * t + th)


def _periodogram_starts(t, y, n_starts=4):
    span = t.max() - t.min()
    dt = np.min(np.diff(np.unique(t)))
    freqs = np.arange(0.25 / span, 0.5 / dt, 0.1 / span)
    c = np.cos(2 * np.pi * np.outer(freqs, t))
    s = np.sin(2 * np.pi * np.outer(freqs, t))
    a, b = c @ y, s @ y
    power = a ** 2 + b ** 2
    order = np.argsort(power)[::-1]
    starts = []
    for i in order:
        if all(abs(freqs[i] - f0) > 0.5 / span for f0, _ in starts):
            starts.append((freqs[i], float(np.arctan2(-b[i], a[i]))))
        if len(starts) >= n_starts:
            break
    return starts


def fit_sinusoid_decay(t, y, z: float = 2.0) -> SinusoidFit:
    """Least-squares fit of ``exp(-t/tau_d) cos(2 pi t / T_p + theta)``.

    Starting frequencies come from a least-squares periodogram; when the
    data span less than about one period (slow oscillations seen through
    short windows) a logarithmic grid of slow frequencies is added.  The
    decay rate is constrained to be non-negative; ``tau_d`` is ``inf`` when
    it hits zero.  ``tau_d_lower = 1/(rate + z sigma_rate)`` and
    ``decay_significant`` means ``rate > z sigma_rate`` and the decay over
    the data span exceeds 1e-9 (so exact pure cosines are never flagged).
    """
    t = np.asarray(t, dtype=float)
    y = np.asarray(y, dtype=float)
    if t.size < 8 or t.size != y.size:
        raise InvalidArgument("need at least 8 (t, y) points of equal length")
    if not (np.all(np.isfinite(t)) and np.all(np.isfinite(y))):
        raise InvalidArgument("t and y must be finite")
    span = float(t.max() - t.min())
    starts = _periodogram_starts(t, y)
    if starts[0][0] * span < 1.5:
        starts += [(f, 0.0) for f in np.logspace(np.log10(0.05 / span), np.log10(2 / span), 12)]
    best = None
    for f0, th0 in starts:
        for th in (th0, th0 + np.pi / 2, th0 - np.pi / 2):
            try:
                r = least_squares(lambda x: _model(x, t) - y, [f0, 0.1 / span, th],
                                  bounds=([0, 0, -np.inf], [np.inf, np.inf, np.inf]),
                                  xtol=1e-15, ftol=1e-15, gtol=1e-15, max_nfev=2000)
            except ValueError:
                continue
            if best is None or r.cost < best.cost:
                best = r
    if best is None or not np.all(np.isfinite(best.x)):
        raise FitError("sinusoid fit did not converge")
    f, g, th = best.x
    dof = max(t.size - 3, 1)
    s2 = 2 * best.cost / dof
    jtj = best.jac.T @ best.jac
    try:
        cov = np.linalg.pinv(jtj) * s2
    except np.linalg.LinAlgError as exc:
        raise FitError(f"singular Jacobian, rms residual {np.sqrt(s2):.3e}") from exc
    sig_g = float(np.sqrt(max(cov[1, 1], 0.0)))
    rms = float(np.sqrt(2 * best.cost / t.size))
    if f <= 0:
        raise FitError(f"fit collapsed to zero frequency (rms residual {rms:.3e})")
    tau = np.inf if g <= 0 else 1 / g
    low = np.inf if g + z * sig_g <= 0 else 1 / (g + z * sig_g)
    th = float(np.mod(th + np.pi, 2 * np.pi) - np.pi)
    return SinusoidFit(1 / f, float(tau), th, float(low), bool(g > z * sig_g and g * span > 1e-9), cov, rms)
