"""Orbit bookkeeping: mean motion, Kepler's equation and anomaly conversions.

All quantities are SI (m, s, rad). Eccentric anomalies returned by
:func:`solve_kepler` are *unwrapped*: they keep counting past 2*pi so that
secular terms evaluated on them stay continuous over a long scenario.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

MU_EARTH = 3.986004418e14
R_EARTH = 6.378137e6

KEPLER_TOL = 1e-12
KEPLER_MAX_ITER = 100


class KeplerSolverError(RuntimeError):
    """Raised when Kepler's equation cannot be solved to tolerance."""


@dataclass(frozen=True)
class OrbitParams:
    """Keplerian elliptical target orbit.

    Parameters
    ----------
    a : float
        Semi-major axis [m].
    e : float
        Eccentricity, ``0 <= e <= 0.99``.
    mu : float
        Gravitational parameter [m^3/s^2].
    t_p : float
        Epoch of a periapsis passage [s] not later than the scenario start.
    """

    a: float
    e: float
    mu: float = MU_EARTH
    t_p: float = 0.0

    def __post_init__(self):
        if not self.a > 0:
            raise ValueError(f"semi-major axis must be positive, got {self.a}")
        if not self.mu > 0:
            raise ValueError(f"gravitational parameter must be positive, got {self.mu}")
        if not 0.0 <= self.e <= 0.99:
            raise ValueError(f"eccentricity must lie in [0, 0.99], got {self.e}")

    @property
    def n(self) -> float:
        return mean_motion(self)

    @property
    def period(self) -> float:
        return 2.0 * np.pi / self.n

    @classmethod
    def from_perigee(cls, e: float, h_p: float, theta0: float, t0: float = 0.0,
                     mu: float = MU_EARTH, r_body: float = R_EARTH) -> "OrbitParams":
        """Build an orbit from perigee altitude and the true anomaly at ``t0``.

        The periapsis epoch is placed at or before ``t0`` so that the
        eccentric anomaly at ``t0`` lies in ``[0, 2*pi)``.
        """
        a = (r_body + h_p) / (1.0 - e)
        n = np.sqrt(mu / a**3)
        E0 = float(anomaly_convert(e, np.mod(theta0, 2 * np.pi), "true_to_eccentric"))
        M0 = E0 - e * np.sin(E0)
        return cls(a=float(a), e=float(e), mu=float(mu), t_p=float(t0 - M0 / n))


def mean_motion(params: OrbitParams) -> float:
    """Mean motion ``sqrt(mu / a^3)`` [rad/s]."""
    return float(np.sqrt(params.mu / params.a**3))


def _kepler_newton(M, e, tol=KEPLER_TOL, max_iter=KEPLER_MAX_ITER):
    M = np.asarray(M, dtype=float)
    E = M + e * np.sin(M)
    converged = np.zeros(M.shape, dtype=bool)
    for _ in range(max_iter):
        f = E - e * np.sin(E) - M
        fp = 1.0 - e * np.cos(E)
        step = f / fp
        E = E - step
        converged = np.abs(E - e * np.sin(E) - M) < tol
        if np.all(converged):
            break
    return E, converged


def _kepler_bisect(M, e, tol=KEPLER_TOL):
    # E - e sin E is monotone; |E - M| <= e bounds the root.
    lo, hi = M - e - 1e-12, M + e + 1e-12
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        f = mid - e * np.sin(mid) - M
        if abs(f) < tol or hi - lo < 1e-15:
            return mid
        if f > 0:
            hi = mid
        else:
            lo = mid
    mid = 0.5 * (lo + hi)
    if abs(mid - e * np.sin(mid) - M) >= tol:
        raise KeplerSolverError(f"bisection failed for M={M}, e={e}")
    return mid


def kepler_from_mean(M, e):
    """Solve ``M = E - e sin E`` for ``E`` (scalar or array, unwrapped)."""
    M = np.asarray(M, dtype=float)
    if not np.all(np.isfinite(M)):
        raise KeplerSolverError("non-finite mean anomaly")
    E, ok = _kepler_newton(M, e)
    if not np.all(ok):
        E = np.array(E, copy=True)
        flat_E, flat_M, flat_ok = E.reshape(-1), M.reshape(-1), ok.reshape(-1)
        for i in np.flatnonzero(~flat_ok):
            flat_E[i] = _kepler_bisect(float(flat_M[i]), e)
        E = flat_E.reshape(M.shape)
    return E if E.ndim else float(E)


def solve_kepler(params: OrbitParams, t):
    """Eccentric anomaly ``K(t)`` [rad] for epoch(s) ``t`` >= ``t_p``."""
    t = np.asarray(t, dtype=float)
    if np.any(t < params.t_p - 1e-9):
        raise ValueError("epoch precedes the periapsis epoch t_p")
    return kepler_from_mean(params.n * (t - params.t_p), params.e)


def anomaly_convert(e: float, value, direction: str):
    """Convert between eccentric and true anomaly, staying on the same revolution.

    ``direction`` is ``"eccentric_to_true"`` or ``"true_to_eccentric"``.
    """
    value = np.asarray(value, dtype=float)
    if direction == "eccentric_to_true":
        factor = np.sqrt((1.0 + e) / (1.0 - e))
    elif direction == "true_to_eccentric":
        factor = np.sqrt((1.0 - e) / (1.0 + e))
    else:
        raise ValueError(f"unknown direction {direction!r}")
    # Half-angle atan2 form is exact at odd multiples of pi; the revolution
    # offset keeps the output on the input's branch.
    half = 0.5 * value
    revs = np.round(value / (2.0 * np.pi))
    base = half - np.pi * revs
    out = 2.0 * np.arctan2(factor * np.sin(base), np.cos(base)) + 2.0 * np.pi * revs
    return out if out.ndim else float(out)
