"""Closed-form Tschauner-Hempel relative motion (Yamanaka-Ankersen form).

State ordering is ``[r_x, r_y, r_z, v_x, v_y, v_z]`` in the LVLH frame of the
target: x radial (outward), z along the orbital angular momentum, y completing
the triad. Thrust per unit mass enters the velocity rates, ``B(t) = [0; I]``.

Everything here is parameterized by eccentric anomaly ``E`` and a reference
anomaly ``E_hat`` at which the secular term ``J`` vanishes. All matrix
builders broadcast over array-valued ``E`` and return ``(..., 6, 6)`` arrays.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .kepler import OrbitParams, solve_kepler

AXES = {"x": 0, "y": 1, "z": 2}


class InputDomainError(ValueError):
    """Pulse or impulse timing outside its sample interval."""


def _axis_index(axis) -> int:
    if isinstance(axis, str):
        return AXES[axis]
    axis = int(axis)
    if axis not in (0, 1, 2):
        raise ValueError(f"axis must be 0, 1 or 2, got {axis}")
    return axis


@dataclass(frozen=True)
class ThSymbols:
    rho: np.ndarray
    s: np.ndarray
    c: np.ndarray
    J: np.ndarray
    alpha: float
    E_hat: np.ndarray


def th_symbols(e: float, n: float, E, E_hat) -> ThSymbols:
    """Auxiliary quantities shared by the fundamental matrix and its inverse."""
    E = np.asarray(E, dtype=float)
    E_hat = np.asarray(E_hat, dtype=float)
    w = 1.0 - e * e
    den = 1.0 - e * np.cos(E)
    rho = w / den
    s = np.sqrt(w) * np.sin(E) / den
    c = (np.cos(E) - e) / den
    J = (E - E_hat - e * (np.sin(E) - np.sin(E_hat))) / w**1.5
    alpha = n / w**1.5
    return ThSymbols(rho=rho, s=s, c=c, J=J, alpha=alpha, E_hat=E_hat)


def ya_fundamental(e: float, n: float, E, E_hat):
    """Fundamental matrix ``Y_E``; shape ``(6, 6)`` or ``(..., 6, 6)``."""
    sy = th_symbols(e, n, E, E_hat)
    r, s, c, J, a = sy.rho, sy.s, sy.c, sy.J, sy.alpha
    Y = np.zeros(np.broadcast_shapes(np.shape(r), np.shape(J)) + (6, 6))
    Y[..., 0, 0] = s
    Y[..., 0, 3] = 2.0 / r - 3.0 * e * s * J
    Y[..., 0, 4] = -c
    Y[..., 1, 0] = c * (1.0 + 1.0 / r)
    Y[..., 1, 1] = 1.0 / r
    Y[..., 1, 3] = -3.0 * r * J
    Y[..., 1, 4] = s * (1.0 + 1.0 / r)
    Y[..., 2, 2] = c / r
    Y[..., 2, 5] = s / r
    Y[..., 3, 0] = a * r * r * c
    Y[..., 3, 3] = a * (-e * s - 3.0 * e * r * r * J * c)
    Y[..., 3, 4] = a * r * r * s
    Y[..., 4, 0] = a * s * (-1.0 - r * r)
    Y[..., 4, 1] = a * e * s
    Y[..., 4, 3] = a * r * (3.0 * e * s * r * J - 3.0)
    Y[..., 4, 4] = a * (c + e + c * r * r)
    Y[..., 5, 2] = -s * a
    Y[..., 5, 5] = (c + e) * a
    return Y


def ya_fundamental_inverse(e: float, n: float, E, E_hat):
    """Closed-form inverse ``Y_E^{-1}``, including the ``J``-proportional term."""
    sy = th_symbols(e, n, E, E_hat)
    r, s, c, J, a = sy.rho, sy.s, sy.c, sy.J, sy.alpha
    w = 1.0 - e * e
    Yi = np.zeros(np.broadcast_shapes(np.shape(r), np.shape(J)) + (6, 6))
    Yi[..., 0, 0] = -s * (r * r + 2.0 * r + e * e)
    Yi[..., 0, 1] = e * s * s * (1.0 + r)
    Yi[..., 0, 3] = (c - 2.0 * e / r) / a
    Yi[..., 0, 4] = -s * (r + 1.0) / (r * a)
    Yi[..., 1, 0] = -e * s * (1.0 + r) ** 2
    Yi[..., 1, 1] = r * r * (1.0 - c * e) + e * e * s * s
    Yi[..., 1, 3] = (e * c - 2.0 / r) / a
    Yi[..., 1, 4] = -e * s * (r + 1.0) / (r * a)
    Yi[..., 2, 2] = (c + e) * w
    Yi[..., 2, 5] = -s * w / (a * r)
    Yi[..., 3, 0] = r * r * (1.0 + r)
    Yi[..., 3, 1] = -e * s * r * r
    Yi[..., 3, 3] = e * s / a
    Yi[..., 3, 4] = r / a
    Yi[..., 4, 0] = 3.0 * r * (c + e) - e * r * s * s
    Yi[..., 4, 1] = -e * s * c * (1.0 + r) - e * e * s
    Yi[..., 4, 3] = s / a
    Yi[..., 4, 4] = (c * (r + 1.0) + e) / (a * r)
    Yi[..., 5, 2] = s * w
    Yi[..., 5, 5] = c * w / (a * r)
    # Secular part; rows 0 and 1 only, and zero when E == E_hat.
    k = 3.0 * J
    Yi[..., 0, 0] += k * e * r * r * (1.0 + r)
    Yi[..., 0, 1] += -k * e * e * r * r * s
    Yi[..., 0, 3] += k * e * e * s / a
    Yi[..., 0, 4] += k * e * r / a
    Yi[..., 1, 0] += k * r * r * (1.0 + r)
    Yi[..., 1, 1] += -k * e * r * r * s
    Yi[..., 1, 3] += k * e * s / a
    Yi[..., 1, 4] += k * r / a
    return Yi / w


def thrust_antiderivative(e: float, n: float, E, E_hat, axis):
    """Antiderivative in ``E`` of ``Y_E^{-1} C_{axis+3} (1 - e cos E) / n``.

    Returns shape ``(6,)`` or ``(..., 6)``.
    """
    i = _axis_index(axis)
    E = np.asarray(E, dtype=float)
    E_hat = np.asarray(E_hat, dtype=float)
    w = 1.0 - e * e
    alpha = n / w**1.5
    S, C, S2 = np.sin(E), np.cos(E), np.sin(2.0 * E)
    f = np.zeros(np.broadcast_shapes(E.shape, E_hat.shape) + (6,))
    if i == 0:
        h = 6.0 * (E_hat - E - e * np.sin(E_hat))
        k = w**-3.5 / (2.0 * alpha**2)
        f[..., 0] = 2 * (1 + 6 * e * e) * S - 3 * e * (2 + e * e) * E + e * e * C * h + e**3 * S2 / 2
        f[..., 1] = 2 * e * (8 - e * e) * S - (4 + 7 * e * e - 2 * e**4) * E + e * C * h + e * e * S2 / 2
        f[..., 3] = -2 * e * C * w**1.5
        f[..., 4] = -2 * C * w**1.5
    elif i == 1:
        h = 6.0 * (E_hat - E - e * np.sin(E_hat))
        k = w**-3 / (2.0 * alpha**2)
        f[..., 0] = C * (4 * (1 + e * e) - e * C) - e * E * h - 3 * e * E * E
        f[..., 1] = e * C * (10 - 2 * e * e - e * C) - E * h - 3 * E * E
        f[..., 3] = 2 * E * w**1.5
        f[..., 4] = np.sqrt(w) * (4 * S - e * (3 * E + S2 / 2))
    else:
        k = w**-2.5 / (4.0 * alpha**2)
        f[..., 2] = 2 * np.sqrt(w) * C * (2 - e * C)
        f[..., 5] = 4 * (e * e + 1) * S - e * (6 * E + S2)
    return k * f


def thrust_antiderivative_delta(e: float, n: float, E1, E2, E_hat, axis):
    """``f_axis(E2) - f_axis(E1)`` without cancellation for short intervals.

    Differences of ``sin``, ``cos`` and the secular terms are rewritten with
    half-angle identities so the result keeps full relative precision when
    ``E2 - E1`` is tiny compared with ``f`` itself.
    """
    i = _axis_index(axis)
    E1 = np.asarray(E1, dtype=float)
    E2 = np.asarray(E2, dtype=float)
    E_hat = np.asarray(E_hat, dtype=float)
    w = 1.0 - e * e
    alpha = n / w**1.5
    d = E2 - E1
    m = 0.5 * (E1 + E2)
    sh = np.sin(0.5 * d)
    C1, C2 = np.cos(E1), np.cos(E2)
    dS = 2.0 * np.cos(m) * sh
    dC = -2.0 * np.sin(m) * sh
    dS2 = 2.0 * np.cos(2.0 * m) * np.sin(d)
    dC2 = dC * (C1 + C2)
    dE2 = d * (E1 + E2)
    dEC = E2 * dC + d * C1
    shape = np.broadcast_shapes(E1.shape, E2.shape, E_hat.shape) + (6,)
    f = np.zeros(shape)
    if i in (0, 1):
        h0 = 6.0 * (E_hat - e * np.sin(E_hat))
        # C h = h0 C - 6 E C and E h = h0 E - 6 E^2.
        dCh = h0 * dC - 6.0 * dEC
        dEh = h0 * d - 6.0 * dE2
    if i == 0:
        k = w**-3.5 / (2.0 * alpha**2)
        f[..., 0] = 2 * (1 + 6 * e * e) * dS - 3 * e * (2 + e * e) * d + e * e * dCh + e**3 * dS2 / 2
        f[..., 1] = 2 * e * (8 - e * e) * dS - (4 + 7 * e * e - 2 * e**4) * d + e * dCh + e * e * dS2 / 2
        f[..., 3] = -2 * e * dC * w**1.5
        f[..., 4] = -2 * dC * w**1.5
    elif i == 1:
        k = w**-3 / (2.0 * alpha**2)
        f[..., 0] = 4 * (1 + e * e) * dC - e * dC2 - e * dEh - 3 * e * dE2
        f[..., 1] = e * (10 - 2 * e * e) * dC - e * e * dC2 - dEh - 3 * dE2
        f[..., 3] = 2 * d * w**1.5
        f[..., 4] = np.sqrt(w) * (4 * dS - e * (3 * d + dS2 / 2))
    else:
        k = w**-2.5 / (4.0 * alpha**2)
        f[..., 2] = 2 * np.sqrt(w) * (2 * dC - e * dC2)
        f[..., 5] = 4 * (e * e + 1) * dS - e * (6 * d + dS2)
    return k * f


class TschaunerHempelPlant:
    """LTV rendezvous plant about an elliptical target orbit.

    Implements the plant capability used by :mod:`pwmpc.prediction`:
    ``transition``, ``thrust_integral``, ``impulse_column`` and
    ``input_column``, all in closed form.
    """

    n_states = 6
    n_inputs = 3

    def __init__(self, orbit: OrbitParams):
        self.orbit = orbit
        self.e = orbit.e
        self.n = orbit.n

    def anomaly(self, t):
        return solve_kepler(self.orbit, t)

    def Y(self, E, E_hat):
        return ya_fundamental(self.e, self.n, E, E_hat)

    def Yinv(self, E, E_hat):
        return ya_fundamental_inverse(self.e, self.n, E, E_hat)

    def f(self, E, E_hat, axis):
        return thrust_antiderivative(self.e, self.n, E, E_hat, axis)

    def transition(self, t_from, t_to):
        """State transition matrix ``Phi(t_to, t_from)``."""
        E0 = self.anomaly(t_from)
        E1 = self.anomaly(t_to)
        # Reference anomaly at t_from: the J term of Y^-1 drops out there.
        E_hat = E0
        return np.asarray(self.Y(E1, E_hat) @ self.Yinv(E0, E_hat))

    def thrust_integral(self, r1, r2, r3, axis):
        """``int_{r1}^{r2} Phi(r3, s) B_axis(s) ds``; broadcasts over epochs."""
        r1, r2, r3 = np.broadcast_arrays(*(np.asarray(v, dtype=float) for v in (r1, r2, r3)))
        E1, E2, E3 = self.anomaly(r1), self.anomaly(r2), self.anomaly(r3)
        df = thrust_antiderivative_delta(self.e, self.n, E1, E2, E1, axis)
        return np.einsum("...ij,...j->...i", self.Y(E3, E1), df)

    def impulse_column(self, t_s, t_end, axis):
        """``Phi(t_end, t_s) B_axis(t_s)``; broadcasts over ``t_s``."""
        i = _axis_index(axis)
        t_s, t_end = np.broadcast_arrays(np.asarray(t_s, float), np.asarray(t_end, float))
        Es, Ee = self.anomaly(t_s), self.anomaly(t_end)
        col = self.Yinv(Es, Es)[..., :, 3 + i]
        return np.einsum("...ij,...j->...i", self.Y(Ee, Es), col)

    def input_column(self, t_k, T, mode, axis):
        """Column of ``B_k`` for one axis.

        ``mode`` is ``("PWM", tau, kappa)``, ``"PAM"`` or ``("IMP", tau)``.
        """
        kind = mode if isinstance(mode, str) else mode[0]
        if kind == "PAM":
            return self.thrust_integral(t_k, t_k + T, t_k + T, axis)
        if kind == "PWM":
            tau, kappa = mode[1], mode[2]
            check_pulse(tau, kappa, T)
            return self.thrust_integral(t_k + tau, t_k + tau + kappa, t_k + T, axis)
        if kind == "IMP":
            tau = mode[1]
            if not 0.0 <= tau <= T:
                raise InputDomainError(f"impulse time {tau} outside [0, {T}]")
            return self.impulse_column(t_k + tau, t_k + T, axis)
        raise ValueError(f"unknown actuation mode {mode!r}")


def check_pulse(tau, kappa, T, tol=1e-9):
    tau = np.asarray(tau, dtype=float)
    kappa = np.asarray(kappa, dtype=float)
    if np.any(tau < -tol) or np.any(kappa < -tol) or np.any(tau + kappa > T + tol):
        raise InputDomainError("pulse must satisfy tau >= 0, kappa >= 0, tau + kappa <= T")


def transition_matrix(params: OrbitParams, t_from, t_to) -> np.ndarray:
    """``Phi(t_to, t_from)`` for the target orbit ``params``."""
    return TschaunerHempelPlant(params).transition(t_from, t_to)


def thrust_integral(params: OrbitParams, r1, r2, r3, axis) -> np.ndarray:
    """``int_{r1}^{r2} Phi(r3, s) B_axis ds`` for the target orbit ``params``."""
    if np.any(np.asarray(r1) > np.asarray(r2)) or np.any(np.asarray(r2) > np.asarray(r3)):
        raise InputDomainError("thrust integral requires r1 <= r2 <= r3")
    return TschaunerHempelPlant(params).thrust_integral(r1, r2, r3, axis)


def input_matrix(params: OrbitParams, t_k: float, T: float, mode, axis) -> np.ndarray:
    """Column of ``B_k`` for ``mode`` in ``"PAM"``, ``("PWM", tau, kappa)``, ``("IMP", tau)``."""
    return TschaunerHempelPlant(params).input_column(t_k, T, mode, axis)
