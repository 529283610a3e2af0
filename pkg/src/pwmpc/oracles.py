"""Independent numerical references for the closed-form relative-motion model.

Nothing here uses the closed-form antiderivatives or the inverse fundamental
matrix: transitions come from integrating the linearized relative equations
of motion directly, thrust integrals from adaptive quadrature, and Jacobians
from central differences.
"""

from __future__ import annotations

import numpy as np
from scipy.integrate import quad_vec, solve_ivp

from .kepler import OrbitParams, anomaly_convert, solve_kepler
from .prediction import CHANNEL_AXIS, CHANNEL_SIGN, PwmSchedule, build_prediction, predict_states


def orbit_geometry(orbit: OrbitParams, t):
    """Radius, true-anomaly rate and acceleration of the target at ``t``."""
    e, mu = orbit.e, orbit.mu
    p = orbit.a * (1.0 - e * e)
    th = anomaly_convert(e, solve_kepler(orbit, t), "eccentric_to_true")
    r = p / (1.0 + e * np.cos(th))
    thd = np.sqrt(mu * p) / r**2
    rd = np.sqrt(mu / p) * e * np.sin(th)
    thdd = -2.0 * rd * thd / r
    return r, thd, thdd


def relative_rhs(orbit: OrbitParams, t, x, accel=(0.0, 0.0, 0.0)):
    """Linearized relative dynamics about the target, LVLH frame, x radial."""
    r, thd, thdd = orbit_geometry(orbit, t)
    k = orbit.mu / r**3
    px, py, pz, vx, vy, vz = x
    ax, ay, az = accel
    return np.array([vx, vy, vz,
                     2 * thd * vy + thdd * py + thd**2 * px + 2 * k * px + ax,
                     -2 * thd * vx - thdd * px + thd**2 * py - k * py + ay,
                     -k * pz + az])


def integrate_relative(orbit: OrbitParams, x0, t0: float, t1: float, accel=None,
                       rtol: float = 1e-12, atol: float = 1e-10):
    """Integrate the relative dynamics from ``t0`` to ``t1``.

    ``accel`` is an optional callable ``t -> (ax, ay, az)``.
    """
    f = (lambda t, x: relative_rhs(orbit, t, x)) if accel is None else \
        (lambda t, x: relative_rhs(orbit, t, x, accel(t)))
    sol = solve_ivp(f, (t0, t1), np.asarray(x0, float), method="DOP853", rtol=rtol, atol=atol)
    return sol.y[:, -1]


def transition_by_integration(orbit: OrbitParams, t0: float, t1: float, **kw) -> np.ndarray:
    """``Phi(t1, t0)`` column by column from unit initial states."""
    return np.column_stack([integrate_relative(orbit, col, t0, t1, **kw) for col in np.eye(6)])


def thrust_integral_quadrature(plant, r1: float, r2: float, r3: float, axis: int,
                               epsrel: float = 1e-12) -> np.ndarray:
    """``int_{r1}^{r2} Phi(r3, s) B_axis ds`` by adaptive quadrature."""
    B = np.zeros(6)
    B[3 + axis] = 1.0
    val, _ = quad_vec(lambda s: plant.transition(s, r3) @ B, r1, r2, epsrel=epsrel, epsabs=0.0)
    return val


def two_body_relative(orbit: OrbitParams, x0, t0: float, t1: float, rtol: float = 1e-12):
    """Nonlinear two-body relative state at ``t1``, expressed in the LVLH frame.

    Used to check that the linear model is the small-separation limit.
    """
    mu, e = orbit.mu, orbit.e
    p = orbit.a * (1.0 - e * e)

    def frame(t):
        th = anomaly_convert(e, solve_kepler(orbit, t), "eccentric_to_true")
        r = p / (1.0 + e * np.cos(th))
        ex = np.array([np.cos(th), np.sin(th), 0.0])
        ey = np.array([-np.sin(th), np.cos(th), 0.0])
        ez = np.array([0.0, 0.0, 1.0])
        thd = np.sqrt(mu * p) / r**2
        pos = r * ex
        vel = np.sqrt(mu / p) * (e * np.sin(th) * ex + (1.0 + e * np.cos(th)) * ey)
        return pos, vel, np.vstack([ex, ey, ez]), thd

    pos, vel, R, thd = frame(t0)
    w = np.array([0.0, 0.0, thd])
    x0 = np.asarray(x0, float)
    rel_in = R.T @ x0[:3]
    vel_in = R.T @ (x0[3:] + np.cross(w, x0[:3]))
    y0 = np.concatenate([pos, vel, pos + rel_in, vel + vel_in])

    def rhs(t, y):
        out = np.empty(12)
        for i in (0, 6):
            rr = y[i:i + 3]
            out[i:i + 3] = y[i + 3:i + 6]
            out[i + 3:i + 6] = -mu * rr / np.linalg.norm(rr) ** 3
        return out

    y1 = solve_ivp(rhs, (t0, t1), y0, method="DOP853", rtol=rtol, atol=1e-6).y[:, -1]
    _, _, R1, thd1 = frame(t1)
    w1 = np.array([0.0, 0.0, thd1])
    d_pos = R1 @ (y1[6:9] - y1[0:3])
    d_vel = R1 @ (y1[9:12] - y1[3:6]) - np.cross(w1, d_pos)
    return np.concatenate([d_pos, d_vel])


def pwm_input_fd(plant, t_k: float, T: float, N: int, sched: PwmSchedule, x_k, h: float = 1e-3):
    """Central-difference Jacobian of the stacked states w.r.t. ``[Gamma; Lambda]``."""
    base = sched.to_vector()
    cols = []
    for i in range(base.size):
        xs = []
        for sgn in (1.0, -1.0):
            v = base.copy()
            v[i] += sgn * h
            pm = build_prediction(plant, t_k, T, N, sched.with_vector(v))
            xs.append(predict_states(pm, x_k).ravel())
        cols.append((xs[0] - xs[1]) / (2 * h))
    return np.column_stack(cols)


def pwm_step_by_integration(orbit: OrbitParams, x, t_k: float, T: float, tau, kappa,
                            u: float) -> np.ndarray:
    """One interval under on/off pulses, integrating piecewise between switches."""
    tau, kappa = np.asarray(tau, float), np.asarray(kappa, float)
    edges = sorted({0.0, T, *tau.tolist(), *(tau + kappa).tolist()})
    x = np.asarray(x, float)
    for a, b in zip(edges[:-1], edges[1:]):
        if b - a <= 0:
            continue
        mid = 0.5 * (a + b)
        acc = np.zeros(3)
        for c in range(tau.size):
            if kappa[c] > 0 and tau[c] <= mid <= tau[c] + kappa[c]:
                acc[CHANNEL_AXIS[c]] += CHANNEL_SIGN[c] * u
        x = integrate_relative(orbit, x, t_k + a, t_k + b, accel=lambda t, acc=acc: acc)
    return x
