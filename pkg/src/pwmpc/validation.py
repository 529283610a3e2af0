"""Oracle-backed checks of the closed forms, the linearization and the QP solver.

Each check returns ``(name, passed, detail)``. They back both the
``pwmpc validate`` command and the acceptance tests.
"""

from __future__ import annotations

import itertools

import numpy as np

from .kepler import OrbitParams
from .oracles import (pwm_input_fd, thrust_integral_quadrature, transition_by_integration)
from .prediction import (N_CHANNELS, PwmSchedule, build_prediction, predict_states)
from .qp import QpProblem, QpStatus, kkt_max, solve_qp
from .tschauner_hempel import (TschaunerHempelPlant, thrust_antiderivative, ya_fundamental,
                               ya_fundamental_inverse)

TOL_IDENTITY = 1e-9
TOL_SEMIGROUP = 1e-8
TOL_ANTIDERIVATIVE = 1e-6
TOL_QUADRATURE = 1e-6
TOL_JACOBIAN = 1e-6
TAYLOR_RATIO = (3.5, 4.5)
TOL_KKT = 1e-8
TOL_ENUM = 1e-8


def _rel(a, b) -> float:
    a, b = np.asarray(a, float), np.asarray(b, float)
    return float(np.abs(a - b).max() / max(np.abs(b).max(), 1e-300))


def random_orbit(rng, e_max: float = 0.9) -> OrbitParams:
    e = rng.uniform(0.0, e_max)
    h_p = rng.uniform(300e3, 2000e3)
    a = (6.378137e6 + h_p) / (1.0 - e)
    return OrbitParams(a=a, e=e, t_p=-rng.uniform(0.0, 2 * np.pi) / np.sqrt(3.986004418e14 / a**3))


def reference_plant() -> TschaunerHempelPlant:
    return TschaunerHempelPlant(OrbitParams.from_perigee(0.7, 500e3, np.deg2rad(45.0)))


# Closed forms.

def check_fundamental_identity(rng, samples: int = 1000):
    worst = 0.0
    for _ in range(samples):
        e = rng.uniform(0.0, 0.9)
        n = rng.uniform(1e-4, 1.2e-3)
        E = rng.uniform(0.0, 4 * np.pi)
        E_hat = E - rng.uniform(0.0, 2 * np.pi)
        P = ya_fundamental(e, n, E, E_hat) @ ya_fundamental_inverse(e, n, E, E_hat)
        worst = max(worst, float(np.abs(P - np.eye(6)).max()))
    return "Y Y^-1 = I", worst < TOL_IDENTITY, f"max |Y Y^-1 - I| = {worst:.2e} over {samples} samples"


def check_semigroup(rng, samples: int = 200):
    worst = 0.0
    for _ in range(samples):
        plant = TschaunerHempelPlant(random_orbit(rng))
        t1, t2, t3 = np.sort(rng.uniform(0.0, 1.5 * plant.orbit.period, 3))
        lhs = plant.transition(t1, t3)
        rhs = plant.transition(t2, t3) @ plant.transition(t1, t2)
        worst = max(worst, _rel(rhs, lhs))
    return "transition semigroup", worst < TOL_SEMIGROUP, f"max rel err = {worst:.2e}"


def check_transition_vs_ode(rng, samples: int = 5):
    worst = 0.0
    for _ in range(samples):
        plant = TschaunerHempelPlant(random_orbit(rng, e_max=0.8))
        t0 = rng.uniform(0.0, plant.orbit.period)
        t1 = t0 + rng.uniform(60.0, 3000.0)
        worst = max(worst, _rel(plant.transition(t0, t1), transition_by_integration(plant.orbit, t0, t1)))
    return "transition vs ODE integration", worst < TOL_SEMIGROUP, f"max rel err = {worst:.2e}"


def check_antiderivatives(rng, samples: int = 1000, h: float = 1e-5):
    worst = 0.0
    for _ in range(samples):
        e = rng.uniform(0.0, 0.9)
        n = rng.uniform(1e-4, 1.2e-3)
        E = rng.uniform(0.0, 4 * np.pi)
        E_hat = E - rng.uniform(0.0, np.pi)
        axis = int(rng.integers(3))
        fd = (thrust_antiderivative(e, n, E + h, E_hat, axis)
              - thrust_antiderivative(e, n, E - h, E_hat, axis)) / (2 * h)
        integrand = ya_fundamental_inverse(e, n, E, E_hat)[:, 3 + axis] * (1 - e * np.cos(E)) / n
        worst = max(worst, _rel(fd, integrand))
    return ("antiderivative derivative = integrand", worst < TOL_ANTIDERIVATIVE,
            f"max rel err = {worst:.2e} over {samples} points")


def check_thrust_integrals(rng, samples: int = 100):
    worst = 0.0
    for _ in range(samples):
        plant = TschaunerHempelPlant(random_orbit(rng))
        r1 = rng.uniform(0.0, plant.orbit.period)
        r2 = r1 + rng.uniform(1.0, 120.0)
        r3 = r2 + rng.uniform(0.0, 120.0)
        axis = int(rng.integers(3))
        worst = max(worst, _rel(plant.thrust_integral(r1, r2, r3, axis),
                                thrust_integral_quadrature(plant, r1, r2, r3, axis)))
    return "thrust integral vs quadrature", worst < TOL_QUADRATURE, f"max rel err = {worst:.2e}"


def check_pam_pwm_identity(rng, samples: int = 50):
    ok = True
    for _ in range(samples):
        plant = TschaunerHempelPlant(random_orbit(rng))
        t_k, T = rng.uniform(0.0, plant.orbit.period), rng.uniform(10.0, 120.0)
        for axis in range(3):
            a = plant.input_column(t_k, T, "PAM", axis)
            b = plant.input_column(t_k, T, ("PWM", 0.0, T), axis)
            ok &= bool(np.array_equal(a, b))
    return "PAM column = full-width PWM column", ok, "bitwise equal" if ok else "mismatch"


# Linearization.

def random_schedule(rng, N: int, T: float, u_max: float, p_busy: float = 0.6) -> PwmSchedule:
    kappa = np.where(rng.random((N, N_CHANNELS)) < p_busy, rng.uniform(2.0, 0.6 * T, (N, N_CHANNELS)), 0.0)
    tau = rng.uniform(0.0, 1.0, (N, N_CHANNELS)) * (T - kappa - 1.0) + 0.5
    tau = np.where(kappa > 0, tau, 0.0)
    return PwmSchedule(tau, kappa, np.full((N, N_CHANNELS), u_max), T)


def check_derivative_blocks(rng, N: int = 4, T: float = 60.0, h: float = 1e-3):
    plant = reference_plant()
    # Every channel busy and interior so that +-h stays inside the box.
    sched = random_schedule(rng, N, T, 0.1, p_busy=1.0)
    x_k = rng.normal(0.0, 100.0, 6)
    t_k = rng.uniform(0.0, 3000.0)
    pm = build_prediction(plant, t_k, T, N, sched, with_delta=True)
    fd = pwm_input_fd(plant, t_k, T, N, sched, x_k, h=h)
    err = _rel(pm.G_delta, fd)
    return "G_delta vs central differences", err < TOL_JACOBIAN, f"rel err = {err:.2e}"


def taylor_ratios(rng, N: int = 5, T: float = 60.0, scales=(4.0, 2.0, 1.0, 0.5)):
    plant = reference_plant()
    sched = random_schedule(rng, N, T, 0.1, p_busy=1.0)
    # Keep every pulse strictly interior so that +-Delta stays feasible.
    sched = PwmSchedule(np.full_like(sched.tau, 15.0), np.full_like(sched.kappa, 20.0), sched.u, T)
    x_k = rng.normal(0.0, 100.0, 6)
    pm = build_prediction(plant, 0.0, T, N, sched, with_delta=True)
    X0 = predict_states(pm, x_k).ravel()
    direction = rng.uniform(-1.0, 1.0, sched.to_vector().size)
    res = []
    for s in scales:
        d = s * direction
        pm_new = build_prediction(plant, 0.0, T, N, sched.with_vector(sched.to_vector() + d))
        res.append(np.linalg.norm(predict_states(pm_new, x_k).ravel() - X0 - pm.G_delta @ d))
    return [res[i] / res[i + 1] for i in range(len(res) - 1)]


def check_taylor_ratio(rng):
    ratios = taylor_ratios(rng)
    lo, hi = TAYLOR_RATIO
    ok = all(lo <= r <= hi for r in ratios)
    return "Taylor remainder ratio", ok, "ratios " + ", ".join(f"{r:.3f}" for r in ratios)


# Solver.

def enumerate_qp(p: QpProblem):
    """Brute-force optimum of a small convex QP over all active sets.

    Bounds are folded into the inequality rows. Returns ``(x, objective)``
    or ``(None, inf)`` when no KKT point exists.
    """
    n = p.n
    rows, rhs = [p.A_ineq], [p.b_ineq]
    for i in range(n):
        if np.isfinite(p.ub[i]):
            e = np.zeros(n); e[i] = 1.0
            rows.append(e[None]); rhs.append([p.ub[i]])
        if np.isfinite(p.lb[i]):
            e = np.zeros(n); e[i] = -1.0
            rows.append(e[None]); rhs.append([-p.lb[i]])
    A = np.vstack(rows)
    b = np.concatenate([np.ravel(r) for r in rhs])
    m = b.size
    best_x, best_f = None, np.inf
    for k in range(0, min(n, m) + 1):
        for W in itertools.combinations(range(m), k):
            W = list(W)
            K = np.zeros((n + k, n + k))
            K[:n, :n] = p.H
            K[:n, n:] = A[W].T
            K[n:, :n] = A[W]
            r = np.concatenate([-p.g, b[W]])
            sol, *_ = np.linalg.lstsq(K, r, rcond=None)
            if np.abs(K @ sol - r).max() > 1e-9 * (1 + np.abs(r).max()):
                continue
            x, lam = sol[:n], sol[n:]
            if np.any(lam < -1e-9) or np.any(A @ x - b > 1e-9 * (1 + np.abs(b).max(initial=0.0))):
                continue
            f = p.objective(x)
            if f < best_f - 1e-12:
                best_x, best_f = x, f
    return best_x, best_f


def random_small_qp(rng, n=None, m=None) -> QpProblem:
    n = n or int(rng.integers(1, 5))
    m = m if m is not None else int(rng.integers(0, 4))
    R = rng.normal(size=(n, n))
    H = R @ R.T + rng.uniform(0.01, 1.0) * np.eye(n)
    g = rng.normal(size=n) * 3
    A = rng.normal(size=(m, n))
    x_feas = rng.normal(size=n) * 0.5
    b = A @ x_feas + rng.uniform(0.0, 1.0, m)
    lb = np.where(rng.random(n) < 0.5, x_feas - rng.uniform(0.1, 2.0, n), -np.inf)
    ub = np.where(rng.random(n) < 0.5, x_feas + rng.uniform(0.1, 2.0, n), np.inf)
    return QpProblem(H=H, g=g, A_ineq=A, b_ineq=b, lb=lb, ub=ub)


def check_solver_enumeration(rng, samples: int = 200):
    worst_obj = worst_kkt = 0.0
    failures = 0
    for _ in range(samples):
        p = random_small_qp(rng)
        res = solve_qp(p)
        _, f_ref = enumerate_qp(p)
        if res.status != QpStatus.SUCCESS:
            failures += 1
            continue
        worst_kkt = max(worst_kkt, kkt_max(res.kkt))
        worst_obj = max(worst_obj, abs(res.objective - f_ref) / max(1.0, abs(f_ref)))
    ok = failures == 0 and worst_obj < TOL_ENUM and worst_kkt < TOL_KKT
    return ("QP vs active-set enumeration", ok,
            f"max obj gap = {worst_obj:.2e}, max KKT = {worst_kkt:.2e}, non-SUCCESS = {failures}")


def run_validation(seed: int = 0, quick: bool = False):
    rng = np.random.default_rng(seed)
    f = 10 if quick else 1
    return [
        check_fundamental_identity(rng, 1000 // f),
        check_semigroup(rng, 200 // f),
        check_transition_vs_ode(rng, max(1, 5 // f)),
        check_antiderivatives(rng, 1000 // f),
        check_thrust_integrals(rng, 100 // f),
        check_pam_pwm_identity(rng),
        check_derivative_blocks(rng),
        check_taylor_ratio(rng),
        check_solver_enumeration(rng, 200 // f),
    ]
