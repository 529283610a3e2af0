"""PWM trajectory planning: hot start, conversion to pulses, iterative refinement.

Costs follow ``J = J_U + alpha * J_X``: ``J_U`` is the 1-norm of thrust
(delta-V, m/s) and ``J_X = X' Q X`` penalizes positions from the arrival step
onward. State constraints (line of sight) are imposed at sample instants.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .prediction import (N_AXES, N_CHANNELS, PredictionMatrices, PwmSchedule, build_prediction,
                         predict_states)
from .qp import QpProblem, QpStatus, solve_qp, split_l1
from .tschauner_hempel import InputDomainError

log = logging.getLogger(__name__)


class PlanningInfeasible(RuntimeError):
    """No plan satisfies the constraints (hot-start program infeasible)."""


@dataclass
class PlanningConfig:
    """Horizon, weights and refinement settings (SI units).

    ``k_a`` is the absolute step from which positions are penalized.
    ``cost_length_unit`` is the length [m] in which ``alpha`` is expressed:
    a cost written in length unit ``L`` (fuel in L/s, errors in L^2) equals,
    after multiplying by ``L``, ``J_U + (alpha / L) J_X`` in SI.
    ``max_refine_iters`` bounds the refinement after the hot start and in
    each warm-started MPC re-plan.
    """

    N_p: int = 50
    T: float = 60.0
    u_max: float = 0.1
    alpha: float = 1e3
    cost_length_unit: float = 1.0
    k_a: int = 30
    hot_start: str = "IMP"
    imp_preset: str = "mid"
    delta_max: float = 10.0
    min_delta: float = 1e-3
    max_refine_iters: int = 6
    cost_tol: float = 1e-6
    qp_tol: float = 1e-8
    violation_weight: float = 1e8
    slack_weight: float = 1e5
    qp_max_iter: int = 40
    min_width: float = 1e-6
    min_step: float = 1e-9
    violation_tol: float = 1e-6

    @property
    def state_weight(self) -> float:
        """Weight on ``J_X`` [m^2] relative to ``J_U`` [m/s] in SI."""
        return self.alpha / self.cost_length_unit

    def __post_init__(self):
        if self.N_p < 1:
            raise ValueError("N_p must be >= 1")
        if not self.T > 0:
            raise ValueError("T must be positive")
        if not self.u_max > 0:
            raise ValueError("u_max must be positive")
        if not self.alpha > 0:
            raise ValueError("alpha must be positive")
        if not 1 <= self.k_a <= self.N_p:
            raise ValueError("k_a must lie in [1, N_p]")
        if not self.cost_length_unit > 0:
            raise ValueError("cost_length_unit must be positive")
        if not 0 < self.delta_max <= self.T:
            raise ValueError("delta_max must lie in (0, T]")
        if self.hot_start not in ("PAM", "IMP"):
            raise ValueError(f"hot_start must be 'PAM' or 'IMP', got {self.hot_start!r}")
        if self.imp_preset not in ("mid", "start"):
            raise ValueError(f"imp_preset must be 'mid' or 'start', got {self.imp_preset!r}")
        if self.max_refine_iters < 0:
            raise ValueError("max_refine_iters must be >= 0")


@dataclass
class ConstraintSet:
    """Per-step state constraint ``A_state x <= b_state`` repeated over the horizon."""

    A_state: np.ndarray
    b_state: np.ndarray

    def stacked(self, N: int):
        """Block-diagonal ``(A_c, b_c)`` for a stacked state vector of ``N`` steps."""
        A_c = np.kron(np.eye(N), self.A_state)
        b_c = np.tile(self.b_state, N)
        return A_c, b_c

    def violation(self, states) -> np.ndarray:
        """Largest row violation for each state (``<= 0`` when satisfied)."""
        states = np.atleast_2d(states)
        if self.A_state.shape[0] == 0:
            return np.zeros(states.shape[0])
        return np.max(states @ self.A_state.T - self.b_state, axis=1)

    @classmethod
    def none(cls) -> "ConstraintSet":
        return cls(np.zeros((0, 6)), np.zeros(0))


def build_los_constraints(c_los: float, r_x0: float):
    """Line-of-sight cone ``r_y >= 0``, ``r_y >= c (|r_x| - r_x0)`` as ``(A, b)``."""
    if not c_los > 0:
        raise ValueError("cone slope must be positive")
    if r_x0 < 0:
        raise ValueError("cone offset must be nonnegative")
    A = np.array([[0.0, -1.0, 0.0, 0.0, 0.0, 0.0],
                  [c_los, -1.0, 0.0, 0.0, 0.0, 0.0],
                  [-c_los, -1.0, 0.0, 0.0, 0.0, 0.0]])
    b = np.array([0.0, c_los * r_x0, c_los * r_x0])
    return A, b


def weight_diagonal(cfg: PlanningConfig, k: int) -> np.ndarray:
    """Diagonal of ``Q_k``: unit weight on positions of steps ``j >= k_a``."""
    j = k + 1 + np.arange(cfg.N_p)
    on = (j >= cfg.k_a).astype(float)
    return np.kron(on, np.array([1.0, 1.0, 1.0, 0.0, 0.0, 0.0]))


def build_weight_matrix(cfg: PlanningConfig, k: int) -> np.ndarray:
    """Stacked ``Q_k = blkdiag(R_{k+1}, ..., R_{k+N_p})``."""
    return np.diag(weight_diagonal(cfg, k))


@dataclass
class HotStartPlan:
    """Solution of the PAM or impulsive program.

    ``U`` has shape ``(N, 3)``: accelerations [m/s^2] for PAM, delta-V [m/s]
    for impulses applied at ``gamma`` seconds into each interval.
    """

    kind: str
    U: np.ndarray
    gamma: Optional[np.ndarray]
    T: float
    objective: float
    status: QpStatus
    softened: bool = False


def _impulse_times(cfg: PlanningConfig) -> np.ndarray:
    t = 0.5 * cfg.T if cfg.imp_preset == "mid" else 0.0
    return np.full((cfg.N_p, N_AXES), t)


def _with_slack(qp: QpProblem, n_rows: int, weight: float) -> QpProblem:
    """Relax the leading ``n_rows`` inequalities by one shared slack ``sigma >= 0``.

    Pricing ``sigma`` linearly is an exact penalty on the largest violation,
    so the relaxed program matches the original whenever that is feasible
    and ``weight`` exceeds the sum of its multipliers; otherwise it returns
    the least-violating plan instead of failing.
    """
    n = qp.n
    H = np.zeros((n + 1, n + 1))
    H[:n, :n] = qp.H
    col = np.zeros((qp.b_ineq.size, 1))
    col[:n_rows] = -1.0
    # Zero increments/inputs lie in the box, so their violation bounds sigma.
    x_ref = np.clip(0.0, qp.lb, qp.ub)
    sigma_max = max(0.0, float(np.max(qp.A_ineq[:n_rows] @ x_ref - qp.b_ineq[:n_rows]))) + 1.0
    return QpProblem(H=H, g=np.append(qp.g, weight), A_ineq=np.hstack([qp.A_ineq, col]),
                     b_ineq=qp.b_ineq, lb=np.append(qp.lb, 0.0), ub=np.append(qp.ub, sigma_max),
                     check=False)


def hot_start(plant, x_k, t_k: float, cfg: PlanningConfig, constraints: ConstraintSet,
              k: int = 0, kind: Optional[str] = None, soften: bool = False) -> HotStartPlan:
    """Solve the convex PAM or fixed-time impulsive program.

    Raises :class:`PlanningInfeasible` when the program has no solution,
    unless ``soften`` is set, in which case state constraints become
    penalized slacks.
    """
    kind = kind or cfg.hot_start
    x_k = np.asarray(x_k, dtype=float)
    N, T = cfg.N_p, cfg.T
    if kind == "PAM":
        pm = build_prediction(plant, t_k, T, N, "PAM")
        gamma, l1_weight, bound = None, T, cfg.u_max
    elif kind == "IMP":
        gamma = _impulse_times(cfg)
        pm = build_prediction(plant, t_k, T, N, ("IMP", gamma))
        l1_weight, bound = 1.0, cfg.u_max * T
    else:
        raise ValueError(f"unknown hot-start kind {kind!r}")
    q = weight_diagonal(cfg, k)
    G, Fx = pm.G, pm.F @ x_k
    GQ = G.T * q
    H = 2.0 * cfg.state_weight * (GQ @ G)
    g = 2.0 * cfg.state_weight * (GQ @ Fx)
    H = 0.5 * (H + H.T)
    A_c, b_c = constraints.stacked(N)
    m_u = G.shape[1]
    split = split_l1(l1_weight, m_u)
    A = A_c @ G
    b = b_c - A_c @ Fx
    qp = split.lift(H, g, A=A, b=b, lb=np.full(m_u, -bound), ub=np.full(m_u, bound))
    softened = False
    if soften and b.size:
        res = solve_qp(_with_slack(qp, b.size, cfg.slack_weight), tol=cfg.qp_tol, obj_scale=1.0)
        softened = bool(res.x[-1] > cfg.violation_tol)
        res.x = res.x[:-1]
    else:
        res = solve_qp(qp, tol=cfg.qp_tol, obj_scale=1.0)
    if res.status in (QpStatus.INFEASIBLE, QpStatus.UNBOUNDED):
        raise PlanningInfeasible(f"{kind} hot-start program is {res.status.value}")
    U = split.recombine(res.x).reshape(N, N_AXES)
    U = np.clip(U, -bound, bound)
    obj = float(cfg.state_weight * (2 * Fx @ (q * (G @ U.ravel())) + (G @ U.ravel()) @ (q * (G @ U.ravel())))
                + l1_weight * np.abs(U).sum())
    return HotStartPlan(kind=kind, U=U, gamma=gamma, T=T, objective=obj, status=res.status,
                        softened=softened)


def convert_to_pwm(plan: HotStartPlan, cfg: PlanningConfig) -> PwmSchedule:
    """Equivalent-area conversion of a PAM or impulsive plan to pulses.

    Widths are ``T |u|/u_max`` (PAM) or ``|u|/u_max`` (impulsive) on the
    channel matching the sign. PAM pulses are centered in the interval;
    impulsive pulses are centered on the impulse time and shifted back inside
    the interval if they would spill over.
    """
    T, u_max = cfg.T, cfg.u_max
    U = np.asarray(plan.U, dtype=float)
    N = U.shape[0]
    if plan.kind == "PAM":
        width = T * np.abs(U) / u_max
    elif plan.kind == "IMP":
        width = np.abs(U) / u_max
    else:
        raise ValueError(f"unknown plan kind {plan.kind!r}")
    if np.any(width > T * (1 + 1e-12)):
        raise InputDomainError("converted pulse width exceeds the sample time")
    width = np.minimum(width, T)
    tau = np.zeros((N, N_CHANNELS))
    kappa = np.zeros((N, N_CHANNELS))
    for ax in range(N_AXES):
        w = width[:, ax]
        if plan.kind == "PAM":
            start = 0.5 * (T - w)
        else:
            center = np.asarray(plan.gamma)[:, ax]
            start = np.clip(center - 0.5 * w, 0.0, T - w)
        pos, neg = U[:, ax] > 0, U[:, ax] < 0
        kappa[:, 2 * ax] = np.where(pos, w, 0.0)
        kappa[:, 2 * ax + 1] = np.where(neg, w, 0.0)
        tau[:, 2 * ax] = np.where(pos, start, 0.0)
        tau[:, 2 * ax + 1] = np.where(neg, start, 0.0)
    return PwmSchedule(tau, kappa, u_max, T)


@dataclass
class CostBreakdown:
    total: float
    fuel: float
    state: float
    state_full: float
    states: np.ndarray
    violation: float
    merit: float


def _cost_from_states(cfg: PlanningConfig, x_k, pm: PredictionMatrices, X: np.ndarray,
                      q: np.ndarray, fuel: float, constraints: ConstraintSet) -> CostBreakdown:
    Xf = X.ravel()
    free = pm.F @ x_k
    full = float(Xf @ (q * Xf))
    state = full - float(free @ (q * free))
    viol = constraints.violation(X)
    excess = float(np.sum(np.maximum(viol - cfg.violation_tol, 0.0)))
    total = fuel + cfg.state_weight * state
    merit = fuel + cfg.state_weight * full + cfg.violation_weight * excess
    return CostBreakdown(total=total, fuel=fuel, state=state, state_full=full, states=X,
                         violation=float(max(viol.max(initial=0.0), 0.0)), merit=merit)


def evaluate_cost(plant, x_k, t_k: float, schedule: PwmSchedule, cfg: PlanningConfig,
                  constraints: Optional[ConstraintSet] = None, k: int = 0) -> CostBreakdown:
    """True (non-linearized) cost of a PWM schedule.

    ``state`` omits the constant ``x_k' F' Q F x_k``; ``state_full`` keeps it.
    ``merit`` adds an exact penalty on constraint violation and is what the
    refinement loop compares.
    """
    constraints = constraints or ConstraintSet.none()
    x_k = np.asarray(x_k, dtype=float)
    pm = build_prediction(plant, t_k, cfg.T, cfg.N_p, schedule)
    X = predict_states(pm, x_k)
    return _cost_from_states(cfg, x_k, pm, X, weight_diagonal(cfg, k), schedule.fuel(), constraints)


@dataclass
class PlanResult:
    schedule: PwmSchedule
    predicted_states: np.ndarray
    cost_total: float
    cost_fuel: float
    cost_state: float
    iterations: int
    cost_trace: list = field(default_factory=list)
    merit_trace: list = field(default_factory=list)
    merit: float = np.nan
    violation: float = 0.0
    accepted_steps: int = 0
    qp_failures: int = 0
    flag: str = "ok"


def _refinement_qp(pm: PredictionMatrices, sched: PwmSchedule, x_k, q, cfg: PlanningConfig,
                   constraints: ConstraintSet, radius: float):
    """QP in the increments ``Delta = [dGamma; dLambda]`` around ``sched``.

    Only increments that can matter are kept: starts of busy channels (an
    idle channel's start has a zero column) and widths of channels whose
    opposite-sign partner on the same axis is idle (firing against a live
    pulse only burns fuel). ``cols`` maps QP variables back into ``Delta``.
    Returns ``(qp, n_state_rows, cols)``.
    """
    N, T = sched.N, sched.T
    nv = N * N_CHANNELS
    tau, kap = sched.tau.ravel(), sched.kappa.ravel()
    busy = np.flatnonzero(kap > 0.0)
    # Channels come in (+, -) pairs per axis, so the partner index is i ^ 1.
    free_k = np.flatnonzero(kap[np.arange(nv) ^ 1] <= 0.0)
    cols = np.concatenate([busy, nv + free_k])
    Gd = pm.G_delta[:, cols]
    Xbar = pm.F @ x_k + pm.G @ pm.inputs
    w = np.flatnonzero(q > 0)
    Gw = Gd[w] * np.sqrt(q[w])[:, None]
    H = 2.0 * cfg.state_weight * (Gw.T @ Gw)
    g = 2.0 * cfg.state_weight * (Gw.T @ (np.sqrt(q[w]) * Xbar[w]))
    nb, nk = busy.size, free_k.size
    g[nb:] += sched.u.ravel()[free_k]
    tk, kk = tau[free_k], kap[free_k]
    lb = np.concatenate([np.maximum(-tau[busy], -radius), np.maximum(-kk, -radius)])
    # Idle channels: their only coupling is kappa + dkappa <= T - tau.
    ub_kap = np.where(kk > 0.0, radius, np.minimum(radius, T - tk))
    ub = np.concatenate([np.full(nb, radius), ub_kap])
    ub = np.maximum(ub, lb)
    A_c, b_c = constraints.stacked(N)
    A_los = A_c @ Gd
    b_los = b_c - A_c @ Xbar
    # tau + dtau + kappa + dkappa <= T for busy channels (always width-free).
    pos = np.searchsorted(free_k, busy)
    A_box = np.zeros((nb, nb + nk))
    A_box[np.arange(nb), np.arange(nb)] = 1.0
    A_box[np.arange(nb), nb + pos] = 1.0
    b_box = np.maximum(T - tau[busy] - kap[busy], 0.0)
    A = np.vstack([A_los, A_box])
    b = np.concatenate([b_los, b_box])
    qp = QpProblem(H=H, g=g, A_ineq=A, b_ineq=b, lb=lb, ub=ub, check=False)
    return qp, A_los.shape[0], cols


def _snap_widths(sched: PwmSchedule, min_width: float) -> PwmSchedule:
    # Interior-point solutions leave ~1e-10 s slivers instead of exact zeros.
    tiny = sched.kappa < min_width
    if not np.any(tiny):
        return sched
    return PwmSchedule(sched.tau.copy(), np.where(tiny, 0.0, sched.kappa), sched.u, sched.T)


def _recenter_idle(sched: PwmSchedule) -> PwmSchedule:
    # Zero-width channels do not affect the trajectory; placing them mid-interval
    # gives newly born pulses a symmetric linearization point.
    idle = sched.kappa <= 0.0
    if not np.any(idle):
        return sched
    tau = np.where(idle, 0.5 * sched.T, sched.tau)
    return PwmSchedule(tau, np.where(idle, 0.0, sched.kappa), sched.u, sched.T)


def refine_pwm(plant, x_k, t_k: float, schedule0: PwmSchedule, cfg: PlanningConfig,
               constraints: ConstraintSet, k: int = 0, max_iters: Optional[int] = None,
               recenter_idle: bool = True) -> PlanResult:
    """Iterative linearize-and-solve refinement of a PWM schedule.

    Each iteration solves the QP in the increments within a trust region,
    evaluates the true cost of the new schedule and keeps it only if the
    penalized cost decreases; otherwise the trust region is halved. Stops on
    small improvement, exhausted iteration budget or trust-region collapse.
    """
    max_iters = cfg.max_refine_iters if max_iters is None else max_iters
    x_k = np.asarray(x_k, dtype=float)
    q = weight_diagonal(cfg, k)
    sched = schedule0.clipped()
    if max_iters > 0:
        sched = _snap_widths(sched, cfg.min_width)
        if recenter_idle:
            sched = _recenter_idle(sched)
    pm = build_prediction(plant, t_k, cfg.T, cfg.N_p, sched, with_delta=max_iters > 0)
    cost = _cost_from_states(cfg, x_k, pm, predict_states(pm, x_k), q, sched.fuel(), constraints)
    trace = [cost.total]
    merits = [cost.merit]
    radius = cfg.delta_max
    iters = accepted = failures = 0
    flag = "ok"
    while iters < max_iters:
        iters += 1
        qp, n_state_rows, cols = _refinement_qp(pm, sched, x_k, q, cfg, constraints, radius)
        # Hard state constraints first; the relaxed program only when the
        # linearized constraints cannot be met inside the trust region.
        res = solve_qp(qp, tol=cfg.qp_tol, obj_scale=1.0, max_iter=cfg.qp_max_iter,
                       classify=False)
        if res.status != QpStatus.SUCCESS and n_state_rows:
            failures += 1
            res = solve_qp(_with_slack(qp, n_state_rows, cfg.slack_weight), tol=cfg.qp_tol,
                           obj_scale=1.0)
            res.x = res.x[:-1]
        if res.status not in (QpStatus.SUCCESS, QpStatus.MAX_ITER) or not np.all(np.isfinite(res.x)):
            failures += 1
            radius *= 0.5
            if radius < cfg.min_delta:
                flag = "qp_failure"
                break
            continue
        delta = np.zeros(2 * sched.tau.size)
        delta[cols] = res.x
        if np.abs(delta).max(initial=0.0) <= cfg.min_step:
            break
        cand = _snap_widths(sched.with_vector(sched.to_vector() + delta).clipped(), cfg.min_width)
        cand_pm = build_prediction(plant, t_k, cfg.T, cfg.N_p, cand, with_delta=True)
        cand_cost = _cost_from_states(cfg, x_k, cand_pm, predict_states(cand_pm, x_k), q,
                                      cand.fuel(), constraints)
        improvement = cost.merit - cand_cost.merit
        log.debug("refine it=%d radius=%.4g merit %.6g -> %.6g", iters, radius, cost.merit,
                  cand_cost.merit)
        if improvement > 0:
            sched, pm, cost = cand, cand_pm, cand_cost
            accepted += 1
            trace.append(cost.total)
            merits.append(cost.merit)
            if improvement <= cfg.cost_tol * max(1.0, abs(cost.merit)):
                break
        else:
            radius *= 0.5
            if radius < cfg.min_delta:
                break
    sched.validate()
    return PlanResult(schedule=sched, predicted_states=cost.states, cost_total=cost.total,
                      cost_fuel=cost.fuel, cost_state=cost.state, iterations=iters,
                      cost_trace=trace, merit_trace=merits, merit=cost.merit, violation=cost.violation,
                      accepted_steps=accepted, qp_failures=failures, flag=flag)


def plan_pwm(plant, x_k, t_k: float, cfg: PlanningConfig, constraints: ConstraintSet,
             k: int = 0, max_iters: Optional[int] = None) -> tuple:
    """Full planning algorithm: hot start, conversion, refinement.

    Returns ``(PlanResult, HotStartPlan)``.
    """
    hs = hot_start(plant, x_k, t_k, cfg, constraints, k=k, soften=True)
    sched0 = convert_to_pwm(hs, cfg)
    return refine_pwm(plant, x_k, t_k, sched0, cfg, constraints, k=k, max_iters=max_iters), hs
