"""Receding-horizon PWM controller and the closed-loop driver.

At every step the controller plans from the measured state, applies only the
first interval's pulses and keeps the rest of the schedule, shifted by one
step and padded with an idle step, as the next warm start.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Optional, Protocol

import numpy as np

from .planner import (ConstraintSet, PlanningConfig, PlanningInfeasible, PlanResult, convert_to_pwm,
                      hot_start, plan_pwm, refine_pwm)
from .prediction import N_CHANNELS, PwmSchedule, propagate_pwm_step

log = logging.getLogger(__name__)

ARRIVED = "ARRIVED"
NON_ARRIVAL = "NON_ARRIVAL"
SOLVER_FAILURE = "SOLVER_FAILURE"

BASELINES = ("pwm_mpc", "impulsive_mpc", "open_loop")


class Propagator(Protocol):
    def propagate(self, x, t_k: float, T: float, tau, kappa, u) -> np.ndarray: ...


@dataclass
class PlantPropagator:
    """Applies pulses through the closed-form PWM solution of ``plant``."""

    plant: object

    def propagate(self, x, t_k, T, tau, kappa, u):
        return propagate_pwm_step(self.plant, x, t_k, T, tau, kappa, u)


@dataclass
class MpcState:
    k: int = 0
    plan: Optional[PlanResult] = None
    warm: Optional[PwmSchedule] = None
    fuel: float = 0.0
    arrived: bool = False
    degraded: bool = False


@dataclass
class StepRecord:
    """State measured at ``t`` and the pulses applied over ``[t, t + T]``."""

    step: int
    t: float
    x: np.ndarray
    tau: np.ndarray
    kappa: np.ndarray
    fuel: float
    wall_ms: float
    refine_costs: list = field(default_factory=list)
    flag: str = "ok"


@dataclass
class MpcRun:
    records: list
    status: str
    fuel: float
    arrival_step: Optional[int]
    final_state: np.ndarray
    final_time: float
    failure_step: Optional[int] = None

    @property
    def states(self) -> np.ndarray:
        if not self.records:
            return np.zeros((0, 6))
        return np.array([r.x for r in self.records])


def is_arrived(x, stop_radius: float) -> bool:
    """Position within ``stop_radius`` of the target (velocity not tested)."""
    return bool(np.linalg.norm(np.asarray(x)[:3]) <= stop_radius)


def initial_state(plant, x_0, t_0: float, cfg: PlanningConfig,
                  constraints: ConstraintSet) -> MpcState:
    """Full plan (hot start, conversion, refinement) at ``k = 0``."""
    plan, _ = plan_pwm(plant, x_0, t_0, cfg, constraints, k=0)
    return MpcState(k=0, plan=plan, warm=plan.schedule)


def mpc_step(state: MpcState, plant, x_measured, t_k: float, cfg: PlanningConfig,
             constraints: ConstraintSet, stop_radius: float = 5.0):
    """One receding-horizon step.

    Returns ``(tau, kappa, state)`` where ``tau`` and ``kappa`` are the six
    channel values for the current interval. At ``k = 0`` with no stored
    plan, the full planner runs; afterwards the stored schedule is shifted
    and refined. If refinement fails, the warm start's first step is applied
    unchanged and ``state.degraded`` is set.
    """
    zero = np.zeros(N_CHANNELS)
    if is_arrived(x_measured, stop_radius):
        state.arrived = True
        return zero, zero.copy(), state
    if state.plan is None:
        fresh = initial_state(plant, x_measured, t_k, cfg, constraints)
        fresh.k, fresh.fuel = state.k, state.fuel
        state = fresh
        sched = state.plan.schedule
    else:
        warm = state.warm.shifted()
        try:
            plan = refine_pwm(plant, x_measured, t_k, warm, cfg, constraints, k=state.k)
        except (PlanningInfeasible, np.linalg.LinAlgError, ValueError) as exc:
            log.warning("refinement failed at step %d: %s", state.k, exc)
            plan = None
        if plan is None or plan.flag != "ok":
            state.degraded = True
            sched = warm
            state.plan = plan
        else:
            state.degraded = False
            state.plan = plan
            sched = plan.schedule
    state.warm = sched
    tau, kappa = sched.tau[0].copy(), sched.kappa[0].copy()
    state.fuel += float(np.sum(sched.u[0] * kappa))
    return tau, kappa, state


class PwmMpcController:
    """Closed-loop PWM MPC (warm-started refinement at every step)."""

    name = "pwm_mpc"

    def __init__(self, plant, cfg: PlanningConfig, constraints: ConstraintSet, stop_radius: float):
        self.plant, self.cfg, self.constraints = plant, cfg, constraints
        self.stop_radius = stop_radius
        self.state = MpcState()

    def step(self, k: int, t_k: float, x):
        self.state.k = k
        tau, kappa, self.state = mpc_step(self.state, self.plant, x, t_k, self.cfg,
                                          self.constraints, self.stop_radius)
        plan = self.state.plan
        costs = list(plan.cost_trace) if plan is not None else []
        return tau, kappa, costs, "degraded" if self.state.degraded else "ok"


class ImpulsiveMpcController:
    """Impulsive re-plan every step, converted to pulses without refinement."""

    name = "impulsive_mpc"

    def __init__(self, plant, cfg: PlanningConfig, constraints: ConstraintSet, stop_radius: float):
        self.plant, self.cfg, self.constraints = plant, cfg, constraints

    def step(self, k: int, t_k: float, x):
        hs = hot_start(self.plant, x, t_k, self.cfg, self.constraints, k=k, kind="IMP", soften=True)
        sched = convert_to_pwm(hs, self.cfg)
        return sched.tau[0].copy(), sched.kappa[0].copy(), [hs.objective], \
            "softened" if hs.softened else "ok"


class OpenLoopController:
    """Impulsive plan computed once at ``k = 0``, converted and never revised."""

    name = "open_loop"

    def __init__(self, plant, cfg: PlanningConfig, constraints: ConstraintSet, stop_radius: float):
        self.plant, self.cfg, self.constraints = plant, cfg, constraints
        self.schedule: Optional[PwmSchedule] = None

    def step(self, k: int, t_k: float, x):
        if self.schedule is None:
            hs = hot_start(self.plant, x, t_k, self.cfg, self.constraints, k=k, kind="IMP",
                           soften=True)
            self.schedule = convert_to_pwm(hs, self.cfg)
        if k >= self.schedule.N:
            zero = np.zeros(N_CHANNELS)
            return zero, zero.copy(), [], "ok"
        return self.schedule.tau[k].copy(), self.schedule.kappa[k].copy(), [], "ok"


CONTROLLERS = {c.name: c for c in (PwmMpcController, ImpulsiveMpcController, OpenLoopController)}


def make_controller(baseline: str, plant, cfg: PlanningConfig, constraints: ConstraintSet,
                    stop_radius: float):
    try:
        cls = CONTROLLERS[baseline]
    except KeyError:
        raise ValueError(f"unknown baseline {baseline!r}; expected one of {BASELINES}") from None
    return cls(plant, cfg, constraints, stop_radius)


def run_mpc(x_0, t_0: float, cfg: PlanningConfig, constraints: ConstraintSet, truth: Propagator,
            max_steps: int, plant=None, baseline: str = "pwm_mpc", stop_radius: float = 5.0,
            controller=None) -> MpcRun:
    """Closed-loop simulation until arrival or ``max_steps`` control intervals.

    ``plant`` is the controller's model; ``truth`` applies the pulses. One
    record is logged per visited sample instant before ``max_steps``; the
    arrival instant gets a record with idle pulses.
    """
    if controller is None:
        if plant is None:
            raise ValueError("either plant or controller is required")
        controller = make_controller(baseline, plant, cfg, constraints, stop_radius)
    x = np.asarray(x_0, dtype=float).copy()
    records: list = []
    fuel = 0.0
    u_row = np.full(N_CHANNELS, cfg.u_max)
    zero = np.zeros(N_CHANNELS)
    k = 0
    t_k = float(t_0)
    while k < max_steps:
        t_k = t_0 + k * cfg.T
        if is_arrived(x, stop_radius):
            records.append(StepRecord(k, t_k, x.copy(), zero.copy(), zero.copy(), 0.0, 0.0))
            return MpcRun(records, ARRIVED, fuel, k, x, t_k)
        start = time.perf_counter()
        try:
            tau, kappa, costs, flag = controller.step(k, t_k, x)
        except (PlanningInfeasible, np.linalg.LinAlgError) as exc:
            log.error("controller failed at step %d: %s", k, exc)
            return MpcRun(records, SOLVER_FAILURE, fuel, None, x, t_k, failure_step=k)
        wall_ms = 1e3 * (time.perf_counter() - start)
        step_fuel = float(np.sum(u_row * kappa))
        records.append(StepRecord(k, t_k, x.copy(), tau, kappa, step_fuel, wall_ms, costs, flag))
        fuel += step_fuel
        x = np.asarray(truth.propagate(x, t_k, cfg.T, tau, kappa, u_row), dtype=float)
        k += 1
        t_k = t_0 + k * cfg.T
    return MpcRun(records, NON_ARRIVAL, fuel, None, x, t_k)
