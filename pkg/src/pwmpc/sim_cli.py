"""Scenario files, truth-model propagation, experiment driver and the ``pwmpc`` CLI.

Scenario files are JSON. Lengths and angles carry their unit in the key
(``h_p_km`` or ``h_p_m``, ``theta0_deg`` or ``theta0_rad``) and are converted
to SI on load.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import json
import logging
import sys
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Optional

import numpy as np

from .kepler import OrbitParams
from .mpc import (ARRIVED, BASELINES, NON_ARRIVAL, SOLVER_FAILURE, MpcRun, make_controller, run_mpc)
from .planner import ConstraintSet, PlanningConfig, PlanningInfeasible, build_los_constraints, plan_pwm
from .prediction import CHANNEL_NAMES, N_CHANNELS, propagate_pwm_step
from .tschauner_hempel import TschaunerHempelPlant

log = logging.getLogger(__name__)

CSV_HEADER = ["step", "t", "rx", "ry", "rz", "vx", "vy", "vz"] + [
    f"{kind}_{name}" for name in CHANNEL_NAMES for kind in ("tau", "kap")]

# Sample-instant LOS excursions up to this size [m] are solver round-off.
LOS_TOL = 1e-3

EXIT_OK, EXIT_NON_ARRIVAL, EXIT_SOLVER, EXIT_CONFIG = 0, 2, 3, 4

_LENGTH = {"m": 1.0, "km": 1e3}
_ANGLE = {"rad": 1.0, "deg": np.pi / 180.0}


class ScenarioError(ValueError):
    """Malformed or inconsistent scenario definition."""


def _unit_value(d: dict, key: str, units: dict, what: str):
    hits = [(u, d[f"{key}_{u}"]) for u in units if f"{key}_{u}" in d]
    if len(hits) != 1:
        opts = " or ".join(f"'{key}_{u}'" for u in units)
        raise ScenarioError(f"{what}: expected exactly one of {opts}")
    unit, val = hits[0]
    return np.asarray(val, dtype=float) * units[unit]


@dataclass(frozen=True)
class OrbitSpec:
    """Target orbit as eccentricity, perigee altitude [m] and initial true anomaly [rad]."""

    e: float
    h_p: float
    theta0: float

    def orbit(self, t0: float = 0.0) -> OrbitParams:
        return OrbitParams.from_perigee(self.e, self.h_p, self.theta0, t0=t0)

    @classmethod
    def from_dict(cls, d: dict) -> "OrbitSpec":
        if "e" not in d:
            raise ScenarioError("orbit: missing 'e'")
        e = float(d["e"])
        if not 0.0 <= e < 1.0:
            raise ScenarioError(f"orbit: eccentricity {e} is not elliptical")
        return cls(e=e, h_p=float(_unit_value(d, "h_p", _LENGTH, "orbit")),
                   theta0=float(_unit_value(d, "theta0", _ANGLE, "orbit")))


@dataclass
class Scenario:
    name: str
    model_orbit: OrbitSpec
    truth_orbit: OrbitSpec
    x_0: np.ndarray
    cfg: PlanningConfig
    los: tuple
    stop_radius: float = 5.0
    max_steps: int = 80
    baseline: str = "pwm_mpc"
    baseline_imp_preset: str = "start"
    t_0: float = 0.0

    def __post_init__(self):
        if not self.stop_radius > 0:
            raise ScenarioError("stop radius must be positive")
        if self.max_steps < 0:
            raise ScenarioError("max_steps must be nonnegative")
        if self.baseline not in BASELINES:
            raise ScenarioError(f"baseline must be one of {BASELINES}, got {self.baseline!r}")
        if self.baseline_imp_preset not in ("mid", "start"):
            raise ScenarioError("baseline_imp_preset must be 'mid' or 'start'")
        self.x_0 = np.asarray(self.x_0, dtype=float)
        if self.x_0.shape != (6,):
            raise ScenarioError("initial state must have 6 components")

    @property
    def constraints(self) -> ConstraintSet:
        return ConstraintSet(*build_los_constraints(*self.los))

    @classmethod
    def from_dict(cls, d: dict) -> "Scenario":
        try:
            model = OrbitSpec.from_dict(d["model_orbit"])
            truth = OrbitSpec.from_dict(d["truth_orbit"]) if d.get("truth_orbit") else model
            x0 = d["x0"]
            r = _unit_value(x0, "r", _LENGTH, "x0")
            v = _unit_value(x0, "v", {f"{u}_s": s for u, s in _LENGTH.items()}, "x0")
            p = dict(d.get("planning", {}))
            unit = p.pop("alpha_length_unit", "m")
            if unit not in _LENGTH:
                raise ScenarioError(f"alpha_length_unit must be one of {sorted(_LENGTH)}")
            known = {f.name for f in dataclasses.fields(PlanningConfig)}
            extra = set(p) - known
            if extra:
                raise ScenarioError(f"unknown planning keys: {sorted(extra)}")
            cfg = PlanningConfig(**p, cost_length_unit=_LENGTH[unit])
            los_d = d["los"]
            if "c_los" in los_d:
                c_los = float(los_d["c_los"])
            else:
                c_los = float(np.tan(float(_unit_value(los_d, "c_los", _ANGLE, "los"))))
            r_x0 = float(_unit_value(los_d, "x0", _LENGTH, "los"))
            return cls(name=str(d.get("name", "scenario")), model_orbit=model, truth_orbit=truth,
                       x_0=np.concatenate([r, v]), cfg=cfg, los=(c_los, r_x0),
                       stop_radius=float(d.get("stop_radius_m", 5.0)),
                       max_steps=int(d.get("max_steps", 80)),
                       baseline=str(d.get("baseline", "pwm_mpc")),
                       baseline_imp_preset=str(d.get("baseline_imp_preset", "start")))
        except KeyError as exc:
            raise ScenarioError(f"missing scenario field {exc}") from None
        except (TypeError, ValueError) as exc:
            if isinstance(exc, ScenarioError):
                raise
            raise ScenarioError(str(exc)) from None


def load_scenario(path) -> Scenario:
    """Load a scenario file; ``path`` may also name a bundled scenario."""
    p = Path(path)
    if not p.exists():
        bundled = resources.files("pwmpc") / "scenarios" / f"{p.stem}.json"
        if not bundled.is_file():
            raise ScenarioError(f"scenario file not found: {path}")
        text = bundled.read_text()
    else:
        text = p.read_text()
    try:
        return Scenario.from_dict(json.loads(text))
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"{path}: invalid JSON ({exc})") from None


class TruthModel:
    """Plant that actually moves the chaser: closed-form propagation on the truth orbit."""

    def __init__(self, orbit: OrbitParams):
        self.orbit = orbit
        self.plant = TschaunerHempelPlant(orbit)

    def propagate(self, x, t_k: float, T: float, tau, kappa, u):
        return propagate_pwm_step(self.plant, x, t_k, T, tau, kappa, u)


def propagate_truth(truth: TruthModel, x, t_k: float, T: float, tau, kappa, u) -> np.ndarray:
    """State at ``t_k + T`` after the given pulses, on the truth orbit."""
    return truth.propagate(x, t_k, T, tau, kappa, u)


@dataclass
class ExperimentReport:
    scenario: str
    baseline: str
    run: MpcRun
    u_max: float
    stop_radius: float
    los_violation_count: int
    max_los_violation: float
    los_violation_steps: list = field(default_factory=list)

    @property
    def status(self) -> str:
        return self.run.status

    @property
    def fuel(self) -> float:
        return self.run.fuel

    @property
    def final_distance(self) -> float:
        return float(np.linalg.norm(self.run.final_state[:3]))

    def summary(self) -> dict:
        return {
            "scenario": self.scenario,
            "baseline": self.baseline,
            "status": self.status,
            "fuel_mps": self.fuel,
            "arrival_step": self.run.arrival_step,
            "los_violation_count": self.los_violation_count,
            "max_los_violation_m": self.max_los_violation,
            "los_violation_steps": self.los_violation_steps,
            "final_distance_m": self.final_distance,
            "failure_step": self.run.failure_step,
            "per_step_wall_ms": [r.wall_ms for r in self.run.records],
        }


def los_violations(constraints: ConstraintSet, states, tol: float = LOS_TOL):
    """``(count, max_violation, steps)`` over logged sample-instant states."""
    states = np.asarray(states, dtype=float).reshape(-1, 6)
    if states.shape[0] == 0:
        return 0, 0.0, []
    v = constraints.violation(states)
    steps = np.flatnonzero(v > tol)
    return int(steps.size), float(max(v.max(), 0.0)), steps.tolist()


def run_scenario(s: Scenario, baseline: Optional[str] = None) -> ExperimentReport:
    """Run the selected controller on the scenario until arrival or ``max_steps``."""
    baseline = baseline or s.baseline
    plant = TschaunerHempelPlant(s.model_orbit.orbit(s.t_0))
    truth = TruthModel(s.truth_orbit.orbit(s.t_0))
    cfg = s.cfg
    if baseline != "pwm_mpc":
        cfg = dataclasses.replace(cfg, imp_preset=s.baseline_imp_preset)
    cons = s.constraints
    controller = make_controller(baseline, plant, cfg, cons, s.stop_radius)
    run = run_mpc(s.x_0, s.t_0, cfg, cons, truth, s.max_steps, stop_radius=s.stop_radius,
                  controller=controller)
    count, worst, steps = los_violations(cons, run.states)
    return ExperimentReport(scenario=s.name, baseline=baseline, run=run, u_max=cfg.u_max,
                            stop_radius=s.stop_radius, los_violation_count=count,
                            max_los_violation=worst, los_violation_steps=steps)


def _fmt(v) -> str:
    return format(float(v), ".17g")


def trajectory_rows(report: ExperimentReport):
    for r in report.run.records:
        pulses = [_fmt(v) for c in range(N_CHANNELS) for v in (r.tau[c], r.kappa[c])]
        yield [str(r.step), _fmt(r.t)] + [_fmt(v) for v in r.x] + pulses


def trajectory_csv(report: ExperimentReport) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    w.writerows(trajectory_rows(report))
    return buf.getvalue()


def read_trajectory_csv(path):
    """Load a trajectory CSV as ``(steps, t, states (K, 6), tau (K, 6), kappa (K, 6))``."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0] != CSV_HEADER:
        raise ValueError(f"{path}: unexpected trajectory header")
    data = np.array([[float(v) for v in row] for row in rows[1:]]).reshape(-1, len(CSV_HEADER))
    pulses = data[:, 8:].reshape(-1, N_CHANNELS, 2)
    return data[:, 0].astype(int), data[:, 1], data[:, 2:8], pulses[:, :, 0], pulses[:, :, 1]


def emit_outputs(report: ExperimentReport, out_dir, refine_costs: bool = True) -> dict:
    """Write ``trajectory.csv``, ``summary.json`` and optionally ``refine_costs.csv``."""
    out = Path(out_dir)
    paths = {"trajectory": out / "trajectory.csv", "summary": out / "summary.json"}
    if refine_costs:
        paths["refine_costs"] = out / "refine_costs.csv"
    try:
        out.mkdir(parents=True, exist_ok=True)
        paths["trajectory"].write_text(trajectory_csv(report))
        paths["summary"].write_text(json.dumps(report.summary(), indent=2) + "\n")
        if refine_costs:
            with open(paths["refine_costs"], "w", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(["step", "iteration", "cost"])
                for r in report.run.records:
                    for i, c in enumerate(r.refine_costs):
                        w.writerow([r.step, i, _fmt(c)])
    except OSError as exc:
        raise OSError(f"cannot write outputs to {out}: {exc}") from exc
    return paths


def _exit_code(status: str) -> int:
    return {ARRIVED: EXIT_OK, NON_ARRIVAL: EXIT_NON_ARRIVAL, SOLVER_FAILURE: EXIT_SOLVER}[status]


def _apply_overrides(s: Scenario, args) -> Scenario:
    cfg = s.cfg
    try:
        if getattr(args, "max_refine_iters", None) is not None:
            cfg = dataclasses.replace(cfg, max_refine_iters=args.max_refine_iters)
        if getattr(args, "ka", None) is not None:
            cfg = dataclasses.replace(cfg, k_a=args.ka)
    except ValueError as exc:
        raise ScenarioError(str(exc)) from None
    s.cfg = cfg
    if getattr(args, "baseline", None):
        s.baseline = args.baseline
    return s


def cmd_mpc(args) -> int:
    s = _apply_overrides(load_scenario(args.scenario), args)
    report = run_scenario(s)
    if args.out:
        emit_outputs(report, args.out)
    summ = report.summary()
    walls = summ.pop("per_step_wall_ms")
    summ["max_step_wall_ms"] = max(walls) if walls else 0.0
    print(json.dumps(summ, indent=2))
    return _exit_code(report.status)


def cmd_plan(args) -> int:
    s = _apply_overrides(load_scenario(args.scenario), args)
    plant = TschaunerHempelPlant(s.model_orbit.orbit(s.t_0))
    try:
        plan, hs = plan_pwm(plant, s.x_0, s.t_0, s.cfg, s.constraints, k=0)
    except PlanningInfeasible as exc:
        print(f"planning failed: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    sched = plan.schedule
    states = np.vstack([s.x_0, plan.predicted_states])
    count, worst, steps = los_violations(s.constraints, plan.predicted_states)
    summary = {"scenario": s.name, "hot_start": hs.kind, "fuel_mps": plan.cost_fuel,
               "cost_total": plan.cost_total, "iterations": plan.iterations,
               "cost_trace": plan.cost_trace, "los_violation_count": count,
               "max_los_violation_m": worst,
               "final_distance_m": float(np.linalg.norm(states[-1, :3]))}
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "plan.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(CSV_HEADER)
            for k in range(states.shape[0]):
                tau = sched.tau[k] if k < sched.N else np.zeros(N_CHANNELS)
                kap = sched.kappa[k] if k < sched.N else np.zeros(N_CHANNELS)
                w.writerow([str(k), _fmt(s.t_0 + k * s.cfg.T)] + [_fmt(v) for v in states[k]]
                           + [_fmt(v) for c in range(N_CHANNELS) for v in (tau[c], kap[c])])
        (out / "plan_summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    print(json.dumps(summary, indent=2))
    return EXIT_OK


def cmd_validate(args) -> int:
    from .validation import run_validation

    results = run_validation(seed=args.seed)
    ok = True
    for name, passed, detail in results:
        ok &= passed
        print(f"{'PASS' if passed else 'FAIL'}  {name}: {detail}")
    return EXIT_OK if ok else EXIT_SOLVER


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="pwmpc", description="PWM model predictive control for "
                                 "elliptical-orbit rendezvous")
    ap.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--scenario", required=True,
                       help="scenario JSON path or bundled name (reference_nominal, reference_mismatch)")
        p.add_argument("--out", help="output directory")
        p.add_argument("--max-refine-iters", type=int, dest="max_refine_iters")
        p.add_argument("--ka", type=int, help="arrival step index")

    p = sub.add_parser("plan", help="open-loop PWM plan from the initial state")
    common(p)
    p.set_defaults(func=cmd_plan)
    p = sub.add_parser("mpc", help="closed-loop simulation")
    common(p)
    p.add_argument("--baseline", choices=BASELINES)
    p.set_defaults(func=cmd_mpc)
    p = sub.add_parser("validate", help="check closed forms against numerical oracles")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_validate)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ScenarioError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
