import json

import numpy as np
import pytest

from pwmpc.planner import PlanningConfig
from pwmpc.prediction import build_prediction, predict_states, PwmSchedule
from pwmpc.sim_cli import (CSV_HEADER, EXIT_CONFIG, EXIT_NON_ARRIVAL, EXIT_OK, ExperimentReport, Scenario,
                           ScenarioError, TruthModel, emit_outputs, load_scenario, los_violations, main,
                           propagate_truth, read_trajectory_csv, run_scenario, trajectory_csv)
from pwmpc.mpc import MpcRun, NON_ARRIVAL

C30 = np.tan(np.deg2rad(30.0))


def small_dict(**over):
    d = {
        "name": "small",
        "model_orbit": {"e": 0.7, "h_p_km": 500.0, "theta0_deg": 45.0},
        "x0": {"r_m": [20.0, 150.0, -10.0], "v_m_s": [0.0, -0.2, 0.0]},
        "planning": {"N_p": 12, "k_a": 6, "alpha": 1000.0, "alpha_length_unit": "km"},
        "los": {"c_los_deg": 30.0, "x0_km": 0.001},
        "stop_radius_m": 5.0,
        "max_steps": 20,
    }
    d.update(over)
    return d


@pytest.fixture
def small_file(tmp_path):
    p = tmp_path / "small.json"
    p.write_text(json.dumps(small_dict()))
    return p


def test_bundled_scenarios_encode_experiment():
    s = load_scenario("reference_nominal")
    assert s.cfg.N_p == 50 and s.cfg.T == 60.0 and s.cfg.u_max == 0.1 and s.cfg.k_a == 30
    np.testing.assert_allclose(s.x_0, [250, 400, -200, 5, -5, -5])
    assert s.model_orbit.e == 0.7 and s.model_orbit.h_p == pytest.approx(500e3)
    assert s.model_orbit.theta0 == pytest.approx(np.pi / 4)
    assert s.los[0] == pytest.approx(C30) and s.los[1] == pytest.approx(1.0)
    assert s.cfg.state_weight == pytest.approx(1.0)
    assert s.truth_orbit == s.model_orbit
    m = load_scenario("reference_mismatch")
    assert (m.truth_orbit.e, m.truth_orbit.h_p) == (0.83, pytest.approx(525e3))
    assert m.truth_orbit.theta0 == pytest.approx(np.pi / 3)


def test_units_are_converted():
    a = Scenario.from_dict(small_dict())
    b = Scenario.from_dict(small_dict(x0={"r_km": [0.02, 0.15, -0.01], "v_km_s": [0.0, -2e-4, 0.0]},
                                      model_orbit={"e": 0.7, "h_p_m": 5e5, "theta0_rad": np.pi / 4}))
    np.testing.assert_allclose(a.x_0, b.x_0, rtol=1e-15)
    assert a.model_orbit.theta0 == pytest.approx(b.model_orbit.theta0, rel=1e-15)


@pytest.mark.parametrize("patch", [
    {"model_orbit": {"e": 1.2, "h_p_km": 500, "theta0_deg": 0}},
    {"model_orbit": {"e": 0.1, "h_p_km": 500, "h_p_m": 5e5, "theta0_deg": 0}},
    {"x0": {"r_m": [1, 2], "v_m_s": [0, 0, 0]}},
    {"planning": {"k_a": 99}},
    {"planning": {"bogus": 1}},
    {"planning": {"alpha_length_unit": "mile"}},
    {"stop_radius_m": 0.0},
    {"baseline": "magic"},
    {"los": {}},
])
def test_bad_scenarios(patch):
    with pytest.raises(ScenarioError):
        Scenario.from_dict(small_dict(**patch))


def test_missing_file():
    with pytest.raises(ScenarioError):
        load_scenario("/nonexistent/nowhere.json")


def test_invalid_json(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text("{")
    with pytest.raises(ScenarioError):
        load_scenario(p)


def test_truth_zero_pulses_is_coast(orbit):
    truth = TruthModel(orbit)
    x = np.array([250.0, 400.0, -200.0, 5.0, -5.0, -5.0])
    y = propagate_truth(truth, x, 300.0, 60.0, np.zeros(6), np.zeros(6), 0.1)
    np.testing.assert_allclose(y, truth.plant.transition(300.0, 360.0) @ x, rtol=1e-14, atol=1e-12)


def test_truth_equals_model_prediction(orbit, plant, rng):
    from pwmpc.validation import random_schedule
    sched = random_schedule(rng, 1, 60.0, 0.1)
    x = rng.normal(0, 200, 6)
    y = propagate_truth(TruthModel(orbit), x, 0.0, 60.0, sched.tau[0], sched.kappa[0], 0.1)
    pred = predict_states(build_prediction(plant, 0.0, 60.0, 1, sched), x)[0]
    assert np.abs(y - pred).max() < 1e-9


def test_mismatch_gives_innovation():
    m = load_scenario("reference_mismatch")
    model = TruthModel(m.model_orbit.orbit())
    truth = TruthModel(m.truth_orbit.orbit())
    kap = np.array([0.0, 20.0, 10.0, 0.0, 5.0, 0.0])
    tau = np.full(6, 10.0)
    a = propagate_truth(model, m.x_0, 0.0, 60.0, tau, kap, 0.1)
    b = propagate_truth(truth, m.x_0, 0.0, 60.0, tau, kap, 0.1)
    innovation = np.linalg.norm(a[:3] - b[:3])
    assert 0.1 < innovation < 100.0


def _empty_report(s):
    run = MpcRun([], NON_ARRIVAL, 0.0, None, s.x_0, 0.0)
    return ExperimentReport(s.name, "pwm_mpc", run, 0.1, 5.0, 0, 0.0, [])


def test_empty_report_outputs(tmp_path):
    s = Scenario.from_dict(small_dict(max_steps=0))
    rep = run_scenario(s)
    assert rep.status == NON_ARRIVAL and rep.run.records == []
    paths = emit_outputs(rep, tmp_path)
    assert paths["trajectory"].read_text() == ",".join(CSV_HEADER) + "\n"
    summ = json.loads(paths["summary"].read_text())
    assert summ["status"] == NON_ARRIVAL and summ["fuel_mps"] == 0.0
    assert trajectory_csv(_empty_report(s)) == ",".join(CSV_HEADER) + "\n"


@pytest.fixture(scope="module")
def small_run(tmp_path_factory):
    s = Scenario.from_dict(small_dict())
    rep = run_scenario(s)
    out = tmp_path_factory.mktemp("small")
    emit_outputs(rep, out)
    return s, rep, out


def test_summary_fields(small_run):
    _, rep, out = small_run
    summ = json.loads((out / "summary.json").read_text())
    for key in ("fuel_mps", "arrival_step", "los_violation_count", "max_los_violation_m", "per_step_wall_ms"):
        assert key in summ
    assert summ["status"] == "ARRIVED"
    assert len(summ["per_step_wall_ms"]) == summ["arrival_step"] + 1


def test_csv_row_count_and_header(small_run):
    _, rep, out = small_run
    lines = (out / "trajectory.csv").read_text().splitlines()
    assert lines[0].split(",") == CSV_HEADER
    assert len(lines) - 1 == rep.run.arrival_step + 1


def test_csv_replay_reproduces_states(small_run):
    s, rep, out = small_run
    steps, t, X, tau, kap = read_trajectory_csv(out / "trajectory.csv")
    truth = TruthModel(s.truth_orbit.orbit())
    for k in range(len(steps) - 1):
        y = propagate_truth(truth, X[k], t[k], s.cfg.T, tau[k], kap[k], s.cfg.u_max)
        assert np.abs(y - X[k + 1]).max() < 1e-9


def test_csv_fuel_and_los_match_summary(small_run):
    s, rep, out = small_run
    _, _, X, _, kap = read_trajectory_csv(out / "trajectory.csv")
    summ = json.loads((out / "summary.json").read_text())
    fuel = 0.0
    for row in kap:
        fuel += float(np.sum(np.full(6, s.cfg.u_max) * row))
    assert fuel == summ["fuel_mps"]
    count, worst, _ = los_violations(s.constraints, X)
    assert count == summ["los_violation_count"]
    assert worst == summ["max_los_violation_m"]


def test_refine_cost_file(small_run):
    _, _, out = small_run
    lines = (out / "refine_costs.csv").read_text().splitlines()
    assert lines[0] == "step,iteration,cost" and len(lines) > 1


def test_csv_deterministic(small_run):
    s, rep, _ = small_run
    again = run_scenario(Scenario.from_dict(small_dict()))
    assert trajectory_csv(again) == trajectory_csv(rep)


def test_emit_outputs_path_error(tmp_path, small_run):
    _, rep, _ = small_run
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(OSError, match="cannot write"):
        emit_outputs(rep, blocker / "sub")


def test_cli_mpc(small_file, tmp_path, capsys):
    assert main(["mpc", "--scenario", str(small_file), "--out", str(tmp_path / "o")]) == EXIT_OK
    assert json.loads(capsys.readouterr().out)["status"] == "ARRIVED"
    assert (tmp_path / "o" / "trajectory.csv").exists()


def test_cli_non_arrival(tmp_path, capsys):
    p = tmp_path / "s.json"
    p.write_text(json.dumps(small_dict(max_steps=2)))
    assert main(["mpc", "--scenario", str(p), "--baseline", "open_loop"]) == EXIT_NON_ARRIVAL


def test_cli_config_errors(small_file, tmp_path, capsys):
    assert main(["mpc", "--scenario", str(tmp_path / "missing.json")]) == EXIT_CONFIG
    assert main(["mpc", "--scenario", str(small_file), "--ka", "0"]) == EXIT_CONFIG
    assert "configuration error" in capsys.readouterr().err


def test_cli_overrides_and_plan(small_file, tmp_path, capsys):
    assert main(["plan", "--scenario", str(small_file), "--out", str(tmp_path), "--max-refine-iters", "0",
                 "--ka", "4"]) == EXIT_OK
    summ = json.loads((tmp_path / "plan_summary.json").read_text())
    assert summ["iterations"] == 0
    lines = (tmp_path / "plan.csv").read_text().splitlines()
    assert len(lines) == 1 + 12 + 1


def test_cli_requires_subcommand():
    with pytest.raises(SystemExit):
        main([])


def test_cli_validate(capsys):
    assert main(["validate", "--seed", "3"]) == EXIT_OK
    out = capsys.readouterr().out
    assert "FAIL" not in out and out.count("PASS") == 9
