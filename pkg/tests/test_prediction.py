import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pwmpc.oracles import pwm_step_by_integration
from pwmpc.prediction import (CHANNEL_AXIS, CHANNEL_SIGN, N_CHANNELS, PwmSchedule, build_delta_prediction,
                              build_prediction, predict_states, propagate_pwm_step, pwm_derivative_blocks)
from pwmpc.tschauner_hempel import InputDomainError
from pwmpc.validation import random_schedule, taylor_ratios

T = 60.0


def _upper_blocks_zero(G, rows=6):
    N = G.shape[0] // rows
    m = G.shape[1] // N
    return all(np.all(G[rows * j:rows * (j + 1), m * (j + 1):] == 0.0) for j in range(N))


def test_single_step_matrices(plant):
    pm = build_prediction(plant, 120.0, T, 1, "PAM")
    np.testing.assert_array_equal(pm.F, pm.A_blocks[0])
    np.testing.assert_array_equal(pm.G, pm.B_blocks[0])
    np.testing.assert_allclose(pm.F, plant.transition(120.0, 180.0), rtol=0, atol=1e-12)


@pytest.mark.parametrize("kind", ["PAM", "IMP", "PWM"])
def test_prediction_is_causal_and_matches_recursion(plant, rng, kind):
    N = 8
    if kind == "PAM":
        act, u = "PAM", rng.normal(0, 0.05, 3 * N)
    elif kind == "IMP":
        act, u = ("IMP", rng.uniform(0, T, (N, 3))), rng.normal(0, 1.0, 3 * N)
    else:
        act = random_schedule(rng, N, T, 0.1)
        u = None
    pm = build_prediction(plant, 300.0, T, N, act)
    assert _upper_blocks_zero(pm.G)
    x0 = rng.normal(0, 300, 6)
    X = predict_states(pm, x0, u)
    inputs = pm.inputs if u is None else u
    m = pm.B_blocks.shape[2]
    x = x0.copy()
    for j in range(N):
        x = pm.A_blocks[j] @ x + pm.B_blocks[j] @ inputs[m * j:m * (j + 1)]
        assert np.abs(X[j] - x).max() < 1e-10 * max(1.0, np.abs(x).max())


def test_zero_inputs(plant):
    pm = build_prediction(plant, 0.0, T, 5, "PAM")
    assert np.all(predict_states(pm, np.zeros(6), np.zeros(15)) == 0.0)
    x0 = np.array([1.0, -2.0, 3.0, 0.1, 0.0, -0.1])
    np.testing.assert_array_equal(predict_states(pm, x0, np.zeros(15)).ravel(), pm.F @ x0)


def test_prediction_errors(plant):
    pm = build_prediction(plant, 0.0, T, 3, "PAM")
    with pytest.raises(InputDomainError):
        predict_states(pm, np.zeros(5), np.zeros(9))
    with pytest.raises(InputDomainError):
        predict_states(pm, np.zeros(6), np.zeros(8))
    with pytest.raises(InputDomainError):
        predict_states(pm, np.zeros(6))
    with pytest.raises(InputDomainError):
        build_prediction(plant, 0.0, T, 0, "PAM")
    with pytest.raises(InputDomainError):
        build_prediction(plant, 0.0, T, 2, PwmSchedule.zeros(3, T, 0.1))
    with pytest.raises(InputDomainError):
        build_prediction(plant, 0.0, T, 2, ("IMP", np.full((2, 3), 61.0)))
    bad = PwmSchedule(np.full((2, 6), 40.0), np.full((2, 6), 30.0), 0.1, T)
    with pytest.raises(InputDomainError):
        build_prediction(plant, 0.0, T, 2, bad)
    with pytest.raises(ValueError):
        build_prediction(plant, 0.0, T, 2, "BANG")


def test_schedule_invariants():
    with pytest.raises(InputDomainError):
        PwmSchedule(np.zeros((2, 6)), np.zeros((2, 6)), 0.0, T)
    with pytest.raises(InputDomainError):
        PwmSchedule(np.zeros((2, 6)), np.zeros((3, 6)), 0.1, T)
    s = PwmSchedule(np.full((2, 6), -1.0), np.full((2, 6), 70.0), 0.1, T)
    assert s.violation() == pytest.approx(9.0)
    c = s.clipped()
    assert c.violation() == 0.0
    c.validate()


def test_schedule_shift_and_vector(rng):
    s = random_schedule(rng, 4, T, 0.1)
    sh = s.shifted()
    np.testing.assert_array_equal(sh.kappa[:3], s.kappa[1:])
    assert np.all(sh.kappa[3] == 0.0)
    assert sh.N == s.N
    np.testing.assert_array_equal(s.with_vector(s.to_vector()).tau, s.tau)
    assert s.fuel() == pytest.approx(0.1 * s.kappa.sum())


def test_pwm_prediction_matches_piecewise_integration(plant, rng):
    sched = random_schedule(rng, 3, T, 0.1)
    x0 = np.array([250.0, 400.0, -200.0, 5.0, -5.0, -5.0])
    X = predict_states(build_prediction(plant, 0.0, T, 3, sched), x0)
    x = x0
    for j in range(3):
        x = pwm_step_by_integration(plant.orbit, x, j * T, T, sched.tau[j], sched.kappa[j], 0.1)
        assert np.abs(X[j] - x).max() < 1e-9 * np.abs(x).max() + 1e-9


def test_propagate_step_matches_prediction(plant, rng):
    sched = random_schedule(rng, 1, T, 0.1)
    x0 = rng.normal(0, 100, 6)
    a = propagate_pwm_step(plant, x0, 600.0, T, sched.tau[0], sched.kappa[0], 0.1)
    b = predict_states(build_prediction(plant, 600.0, T, 1, sched), x0)[0]
    np.testing.assert_allclose(a, b, rtol=1e-13, atol=1e-12)


def test_sign_swap_negates_trajectory(plant, rng):
    sched = random_schedule(rng, 4, T, 0.1)
    swap = np.arange(N_CHANNELS) ^ 1
    mirror = PwmSchedule(sched.tau[:, swap], sched.kappa[:, swap], 0.1, T)
    a = predict_states(build_prediction(plant, 0.0, T, 4, sched), np.zeros(6))
    b = predict_states(build_prediction(plant, 0.0, T, 4, mirror), np.zeros(6))
    np.testing.assert_allclose(a, -b, rtol=1e-13, atol=1e-12)


def test_derivative_blocks_zero_width(plant):
    tau = np.array([[20.0, 5.0, 33.0, 0.0, 59.0, 12.0]])
    sched = PwmSchedule(tau, np.zeros((1, 6)), 0.1, T)
    Bd_tau, Bd_kap = pwm_derivative_blocks(plant, 60.0, T, sched)
    assert np.all(Bd_tau == 0.0)
    for c in range(N_CHANNELS):
        ref = CHANNEL_SIGN[c] * 0.1 * plant.impulse_column(60.0 + tau[0, c], 120.0, CHANNEL_AXIS[c])
        np.testing.assert_allclose(Bd_kap[0, :, c], ref, rtol=1e-14, atol=0)


def test_derivative_blocks_vs_finite_differences(plant, rng):
    d = 1e-4
    sched = random_schedule(rng, 1, T, 0.1, p_busy=1.0)
    Bd_tau, Bd_kap = pwm_derivative_blocks(plant, 240.0, T, sched)
    for c in range(N_CHANNELS):
        ax = CHANNEL_AXIS[c]
        tau, kap = sched.tau[0, c], sched.kappa[0, c]

        def bw(t, k):
            return CHANNEL_SIGN[c] * 0.1 * plant.input_column(240.0, T, ("PWM", t, k), ax)

        fd_tau = (bw(tau + d, kap) - bw(tau - d, kap)) / (2 * d)
        fd_kap = (bw(tau, kap + d) - bw(tau, kap - d)) / (2 * d)
        assert np.abs(fd_tau - Bd_tau[0, :, c]).max() < 1e-6 * np.abs(Bd_tau[0, :, c]).max()
        assert np.abs(fd_kap - Bd_kap[0, :, c]).max() < 1e-6 * np.abs(Bd_kap[0, :, c]).max()


def test_delta_prediction_structure(plant, rng):
    N = 5
    sched = random_schedule(rng, N, T, 0.1)
    Gd = build_delta_prediction(plant, 0.0, T, N, sched)
    assert Gd.shape == (6 * N, 2 * N_CHANNELS * N)
    half = N_CHANNELS * N
    assert _upper_blocks_zero(Gd[:, :half]) and _upper_blocks_zero(Gd[:, half:])
    assert np.all(Gd @ np.zeros(2 * half) == 0.0)


def test_taylor_remainder_quarters(rng):
    for r in taylor_ratios(rng):
        assert 3.5 <= r <= 4.5


@settings(max_examples=40, deadline=None)
@given(st.floats(0.0, 40.0), st.floats(0.0, 20.0), st.floats(0.0, 5000.0))
def test_start_time_does_not_change_fuel(tau, kap, t_k):
    a = PwmSchedule(np.full((1, 6), tau), np.full((1, 6), kap), 0.1, T)
    b = PwmSchedule(np.full((1, 6), 0.0), np.full((1, 6), kap), 0.1, T)
    assert a.fuel() == b.fuel()
