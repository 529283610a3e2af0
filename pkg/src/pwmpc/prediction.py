"""Discrete LTV prediction: per-step blocks, stacked F/G and PWM linearization.

A plant is any object exposing ``transition(t_from, t_to)``,
``thrust_integral(r1, r2, r3, axis)`` and ``impulse_column(t_s, t_end, axis)``
that broadcast over array-valued epochs (see
:class:`pwmpc.tschauner_hempel.TschaunerHempelPlant`).

PWM decision variables are laid out per step in channel order
``[x+, x-, y+, y-, z+, z-]``. The stacked vector is ``[Gamma; Lambda]``: all
pulse starts (step-major, channel-minor) followed by all widths in the same
order. Increment vectors ``Delta`` use the identical layout.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional, Protocol

import numpy as np

from .tschauner_hempel import InputDomainError

N_AXES = 3
N_CHANNELS = 2 * N_AXES
CHANNEL_AXIS = np.array([0, 0, 1, 1, 2, 2])
CHANNEL_SIGN = np.array([1.0, -1.0, 1.0, -1.0, 1.0, -1.0])
CHANNEL_NAMES = ("px", "nx", "py", "ny", "pz", "nz")

BOX_TOL = 1e-9


class LtvPlant(Protocol):
    n_states: int
    n_inputs: int

    def transition(self, t_from, t_to) -> np.ndarray: ...

    def thrust_integral(self, r1, r2, r3, axis) -> np.ndarray: ...

    def impulse_column(self, t_s, t_end, axis) -> np.ndarray: ...


@dataclass
class PwmSchedule:
    """Pulse starts, widths and fixed magnitudes over a horizon.

    Arrays have shape ``(N, 6)`` with channels ``[x+, x-, y+, y-, z+, z-]``.
    Starts and widths are seconds relative to the start of each interval.
    """

    tau: np.ndarray
    kappa: np.ndarray
    u: np.ndarray
    T: float

    def __post_init__(self):
        self.tau = np.array(self.tau, dtype=float).reshape(-1, N_CHANNELS)
        self.kappa = np.array(self.kappa, dtype=float).reshape(-1, N_CHANNELS)
        u = np.asarray(self.u, dtype=float)
        self.u = np.array(np.broadcast_to(u, self.tau.shape), dtype=float)
        if self.kappa.shape != self.tau.shape:
            raise InputDomainError("tau and kappa shapes differ")
        if np.any(self.u <= 0):
            raise InputDomainError("pulse magnitudes must be strictly positive")

    @classmethod
    def zeros(cls, N: int, T: float, u_max: float) -> "PwmSchedule":
        return cls(np.zeros((N, N_CHANNELS)), np.zeros((N, N_CHANNELS)), u_max, T)

    @property
    def N(self) -> int:
        return self.tau.shape[0]

    def violation(self) -> float:
        """Largest violation of ``tau >= 0, kappa >= 0, tau + kappa <= T``."""
        if self.N == 0:
            return 0.0
        return float(max(np.max(-self.tau), np.max(-self.kappa),
                         np.max(self.tau + self.kappa - self.T), 0.0))

    def validate(self, tol: float = BOX_TOL) -> None:
        if self.violation() > tol:
            raise InputDomainError(
                f"PWM schedule violates its box constraints by {self.violation():.3g} s")

    def clipped(self) -> "PwmSchedule":
        """Nearest schedule satisfying the box constraints exactly."""
        kappa = np.clip(self.kappa, 0.0, self.T)
        tau = np.clip(self.tau, 0.0, self.T - kappa)
        return replace(self, tau=tau, kappa=kappa)

    def fuel(self) -> float:
        """Delta-V of the whole schedule, ``sum(u * kappa)`` [m/s]."""
        return float(np.sum(self.u * self.kappa))

    def step_fuel(self) -> np.ndarray:
        return np.sum(self.u * self.kappa, axis=1)

    def to_vector(self) -> np.ndarray:
        return np.concatenate([self.tau.ravel(), self.kappa.ravel()])

    def with_vector(self, upsilon) -> "PwmSchedule":
        upsilon = np.asarray(upsilon, dtype=float)
        half = upsilon.size // 2
        return replace(self, tau=upsilon[:half].reshape(self.tau.shape),
                       kappa=upsilon[half:].reshape(self.kappa.shape))

    def shifted(self) -> "PwmSchedule":
        """Drop the first step and pad the end with an idle step."""
        pad = np.zeros((1, N_CHANNELS))
        return replace(self,
                       tau=np.vstack([self.tau[1:], pad]),
                       kappa=np.vstack([self.kappa[1:], pad]),
                       u=np.vstack([self.u[1:], self.u[-1:]]))

    def copy(self) -> "PwmSchedule":
        return PwmSchedule(self.tau.copy(), self.kappa.copy(), self.u.copy(), self.T)


@dataclass
class PredictionMatrices:
    """Stacked prediction ``X = F x_k + G U`` (+ ``G_delta @ Delta`` for PWM)."""

    F: np.ndarray
    G: np.ndarray
    A_blocks: np.ndarray
    B_blocks: np.ndarray
    G_delta: Optional[np.ndarray] = None
    Bd_tau: Optional[np.ndarray] = None
    Bd_kappa: Optional[np.ndarray] = None
    inputs: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def N(self) -> int:
        return self.A_blocks.shape[0]


def sample_times(t_k: float, T: float, N: int) -> np.ndarray:
    return t_k + T * np.arange(N + 1)


def step_transitions(plant: LtvPlant, t_k: float, T: float, N: int) -> np.ndarray:
    """``A_{k+j} = Phi(t_{k+j+1}, t_{k+j})`` for ``j = 0..N-1``; shape ``(N, 6, 6)``."""
    t = sample_times(t_k, T, N)
    return np.asarray(plant.transition(t[:-1], t[1:])).reshape(N, 6, 6)


def pam_blocks(plant: LtvPlant, t_k: float, T: float, N: int) -> np.ndarray:
    t = sample_times(t_k, T, N)
    cols = [plant.thrust_integral(t[:-1], t[1:], t[1:], i) for i in range(N_AXES)]
    return np.stack(cols, axis=-1)


def impulsive_blocks(plant: LtvPlant, t_k: float, T: float, gamma) -> np.ndarray:
    gamma = np.asarray(gamma, dtype=float)
    N = gamma.shape[0]
    if np.any(gamma < -BOX_TOL) or np.any(gamma > T + BOX_TOL):
        raise InputDomainError("impulse times must lie in [0, T]")
    t = sample_times(t_k, T, N)
    cols = [plant.impulse_column(t[:-1] + gamma[:, i], t[1:], i) for i in range(N_AXES)]
    return np.stack(cols, axis=-1)


def pwm_blocks(plant: LtvPlant, t_k: float, T: float, sched: PwmSchedule) -> np.ndarray:
    """Signed PWM input columns ``sign * B^W(tau, kappa)``; shape ``(N, 6, 6)``."""
    sched.validate()
    N = sched.N
    t = sample_times(t_k, T, N)
    t0, t1 = t[:-1, None], t[1:, None]
    out = np.empty((N, 6, N_CHANNELS))
    tau, kappa = np.maximum(sched.tau, 0.0), np.maximum(sched.kappa, 0.0)
    for c in range(N_CHANNELS):
        b = plant.thrust_integral(t0[:, 0] + tau[:, c], t0[:, 0] + tau[:, c] + kappa[:, c],
                                  t1[:, 0], CHANNEL_AXIS[c])
        out[:, :, c] = CHANNEL_SIGN[c] * b
    return out


def pwm_derivative_blocks(plant: LtvPlant, t_k: float, T: float, sched: PwmSchedule):
    """Sensitivities of ``x_{k+1}`` to pulse starts and widths.

    Returns ``(Bd_tau, Bd_kappa)``, each ``(N, 6, 6)``: column ``c`` of step
    ``j`` is the derivative of the signed PWM contribution
    ``sign_c * u_c * B^W(tau_c, kappa_c)`` with respect to ``tau_c`` (resp.
    ``kappa_c``).
    """
    sched.validate()
    N = sched.N
    t = sample_times(t_k, T, N)
    t0, t1 = t[:-1], t[1:]
    Bd_tau = np.empty((N, 6, N_CHANNELS))
    Bd_kap = np.empty((N, 6, N_CHANNELS))
    tau, kappa = np.maximum(sched.tau, 0.0), np.maximum(sched.kappa, 0.0)
    for c in range(N_CHANNELS):
        ax = CHANNEL_AXIS[c]
        scale = (CHANNEL_SIGN[c] * sched.u[:, c])[:, None]
        end = plant.impulse_column(t0 + tau[:, c] + kappa[:, c], t1, ax)
        start = plant.impulse_column(t0 + tau[:, c], t1, ax)
        Bd_kap[:, :, c] = scale * end
        # Coincident endpoints must cancel exactly.
        diff = np.where((kappa[:, c] > 0)[:, None], end - start, 0.0)
        Bd_tau[:, :, c] = scale * diff
    return Bd_tau, Bd_kap


def stack_free_response(A_blocks: np.ndarray) -> np.ndarray:
    """``F = [A_{k+1,k}; ...; A_{k+N,k}]``; shape ``(6N, 6)``."""
    N = A_blocks.shape[0]
    F = np.empty((6 * N, 6))
    prev = np.eye(6)
    for j in range(N):
        prev = A_blocks[j] @ prev
        F[6 * j:6 * j + 6] = prev
    return F


def stack_forced_response(A_blocks: np.ndarray, B_blocks: np.ndarray) -> np.ndarray:
    """Block lower-triangular ``G`` with blocks ``A_{k+j,k+l} B_{k+l-1}``.

    Built row by row, ``G_j = A_{k+j-1} G_{j-1} + [0 .. B_{k+j-1} .. 0]``, so
    every transition product is formed once per horizon.
    """
    N, _, m = B_blocks.shape
    G = np.zeros((6 * N, m * N))
    prev = np.zeros((6, m * N))
    for j in range(N):
        prev[:, : m * j] = A_blocks[j] @ prev[:, : m * j]
        prev[:, m * j:m * (j + 1)] = B_blocks[j]
        G[6 * j:6 * j + 6] = prev
    return G


def build_prediction(plant: LtvPlant, t_k: float, T: float, N_p: int, actuation,
                     with_delta: bool = False) -> PredictionMatrices:
    """Stacked prediction matrices for one horizon.

    ``actuation`` is ``"PAM"``, ``("IMP", gamma)`` with ``gamma`` of shape
    ``(N_p, 3)``, or a :class:`PwmSchedule` of length ``N_p``. For PWM the
    returned ``inputs`` are the fixed magnitudes, and ``with_delta`` adds
    ``G_delta`` for the linearized increments.
    """
    if N_p < 1:
        raise InputDomainError("horizon must contain at least one step")
    if T <= 0:
        raise InputDomainError("sample time must be positive")
    A = step_transitions(plant, t_k, T, N_p)
    inputs = None
    Bd_tau = Bd_kap = G_delta = None
    if isinstance(actuation, PwmSchedule):
        if actuation.N != N_p:
            raise InputDomainError(f"schedule has {actuation.N} steps, horizon is {N_p}")
        if abs(actuation.T - T) > 1e-12:
            raise InputDomainError("schedule sample time differs from horizon sample time")
        B = pwm_blocks(plant, t_k, T, actuation)
        inputs = actuation.u.ravel().copy()
        if with_delta:
            Bd_tau, Bd_kap = pwm_derivative_blocks(plant, t_k, T, actuation)
            G_delta = np.hstack([stack_forced_response(A, Bd_tau),
                                 stack_forced_response(A, Bd_kap)])
    elif isinstance(actuation, str) and actuation == "PAM":
        B = pam_blocks(plant, t_k, T, N_p)
    elif isinstance(actuation, tuple) and actuation[0] == "IMP":
        gamma = np.asarray(actuation[1], dtype=float)
        if gamma.shape != (N_p, N_AXES):
            raise InputDomainError(f"impulse times must have shape ({N_p}, {N_AXES})")
        B = impulsive_blocks(plant, t_k, T, gamma)
    else:
        raise ValueError(f"unknown actuation {actuation!r}")
    return PredictionMatrices(F=stack_free_response(A), G=stack_forced_response(A, B),
                              A_blocks=A, B_blocks=B, G_delta=G_delta,
                              Bd_tau=Bd_tau, Bd_kappa=Bd_kap, inputs=inputs)


def build_delta_prediction(plant: LtvPlant, t_k: float, T: float, N_p: int,
                           schedule: PwmSchedule) -> np.ndarray:
    """``G_delta`` mapping ``Delta = [dGamma; dLambda]`` to stacked state increments."""
    return build_prediction(plant, t_k, T, N_p, schedule, with_delta=True).G_delta


def predict_states(pm: PredictionMatrices, x_k, inputs=None) -> np.ndarray:
    """``X = F x_k + G U`` as an ``(N, 6)`` array of states ``x_{k+1..k+N}``.

    ``inputs`` defaults to the stored PWM magnitudes.
    """
    x_k = np.asarray(x_k, dtype=float)
    if x_k.shape != (6,):
        raise InputDomainError(f"state must have shape (6,), got {x_k.shape}")
    if inputs is None:
        inputs = pm.inputs
    if inputs is None:
        raise InputDomainError("inputs are required for PAM/impulsive predictions")
    inputs = np.asarray(inputs, dtype=float).ravel()
    if inputs.size != pm.G.shape[1]:
        raise InputDomainError(f"expected {pm.G.shape[1]} inputs, got {inputs.size}")
    return (pm.F @ x_k + pm.G @ inputs).reshape(-1, 6)


def propagate_pwm_step(plant: LtvPlant, x, t_k: float, T: float, tau, kappa, u) -> np.ndarray:
    """One interval under PWM pulses: ``Phi x + sum(sign * B^W(tau, kappa) * u)``."""
    sched = PwmSchedule(np.reshape(tau, (1, -1)), np.reshape(kappa, (1, -1)),
                        np.reshape(np.broadcast_to(u, np.shape(tau)), (1, -1)), T)
    A = step_transitions(plant, t_k, T, 1)[0]
    B = pwm_blocks(plant, t_k, T, sched)[0]
    return A @ np.asarray(x, dtype=float) + B @ sched.u[0]
