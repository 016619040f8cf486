"""Pendulum swing-up environment with a protagonist and an adversary torque channel.

Angle convention: ``theta = 0`` is upright, angles are wrapped to ``[-pi, pi)``.
The rod is uniform (mass ``rod_mass``, length ``rod_length``) pivoting at one
end; an optional point mass ("clog") sits at the tip.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import NamedTuple, Optional

import numpy as np

from ar_a3c.errors import ConfigError, DivergenceError

TWO_PI = 2.0 * math.pi

# Clog weights of 20/40/60/80 g on a 271 g rod, expressed as fractions of rod mass.
CLOG_MASSES = (0.074, 0.148, 0.221, 0.295)


@dataclass(frozen=True)
class PendulumParams:
    rod_mass: float = 1.0
    rod_length: float = 1.0
    gravity: float = 10.0
    clog_mass: float = 0.0
    dt: float = 0.05
    max_speed: float = 8.0
    max_torque: float = 2.0
    difficulty: float = 0.0
    noise_std: float = 0.0
    episode_len: int = 200

    def __post_init__(self):
        for name in ("rod_mass", "rod_length", "dt", "max_speed", "max_torque"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise ConfigError(f"{name} must be positive, got {value!r}")
        if not 0.0 <= self.difficulty <= 1.0:
            raise ConfigError(f"difficulty must lie in [0, 1], got {self.difficulty!r}")
        if not self.clog_mass >= 0.0:
            raise ConfigError(f"clog_mass must be >= 0, got {self.clog_mass!r}")
        if not self.noise_std >= 0.0:
            raise ConfigError(f"noise_std must be >= 0, got {self.noise_std!r}")
        if int(self.episode_len) != self.episode_len or self.episode_len < 1:
            raise ConfigError(f"episode_len must be a positive integer, got {self.episode_len!r}")

    @property
    def adversary_max_torque(self) -> float:
        return self.difficulty * self.max_torque

    def with_(self, **changes) -> "PendulumParams":
        return replace(self, **changes)


@dataclass(frozen=True)
class PendulumState:
    theta: float
    theta_dot: float


class Observation(NamedTuple):
    cos_theta: float
    sin_theta: float
    theta_dot: float

    def as_array(self) -> np.ndarray:
        return np.array(self, dtype=np.float64)


@dataclass(frozen=True)
class StepResult:
    next_state: PendulumState
    observation: Observation
    reward: float
    applied_protagonist_torque: float
    applied_adversary_torque: float


@dataclass(frozen=True)
class ImpulseSchedule:
    """External torque of ``torque`` applied for ``duration`` steps from ``start``."""

    start: int
    duration: int
    torque: float

    def __post_init__(self):
        if self.duration < 1:
            raise ConfigError(f"impulse duration must be >= 1 step, got {self.duration}")

    @property
    def end(self) -> int:
        return self.start + self.duration


def apply_impulse(schedule: Optional[ImpulseSchedule], step_index: int) -> float:
    if schedule is None:
        return 0.0
    if schedule.start <= step_index < schedule.end:
        return float(schedule.torque)
    return 0.0


def wrap_angle(theta: float) -> float:
    wrapped = (theta + math.pi) % TWO_PI - math.pi
    # float modulo can round up to exactly 2*pi
    if wrapped >= math.pi:
        wrapped -= TWO_PI
    return wrapped


def clamp(x: float, bound: float) -> float:
    return -bound if x < -bound else bound if x > bound else x


def observe(state: PendulumState) -> Observation:
    return Observation(math.cos(state.theta), math.sin(state.theta), state.theta_dot)


def reward(theta: float, theta_dot: float, protagonist_action: float) -> float:
    return -(theta * theta + 0.1 * theta_dot * theta_dot + 0.001 * protagonist_action * protagonist_action)


def reset(params: PendulumParams, rng) -> tuple[PendulumState, Observation]:
    theta = wrap_angle(rng.uniform(-math.pi, math.pi))
    theta_dot = rng.uniform(-1.0, 1.0)
    state = PendulumState(theta, theta_dot)
    return state, observe(state)


def angular_acceleration(theta: float, torque: float, params: PendulumParams) -> float:
    l = params.rod_length
    m = params.rod_mass
    c = params.clog_mass
    gravity_torque = (m * l / 2.0 + c * l) * params.gravity * math.sin(theta)
    inertia = m * l * l / 3.0 + c * l * l
    return (gravity_torque + torque) / inertia


def step(
    state: PendulumState,
    params: PendulumParams,
    protagonist_action: float,
    adversary_action: float = 0.0,
    rng=None,
    external_torque: float = 0.0,
) -> StepResult:
    """Advance one semi-implicit Euler step.

    ``external_torque`` (impulse probes) is added after clamping and is not
    bounded by the difficulty level. Reward is charged on the pre-step state and
    the clamped protagonist torque only.
    """
    if not (math.isfinite(protagonist_action) and math.isfinite(adversary_action)):
        raise DivergenceError(
            f"non-finite action (protagonist={protagonist_action!r}, adversary={adversary_action!r}); "
            "the policy has diverged"
        )
    tau_p = clamp(float(protagonist_action), params.max_torque)
    tau_a = clamp(float(adversary_action), params.adversary_max_torque)
    noise = 0.0
    if params.noise_std > 0.0:
        if rng is None:
            raise ValueError("an rng is required when noise_std > 0")
        noise = rng.normal(0.0, params.noise_std)

    theta, theta_dot = state.theta, state.theta_dot
    r = reward(theta, theta_dot, tau_p)
    alpha = angular_acceleration(theta, tau_p + tau_a + noise + external_torque, params)
    new_theta_dot = clamp(theta_dot + alpha * params.dt, params.max_speed)
    new_theta = wrap_angle(theta + new_theta_dot * params.dt)
    next_state = PendulumState(new_theta, new_theta_dot)
    return StepResult(next_state, observe(next_state), r, tau_p, tau_a)


class PendulumEnv:
    """Stateful wrapper that tracks the current state and the step count of an episode."""

    def __init__(self, params: PendulumParams, impulse: Optional[ImpulseSchedule] = None):
        self.params = params
        self.impulse = impulse
        self.state: Optional[PendulumState] = None
        self.t = 0

    @property
    def needs_reset(self) -> bool:
        return self.state is None or self.t >= self.params.episode_len

    @property
    def done(self) -> bool:
        return self.state is not None and self.t >= self.params.episode_len

    def reset(self, rng, state: Optional[PendulumState] = None) -> Observation:
        if state is None:
            self.state, obs = reset(self.params, rng)
        else:
            self.state, obs = PendulumState(wrap_angle(state.theta), state.theta_dot), observe(state)
        self.t = 0
        return obs

    def observation(self) -> Observation:
        return observe(self.state)

    def step(self, protagonist_action: float, adversary_action: float = 0.0, rng=None) -> StepResult:
        result = step(
            self.state,
            self.params,
            protagonist_action,
            adversary_action,
            rng,
            external_torque=apply_impulse(self.impulse, self.t),
        )
        self.state = result.next_state
        self.t += 1
        return result
