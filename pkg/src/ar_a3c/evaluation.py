"""Robustness benchmarks for trained policies.

* :func:`attack_sweep` - reward under an adversarial torque of growing magnitude
* :func:`clog_sweep` - reward when a tip mass changes the pendulum's weight and inertia
* :func:`impulse_trace` / :func:`recovery_time` - recovery after a short external impact
* :func:`run_trace` / :func:`export_trace` - per-timestep trajectories for plotting

Policies act with their distribution mean unless ``deterministic=False``.
Evaluation never touches parameters, so calls with the same seeds are repeatable.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple, Optional, Sequence

import numpy as np

from ar_a3c import agent as ac
from ar_a3c import dynamics as dyn
from ar_a3c.dynamics import ImpulseSchedule, PendulumParams, PendulumState

ATTACK_KINDS = ("trained_adversary", "contrarian", "random", "none")
DEFAULT_SEEDS = (0, 1, 2, 3, 4)
EPISODES_PER_SEED = 20
TRACE_HEADER = ("t", "theta", "theta_dot", "a_mu", "a_nu", "r")


@dataclass(frozen=True)
class Attack:
    """Source of the adversary-channel torque during evaluation.

    ``trained_adversary`` rescales the adversary's mean action so that its
    full output range maps to ``magnitude``; the other kinds are heuristics:
    ``contrarian`` pushes against the protagonist, ``random`` is uniform noise.
    """

    kind: str = "none"
    magnitude: float = 0.0
    adversary: Optional[ac.ActorCriticParams] = None

    def __post_init__(self):
        if self.kind not in ATTACK_KINDS:
            raise ValueError(f"attack kind must be one of {ATTACK_KINDS}, got {self.kind!r}")
        if not self.magnitude >= 0:
            raise ValueError(f"attack magnitude must be >= 0, got {self.magnitude!r}")
        if self.kind == "trained_adversary" and self.adversary is None:
            raise ValueError("a trained_adversary attack needs adversary parameters")

    def torque(self, obs, a_mu: float, rng) -> float:
        if self.kind == "none" or self.magnitude == 0.0:
            return 0.0
        if self.kind == "contrarian":
            return -self.magnitude * float(np.sign(a_mu))
        if self.kind == "random":
            return float(rng.uniform(-self.magnitude, self.magnitude))
        mean, _ = ac.policy(self.adversary, obs)
        return mean * self.magnitude / self.adversary.action_scale

    def env_params(self, base: PendulumParams) -> PendulumParams:
        if self.kind == "none":
            return base.with_(difficulty=0.0)
        difficulty = self.magnitude / base.max_torque
        if difficulty > 1.0:
            raise ValueError(
                f"attack magnitude {self.magnitude} exceeds the torque limit {base.max_torque}"
            )
        return base.with_(difficulty=difficulty)


NO_ATTACK = Attack()


def _check_policy(policy: ac.ActorCriticParams) -> None:
    n_in = policy.actor.sizes[0]
    if n_in != ac.OBS_DIM:
        raise ValueError(f"policy expects {n_in} input features, environment provides {ac.OBS_DIM}")


def evaluate(
    policy: ac.ActorCriticParams,
    env_params: PendulumParams,
    n_episodes: int,
    rng,
    attack: Attack = NO_ATTACK,
    deterministic: bool = True,
    initial_state: Optional[PendulumState] = None,
) -> np.ndarray:
    """Undiscounted reward of ``n_episodes`` full episodes."""
    _check_policy(policy)
    env = dyn.PendulumEnv(attack.env_params(env_params))
    rewards = np.empty(n_episodes)
    for k in range(n_episodes):
        obs = env.reset(rng, initial_state)
        total = 0.0
        while not env.done:
            a_mu = ac.act(policy, obs, rng, deterministic).sample
            res = env.step(a_mu, attack.torque(obs, a_mu, rng), rng)
            total += res.reward
            obs = res.observation
        rewards[k] = total
    return rewards


@dataclass(frozen=True)
class SweepPoint:
    value: float
    rewards: tuple
    seeds: tuple
    episodes_per_seed: int
    env_params: PendulumParams

    @property
    def n_episodes(self) -> int:
        return len(self.rewards)

    @property
    def mean(self) -> float:
        return float(np.mean(self.rewards))

    @property
    def std(self) -> float:
        return float(np.std(self.rewards))

    def per_seed(self) -> dict:
        k = self.episodes_per_seed
        return {s: self.rewards[i * k : (i + 1) * k] for i, s in enumerate(self.seeds)}


@dataclass(frozen=True)
class EvalReport:
    sweep_variable: str
    units: str
    attack_kind: str
    policy_id: str
    points: tuple = field(default_factory=tuple)

    def means(self) -> list:
        return [p.mean for p in self.points]

    def values(self) -> list:
        return [p.value for p in self.points]


def _seed_rng(seed: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, 7]))


def _sweep_point(policy, env_params, seeds, episodes_per_seed, attack, value, deterministic) -> SweepPoint:
    rewards = []
    for seed in seeds:
        rewards.extend(evaluate(policy, env_params, episodes_per_seed, _seed_rng(seed), attack, deterministic))
    return SweepPoint(float(value), tuple(float(r) for r in rewards), tuple(seeds), episodes_per_seed, attack.env_params(env_params))


def attack_sweep(
    protagonist: ac.ActorCriticParams,
    attack_kind: str,
    magnitudes: Sequence[float],
    adversary: Optional[ac.ActorCriticParams] = None,
    env_params: PendulumParams = PendulumParams(),
    seeds: Sequence[int] = DEFAULT_SEEDS,
    episodes_per_seed: int = EPISODES_PER_SEED,
    policy_id: str = "policy",
    deterministic: bool = True,
) -> EvalReport:
    if any(m < 0 for m in magnitudes):
        raise ValueError("attack magnitudes must be >= 0")
    points = []
    for m in magnitudes:
        attack = Attack(attack_kind, float(m), adversary) if attack_kind != "none" else NO_ATTACK
        points.append(_sweep_point(protagonist, env_params, seeds, episodes_per_seed, attack, m, deterministic))
    return EvalReport("attack_magnitude", "torque", attack_kind, policy_id, tuple(points))


def clog_sweep(
    policies: dict,
    clog_masses: Sequence[float],
    env_params: PendulumParams = PendulumParams(),
    seeds: Sequence[int] = DEFAULT_SEEDS,
    episodes_per_seed: int = EPISODES_PER_SEED,
    deterministic: bool = True,
) -> dict:
    """One clean-environment report per named policy, one point per clog mass."""
    if 0 not in [float(c) for c in clog_masses]:
        raise ValueError("clog_masses must include 0 as the unperturbed reference")
    reports = {}
    for name, policy in policies.items():
        points = [
            _sweep_point(policy, env_params.with_(clog_mass=float(c)), seeds, episodes_per_seed, NO_ATTACK, c, deterministic)
            for c in clog_masses
        ]
        reports[name] = EvalReport("clog_mass", "fraction of rod mass", "none", name, tuple(points))
    return reports


class TraceRow(NamedTuple):
    t: int
    theta: float
    theta_dot: float
    a_mu: float
    a_nu: float
    r: float


@dataclass(frozen=True)
class TraceRecord:
    rows: tuple = ()

    def __post_init__(self):
        if any(row.t != i for i, row in enumerate(self.rows)):
            raise ValueError("trace timesteps must run 0, 1, 2, ...")

    def __len__(self) -> int:
        return len(self.rows)

    def rewards(self) -> np.ndarray:
        return np.array([row.r for row in self.rows])


def run_trace(
    policy: ac.ActorCriticParams,
    env_params: PendulumParams,
    total_steps: int,
    rng,
    attack: Attack = NO_ATTACK,
    impulse: Optional[ImpulseSchedule] = None,
    initial_state: Optional[PendulumState] = None,
    deterministic: bool = True,
) -> TraceRecord:
    """One continuous run of ``total_steps`` steps with no episode resets.

    Rows hold the pre-step state, the applied (clamped) torques of both
    channels and the reward of that step. Impulse torque is not part of ``a_nu``.
    """
    _check_policy(policy)
    params = attack.env_params(env_params)
    if initial_state is None:
        state, obs = dyn.reset(params, rng)
    else:
        state = PendulumState(dyn.wrap_angle(initial_state.theta), initial_state.theta_dot)
        obs = dyn.observe(state)
    rows = []
    for t in range(total_steps):
        a_mu = ac.act(policy, obs, rng, deterministic).sample
        res = dyn.step(state, params, a_mu, attack.torque(obs, a_mu, rng), rng, dyn.apply_impulse(impulse, t))
        rows.append(TraceRow(t, state.theta, state.theta_dot, res.applied_protagonist_torque, res.applied_adversary_torque, res.reward))
        state, obs = res.next_state, res.observation
    return TraceRecord(tuple(rows))


def impulse_trace(
    policy: ac.ActorCriticParams,
    impulse: ImpulseSchedule,
    total_steps: int = 1000,
    env_params: PendulumParams = PendulumParams(),
    rng=None,
    initial_state: Optional[PendulumState] = None,
) -> TraceRecord:
    if not (0 <= impulse.start < total_steps):
        raise ValueError(f"impulse start {impulse.start} lies outside [0, {total_steps})")
    rng = np.random.default_rng(0) if rng is None else rng
    return run_trace(policy, env_params, total_steps, rng, NO_ATTACK, impulse, initial_state)


def recovery_time(trace: TraceRecord, impulse: ImpulseSchedule, threshold: float = -0.1, hold: int = 50) -> Optional[int]:
    """Steps from the end of the impulse until reward stays above ``threshold`` for ``hold`` steps.

    ``None`` when the run never settles.
    """
    r = trace.rewards()
    run = 0
    for t in range(impulse.end, len(r)):
        run = run + 1 if r[t] > threshold else 0
        if run == hold:
            return t - hold + 1 - impulse.end
    return None


def export_trace(trace: TraceRecord) -> list:
    """Header row followed by one ``(t, theta, theta_dot, a_mu, a_nu, r)`` row per step."""
    return [TRACE_HEADER] + [tuple(row) for row in trace.rows]


def same_sign_steps(trace: TraceRecord, max_abs_theta: float = math.pi / 4) -> list:
    """Timesteps near upright where the adversary pushes the same way as the protagonist."""
    return [
        row.t
        for row in trace.rows
        if row.a_mu != 0.0 and np.sign(row.a_nu) == np.sign(row.a_mu) and abs(row.theta) < max_abs_theta
    ]
