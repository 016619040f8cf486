"""Gaussian actor-critic agents, n-step advantages and policy-gradient losses.

The same code trains the protagonist and the adversary. The adversary sees a
batch whose rewards are negated and whose action columns are swapped, so that
``a_mu`` always holds the action of the agent being trained.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import NamedTuple, Sequence

import numpy as np

from ar_a3c import nn
from ar_a3c.dynamics import Observation
from ar_a3c.errors import DivergenceError

MIN_STD = 1e-4
OBS_DIM = 3
LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)


@dataclass(frozen=True)
class ActorCriticParams:
    actor: nn.MlpParams
    critic: nn.MlpParams
    action_scale: float

    def __post_init__(self):
        if not self.action_scale > 0:
            raise ValueError(f"action_scale must be positive, got {self.action_scale!r}")
        if self.actor.sizes[-1] != 2:
            raise ValueError("actor must output (mean, std) pre-activations")
        if self.critic.sizes[-1] != 1:
            raise ValueError("critic must output a single value")

    @property
    def actor_hidden(self) -> int:
        return self.actor.sizes[1]

    @property
    def critic_hidden(self) -> int:
        return self.critic.sizes[1]


def init_actor_critic(
    rng, action_scale: float, actor_hidden: int = 200, critic_hidden: int = 100
) -> ActorCriticParams:
    actor = nn.init_mlp((OBS_DIM, actor_hidden, 2), ("relu", "identity"), rng)
    critic = nn.init_mlp((OBS_DIM, critic_hidden, 1), ("relu", "identity"), rng)
    return ActorCriticParams(actor, critic, float(action_scale))


class GaussianAction(NamedTuple):
    mean: float
    std: float
    sample: float
    log_prob: float


class Transition(NamedTuple):
    s: Observation
    a_mu: float
    a_nu: float
    r: float
    s_next: Observation
    terminal: bool


@dataclass(frozen=True)
class ExperienceBatch:
    tuples: tuple

    def __post_init__(self):
        if not self.tuples:
            raise ValueError("an experience batch cannot be empty")

    def __len__(self) -> int:
        return len(self.tuples)

    def observations(self) -> np.ndarray:
        return np.array([t.s for t in self.tuples], dtype=np.float64)

    def actions(self) -> np.ndarray:
        return np.array([t.a_mu for t in self.tuples], dtype=np.float64)

    def rewards(self) -> np.ndarray:
        return np.array([t.r for t in self.tuples], dtype=np.float64)


@dataclass(frozen=True)
class AdvantageSet:
    returns: np.ndarray
    advantages: np.ndarray


def _heads(params: ActorCriticParams, z: np.ndarray):
    t = np.tanh(z[..., 0])
    mean = params.action_scale * t
    std = np.logaddexp(0.0, z[..., 1]) + MIN_STD
    return mean, std, t


def gaussian_log_prob(x, mean, std):
    return -0.5 * ((x - mean) / std) ** 2 - np.log(std) - LOG_SQRT_2PI


def gaussian_entropy(std):
    return 0.5 + LOG_SQRT_2PI + np.log(std)


def policy(params: ActorCriticParams, obs) -> tuple[float, float]:
    """Mean and standard deviation of the action distribution for one observation."""
    z, _ = nn.forward(params.actor, obs)
    mean, std, _ = _heads(params, z)
    mean, std = float(mean), float(std)
    if not (math.isfinite(mean) and math.isfinite(std)):
        raise DivergenceError("actor produced a non-finite output")
    return mean, std


def act(params: ActorCriticParams, obs, rng, deterministic: bool = False) -> GaussianAction:
    mean, std = policy(params, obs)
    sample = mean if deterministic else mean + std * rng.standard_normal()
    return GaussianAction(mean, std, sample, float(gaussian_log_prob(sample, mean, std)))


def value(critic: nn.MlpParams, obs) -> np.ndarray:
    v, _ = nn.forward(critic, obs)
    return v[..., 0]


def discounted_returns(rewards: Sequence[float], gamma: float, bootstrap: float) -> np.ndarray:
    out = np.empty(len(rewards))
    running = bootstrap
    for t in range(len(rewards) - 1, -1, -1):
        running = rewards[t] + gamma * running
        out[t] = running
    return out


def compute_returns_and_advantages(
    batch: ExperienceBatch,
    critic: nn.MlpParams,
    gamma: float,
    bootstrap: float | None = None,
    reward_scale: float = 1.0,
    reward_offset: float = 0.0,
) -> AdvantageSet:
    """n-step returns over the batch window and ``A_t = R_t - V(s_t)``.

    Returns are built from ``reward_scale * (r + reward_offset)``. Without an
    explicit ``bootstrap`` the tail is ``V(s_next)`` of the last tuple, or 0
    when that tuple is terminal.
    """
    if not 0.0 < gamma <= 1.0:
        raise ValueError(f"gamma must lie in (0, 1], got {gamma!r}")
    if bootstrap is None:
        last = batch.tuples[-1]
        bootstrap = 0.0 if last.terminal else float(value(critic, np.asarray(last.s_next)))
    returns = discounted_returns((batch.rewards() + reward_offset) * reward_scale, gamma, bootstrap)
    advantages = returns - value(critic, batch.observations())
    return AdvantageSet(returns, advantages)


def negate_rewards(batch: ExperienceBatch) -> ExperienceBatch:
    return ExperienceBatch(
        tuple(t._replace(a_mu=t.a_nu, a_nu=t.a_mu, r=-t.r) for t in batch.tuples)
    )


@dataclass(frozen=True)
class LossGrads:
    actor: nn.Grads
    critic: nn.Grads
    actor_loss: float
    critic_loss: float


def actor_loss(params: ActorCriticParams, obs: np.ndarray, actions: np.ndarray, advantages, entropy_beta):
    z, _ = nn.forward(params.actor, obs)
    mean, std, _ = _heads(params, z)
    logp = gaussian_log_prob(actions, mean, std)
    return float(np.mean(-logp * advantages - entropy_beta * gaussian_entropy(std)))


def critic_loss(critic: nn.MlpParams, obs: np.ndarray, returns) -> float:
    return float(np.mean((returns - value(critic, obs)) ** 2))


def loss_grads(
    params: ActorCriticParams, batch: ExperienceBatch, advset: AdvantageSet, entropy_beta: float
) -> LossGrads:
    """Batch-averaged gradients of the actor and critic losses.

    actor:  mean_t[-log pi(a_t|s_t) * A_t - beta * H(pi(.|s_t))], A_t held constant
    critic: mean_t[(R_t - V(s_t))**2]
    """
    obs = batch.observations()
    a = batch.actions()
    adv = np.asarray(advset.advantages, dtype=np.float64)
    ret = np.asarray(advset.returns, dtype=np.float64)
    if len(adv) != len(batch) or len(ret) != len(batch):
        raise ValueError("advantage set is not aligned with the batch")
    n = len(batch)

    z, tape = nn.forward(params.actor, obs)
    mean, std, t = _heads(params, z)
    diff = a - mean
    logp = gaussian_log_prob(a, mean, std)
    ent = gaussian_entropy(std)
    a_loss = float(np.mean(-logp * adv - entropy_beta * ent))

    d_mean = -adv * diff / std**2 / n
    d_std = (-adv * (diff**2 / std**3 - 1.0 / std) - entropy_beta / std) / n
    dz = np.empty_like(z)
    dz[:, 0] = d_mean * params.action_scale * (1.0 - t * t)
    dz[:, 1] = d_std * nn.sigmoid(z[:, 1])
    actor_grads = nn.backward(params.actor, tape, dz)

    v, ctape = nn.forward(params.critic, obs)
    resid = ret - v[:, 0]
    c_loss = float(np.mean(resid**2))
    critic_grads = nn.backward(params.critic, ctape, (-2.0 * resid / n)[:, None])

    if not (math.isfinite(a_loss) and math.isfinite(c_loss)):
        raise DivergenceError(f"non-finite loss (actor={a_loss}, critic={c_loss})")
    return LossGrads(actor_grads, critic_grads, a_loss, c_loss)


def with_scale(params: ActorCriticParams, action_scale: float) -> ActorCriticParams:
    return replace(params, action_scale=float(action_scale))
