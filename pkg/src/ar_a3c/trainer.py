"""Asynchronous (adversary-robust) actor-critic training.

``n`` worker threads each own an environment and roll out batches with local
copies of the protagonist and adversary. After every batch a worker pushes its
gradients to the :class:`GlobalStore` and pulls the fresh global weights.

The store keeps its networks as immutable objects and replaces them under a
per-network lock, so a snapshot read is a reference copy and can never observe
a half-applied update.
"""

from __future__ import annotations

import dataclasses
import logging
import threading
import time
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Optional

import numpy as np

from ar_a3c import agent as ac
from ar_a3c import nn
from ar_a3c.dynamics import PendulumEnv, PendulumParams
from ar_a3c.errors import ConfigError, DivergenceError

log = logging.getLogger(__name__)

ALGOS = ("a3c", "ar_a3c")
NETWORKS = ("protagonist.actor", "protagonist.critic", "adversary.actor", "adversary.critic")


@dataclass(frozen=True)
class TrainConfig:
    algo: str = "ar_a3c"
    workers: int = 2
    episodes: int = 1500
    batch_size: int = 10
    gamma: float = 0.9
    entropy_beta: float = 0.01
    actor_lr: float = 3e-4
    critic_lr: float = 1e-3
    # a slower adversary lets the protagonist learn the swing-up before the attack sharpens
    adversary_actor_lr: float = 3e-5
    rms_decay: float = 0.9
    rms_epsilon: float = 1e-10
    reward_scale: float = 0.125
    reward_offset: float = 8.0
    difficulty: float = 0.5
    actor_hidden: int = 200
    critic_hidden: int = 100
    seed: int = 0
    eval_every: int = 0
    eval_episodes: int = 5
    env: PendulumParams = field(default_factory=PendulumParams)

    def __post_init__(self):
        algo = self.algo.replace("-", "_")
        if algo not in ALGOS:
            raise ConfigError(f"algo must be one of {ALGOS}, got {self.algo!r}")
        object.__setattr__(self, "algo", algo)
        for name in ("workers", "episodes", "batch_size", "actor_hidden", "critic_hidden"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)!r}")
        if not 0.0 < self.gamma <= 1.0:
            raise ConfigError(f"gamma must lie in (0, 1], got {self.gamma!r}")
        if not 0.0 <= self.difficulty <= 1.0:
            raise ConfigError(f"difficulty must lie in [0, 1], got {self.difficulty!r}")
        if self.algo == "ar_a3c" and self.difficulty == 0.0:
            raise ConfigError("ar_a3c needs difficulty > 0; use algo=a3c for no adversary")
        for name in ("actor_lr", "critic_lr", "adversary_actor_lr", "reward_scale"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)!r}")
        if self.entropy_beta < 0 or self.eval_every < 0 or self.eval_episodes < 1:
            raise ConfigError("entropy_beta and eval_every must be >= 0, eval_episodes >= 1")

    @property
    def adversarial(self) -> bool:
        return self.algo == "ar_a3c"

    def training_env(self) -> PendulumParams:
        return self.env.with_(difficulty=self.difficulty if self.adversarial else 0.0)

    def adversary_scale(self) -> float:
        scale = self.difficulty * self.env.max_torque
        return scale if scale > 0 else self.env.max_torque

    def replace(self, **changes) -> "TrainConfig":
        return dataclasses.replace(self, **changes)


class CurveRecord(NamedTuple):
    episode: int
    worker: int
    reward: float
    wallclock_s: float


def seed_streams(seed: int, workers: int) -> tuple[np.random.Generator, list[np.random.Generator]]:
    """One generator for initialization and one independent stream per worker."""
    root = np.random.SeedSequence(seed)
    init, eval_seq = root.spawn(2)
    worker_seqs = [np.random.SeedSequence([seed, 1, w]) for w in range(workers)]
    return np.random.default_rng(init), [np.random.default_rng(s) for s in worker_seqs]


def eval_rng(seed: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, 2]))


class GlobalStore:
    """Shared networks, their RMSProp caches and the global episode bookkeeping."""

    def __init__(
        self,
        protagonist: ac.ActorCriticParams,
        adversary: ac.ActorCriticParams,
        optimizers: dict,
        episode_count: int = 0,
        curve: Optional[list] = None,
    ):
        self._nets = {
            "protagonist.actor": protagonist.actor,
            "protagonist.critic": protagonist.critic,
            "adversary.actor": adversary.actor,
            "adversary.critic": adversary.critic,
        }
        self._scales = {"protagonist": protagonist.action_scale, "adversary": adversary.action_scale}
        missing = set(NETWORKS) - set(optimizers)
        if missing:
            raise ValueError(f"missing optimizer state for {sorted(missing)}")
        self._opt = dict(optimizers)
        self._locks = {name: threading.Lock() for name in NETWORKS}
        self._counter_lock = threading.Lock()
        self.episode_count = episode_count
        self._claimed = episode_count
        self._limit = episode_count
        self.curve: list[CurveRecord] = list(curve or [])
        self.reward_pairs: list[tuple[float, float]] = []
        self.eval_log: list[tuple[int, float]] = []
        self.updates = {"protagonist": 0, "adversary": 0}

    @classmethod
    def initialize(cls, config: TrainConfig, rng) -> "GlobalStore":
        prot = ac.init_actor_critic(rng, config.env.max_torque, config.actor_hidden, config.critic_hidden)
        adv = ac.init_actor_critic(rng, config.adversary_scale(), config.actor_hidden, config.critic_hidden)
        return cls(prot, adv, fresh_optimizers(config, prot, adv))

    def agent(self, role: str) -> ac.ActorCriticParams:
        return ac.ActorCriticParams(self._nets[f"{role}.actor"], self._nets[f"{role}.critic"], self._scales[role])

    @property
    def protagonist(self) -> ac.ActorCriticParams:
        return self.agent("protagonist")

    @property
    def adversary(self) -> ac.ActorCriticParams:
        return self.agent("adversary")

    def optimizer(self, name: str) -> nn.RmsPropState:
        return self._opt[name]

    def snapshot(self) -> tuple[ac.ActorCriticParams, ac.ActorCriticParams]:
        return self.protagonist, self.adversary

    def apply(self, role: str, grads: ac.LossGrads) -> None:
        for part, g in (("actor", grads.actor), ("critic", grads.critic)):
            name = f"{role}.{part}"
            with self._locks[name]:
                self._nets[name], self._opt[name] = nn.rmsprop_apply(self._nets[name], g, self._opt[name])
        self.updates[role] += 1

    def set_budget(self, episodes: int) -> None:
        with self._counter_lock:
            self._claimed = self.episode_count
            self._limit = self.episode_count + episodes

    def claim_episode(self) -> bool:
        with self._counter_lock:
            if self._claimed >= self._limit:
                return False
            self._claimed += 1
            return True

    def finish_episode(self, worker: int, reward: float, wallclock_s: float) -> int:
        with self._counter_lock:
            self.episode_count += 1
            self.curve.append(CurveRecord(self.episode_count, worker, reward, wallclock_s))
            return self.episode_count


def fresh_optimizers(config: TrainConfig, prot: ac.ActorCriticParams, adv: ac.ActorCriticParams) -> dict:
    opts = {}
    actor_lrs = {"protagonist": config.actor_lr, "adversary": config.adversary_actor_lr}
    for role, params in (("protagonist", prot), ("adversary", adv)):
        opts[f"{role}.actor"] = nn.RmsPropState.for_params(
            params.actor, actor_lrs[role], config.rms_decay, config.rms_epsilon
        )
        opts[f"{role}.critic"] = nn.RmsPropState.for_params(
            params.critic, config.critic_lr, config.rms_decay, config.rms_epsilon
        )
    return opts


def rollout(
    env: PendulumEnv,
    protagonist: ac.ActorCriticParams,
    adversary: Optional[ac.ActorCriticParams],
    batch_size: int,
    rng,
) -> ac.ExperienceBatch:
    """Collect up to ``batch_size`` tuples, stopping early at the end of the episode.

    With ``adversary=None`` the adversary channel is held at zero (plain A3C).
    The time limit truncates the episode, so the last tuple of an episode is not
    marked terminal and its return is bootstrapped from the critic.
    """
    if env.needs_reset:
        env.reset(rng)
    obs = env.observation()
    tuples = []
    for _ in range(batch_size):
        a_mu = ac.act(protagonist, obs, rng).sample
        a_nu = ac.act(adversary, obs, rng).sample if adversary is not None else 0.0
        res = env.step(a_mu, a_nu, rng)
        tuples.append(ac.Transition(obs, a_mu, a_nu, res.reward, res.observation, False))
        obs = res.observation
        if env.done:
            break
    return ac.ExperienceBatch(tuple(tuples))


def _update(store: GlobalStore, role: str, local: ac.ActorCriticParams, batch, config: TrainConfig) -> None:
    # the adversary's view is negated, so its offset is too: both learning signals stay zero-sum
    offset = config.reward_offset if role == "protagonist" else -config.reward_offset
    adv = ac.compute_returns_and_advantages(
        batch, local.critic, config.gamma, reward_scale=config.reward_scale, reward_offset=offset
    )
    store.apply(role, ac.loss_grads(local, batch, adv, config.entropy_beta))


def clean_eval(protagonist: ac.ActorCriticParams, env_params: PendulumParams, episodes: int, rng) -> float:
    env = PendulumEnv(env_params.with_(difficulty=0.0))
    total = 0.0
    for _ in range(episodes):
        obs = env.reset(rng)
        while not env.done:
            mean, _ = ac.policy(protagonist, obs)
            res = env.step(mean)
            total += res.reward
            obs = res.observation
    return total / episodes


def worker_loop(
    worker_id: int,
    config: TrainConfig,
    store: GlobalStore,
    rng,
    clock: Callable[[], float] = time.perf_counter,
    start: float = 0.0,
    audit: bool = False,
    stop: Optional[threading.Event] = None,
    evaluator_rng=None,
) -> None:
    env = PendulumEnv(config.training_env())
    while store.claim_episode():
        if stop is not None and stop.is_set():
            return
        local_p, local_a = store.snapshot()
        env.reset(rng)
        episode_reward = 0.0
        while not env.done:
            batch = rollout(env, local_p, local_a if config.adversarial else None, config.batch_size, rng)
            episode_reward += float(batch.rewards().sum())
            _update(store, "protagonist", local_p, batch, config)
            if config.adversarial:
                adversary_view = ac.negate_rewards(batch)
                _update(store, "adversary", local_a, adversary_view, config)
                if audit:
                    store.reward_pairs.extend(
                        (p.r, q.r) for p, q in zip(batch.tuples, adversary_view.tuples)
                    )
            local_p, local_a = store.snapshot()
        episode = store.finish_episode(worker_id, episode_reward, clock() - start)
        if config.eval_every and episode % config.eval_every == 0:
            score = clean_eval(local_p, config.env, config.eval_episodes, evaluator_rng or rng)
            store.eval_log.append((episode, score))
            log.info("episode %d: clean eval %.1f", episode, score)


def train(
    config: TrainConfig,
    store: Optional[GlobalStore] = None,
    clock: Callable[[], float] = time.perf_counter,
    audit: bool = False,
) -> tuple[GlobalStore, list[CurveRecord]]:
    """Run ``config.episodes`` more episodes, starting fresh or from ``store``.

    With one worker everything runs in the calling thread and is bit-reproducible
    for a fixed seed. Resumed runs derive their worker streams from the seed and
    the episode count, so resuming does not replay the original streams.
    """
    init_rng, worker_rngs = seed_streams(config.seed, config.workers)
    if store is None:
        store = GlobalStore.initialize(config, init_rng)
    elif store.episode_count:
        rng_seed = np.random.SeedSequence([config.seed, 3, store.episode_count])
        worker_rngs = [np.random.default_rng(s) for s in rng_seed.spawn(config.workers)]
    store.set_budget(config.episodes)
    ev_rng = eval_rng(config.seed)
    start = clock()

    if config.workers == 1:
        try:
            worker_loop(0, config, store, worker_rngs[0], clock, start, audit, evaluator_rng=ev_rng)
        except DivergenceError as e:
            raise DivergenceError(f"worker 0: {e}") from e
        return store, store.curve

    stop = threading.Event()
    failures: list[tuple[int, BaseException]] = []

    def run(i: int) -> None:
        try:
            worker_loop(i, config, store, worker_rngs[i], clock, start, audit, stop, evaluator_rng=ev_rng)
        except BaseException as e:  # noqa: BLE001 - re-raised in the caller with context
            failures.append((i, e))
            stop.set()

    threads = [threading.Thread(target=run, args=(i,), name=f"worker-{i}") for i in range(config.workers)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    if failures:
        worker, err = failures[0]
        kind = DivergenceError if isinstance(err, DivergenceError) else RuntimeError
        raise kind(f"worker {worker}: {err}") from err
    return store, store.curve
