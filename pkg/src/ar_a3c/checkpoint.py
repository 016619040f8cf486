"""Config files and checkpoints as JSON documents.

Floats are written with Python's shortest round-trip ``repr``, so a load
reconstructs every 64-bit value exactly and save -> load -> save is
byte-identical. Files are written to a temporary sibling and renamed into place.
"""

from __future__ import annotations

import dataclasses
import datetime as _dt
import json
import os
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Optional

import numpy as np

from ar_a3c import nn
from ar_a3c.agent import ActorCriticParams
from ar_a3c.dynamics import PendulumParams
from ar_a3c.errors import CheckpointError, ConfigError
from ar_a3c.trainer import NETWORKS, GlobalStore, TrainConfig

FORMAT_VERSION = 1

_TRAIN_FIELDS = {f.name: f for f in dataclasses.fields(TrainConfig) if f.name != "env"}
# difficulty lives on TrainConfig; the environment copy is derived from it
_ENV_FIELDS = {f.name: f for f in dataclasses.fields(PendulumParams) if f.name != "difficulty"}
CONFIG_KEYS = tuple(_TRAIN_FIELDS) + tuple(_ENV_FIELDS)


def _coerce(key: str, kind, value):
    kind = kind if isinstance(kind, str) else kind.__name__
    try:
        if kind == "int":
            if isinstance(value, bool) or float(value) != int(float(value)):
                raise ValueError
            return int(float(value))
        if kind == "float":
            if isinstance(value, bool):
                raise ValueError
            return float(value)
        if kind == "str":
            if not isinstance(value, str):
                raise ValueError
            return value
    except (TypeError, ValueError):
        raise ConfigError(f"config key {key!r}: expected {kind}, got {value!r}") from None
    raise ConfigError(f"config key {key!r}: unsupported type {kind}")


def config_to_dict(config: TrainConfig) -> dict:
    out = {name: getattr(config, name) for name in _TRAIN_FIELDS}
    out.update({name: getattr(config.env, name) for name in _ENV_FIELDS})
    return out


def config_from_dict(data: dict, base: Optional[TrainConfig] = None) -> TrainConfig:
    """Build a config from a flat mapping; unknown keys are rejected by name."""
    base = base or TrainConfig()
    unknown = [k for k in data if k not in CONFIG_KEYS]
    if unknown:
        raise ConfigError(f"unknown config key {unknown[0]!r} (valid keys: {', '.join(CONFIG_KEYS)})")
    train_kw = {k: _coerce(k, _TRAIN_FIELDS[k].type, v) for k, v in data.items() if k in _TRAIN_FIELDS}
    env_kw = {k: _coerce(k, _ENV_FIELDS[k].type, v) for k, v in data.items() if k in _ENV_FIELDS}
    env = dataclasses.replace(base.env, **env_kw)
    return dataclasses.replace(base, env=env, **train_kw)


def load_config(path) -> TrainConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError:
        raise
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: invalid JSON at line {e.lineno} column {e.colno}: {e.msg}") from None
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: config must be a JSON object")
    return config_from_dict(data)


def atomic_write(path, data: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def timestamp() -> str:
    """UTC timestamp, frozen to ``SOURCE_DATE_EPOCH`` when that variable is set."""
    epoch = os.environ.get("SOURCE_DATE_EPOCH")
    when = (
        _dt.datetime.fromtimestamp(int(epoch), _dt.timezone.utc)
        if epoch
        else _dt.datetime.now(_dt.timezone.utc)
    )
    return when.strftime("%Y-%m-%dT%H:%M:%SZ")


@dataclass(frozen=True)
class Checkpoint:
    config: TrainConfig
    episode_count: int
    protagonist: ActorCriticParams
    adversary: ActorCriticParams
    optimizers: dict
    created: str
    format_version: int = FORMAT_VERSION

    @property
    def seed(self) -> int:
        return self.config.seed

    @classmethod
    def from_store(cls, store: GlobalStore, config: TrainConfig, created: Optional[str] = None) -> "Checkpoint":
        return cls(
            config,
            store.episode_count,
            store.protagonist,
            store.adversary,
            {name: store.optimizer(name) for name in NETWORKS},
            created or timestamp(),
        )

    def to_store(self) -> GlobalStore:
        return GlobalStore(self.protagonist, self.adversary, self.optimizers, self.episode_count)


def _mlp_to_json(params: nn.MlpParams) -> dict:
    return {
        "layers": [
            {"activation": act, "weight": w.tolist(), "bias": b.tolist()}
            for w, b, act in zip(params.weights, params.biases, params.activations)
        ]
    }


def _agent_to_json(params: ActorCriticParams) -> dict:
    return {
        "action_scale": params.action_scale,
        "actor": _mlp_to_json(params.actor),
        "critic": _mlp_to_json(params.critic),
    }


def _opt_to_json(state: nn.RmsPropState) -> dict:
    return {
        "learning_rate": state.learning_rate,
        "decay": state.decay,
        "epsilon": state.epsilon,
        "steps": state.steps,
        "cache": [c.tolist() for c in state.cache],
    }


def dumps(ckpt: Checkpoint) -> str:
    doc = {
        "format_version": ckpt.format_version,
        "created": ckpt.created,
        "seed": ckpt.seed,
        "episode_count": ckpt.episode_count,
        "config": config_to_dict(ckpt.config),
        "protagonist": _agent_to_json(ckpt.protagonist),
        "adversary": _agent_to_json(ckpt.adversary),
        "optimizers": {name: _opt_to_json(ckpt.optimizers[name]) for name in NETWORKS},
    }
    return json.dumps(doc, indent=1, allow_nan=False) + "\n"


def save_checkpoint(path, ckpt: Checkpoint) -> None:
    try:
        text = dumps(ckpt)
    except ValueError as e:
        raise CheckpointError(f"cannot serialize checkpoint: {e}") from None
    atomic_write(path, text)


def _array(value, where: str, ndim: int) -> np.ndarray:
    try:
        arr = np.array(value, dtype=np.float64)
    except (TypeError, ValueError):
        raise CheckpointError(f"{where}: not a numeric array") from None
    if arr.ndim != ndim:
        raise CheckpointError(f"{where}: expected a {ndim}-d array, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise CheckpointError(f"{where}: contains non-finite values")
    return arr


def _mlp_from_json(doc: Any, where: str) -> nn.MlpParams:
    try:
        layers = doc["layers"]
        weights = tuple(_array(l["weight"], f"{where} layer {k} weight", 2) for k, l in enumerate(layers))
        biases = tuple(_array(l["bias"], f"{where} layer {k} bias", 1) for k, l in enumerate(layers))
        acts = tuple(str(l["activation"]) for l in layers)
        return nn.MlpParams(weights, biases, acts)
    except (KeyError, TypeError) as e:
        raise CheckpointError(f"{where}: malformed network ({e!r})") from None
    except ValueError as e:
        if isinstance(e, CheckpointError):
            raise
        raise CheckpointError(f"{where}: {e}") from None


def _agent_from_json(doc: Any, where: str) -> ActorCriticParams:
    try:
        return ActorCriticParams(
            _mlp_from_json(doc["actor"], f"{where} actor"),
            _mlp_from_json(doc["critic"], f"{where} critic"),
            float(doc["action_scale"]),
        )
    except (KeyError, TypeError) as e:
        raise CheckpointError(f"{where}: malformed agent ({e!r})") from None
    except ValueError as e:
        if isinstance(e, CheckpointError):
            raise
        raise CheckpointError(f"{where}: {e}") from None


def _opt_from_json(doc: Any, params: nn.MlpParams, where: str) -> nn.RmsPropState:
    try:
        cache = tuple(_array(c, f"{where} cache {k}", p.ndim) for k, (c, p) in enumerate(zip(doc["cache"], params.arrays())))
        if len(cache) != len(params.arrays()) or any(c.shape != p.shape for c, p in zip(cache, params.arrays())):
            raise CheckpointError(f"{where}: optimizer cache does not match its network")
        return nn.RmsPropState(cache, float(doc["learning_rate"]), float(doc["decay"]), float(doc["epsilon"]), int(doc["steps"]))
    except (KeyError, TypeError) as e:
        raise CheckpointError(f"{where}: malformed optimizer state ({e!r})") from None


def check_shapes(ckpt: Checkpoint, expected: TrainConfig) -> None:
    """Refuse checkpoints whose network widths differ from the run's configuration."""
    for role in ("protagonist", "adversary"):
        params = getattr(ckpt, role)
        for part, got, want in (
            ("actor", params.actor_hidden, expected.actor_hidden),
            ("critic", params.critic_hidden, expected.critic_hidden),
        ):
            if got != want:
                raise CheckpointError(f"{role} {part} hidden {got} ≠ {want}: checkpoint does not match the configured network")


def loads(text: str, expected: Optional[TrainConfig] = None) -> Checkpoint:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        offset = len(text[: e.pos].encode("utf-8"))
        raise CheckpointError(f"corrupt checkpoint: {e.msg} at byte {offset}") from None
    if not isinstance(doc, dict):
        raise CheckpointError("corrupt checkpoint: top level is not an object")
    version = doc.get("format_version")
    if version != FORMAT_VERSION:
        raise CheckpointError(
            f"checkpoint format_version {version!r} is not {FORMAT_VERSION}; refusing to migrate"
        )
    try:
        config = config_from_dict(doc["config"])
        prot = _agent_from_json(doc["protagonist"], "protagonist")
        adv = _agent_from_json(doc["adversary"], "adversary")
        nets = {"protagonist.actor": prot.actor, "protagonist.critic": prot.critic, "adversary.actor": adv.actor, "adversary.critic": adv.critic}
        opts = {name: _opt_from_json(doc["optimizers"][name], nets[name], f"optimizer {name}") for name in NETWORKS}
        ckpt = Checkpoint(config, int(doc["episode_count"]), prot, adv, opts, str(doc["created"]), version)
    except KeyError as e:
        raise CheckpointError(f"checkpoint is missing field {e}") from None
    except ConfigError as e:
        raise CheckpointError(f"checkpoint config is invalid: {e}") from None
    if int(doc.get("seed", config.seed)) != config.seed:
        raise CheckpointError("checkpoint seed disagrees with its config")
    check_shapes(ckpt, config)
    if expected is not None:
        check_shapes(ckpt, expected)
    return ckpt


def load_checkpoint(path, expected: Optional[TrainConfig] = None) -> Checkpoint:
    raw = Path(path).read_bytes()
    try:
        text = raw.decode("utf-8")
    except UnicodeDecodeError as e:
        raise CheckpointError(f"corrupt checkpoint: invalid UTF-8 at byte {e.start}") from None
    return loads(text, expected)
