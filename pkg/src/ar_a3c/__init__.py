"""Adversary-robust asynchronous actor-critic on a pendulum swing-up task."""

from ar_a3c.errors import CheckpointError, ConfigError, DivergenceError

__version__ = "0.1.0"

__all__ = ["CheckpointError", "ConfigError", "DivergenceError", "__version__"]
