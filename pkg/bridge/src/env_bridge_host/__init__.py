"""Environment host speaking the newline-delimited JSON wire protocol."""

from .adapters import (REGISTRY, DummyLoopbackEnv, HostedEnv,
                       flatten_observation, resolve)
from .server import DEFAULT_PORT, serve, serve_connection

__all__ = [
    "REGISTRY", "DummyLoopbackEnv", "HostedEnv", "flatten_observation",
    "resolve", "DEFAULT_PORT", "serve", "serve_connection",
]
