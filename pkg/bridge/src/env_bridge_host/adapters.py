"""Environment adapters: map a simulator's reset/step/spec onto the flat
vector interface the wire protocol speaks.

Observations are flattened to a single float vector in a documented, stable
order: arrays are raveled in C order; dict observations are concatenated by
sorted key; tuples in positional order. The same rule is applied recursively,
so the layout never depends on insertion order or episode state.
"""

from __future__ import annotations

import numpy as np


def flatten_observation(obs) -> np.ndarray:
    """Flatten nested dict/tuple/array observations into one float64 vector."""
    if isinstance(obs, dict):
        parts = [flatten_observation(obs[k]) for k in sorted(obs)]
        return np.concatenate(parts) if parts else np.zeros(0)
    if isinstance(obs, (tuple, list)):
        parts = [flatten_observation(o) for o in obs]
        return np.concatenate(parts) if parts else np.zeros(0)
    return np.asarray(obs, dtype=np.float64).ravel(order="C")


class DummyLoopbackEnv:
    """Deterministic, seedable test environment for protocol round-trips.

    A damped 2D point with dict observations (exercising the flattening
    rule): x' = 0.9 x + 0.1 a with a in [-1, 1]^2, reward -||x'||^2.
    """

    seedable = True
    max_episode_steps = 50

    def __init__(self):
        self.x = np.zeros(2)
        self.steps = 0

    @property
    def action_low(self) -> np.ndarray:
        return np.array([-1.0, -1.0])

    @property
    def action_high(self) -> np.ndarray:
        return np.array([1.0, 1.0])

    def _obs(self) -> dict:
        return {"pos": self.x.copy(), "step_frac": self.steps / self.max_episode_steps}

    def reset(self, seed: int | None = None):
        rng = np.random.default_rng(seed)
        self.x = rng.uniform(-1.0, 1.0, 2)
        self.steps = 0
        return self._obs()

    def step(self, action: np.ndarray):
        self.x = 0.9 * self.x + 0.1 * np.asarray(action, dtype=np.float64)
        self.steps += 1
        reward = -float(np.sum(self.x ** 2))
        terminal = False
        return self._obs(), reward, terminal


class HostedEnv:
    """A wrapped simulator plus the immutable spec reported per connection."""

    def __init__(self, env_id: str, env):
        self.env_id = env_id
        self.env = env
        probe = flatten_observation(env.reset(seed=0))
        self.state_dim = int(probe.shape[0])
        self.action_low = np.asarray(env.action_low, dtype=np.float64)
        self.action_high = np.asarray(env.action_high, dtype=np.float64)
        self.action_dim = int(self.action_low.shape[0])
        self.max_episode_steps = int(getattr(env, "max_episode_steps", 1000))
        self.seedable = bool(getattr(env, "seedable", False))

    def spec_message(self) -> dict:
        return {"state_dim": self.state_dim, "action_dim": self.action_dim,
                "action_low": self.action_low.tolist(),
                "action_high": self.action_high.tolist(),
                "max_episode_steps": self.max_episode_steps,
                "seedable": self.seedable}

    def reset(self, seed: int | None) -> np.ndarray:
        if self.seedable:
            obs = self.env.reset(seed=seed)
        else:
            obs = self.env.reset()
        return flatten_observation(obs)

    def step(self, action) -> tuple[np.ndarray, float, bool, bool]:
        """Returns (state, reward, terminal, clipped)."""
        a = np.asarray(action, dtype=np.float64).reshape(-1)
        if a.shape != (self.action_dim,):
            raise ValueError(f"action dim {a.shape[0]} != {self.action_dim}")
        clipped_a = np.clip(a, self.action_low, self.action_high)
        was_clipped = bool(np.any(clipped_a != a))
        obs, reward, terminal = self.env.step(clipped_a)
        return flatten_observation(obs), float(reward), bool(terminal), was_clipped


REGISTRY = {"dummy": DummyLoopbackEnv}


def resolve(env_id: str) -> HostedEnv:
    """Look up env_id in the host registry and wrap it for serving."""
    if env_id not in REGISTRY:
        raise KeyError(f"unknown env_id {env_id!r}; known: {sorted(REGISTRY)}")
    return HostedEnv(env_id, REGISTRY[env_id]())
