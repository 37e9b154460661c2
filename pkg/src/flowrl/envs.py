"""Desk-scale environments behind one stepping interface, plus the client side
of the newline-delimited JSON wire protocol for remote environments.

All environments expose ``spec``, ``reset(rng) -> state`` and
``step(action) -> (next_state, reward, terminal)``. ``terminal`` means a true
episode end; hitting ``max_episode_steps`` is a time-limit truncation handled
by the interaction loop, not a terminal signal.
"""

from __future__ import annotations

import json
import socket
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp


@dataclass(frozen=True)
class EnvSpec:
    state_dim: int
    action_dim: int
    action_low: np.ndarray
    action_high: np.ndarray
    max_episode_steps: int

    def __post_init__(self):
        if self.state_dim < 1 or self.action_dim < 1:
            raise ValueError("dims must be >= 1")
        if self.max_episode_steps < 1:
            raise ValueError("max_episode_steps must be >= 1")
        low = np.asarray(self.action_low, dtype=np.float64)
        high = np.asarray(self.action_high, dtype=np.float64)
        if low.shape != (self.action_dim,) or high.shape != (self.action_dim,):
            raise ValueError("action bounds must match action_dim")
        if np.any(low >= high):
            raise ValueError("action_low must be elementwise < action_high")
        object.__setattr__(self, "action_low", low)
        object.__setattr__(self, "action_high", high)


def _clip_action(spec: EnvSpec, action) -> np.ndarray:
    a = np.asarray(action, dtype=np.float64).reshape(-1)
    if a.shape != (spec.action_dim,):
        raise ValueError(f"action dim {a.shape} != ({spec.action_dim},)")
    if not np.all(np.isfinite(a)):
        raise ValueError("action must be finite")
    return np.clip(a, spec.action_low, spec.action_high)


class Pendulum:
    """Torque-limited pendulum swing-up.

    theta is measured from upright; dynamics use a uniform rod pivoted at one
    end, integrated with semi-implicit Euler:
        theta_dd = (3g / 2l) sin(theta) + (3 / m l^2) * torque
    Reward is -(wrap(theta)^2 + 0.1 omega^2 + 0.001 torque^2); observations
    are (cos theta, sin theta, omega).
    """

    G = 10.0
    M = 1.0
    L = 1.0
    DT = 0.05
    MAX_SPEED = 8.0

    def __init__(self):
        self.spec = EnvSpec(state_dim=3, action_dim=1,
                            action_low=np.array([-2.0]), action_high=np.array([2.0]),
                            max_episode_steps=200)
        self.theta = 0.0
        self.omega = 0.0

    def _obs(self) -> np.ndarray:
        return np.array([np.cos(self.theta), np.sin(self.theta), self.omega])

    def reset(self, rng: np.random.Generator) -> np.ndarray:
        self.theta = rng.uniform(-np.pi, np.pi)
        self.omega = rng.uniform(-1.0, 1.0)
        return self._obs()

    def step(self, action):
        u = float(_clip_action(self.spec, action)[0])
        acc = (3.0 * self.G / (2.0 * self.L)) * np.sin(self.theta) \
            + (3.0 / (self.M * self.L ** 2)) * u
        self.omega = np.clip(self.omega + acc * self.DT, -self.MAX_SPEED, self.MAX_SPEED)
        self.theta = self.theta + self.omega * self.DT
        wrapped = (self.theta + np.pi) % (2.0 * np.pi) - np.pi
        reward = -(wrapped ** 2 + 0.1 * self.omega ** 2 + 0.001 * u ** 2)
        return self._obs(), float(reward), False

    def energy(self) -> float:
        """Mechanical energy of the rod (kinetic + potential, zero at the
        bottom); used by integration-sanity checks."""
        inertia = self.M * self.L ** 2 / 3.0
        kinetic = 0.5 * inertia * self.omega ** 2
        potential = self.M * self.G * (self.L / 2.0) * (1.0 + np.cos(self.theta))
        return float(kinetic + potential)


@dataclass(frozen=True)
class GmmBanditSpec:
    """The 10-mode Gaussian mixture bandit with the analytic value gap used by
    the guided-flow toy scenario."""

    n_components: int = 10
    mode_radius: float = 10.0
    q_gap_center: tuple[float, float] = (0.0, 8.66)
    q_gap_scale: float = 1.0 / 600.0
    q_gap_offset: float = 3.0
    toy_flow_steps: int = 5

    def component_means(self) -> np.ndarray:
        k = np.arange(self.n_components)
        ang = 2.0 * np.pi * k / self.n_components
        return self.mode_radius * np.stack([np.cos(ang), np.sin(ang)], axis=1)

    def log_density(self, points: np.ndarray) -> np.ndarray:
        """Log density of the equal-weight, identity-covariance mixture."""
        pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
        mus = self.component_means()
        d2 = np.sum((pts[:, None, :] - mus[None, :, :]) ** 2, axis=2)
        out = logsumexp(-0.5 * d2, axis=1) - np.log(self.n_components) - np.log(2.0 * np.pi)
        return out if np.asarray(points).ndim > 1 else float(out[0])

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        comp = rng.integers(0, self.n_components, size=n)
        return self.component_means()[comp] + rng.standard_normal((n, 2))

    def toy_q_gap(self, points: np.ndarray) -> np.ndarray:
        """Analytic Q-gap d(a) = offset - scale * ||a - center||^2; oriented so
        it peaks at the target region near (0, 8.66)."""
        pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
        d2 = np.sum((pts - np.asarray(self.q_gap_center)) ** 2, axis=1)
        out = self.q_gap_offset - self.q_gap_scale * d2
        return out if np.asarray(points).ndim > 1 else float(out[0])


class GmmBandit:
    """Stateless one-step bandit; reward is the mixture log-density at the
    chosen 2D action."""

    def __init__(self, gmm: GmmBanditSpec | None = None):
        self.gmm = gmm or GmmBanditSpec()
        self.spec = EnvSpec(state_dim=1, action_dim=2,
                            action_low=np.array([-14.0, -14.0]),
                            action_high=np.array([14.0, 14.0]),
                            max_episode_steps=1)

    def reset(self, rng: np.random.Generator) -> np.ndarray:
        return np.zeros(1)

    def step(self, action):
        a = _clip_action(self.spec, action)
        return np.zeros(1), float(self.gmm.log_density(a)), True

    def best_action_value(self) -> float:
        """Brute-force best achievable reward (max log-density over a fine grid
        refined around the mode centers)."""
        cand = [self.gmm.component_means()]
        for mu in self.gmm.component_means():
            g = np.linspace(-0.5, 0.5, 21)
            gx, gy = np.meshgrid(g, g)
            cand.append(mu + np.stack([gx.ravel(), gy.ravel()], axis=1))
        pts = np.concatenate(cand, axis=0)
        return float(np.max(self.gmm.log_density(pts)))


class PointMass:
    """2D double integrator with two equal-height reward Gaussians at (+-5, 0).

    State (x, y, vx, vy); action is acceleration in [-1, 1]^2; the reward
    field is symmetric under x -> -x, so both goals are equally good.
    """

    DT = 0.1
    GOALS = np.array([[5.0, 0.0], [-5.0, 0.0]])
    GOAL_SIGMA = 2.0  # wide enough that the reward field has gradient at the origin

    def __init__(self):
        self.spec = EnvSpec(state_dim=4, action_dim=2,
                            action_low=np.array([-1.0, -1.0]),
                            action_high=np.array([1.0, 1.0]),
                            max_episode_steps=100)
        self.pos = np.zeros(2)
        self.vel = np.zeros(2)

    def reset(self, rng: np.random.Generator) -> np.ndarray:
        self.pos = np.zeros(2)
        self.vel = np.zeros(2)
        return np.concatenate([self.pos, self.vel])

    def reward_at(self, pos: np.ndarray) -> float:
        d2 = np.sum((pos - self.GOALS) ** 2, axis=1)
        return float(np.sum(np.exp(-0.5 * d2 / self.GOAL_SIGMA ** 2)))

    def step(self, action):
        a = _clip_action(self.spec, action)
        self.vel = self.vel + a * self.DT
        self.pos = self.pos + self.vel * self.DT
        return np.concatenate([self.pos, self.vel]), self.reward_at(self.pos), False


class ProtocolError(RuntimeError):
    """The remote environment violated the wire protocol."""


class RemoteEnv:
    """Client side of the JSON-lines environment protocol.

    Messages (one JSON object per line): {"cmd":"spec"}, {"cmd":"reset",
    "seed":int}, {"cmd":"step","action":[...]}, {"cmd":"close"}.
    """

    def __init__(self, host: str, port: int, max_episode_steps: int = 1000,
                 timeout: float = 30.0):
        self._sock = socket.create_connection((host, port), timeout=timeout)
        self._file = self._sock.makefile("rwb")
        info = self._request({"cmd": "spec"})
        self.spec = EnvSpec(state_dim=int(info["state_dim"]),
                            action_dim=int(info["action_dim"]),
                            action_low=np.asarray(info["action_low"], dtype=np.float64),
                            action_high=np.asarray(info["action_high"], dtype=np.float64),
                            max_episode_steps=int(info.get("max_episode_steps",
                                                           max_episode_steps)))

    def _request(self, msg: dict) -> dict:
        self._file.write((json.dumps(msg) + "\n").encode())
        self._file.flush()
        line = self._file.readline()
        if not line:
            raise ProtocolError("connection closed by environment host")
        try:
            reply = json.loads(line)
        except json.JSONDecodeError as e:
            raise ProtocolError(f"malformed reply line: {line[:200]!r}") from e
        if "error" in reply:
            raise ProtocolError(f"host error: {reply['error']}")
        return reply

    def reset(self, rng: np.random.Generator) -> np.ndarray:
        seed = int(rng.integers(0, 2 ** 31 - 1))
        reply = self._request({"cmd": "reset", "seed": seed})
        return np.asarray(reply["state"], dtype=np.float64)

    def step(self, action):
        a = _clip_action(self.spec, action)
        reply = self._request({"cmd": "step", "action": a.tolist()})
        return (np.asarray(reply["state"], dtype=np.float64),
                float(reply["reward"]), bool(reply["terminal"]))

    def close(self) -> None:
        try:
            self._file.write((json.dumps({"cmd": "close"}) + "\n").encode())
            self._file.flush()
        except OSError:
            pass
        self._file.close()
        self._sock.close()


def make_env(name: str):
    """Environment registry; ``remote:host:port`` connects over the wire
    protocol."""
    if name.startswith("remote:"):
        _, host, port = name.split(":")
        return RemoteEnv(host, int(port))
    registry = {"pendulum": Pendulum, "gmm-bandit": GmmBandit, "point-mass": PointMass}
    if name not in registry:
        raise ValueError(f"unknown environment {name!r}; known: {sorted(registry)} or remote:host:port")
    return registry[name]()
