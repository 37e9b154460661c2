"""Flow-matching actor: midpoint-Euler action sampling and the (weighted)
conditional flow-matching loss.

The policy is a velocity field v(t, s, a) realized by an MLP over the
concatenated input [t, s, a] with t fed as a raw scalar in [0, 1]. Actions are
produced by integrating da/dt = v(t, s, a) from t=0 to t=1 starting at
standard-normal noise, then clipping to the action bounds. Sampling keeps the
integration knots so gradients can be pushed back through every solver stage
(BPTT) when maximizing Q of sampled actions.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import nn
from .nn import AdamConfig, MlpSpec, NumericalError, ParameterBlock


@dataclass(frozen=True)
class FlowConfig:
    flow_steps: int
    action_low: np.ndarray
    action_high: np.ndarray
    solver: str = "midpoint_euler"

    def __post_init__(self):
        if self.flow_steps < 1:
            raise ValueError("flow_steps must be >= 1")
        if self.solver != "midpoint_euler":
            raise ValueError(f"unknown solver {self.solver!r}")
        low = np.asarray(self.action_low, dtype=np.float64)
        high = np.asarray(self.action_high, dtype=np.float64)
        if low.shape != high.shape or np.any(low >= high):
            raise ValueError("action_low must be elementwise < action_high")
        object.__setattr__(self, "action_low", low)
        object.__setattr__(self, "action_high", high)


@dataclass
class VelocityField:
    """MLP velocity field v(t, s, a) -> action-space velocity."""

    spec: MlpSpec
    params: ParameterBlock
    state_dim: int
    action_dim: int

    @classmethod
    def create(cls, state_dim: int, action_dim: int, hidden_dim: int,
               hidden_layers: int, seed: int, activation: str = "elu") -> "VelocityField":
        spec = MlpSpec(input_dim=1 + state_dim + action_dim, hidden_dim=hidden_dim,
                       hidden_layers=hidden_layers, output_dim=action_dim,
                       activation=activation)
        return cls(spec=spec, params=nn.init_params(spec, seed),
                   state_dim=state_dim, action_dim=action_dim)

    def _stack(self, t, states, actions) -> np.ndarray:
        b = actions.shape[0]
        tcol = np.broadcast_to(np.asarray(t, dtype=np.float64).reshape(-1, 1), (b, 1))
        if self.state_dim == 0:
            return np.concatenate([tcol, actions], axis=1)
        return np.concatenate([tcol, states, actions], axis=1)

    def evaluate(self, t, states, actions) -> np.ndarray:
        """Batched velocity evaluation; t may be a scalar or a (batch,) vector."""
        return nn.forward(self.params, self.spec, self._stack(t, states, actions))

    def backprop(self, t, states, actions, cotangent, param_grads: bool = True) -> np.ndarray:
        """VJP of ``evaluate``; returns the cotangent w.r.t. the action slice."""
        gx = nn.backward(self.params, self.spec, self._stack(t, states, actions),
                         cotangent, param_grads=param_grads)
        return gx[:, 1 + self.state_dim:]

    def evaluate_cached(self, t, states, actions):
        out, cache = nn.forward_cached(self.params, self.spec,
                                       self._stack(t, states, actions))
        return out, cache

    def backprop_cached(self, cache, cotangent) -> np.ndarray:
        gx = nn.backward_from_cache(self.params, self.spec, cache, cotangent)
        return gx[:, 1 + self.state_dim:]


@dataclass
class FlowSample:
    """One batch of flow-integrated actions with the data needed for BPTT."""

    noise: np.ndarray            # a^0, (batch, action_dim)
    knots: list[np.ndarray]      # a^{t_k} at solver knots, length flow_steps + 1
    action: np.ndarray           # final a^1 after clipping
    pre_clip: np.ndarray
    clipped: np.ndarray          # boolean mask of bound-clipped components
    caches: list | None = None   # per-step activation caches when kept for BPTT


def sample_action(vf: VelocityField, state: np.ndarray, noise: np.ndarray,
                  cfg: FlowConfig, keep_caches: bool = False) -> FlowSample:
    """Integrate the velocity field with N midpoint-Euler steps.

    Per step of width h: a <- a + h * v(t + h/2, s, a + (h/2) * v(t, s, a)).
    Accepts a single (state, noise) pair or batched (batch, dim) arrays.
    With ``keep_caches`` the per-stage activations are retained so
    ``backprop_action`` can skip recomputing them.
    """
    state = np.asarray(state, dtype=np.float64)
    noise = np.asarray(noise, dtype=np.float64)
    squeeze = noise.ndim == 1
    if squeeze:
        state = state[None, :] if state.ndim == 1 else state
        noise = noise[None, :]
    if noise.shape[1] != vf.action_dim:
        raise ValueError(f"noise dim {noise.shape[1]} != action dim {vf.action_dim}")

    n = cfg.flow_steps
    h = 1.0 / n
    a = noise
    knots = [a]
    caches = [] if keep_caches else None
    for k in range(n):
        t0 = k * h
        if keep_caches:
            u, cache_u = vf.evaluate_cached(t0, state, a)
            w, cache_w = vf.evaluate_cached(t0 + 0.5 * h, state, a + 0.5 * h * u)
            caches.append((cache_u, cache_w))
        else:
            u = vf.evaluate(t0, state, a)
            w = vf.evaluate(t0 + 0.5 * h, state, a + 0.5 * h * u)
        if not np.all(np.isfinite(w)):
            raise NumericalError(f"non-finite velocity at flow step {k}")
        a = a + h * w
        knots.append(a)
    pre_clip = a
    action = np.clip(a, cfg.action_low, cfg.action_high)
    clipped = action != pre_clip
    if squeeze:
        return FlowSample(noise=noise[0], knots=[k[0] for k in knots],
                          action=action[0], pre_clip=pre_clip[0], clipped=clipped[0])
    return FlowSample(noise=noise, knots=knots, action=action,
                      pre_clip=pre_clip, clipped=clipped, caches=caches)


def backprop_action(vf: VelocityField, state: np.ndarray, sample: FlowSample,
                    action_cotangent: np.ndarray, cfg: FlowConfig) -> np.ndarray:
    """BPTT through the midpoint-Euler integration.

    Accumulates d(loss)/d(params) into the velocity field's gradients and
    returns d(loss)/d(noise). The bound clip is treated one-sidedly: saturated
    components pass their gradient only when it points back into the valid
    range, so the integrator is never rewarded for overshooting the bounds.
    """
    state = np.asarray(state, dtype=np.float64)
    g = np.asarray(action_cotangent, dtype=np.float64)
    squeeze = g.ndim == 1
    if squeeze:
        state = state[None, :] if state.ndim == 1 else state
        g = g[None, :]
        knots = [k[None, :] for k in sample.knots]
        pre_clip = sample.pre_clip[None, :]
    else:
        knots = sample.knots
        pre_clip = sample.pre_clip
    # descent moves a along -g: for a high-clipped component allow only g > 0
    # (pushes back down), for a low-clipped component only g < 0
    blocked = ((pre_clip > cfg.action_high) & (g < 0)) | \
              ((pre_clip < cfg.action_low) & (g > 0))
    g = np.where(blocked, 0.0, g)
    n = cfg.flow_steps
    h = 1.0 / n
    for k in range(n - 1, -1, -1):
        t0 = k * h
        if sample.caches is not None and not squeeze:
            cache_u, cache_w = sample.caches[k]
            g_m = vf.backprop_cached(cache_w, h * g)
            g_a = vf.backprop_cached(cache_u, 0.5 * h * g_m)
        else:
            a = knots[k]
            # recompute the inner stage for this step
            u = vf.evaluate(t0, state, a)
            m = a + 0.5 * h * u
            g_m = vf.backprop(t0 + 0.5 * h, state, m, h * g)
            g_a = vf.backprop(t0, state, a, 0.5 * h * g_m)
        g = g + g_m + g_a
    return g[0] if squeeze else g


def interpolate_path(a0: np.ndarray, a1: np.ndarray, t: float):
    """Linear interpolant a^t = t*a1 + (1-t)*a0 and its target velocity a1 - a0."""
    a0 = np.asarray(a0, dtype=np.float64)
    a1 = np.asarray(a1, dtype=np.float64)
    if a0.shape != a1.shape:
        raise ValueError("a0 and a1 must have matching shapes")
    if not 0.0 <= t <= 1.0:
        raise ValueError(f"t must lie in [0,1], got {t}")
    return t * a1 + (1.0 - t) * a0, a1 - a0


def weighted_cfm_loss(vf: VelocityField, states: np.ndarray, actions: np.ndarray,
                      weights: np.ndarray, rng: np.random.Generator,
                      grad_scale: float | None = None) -> float:
    """Mean over the batch of w * ||v(t, s, a^t) - (a - a^0)||^2.

    t ~ U(0,1) and a^0 ~ N(0,I) are drawn fresh per element. Weights are
    treated as constants. When ``grad_scale`` is given, ``grad_scale *
    d(loss)/d(params)`` is accumulated into the velocity field's gradients.
    """
    states = np.atleast_2d(np.asarray(states, dtype=np.float64))
    actions = np.atleast_2d(np.asarray(actions, dtype=np.float64))
    weights = np.asarray(weights, dtype=np.float64).reshape(-1)
    if np.any(weights < 0):
        raise ValueError("weights must be non-negative")
    b = actions.shape[0]
    t = rng.uniform(0.0, 1.0, size=b)
    a0 = rng.standard_normal(actions.shape)
    a_t = t[:, None] * actions + (1.0 - t[:, None]) * a0
    target = actions - a0
    pred, cache = vf.evaluate_cached(t, states, a_t)
    resid = pred - target
    loss = float(np.mean(weights * np.sum(resid * resid, axis=1)))
    if grad_scale is not None and np.any(weights > 0):
        cot = (2.0 * grad_scale / b) * weights[:, None] * resid
        nn.backward_from_cache(vf.params, vf.spec, cache, cot)
    return loss
