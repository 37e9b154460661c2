"""Minimal feed-forward networks with hand-written reverse-mode gradients.

Everything downstream (velocity fields, critics, value nets) is built from a
single fully-connected architecture: ``hidden_layers`` hidden layers of width
``hidden_dim`` with a nonlinearity, followed by a linear output layer.
Parameters live in one flat float64 vector so optimizer state, checkpointing,
and finite-difference checks stay trivial.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

ACTIVATIONS = ("mish", "elu")


class NumericalError(RuntimeError):
    """A computation produced non-finite values."""


@dataclass(frozen=True)
class MlpSpec:
    input_dim: int
    hidden_dim: int
    hidden_layers: int
    output_dim: int
    activation: str = "mish"

    def __post_init__(self):
        for name in ("input_dim", "hidden_dim", "hidden_layers", "output_dim"):
            v = getattr(self, name)
            if not isinstance(v, (int, np.integer)) or v < 1:
                raise ValueError(f"{name} must be a positive integer, got {v!r}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"activation must be one of {ACTIVATIONS}, got {self.activation!r}")

    def layer_shapes(self) -> list[tuple[int, int]]:
        dims = [self.input_dim] + [self.hidden_dim] * self.hidden_layers + [self.output_dim]
        return list(zip(dims[:-1], dims[1:]))

    def param_count(self) -> int:
        return sum(fi * fo + fo for fi, fo in self.layer_shapes())


@dataclass(frozen=True)
class AdamConfig:
    learning_rate: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if not (0.0 < self.beta1 < 1.0 and 0.0 < self.beta2 < 1.0):
            raise ValueError("beta1 and beta2 must lie in (0,1)")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")


@dataclass
class ParameterBlock:
    values: np.ndarray
    gradients: np.ndarray
    adam_m: np.ndarray
    adam_v: np.ndarray
    step_count: int = 0

    def __post_init__(self):
        n = self.values.shape[0]
        for name in ("gradients", "adam_m", "adam_v"):
            arr = getattr(self, name)
            if arr.shape != (n,):
                raise ValueError(f"{name} must share length {n} with values")

    def zero_grad(self) -> None:
        self.gradients.fill(0.0)

    def copy(self) -> "ParameterBlock":
        return ParameterBlock(
            values=self.values.copy(),
            gradients=self.gradients.copy(),
            adam_m=self.adam_m.copy(),
            adam_v=self.adam_v.copy(),
            step_count=self.step_count,
        )


def init_params(spec: MlpSpec, seed: int) -> ParameterBlock:
    """Seeded uniform fan-in initialization.

    Each weight and bias of a layer with fan-in ``f`` is drawn from
    U(-1/sqrt(f), 1/sqrt(f)), in layer order, weights before biases.
    """
    rng = np.random.default_rng(seed)
    chunks = []
    for fan_in, fan_out in spec.layer_shapes():
        bound = 1.0 / np.sqrt(fan_in)
        chunks.append(rng.uniform(-bound, bound, size=fan_in * fan_out))
        chunks.append(rng.uniform(-bound, bound, size=fan_out))
    values = np.concatenate(chunks)
    n = values.shape[0]
    assert n == spec.param_count()
    return ParameterBlock(values=values, gradients=np.zeros(n),
                          adam_m=np.zeros(n), adam_v=np.zeros(n))


def _unpack(values: np.ndarray, spec: MlpSpec) -> list[tuple[np.ndarray, np.ndarray]]:
    layers = []
    off = 0
    for fan_in, fan_out in spec.layer_shapes():
        w = values[off:off + fan_in * fan_out].reshape(fan_in, fan_out)
        off += fan_in * fan_out
        b = values[off:off + fan_out]
        off += fan_out
        layers.append((w, b))
    return layers


def _softplus(x):
    # max(x,0) + log1p(exp(-|x|)): overflow-free and cheaper than logaddexp
    return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))


def _act(x: np.ndarray, kind: str) -> np.ndarray:
    if kind == "mish":
        return x * np.tanh(_softplus(x))
    # elu, alpha = 1
    return np.where(x > 0, x, np.expm1(np.minimum(x, 0.0)))


def _act_grad(x: np.ndarray, kind: str) -> np.ndarray:
    if kind == "mish":
        e = np.exp(-np.abs(x))
        t = np.tanh(np.maximum(x, 0.0) + np.log1p(e))
        sig = np.where(x >= 0, 1.0, e) / (1.0 + e)
        return t + x * (1.0 - t * t) * sig
    return np.where(x > 0, 1.0, np.exp(np.minimum(x, 0.0)))


def _forward_cached(params: ParameterBlock, spec: MlpSpec, x: np.ndarray):
    layers = _unpack(params.values, spec)
    h = x
    cache = []
    last = len(layers) - 1
    for i, (w, b) in enumerate(layers):
        z = h @ w + b
        cache.append((h, z))
        h = z if i == last else _act(z, spec.activation)
    return h, cache


def _check_input(spec: MlpSpec, x: np.ndarray) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    squeeze = x.ndim == 1
    if squeeze:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != spec.input_dim:
        raise ValueError(f"input has trailing dim {x.shape[-1]}, expected {spec.input_dim}")
    return x, squeeze


def forward(params: ParameterBlock, spec: MlpSpec, x: np.ndarray) -> np.ndarray:
    """Pure forward pass; accepts a single vector or a (batch, input_dim) matrix."""
    x, squeeze = _check_input(spec, x)
    y, _ = _forward_cached(params, spec, x)
    return y[0] if squeeze else y


def forward_cached(params: ParameterBlock, spec: MlpSpec, x: np.ndarray):
    """Batched forward pass that also returns the activation cache for
    ``backward_from_cache`` (hot-path variant that skips recomputation)."""
    x = np.asarray(x, dtype=np.float64)
    return _forward_cached(params, spec, x)


def backward_from_cache(params: ParameterBlock, spec: MlpSpec, cache,
                        output_cotangent: np.ndarray, param_grads: bool = True) -> np.ndarray:
    """Reverse pass reusing a cache from ``forward_cached``."""
    g = output_cotangent
    layers = _unpack(params.values, spec)
    grads = _unpack(params.gradients, spec) if param_grads else None
    last = len(layers) - 1
    for i in range(last, -1, -1):
        h_in, z = cache[i]
        gz = g if i == last else g * _act_grad(z, spec.activation)
        if param_grads:
            gw, gb = grads[i]
            gw += h_in.T @ gz
            gb += gz.sum(axis=0)
        g = gz @ layers[i][0].T
    return g


def backward(params: ParameterBlock, spec: MlpSpec, x: np.ndarray,
             output_cotangent: np.ndarray, param_grads: bool = True) -> np.ndarray:
    """Reverse pass: accumulates d(loss)/d(params) into ``params.gradients``
    and returns d(loss)/d(input).

    Recomputes the forward pass internally. With ``param_grads=False`` only the
    input cotangent is produced (used when a frozen critic sits between the
    loss and the quantity being optimized).
    """
    x, squeeze = _check_input(spec, x)
    g = np.asarray(output_cotangent, dtype=np.float64)
    if squeeze:
        g = g[None, :]
    if g.shape != (x.shape[0], spec.output_dim):
        raise ValueError(f"cotangent shape {g.shape} does not match output ({x.shape[0]}, {spec.output_dim})")

    _, cache = _forward_cached(params, spec, x)
    g = backward_from_cache(params, spec, cache, g, param_grads=param_grads)
    return g[0] if squeeze else g


def adam_step(params: ParameterBlock, cfg: AdamConfig) -> None:
    """One Adam step with bias correction; zeroes gradients afterward."""
    params.step_count += 1
    t = params.step_count
    g = params.gradients
    params.adam_m *= cfg.beta1
    params.adam_m += (1.0 - cfg.beta1) * g
    params.adam_v *= cfg.beta2
    params.adam_v += (1.0 - cfg.beta2) * g * g
    m_hat = params.adam_m / (1.0 - cfg.beta1 ** t)
    v_hat = params.adam_v / (1.0 - cfg.beta2 ** t)
    params.values -= cfg.learning_rate * m_hat / (np.sqrt(v_hat) + cfg.epsilon)
    params.zero_grad()
