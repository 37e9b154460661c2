"""Critic learning: TD updates for the current policy's Q and expectile
regression for the behavior-optimal policy's Q and V."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nn
from .nn import AdamConfig, MlpSpec, NumericalError, ParameterBlock


@dataclass(frozen=True)
class ExpectileConfig:
    tau: float = 0.9

    def __post_init__(self):
        if not 0.0 < self.tau < 1.0:
            raise ValueError(f"tau must lie in (0,1), got {self.tau}")


def expectile_loss(residual, tau: float):
    """Asymmetric squared loss |tau - 1(x < 0)| * x^2."""
    if not 0.0 < tau < 1.0:
        raise ValueError(f"tau must lie in (0,1), got {tau}")
    x = np.asarray(residual, dtype=np.float64)
    w = np.where(x < 0, 1.0 - tau, tau)
    out = w * x * x
    return float(out) if out.ndim == 0 else out


@dataclass
class CriticSet:
    """Twin Q-critics with targets for the current policy, plus the
    behavior-optimal Q and V estimated by expectile regression."""

    q_spec: MlpSpec
    v_spec: MlpSpec
    q_pi_1: ParameterBlock
    q_pi_2: ParameterBlock
    q_pi_targ_1: ParameterBlock
    q_pi_targ_2: ParameterBlock
    q_beta_star: ParameterBlock
    v_beta_star: ParameterBlock
    polyak_rate: float = 0.005
    twin_min: bool = True

    def __post_init__(self):
        if not 0.0 < self.polyak_rate <= 1.0:
            raise ValueError(f"polyak_rate must lie in (0,1], got {self.polyak_rate}")

    @classmethod
    def create(cls, state_dim: int, action_dim: int, hidden_dim: int,
               hidden_layers: int, seed: int, polyak_rate: float = 0.005,
               twin_min: bool = True, activation: str = "mish") -> "CriticSet":
        q_spec = MlpSpec(input_dim=state_dim + action_dim, hidden_dim=hidden_dim,
                         hidden_layers=hidden_layers, output_dim=1, activation=activation)
        v_spec = MlpSpec(input_dim=state_dim, hidden_dim=hidden_dim,
                         hidden_layers=hidden_layers, output_dim=1, activation=activation)
        q1 = nn.init_params(q_spec, seed)
        q2 = nn.init_params(q_spec, seed + 1)
        return cls(q_spec=q_spec, v_spec=v_spec,
                   q_pi_1=q1, q_pi_2=q2,
                   q_pi_targ_1=q1.copy(), q_pi_targ_2=q2.copy(),
                   q_beta_star=nn.init_params(q_spec, seed + 2),
                   v_beta_star=nn.init_params(v_spec, seed + 3),
                   polyak_rate=polyak_rate, twin_min=twin_min)

    def q_value(self, block: ParameterBlock, states: np.ndarray, actions: np.ndarray) -> np.ndarray:
        x = np.concatenate([np.atleast_2d(states), np.atleast_2d(actions)], axis=1)
        return nn.forward(block, self.q_spec, x)[:, 0]

    def q_pi_min(self, states: np.ndarray, actions: np.ndarray) -> np.ndarray:
        q1 = self.q_value(self.q_pi_1, states, actions)
        if not self.twin_min:
            return q1
        return np.minimum(q1, self.q_value(self.q_pi_2, states, actions))

    def q_pi_targ_min(self, states: np.ndarray, actions: np.ndarray) -> np.ndarray:
        q1 = self.q_value(self.q_pi_targ_1, states, actions)
        if not self.twin_min:
            return q1
        return np.minimum(q1, self.q_value(self.q_pi_targ_2, states, actions))

    def v_value(self, states: np.ndarray) -> np.ndarray:
        return nn.forward(self.v_beta_star, self.v_spec, np.atleast_2d(states))[:, 0]

    def parameter_blocks(self) -> dict[str, ParameterBlock]:
        return {
            "q_pi_1": self.q_pi_1, "q_pi_2": self.q_pi_2,
            "q_pi_targ_1": self.q_pi_targ_1, "q_pi_targ_2": self.q_pi_targ_2,
            "q_beta_star": self.q_beta_star, "v_beta_star": self.v_beta_star,
        }


def _regress(block: ParameterBlock, spec: MlpSpec, x: np.ndarray, target: np.ndarray,
             adam_cfg: AdamConfig) -> float:
    """One squared-error regression step toward a constant target."""
    pred, cache = nn.forward_cached(block, spec, x)
    resid = pred[:, 0] - target
    loss = float(np.mean(resid * resid))
    nn.backward_from_cache(block, spec, cache, (2.0 / resid.shape[0]) * resid[:, None])
    nn.adam_step(block, adam_cfg)
    return loss


def update_q_pi(critics: CriticSet, states, actions, rewards, next_states, terminals,
                next_actions, gamma: float, adam_cfg: AdamConfig) -> float:
    """TD update for both online critics toward the shared min-target
    y = r + gamma * (1 - terminal) * min_i Q_targ_i(s', a'). ``next_actions``
    must come from the current policy (fresh noise); y is a constant."""
    y = rewards + gamma * (1.0 - terminals) * critics.q_pi_targ_min(next_states, next_actions)
    if not np.all(np.isfinite(y)):
        raise NumericalError("non-finite TD target")
    x = np.concatenate([states, actions], axis=1)
    loss1 = _regress(critics.q_pi_1, critics.q_spec, x, y, adam_cfg)
    loss2 = _regress(critics.q_pi_2, critics.q_spec, x, y, adam_cfg)
    return 0.5 * (loss1 + loss2)


def update_behavior_critics(critics: CriticSet, states, actions, rewards,
                            next_states, terminals, gamma: float,
                            expectile_cfg: ExpectileConfig,
                            adam_cfg: AdamConfig) -> tuple[float, float]:
    """Alternating expectile evaluation of the behavior-optimal policy.

    V regresses with the expectile loss against Q(s,a) held constant; Q
    regresses with squared error against r + gamma * (1-terminal) * V(s')
    held constant. One Adam step each.
    """
    tau = expectile_cfg.tau
    q_vals = critics.q_value(critics.q_beta_star, states, actions)

    v_pred, v_cache = nn.forward_cached(critics.v_beta_star, critics.v_spec,
                                        np.atleast_2d(states))
    x_resid = q_vals - v_pred[:, 0]
    w = np.where(x_resid < 0, 1.0 - tau, tau)
    v_loss = float(np.mean(w * x_resid * x_resid))
    if not np.isfinite(v_loss):
        raise NumericalError("non-finite expectile V loss")
    # d/d v_pred of |tau - 1(x<0)| x^2 with x = q - v  ->  -2 w x
    cot = (-2.0 / x_resid.shape[0]) * (w * x_resid)[:, None]
    nn.backward_from_cache(critics.v_beta_star, critics.v_spec, v_cache, cot)
    nn.adam_step(critics.v_beta_star, adam_cfg)

    q_target = rewards + gamma * (1.0 - terminals) * critics.v_value(next_states)
    if not np.all(np.isfinite(q_target)):
        raise NumericalError("non-finite behavior Q target")
    xq = np.concatenate([states, actions], axis=1)
    q_loss = _regress(critics.q_beta_star, critics.q_spec, xq, q_target, adam_cfg)
    return v_loss, q_loss


def polyak_update(critics: CriticSet) -> None:
    """targ <- (1 - rho) * targ + rho * online for both target critics."""
    rho = critics.polyak_rate
    for online, targ in ((critics.q_pi_1, critics.q_pi_targ_1),
                        (critics.q_pi_2, critics.q_pi_targ_2)):
        targ.values *= 1.0 - rho
        targ.values += rho * online.values
