"""The full training loop: environment interaction, critic updates, the
value-difference weighting function, and the Lagrangian actor objective.

Checkpoint format (little-endian): magic ``FRLC``, u32 version, u64 header
length, UTF-8 JSON header (config snapshot, env metadata, rng states, ordered
block descriptors), then per block the ``values``, ``adam_m`` and ``adam_v``
arrays as raw ``<f8``. Gradients are zero at checkpoint time and not stored.
The replay buffer is snapshotted beside the checkpoint in the replay module's
own binary layout.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import nn, values
from .config import RunConfig, WeightingConfig, dump_config
from .envs import ProtocolError, make_env
from .flow import FlowConfig, VelocityField, backprop_action, sample_action, weighted_cfm_loss
from .nn import AdamConfig, NumericalError
from .replay import ReplayBuffer, Transition
from .values import CriticSet, ExpectileConfig

_CKPT_MAGIC = b"FRLC"
_CKPT_VERSION = 1
# cap on the exponent of the exp-indicator weight; large log-scale value gaps
# (e.g. log-density rewards) otherwise produce weights that drown the Q term
_MAX_EXP_ARG = 5.0

METRICS_HEADER = ("step,episode_return,td_loss,v_loss,q_beta_loss,"
                  "actor_q_term,constraint_term,mean_weight,frac_positive_weight")


def compute_weights(q_beta_star_vals: np.ndarray, q_pi_vals: np.ndarray,
                    cfg: WeightingConfig) -> np.ndarray:
    """Non-negative CFM weights from the value gap d = Q_beta* - Q_pi.

    With mean normalization the batch mean of d is subtracted first. The
    indicator zeroes non-positive gaps; surviving gaps are mapped through
    exp(d) (training) or d itself (toy scenario). Outputs carry no gradients.
    """
    d = np.asarray(q_beta_star_vals, dtype=np.float64) - np.asarray(q_pi_vals, dtype=np.float64)
    if d.shape != np.asarray(q_pi_vals).shape:
        raise ValueError("value vectors must have equal length")
    if cfg.mean_normalize:
        d = d - d.mean()
    positive = d > 0
    if cfg.kind == "exp_indicator":
        w = np.where(positive, np.exp(np.minimum(d, _MAX_EXP_ARG)), 0.0)
    else:
        w = np.where(positive, d, 0.0)
    return w


@dataclass
class Agent:
    """Actor, critics, and the configs needed to act and update."""

    vf: VelocityField
    critics: CriticSet
    flow_cfg: FlowConfig
    run_cfg: RunConfig
    actor_adam: AdamConfig
    critic_adam: AdamConfig

    @classmethod
    def create(cls, env_spec, cfg: RunConfig) -> "Agent":
        vf = VelocityField.create(env_spec.state_dim, env_spec.action_dim,
                                  cfg.policy_hidden_dim, cfg.policy_hidden_layers,
                                  seed=cfg.seed * 10 + 1, activation="elu")
        critics = CriticSet.create(env_spec.state_dim, env_spec.action_dim,
                                   cfg.value_hidden_dim, cfg.value_hidden_layers,
                                   seed=cfg.seed * 10 + 2, polyak_rate=cfg.polyak_rate,
                                   twin_min=cfg.twin_min, activation="mish")
        flow_cfg = FlowConfig(flow_steps=cfg.flow_steps,
                              action_low=env_spec.action_low,
                              action_high=env_spec.action_high)
        return cls(vf=vf, critics=critics, flow_cfg=flow_cfg, run_cfg=cfg,
                   actor_adam=AdamConfig(learning_rate=cfg.actor_lr),
                   critic_adam=AdamConfig(learning_rate=cfg.critic_lr))

    def act(self, states: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        states = np.atleast_2d(states)
        noise = rng.standard_normal((states.shape[0], self.vf.action_dim))
        return sample_action(self.vf, states, noise, self.flow_cfg).action

    def parameter_blocks(self) -> dict[str, nn.ParameterBlock]:
        blocks = {"actor": self.vf.params}
        blocks.update(self.critics.parameter_blocks())
        return blocks


def actor_update(agent: Agent, states: np.ndarray, actions: np.ndarray,
                 weighting: WeightingConfig, rng: np.random.Generator):
    """One Lagrangian actor step.

    Maximizes mean min-twin Q at freshly sampled flow actions (gradients
    through all integration steps) while penalizing the value-weighted CFM
    loss on replay actions, scaled by the multiplier. Returns the Q term, the
    constraint term, and weight diagnostics.
    """
    vf, critics, cfg = agent.vf, agent.critics, agent.run_cfg
    b = states.shape[0]
    noise = rng.standard_normal((b, vf.action_dim))
    sample = sample_action(vf, states, noise, agent.flow_cfg, keep_caches=True)
    a_new = sample.action

    x1 = np.concatenate([states, a_new], axis=1)
    q1, cache1 = nn.forward_cached(critics.q_pi_1, critics.q_spec, x1)
    q1 = q1[:, 0]
    if critics.twin_min:
        q2, cache2 = nn.forward_cached(critics.q_pi_2, critics.q_spec, x1)
        q2 = q2[:, 0]
        use_first = q1 <= q2
        q_min = np.where(use_first, q1, q2)
    else:
        use_first = np.ones(b, dtype=bool)
        q_min = q1
    q_term = float(np.mean(q_min))

    # d(-mean q_min)/d(action): route each row through whichever critic is min,
    # without touching the critics' own gradients
    cot1 = np.where(use_first, -1.0 / b, 0.0)[:, None]
    gx = nn.backward_from_cache(critics.q_pi_1, critics.q_spec, cache1, cot1,
                                param_grads=False)
    if critics.twin_min:
        cot2 = np.where(use_first, 0.0, -1.0 / b)[:, None]
        gx = gx + nn.backward_from_cache(critics.q_pi_2, critics.q_spec, cache2,
                                         cot2, param_grads=False)
    g_action = gx[:, states.shape[1]:]
    backprop_action(vf, states, sample, g_action, agent.flow_cfg)

    q_beta_vals = critics.q_value(critics.q_beta_star, states, actions)
    weights = compute_weights(q_beta_vals, q_min, weighting)
    # the weighting is only defined up to a proportionality constant; rescale
    # to unit batch mean so the constraint's scale is independent of the value
    # scale and stays comparable to the Q term
    mean_w = float(weights.mean())
    scaled = weights / mean_w if mean_w > 0 else weights
    constraint = weighted_cfm_loss(vf, states, actions, scaled, rng,
                                   grad_scale=cfg.lagrange_lambda)

    loss = -q_term + cfg.lagrange_lambda * constraint
    if not np.isfinite(loss):
        raise NumericalError(
            f"non-finite actor loss (q_term={q_term}, constraint={constraint}, "
            f"mean_weight={weights.mean()})")
    nn.adam_step(vf.params, agent.actor_adam)
    return q_term, constraint, mean_w, float(np.mean(weights > 0))


def gradient_step(agent: Agent, buffer: ReplayBuffer, rng: np.random.Generator):
    """One full update in the algorithm's line order: policy critic, behavior
    critics, target sync, then the actor."""
    cfg = agent.run_cfg
    s, a, r, s2, term = buffer.sample_batch(cfg.batch_size, rng)
    noise = rng.standard_normal((s2.shape[0], agent.vf.action_dim))
    a_next = sample_action(agent.vf, s2, noise, agent.flow_cfg).action
    td_loss = values.update_q_pi(agent.critics, s, a, r, s2, term, a_next,
                                 cfg.gamma, agent.critic_adam)
    v_loss, qb_loss = values.update_behavior_critics(
        agent.critics, s, a, r, s2, term, cfg.gamma,
        ExpectileConfig(tau=cfg.expectile_tau), agent.critic_adam)
    values.polyak_update(agent.critics)
    q_term, constraint, mean_w, frac_pos = actor_update(agent, s, a, cfg.weighting(), rng)
    return {"td_loss": td_loss, "v_loss": v_loss, "q_beta_loss": qb_loss,
            "actor_q_term": q_term, "constraint_term": constraint,
            "mean_weight": mean_w, "frac_positive_weight": frac_pos}


def evaluate_policy(agent: Agent, env, episodes: int, rng: np.random.Generator) -> float:
    returns = []
    for _ in range(episodes):
        state = env.reset(rng)
        total = 0.0
        for _ in range(env.spec.max_episode_steps):
            action = agent.act(state, rng)[0]
            state, reward, terminal = env.step(action)
            total += reward
            if terminal:
                break
        returns.append(total)
    return float(np.mean(returns))


@dataclass
class RunReport:
    steps: int
    episodes: int
    final_eval_return: float
    out_dir: str
    metrics_path: str
    checkpoint_path: str


def _fmt(x: float) -> str:
    return f"{x:.10g}"


def save_checkpoint(path, agent: Agent, rng: np.random.Generator,
                    eval_rng: np.random.Generator, env_name: str, step: int) -> None:
    blocks = agent.parameter_blocks()
    header = {
        "config": {k: v for k, v in vars(agent.run_cfg).items()},
        "env_name": env_name,
        "step": step,
        "state_dim": agent.vf.state_dim,
        "action_dim": agent.vf.action_dim,
        "rng_state": rng.bit_generator.state,
        "eval_rng_state": eval_rng.bit_generator.state,
        "blocks": [{"name": name, "length": int(b.values.shape[0]),
                    "step_count": b.step_count} for name, b in blocks.items()],
    }
    payload = json.dumps(header).encode()
    with open(path, "wb") as f:
        f.write(_CKPT_MAGIC)
        f.write(struct.pack("<IQ", _CKPT_VERSION, len(payload)))
        f.write(payload)
        for b in blocks.values():
            f.write(b.values.astype("<f8").tobytes())
            f.write(b.adam_m.astype("<f8").tobytes())
            f.write(b.adam_v.astype("<f8").tobytes())


def load_checkpoint(path):
    """Returns (agent, rng, eval_rng, header)."""
    with open(path, "rb") as f:
        if f.read(4) != _CKPT_MAGIC:
            raise ValueError("not a flowrl checkpoint")
        version, hlen = struct.unpack("<IQ", f.read(12))
        if version != _CKPT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        header = json.loads(f.read(hlen))
        cfg = RunConfig(**header["config"])
        env = make_env(header["env_name"])
        agent = Agent.create(env.spec, cfg)
        blocks = agent.parameter_blocks()
        for desc in header["blocks"]:
            b = blocks[desc["name"]]
            n = desc["length"]
            if n != b.values.shape[0]:
                raise ValueError(f"block {desc['name']} length mismatch")
            for arr in (b.values, b.adam_m, b.adam_v):
                arr[:] = np.frombuffer(f.read(8 * n), dtype="<f8")
            b.step_count = desc["step_count"]
    rng = np.random.default_rng()
    rng.bit_generator.state = header["rng_state"]
    eval_rng = np.random.default_rng()
    eval_rng.bit_generator.state = header["eval_rng_state"]
    return agent, rng, eval_rng, header


def train(cfg: RunConfig, env_name: str, out_dir, env=None, eval_env=None,
          version: str = "flowrl-0.1.0") -> RunReport:
    """Run the full loop and emit metrics, config snapshot, checkpoint, buffer
    snapshot, and a manifest into ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    env = env if env is not None else make_env(env_name)
    eval_env = eval_env if eval_env is not None else make_env(env_name)
    rng = np.random.default_rng(cfg.seed)
    eval_rng = np.random.default_rng(cfg.seed + 101)

    agent = Agent.create(env.spec, cfg)
    buffer = ReplayBuffer(cfg.buffer_capacity, env.spec.state_dim, env.spec.action_dim)

    (out / "config.txt").write_text(dump_config(cfg))
    metrics_path = out / "metrics.csv"
    ckpt_path = out / "checkpoint.bin"
    buffer_path = out / "buffer.bin"
    metrics_lines = [METRICS_HEADER]

    stats = {"td_loss": np.nan, "v_loss": np.nan, "q_beta_loss": np.nan,
             "actor_q_term": np.nan, "constraint_term": np.nan,
             "mean_weight": np.nan, "frac_positive_weight": np.nan}
    episodes = 0
    last_eval = np.nan
    step = 0
    state = None
    ep_len = 0
    try:
        while step < cfg.total_env_steps:
            if state is None:
                state = env.reset(rng)
                ep_len = 0
            action = agent.act(state, rng)[0]
            next_state, reward, terminal = env.step(action)
            buffer.push(Transition(state, action, reward, next_state, terminal))
            ep_len += 1
            step += 1
            if terminal or ep_len >= env.spec.max_episode_steps:
                state = None
                episodes += 1
            else:
                state = next_state

            if buffer.occupancy >= max(cfg.warmup_transitions, cfg.batch_size):
                for _ in range(cfg.gradient_steps_per_env_step):
                    stats = gradient_step(agent, buffer, rng)

            if step % cfg.eval_interval == 0 or step == cfg.total_env_steps:
                last_eval = evaluate_policy(agent, eval_env, cfg.eval_episodes, eval_rng)
                metrics_lines.append(",".join([str(step), _fmt(last_eval)] +
                                              [_fmt(stats[k]) for k in
                                               ("td_loss", "v_loss", "q_beta_loss",
                                                "actor_q_term", "constraint_term",
                                                "mean_weight", "frac_positive_weight")]))
    except ProtocolError:
        save_checkpoint(ckpt_path, agent, rng, eval_rng, env_name, step)
        buffer.save(buffer_path)
        metrics_path.write_text("\n".join(metrics_lines) + "\n")
        raise

    metrics_path.write_text("\n".join(metrics_lines) + "\n")
    save_checkpoint(ckpt_path, agent, rng, eval_rng, env_name, step)
    buffer.save(buffer_path)
    manifest = {"seed": cfg.seed, "env": env_name, "version": version,
                "steps": step, "episodes": episodes,
                "files": ["config.txt", "metrics.csv", "checkpoint.bin", "buffer.bin"]}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    return RunReport(steps=step, episodes=episodes, final_eval_return=last_eval,
                     out_dir=str(out), metrics_path=str(metrics_path),
                     checkpoint_path=str(ckpt_path))
