"""Flow-matching policies for online RL with value-weighted conditional
flow-matching regularization, desk-scale environments, and brute-force
verification oracles."""

__version__ = "0.1.0"

from .config import RunConfig, WeightingConfig
from .envs import EnvSpec, GmmBandit, GmmBanditSpec, Pendulum, PointMass, RemoteEnv, make_env
from .flow import FlowConfig, FlowSample, VelocityField, interpolate_path, sample_action, weighted_cfm_loss
from .nn import AdamConfig, MlpSpec, NumericalError, ParameterBlock, adam_step, backward, forward, init_params
from .replay import ReplayBuffer, Transition
from .trainer import Agent, RunReport, compute_weights, train
from .values import CriticSet, ExpectileConfig, expectile_loss, polyak_update, update_behavior_critics, update_q_pi
from .verify import (GridSpec, SampleSet, distribution_match_score, empirical_w2_sq,
                     gaussian_w2_sq, reweight_oracle, run_suite, w2_bound_rhs)
