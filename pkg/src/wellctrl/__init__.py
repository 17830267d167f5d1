"""Robust optimal well-control toolkit.

Finite-volume tracer-flow simulation on uncertain permeability fields,
cluster-based scenario selection, policy-gradient reinforcement learning
(A2C/PPO) on well observations, and a differential-evolution baseline.
"""

from .grid import Grid, WellSet, build_grid, case1_wells, case2_wells
from .permfields import (ChannelParams, ConditionalGaussianSampler,
                         GaussianFieldParams, PermField, channel_field,
                         exp_kernel_cov, sample_channel,
                         sample_conditional_gaussian)
from .flow import FlowSimulator, simulate_control_step
from .env import (EpisodeConfig, WellControlEnv, base_policy, episode_return,
                  mean_return_over, weights_to_rates)
from .cluster import (ClassicalMDS, KMeans, ScenarioSet, build_scenario_set,
                      connectivity_distance_matrix, select_vectors)
from .nn import ActorCritic, Adam, gaussian_logprob_entropy
from .rl import TrainConfig, collect_rollouts, compute_gae, train
from .de import DeConfig, de_benchmark, de_optimize

__version__ = "0.1.0"
