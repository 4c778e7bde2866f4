"""Escort-team particle world, line-of-sight threat rewards and dual-critic multi-agent learners."""

from .algo import AlgoVariant, TrainConfig, train
from .env import ScenarioKind, WorldConfig, WorldState
from .harness import ExperimentConfig, count_parameters, evaluate, load_config, run_training
from .replay import ReplayBuffer, Transition
from .threat import LocalBand, ThreatParams, global_reward

__all__ = [
    "AlgoVariant", "TrainConfig", "train", "ScenarioKind", "WorldConfig", "WorldState",
    "ExperimentConfig", "count_parameters", "evaluate", "load_config", "run_training",
    "ReplayBuffer", "Transition", "LocalBand", "ThreatParams", "global_reward",
]

__version__ = "0.1.0"
