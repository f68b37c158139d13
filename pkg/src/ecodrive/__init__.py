"""Eco-driving powertrain control: a deterministic longitudinal vehicle
simulator with a residual-on-source and from-scratch reinforcement-learning
training stack for torque and gear-shift policies."""

__version__ = "0.1.0"

from .config import RunConfig, load_config, save_config
from .harness import Metrics, Simulation, Trainer, evaluate, run_episode, train

__all__ = ["RunConfig", "load_config", "save_config", "Metrics", "Simulation",
           "Trainer", "evaluate", "run_episode", "train", "__version__"]
