"""Simulator for hypernetwork-personalized, resource-adaptive federated learning."""
from .config import Config, load_config
from .experiment import run_experiment
from .nn import ModelSpec

__all__ = ["Config", "ModelSpec", "load_config", "run_experiment"]
__version__ = "0.1.0"
