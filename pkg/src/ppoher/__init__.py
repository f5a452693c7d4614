"""PPO with hindsight goal relabeling on a parameterized predator-prey suite."""
from ppoher.env import EnvConfig, PredatorPreyEnv, PreyPolicy, SpawnPolicy
from ppoher.her import HerConfig, HerStrategy, augment_buffer
from ppoher.kernels import BACKEND
from ppoher.nn import GaussianPolicy, ValueNet
from ppoher.ppo import PpoConfig

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "EnvConfig",
    "GaussianPolicy",
    "HerConfig",
    "HerStrategy",
    "PpoConfig",
    "PredatorPreyEnv",
    "PreyPolicy",
    "SpawnPolicy",
    "ValueNet",
    "augment_buffer",
]
