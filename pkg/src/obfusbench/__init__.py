"""Obfuscated-space benchmark toolkit.

Mixed observation/action spaces are embedded into a featureless box by a
trained encoder/decoder pair; agents only ever see the box. The package holds
the space algebra, a small numpy network stack, the embedding trainer, a
crafting gridworld with domain randomization, environment wrappers with frame
metering, k-means action quantization, a behavioural-cloning agent and a
seeded evaluation harness.
"""
from .errors import ObfusbenchError
from .spaces import MixedSpace, SpacePoint
from .dense import DenseNetwork
from .obfuscator import ObfuscationModel, ObfuscationTrainConfig, SpaceObfuscator, train_obfuscation
from .chainworld import ChainWorld, WorldConfig
from .wrappers import BudgetMeter, ObfuscatedEnv
from .quantize import KMeansQuantizer
from .agents import BCPolicy
from .evaluation import EvaluationReport, evaluate, rank

__version__ = "0.1.0"

__all__ = [
    "ObfusbenchError", "MixedSpace", "SpacePoint", "DenseNetwork", "ObfuscationModel",
    "ObfuscationTrainConfig", "SpaceObfuscator", "train_obfuscation", "ChainWorld", "WorldConfig",
    "BudgetMeter", "ObfuscatedEnv", "KMeansQuantizer", "BCPolicy", "EvaluationReport", "evaluate", "rank",
]
