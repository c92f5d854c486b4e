"""Synthetic concept-conditional worlds, a contrastive concept learner and
structure identification tools."""
from .concepts import (AtomicConceptSet, ConceptSpec, EnvironmentSystem, build_env_matrices,
                       check_diversity_one, check_diversity_two, generate_random_system)
from .evaluation import EvalReport, evaluate, mcc, r_squared
from .learner import ConceptLearner, TrainConfig, train
from .sampler import generate_dataset, rejection_sample
from .structure import identify, oracle_forms
from .world import World

__version__ = "0.1.0"

__all__ = [
    "AtomicConceptSet", "ConceptSpec", "EnvironmentSystem", "build_env_matrices",
    "check_diversity_one", "check_diversity_two", "generate_random_system",
    "EvalReport", "evaluate", "mcc", "r_squared", "ConceptLearner", "TrainConfig", "train",
    "generate_dataset", "rejection_sample", "identify", "oracle_forms", "World",
]
