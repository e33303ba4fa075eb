"""Network-cohesion constrained online actor-critic learning for simulated mHealth users."""

from .actor import ActorState, actor_update
from .critic import critic_update_alg1, critic_update_alg2, critic_update_separate, lstdq_separate
from .evaluation import EvalConfig, elrar
from .graph import CohesionGraph, build_graph, wst_feature
from .policy import policy_prob, value_feature
from .runner import METHODS, ExperimentConfig, RunResult, run_online
from .sim import BETA_BASIC, ConfigurationError, PopulationSpec, UserModel, generate_population

__version__ = "0.1.0"

__all__ = [
    "ActorState", "actor_update",
    "critic_update_alg1", "critic_update_alg2", "critic_update_separate", "lstdq_separate",
    "EvalConfig", "elrar",
    "CohesionGraph", "build_graph", "wst_feature",
    "policy_prob", "value_feature",
    "METHODS", "ExperimentConfig", "RunResult", "run_online",
    "BETA_BASIC", "ConfigurationError", "PopulationSpec", "UserModel", "generate_population",
]
