"""Model-based RL toolkit for simulated tactile manipulation.

An ensemble world model supplies both a forward model and an epistemic
value signal (disagreement-based information gain); a CEM planner trades
that curiosity off against predicted reward; two deterministic touch tasks
(slope pushing, screw tightening) exercise the whole loop end to end.
"""

from .planner import (
    ActionSequenceDistribution,
    PlanScore,
    GaussianBelief,
    PlannerConfig,
    cem_optimize,
    cem_plan,
    info_gain,
    rollout_score,
)
from .worldmodel import (
    EnsembleDynamics,
    ReplayBuffer,
    RewardHead,
    Transition,
    ensemble_predict,
    fit_models,
    reward_predict,
)

__version__ = "0.1.0"

__all__ = [
    "ActionSequenceDistribution",
    "PlanScore",
    "GaussianBelief",
    "PlannerConfig",
    "cem_optimize",
    "cem_plan",
    "info_gain",
    "rollout_score",
    "EnsembleDynamics",
    "ReplayBuffer",
    "RewardHead",
    "Transition",
    "ensemble_predict",
    "fit_models",
    "reward_predict",
    "__version__",
]
