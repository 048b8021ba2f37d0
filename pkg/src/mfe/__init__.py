"""Mean field equilibria of nomadic-agent resource competition.

The package solves the stationary location chain, the agent's optimal
stopping problem, and the joint fixed point coupling them, and provides
a finite-system event simulator for cross-validation.
"""

from .model import ModelParams, RewardFn, ThresholdPolicy, reward_eval, switch_probability
from .chain import (
    CalibrationError,
    Generator,
    Truncation,
    build_generator_all,
    build_generator_focal,
    calibrate_kappa,
    mean_occupancy,
    stationary,
)
from .stopping import (
    ConvergenceError,
    EventProbs,
    MonotonicityError,
    ThresholdBox,
    ValueFunction,
    event_probs,
    optimal_thresholds,
    threshold_distance,
    value_iterate,
)
from .equilibrium import (
    EquilibriumCandidate,
    SearchConfig,
    SearchResult,
    bounds,
    c_tilde,
    g_bound,
    search,
    threshold_compactness_bound,
)
from .sim import SimConfig, SimResult, simulate, welfare

__all__ = [
    "CalibrationError",
    "ConvergenceError",
    "EquilibriumCandidate",
    "EventProbs",
    "Generator",
    "ModelParams",
    "MonotonicityError",
    "RewardFn",
    "SearchConfig",
    "SearchResult",
    "SimConfig",
    "SimResult",
    "ThresholdBox",
    "ThresholdPolicy",
    "Truncation",
    "ValueFunction",
    "bounds",
    "build_generator_all",
    "build_generator_focal",
    "c_tilde",
    "calibrate_kappa",
    "event_probs",
    "g_bound",
    "mean_occupancy",
    "optimal_thresholds",
    "reward_eval",
    "search",
    "simulate",
    "stationary",
    "switch_probability",
    "threshold_compactness_bound",
    "threshold_distance",
    "value_iterate",
    "welfare",
]
