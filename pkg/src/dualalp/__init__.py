"""Approximate linear programming in the dual for average-cost MDPs.

Stochastic subgradient descent and constraint sampling on a feature-based
approximation of the LP over stationary state-action distributions, with
exact small-instance oracles and a four-queue network benchmark.
"""
from .errors import (
    ContractViolation,
    DimensionError,
    InputError,
    MixingError,
    NonConvergenceError,
    SizeGuardError,
)
from .features import FeatureMatrix, MatrixFeatures, SamplingModel, ThetaDomain, sampling_constants
from .lp import LpProblem, LpSolution, certify, solve_lp
from .mdp import (
    MdpModel,
    MixingEstimate,
    Policy,
    estimate_mixing_time,
    policy_from_measure,
    policy_from_theta,
    simulate_average_loss,
    stationary_distribution,
)
from .oracle import (
    ExactSolution,
    check_lemma1_bound,
    relative_value_iteration,
    solve_dual_lp_exact,
    surrogate_minimum,
)
from .queueing import QueueNetConfig, build_features, build_queue_mdp, heuristic_policy
from .sampling import (
    CsConfig,
    build_sampled_lp,
    run_constraint_sampling,
    sample_constraints,
    sample_count,
)
from .sgd import SgdConfig, SgdTrace, full_subgradient, gradient_estimate, run_sgd, surrogate_cost

__version__ = "0.1.0"
