"""Extrapolation methods for monotone variational inequalities with function constraints."""

from .algorithms import (
    AdaptiveSchedule,
    ConstantSchedule,
    SolverResult,
    SolverState,
    adlagex_step,
    fstopconex_step,
    make_policy,
    opconex_step,
    prox_dual,
    prox_primal,
    run_solver,
    stopconex_step,
)
from .bounds import known_multiplier_bound, robust_bound, theorem_bound
from .errors import ConfigError, FCVIError, FitError, InputError, NumericalFailure, UnsupportedDimension
from .metrics import (
    ConvergenceTrace,
    RateFit,
    brute_force_weak_gap,
    fit_rate,
    infeasibility,
    lagrangian_gap,
    restricted_weak_gap,
)
from .instances import cg1, load_builtin, qc1, qc1_nonsmooth, qq
from .oracles import StochasticOracleSpec, sample_constraints, sample_operator, stochastic_linearize
from .problem import (
    Ball,
    Box,
    ProblemInstance,
    Simplex,
    build_kkt_instance,
    eval_constraint_jacobian,
    eval_constraints,
    eval_operator,
    linearize_constraints,
    project,
)
from .saddle import (
    QuadraticPayoff,
    SaddleProblem,
    build_saddle_kkt,
    check_gne,
    saddle_gap,
    saddle_to_vi,
)

__version__ = "0.1.0"
