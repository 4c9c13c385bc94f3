from .policies import POLICIES, AdaptiveSchedule, ConstantSchedule, StepParams, make_policy
from .prox import prox_dual, prox_primal
from .solvers import (
    METHODS,
    SolverResult,
    SolverState,
    adlagex_step,
    checkpoints,
    fstopconex_step,
    init_state,
    opconex_step,
    run_solver,
    stopconex_step,
)
