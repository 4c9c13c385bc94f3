"""The four extrapolation solvers and the driver that runs them.

Each ``*_step`` is pure: it takes a :class:`SolverState` and returns a new
one.  ``run_solver`` loops a step for T iterations, accumulates the
gamma-weighted ergodic averages and samples a convergence trace at
geometric checkpoints.
"""

from __future__ import annotations

import dataclasses
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ..errors import ConfigError, NumericalFailure
from ..oracles import BAR, PRIMARY, OracleCounter, StochasticOracleSpec, sample_constraints, sample_operator, stochastic_linearize
from ..problem import ProblemInstance, eval_constraint_jacobian, eval_constraints, eval_operator, linearize_constraints
from .policies import AdaptiveSchedule, ConstantSchedule, StepParams, make_policy
from .prox import prox_dual, prox_primal

METHODS = ("opconex", "stopconex", "fstopconex", "adlagex")


@dataclass(frozen=True, eq=False)
class SolverState:
    t: int
    x: np.ndarray
    x_prev: np.ndarray
    lam: np.ndarray
    # operator value (or draw) at x^t and x^{t-1}
    F_cur: np.ndarray
    F_prev: np.ndarray
    # l_g(x^t), l_g(x^{t-1}) for the OpConEx family; g(x^t), g(x^{t-1}) for AdLagEx
    s_cur: np.ndarray
    s_prev: np.ndarray
    # x^{t-2}, needed to re-linearize with a fresh sample (F-StOpConEx)
    x_prev2: Optional[np.ndarray] = None
    # AdLagEx memory: lambda^{t-1}, J(x^t), J(x^{t-1}) lambda^{t-1}, max ||lambda^i||, gamma_{t-1}
    lam_prev: Optional[np.ndarray] = None
    J_cur: Optional[np.ndarray] = None
    JL_prev: Optional[np.ndarray] = None
    lam_max: float = 0.0
    gamma_prev: Optional[float] = None
    # ergodic accumulators
    gamma_sum: float = 0.0
    x_sum: Optional[np.ndarray] = None
    lam_sum: Optional[np.ndarray] = None
    last: Optional[StepParams] = None

    @property
    def x_bar(self) -> np.ndarray:
        return self.x_sum / self.gamma_sum

    @property
    def lam_bar(self) -> np.ndarray:
        return self.lam_sum / self.gamma_sum


def _check(t: int, **arrays) -> None:
    for name, arr in arrays.items():
        if not np.all(np.isfinite(arr)):
            raise NumericalFailure(f"non-finite {name}", t)


def _accumulate(state: SolverState, gamma: float, x_new, lam_new) -> dict:
    return {
        "gamma_sum": state.gamma_sum + gamma,
        "x_sum": state.x_sum + gamma * x_new,
        "lam_sum": state.lam_sum + gamma * lam_new,
    }


def init_state(
    instance: ProblemInstance,
    x0=None,
    method: str = "opconex",
    oracle: Optional[StochasticOracleSpec] = None,
    counter: Optional[OracleCounter] = None,
) -> SolverState:
    """x^{-1} = x^0, lambda^0 = 0 and the one-step memories seeded at x^0."""
    x0 = default_start(instance) if x0 is None else instance.set.project(np.asarray(x0, dtype=np.float64))
    lam0 = np.zeros(instance.m)
    common = dict(
        t=0,
        x=x0,
        x_prev=x0,
        lam=lam0,
        x_sum=np.zeros(instance.n),
        lam_sum=np.zeros(instance.m),
    )
    if method in ("stopconex", "fstopconex"):
        oracle = oracle or StochasticOracleSpec()
        F0 = sample_operator(instance, oracle, x0, 0, PRIMARY)
        if counter is not None:
            counter.operator(0, PRIMARY)
    else:
        F0 = eval_operator(instance, x0)
    if method == "fstopconex":
        g0, _ = sample_constraints(instance, oracle, x0, 0, BAR)
        if counter is not None:
            counter.constraints(0, BAR)
    else:
        g0 = eval_constraints(instance, x0)
    state = SolverState(F_cur=F0, F_prev=F0, s_cur=g0, s_prev=g0, x_prev2=x0, **common)
    if method == "adlagex":
        J0 = eval_constraint_jacobian(instance, x0)
        state = dataclasses.replace(state, lam_prev=lam0, J_cur=J0, JL_prev=J0 @ lam0)
    return state


def default_start(instance: ProblemInstance) -> np.ndarray:
    return instance.set.project(instance.set.center)


def _extrapolate(theta: float, cur, prev):
    return (1.0 + theta) * cur - theta * prev


def _opconex_core(instance, state: SolverState, p: StepParams, s_cur, s_prev, J_t):
    """Shared dual/primal update of the OpConEx family."""
    t = state.t
    s = _extrapolate(p.theta, s_cur, s_prev)
    lam_new = prox_dual(state.lam, s, p.tau) if instance.m else state.lam
    d = _extrapolate(p.theta, state.F_cur, state.F_prev) + J_t @ lam_new
    x_new = prox_primal(state.x, d, p.eta, instance.set)
    _check(t, lam=lam_new, x=x_new)
    return lam_new, x_new


def opconex_step(instance: ProblemInstance, state: SolverState, p: StepParams) -> SolverState:
    """One iteration of the deterministic operator-constraint extrapolation method."""
    g_t = eval_constraints(instance, state.x)
    J_t = eval_constraint_jacobian(instance, state.x)
    lam_new, x_new = _opconex_core(instance, state, p, state.s_cur, state.s_prev, J_t)
    l_next = linearize_constraints(g_t, J_t, state.x, x_new)
    F_next = eval_operator(instance, x_new)
    _check(state.t, F=F_next)
    return dataclasses.replace(
        state,
        t=state.t + 1,
        x=x_new,
        x_prev=state.x,
        x_prev2=state.x_prev,
        lam=lam_new,
        F_cur=F_next,
        F_prev=state.F_cur,
        s_cur=l_next,
        s_prev=state.s_cur,
        last=p,
        **_accumulate(state, p.gamma, x_new, lam_new),
    )


def stopconex_step(
    instance: ProblemInstance,
    oracle: StochasticOracleSpec,
    state: SolverState,
    p: StepParams,
    counter: Optional[OracleCounter] = None,
) -> SolverState:
    """OpConEx with the operator replaced by one fresh stochastic draw per iteration."""
    g_t = eval_constraints(instance, state.x)
    J_t = eval_constraint_jacobian(instance, state.x)
    lam_new, x_new = _opconex_core(instance, state, p, state.s_cur, state.s_prev, J_t)
    l_next = linearize_constraints(g_t, J_t, state.x, x_new)
    F_next = sample_operator(instance, oracle, x_new, state.t + 1, PRIMARY)
    if counter is not None:
        counter.operator(state.t + 1, PRIMARY)
    _check(state.t, F=F_next)
    return dataclasses.replace(
        state,
        t=state.t + 1,
        x=x_new,
        x_prev=state.x,
        x_prev2=state.x_prev,
        lam=lam_new,
        F_cur=F_next,
        F_prev=state.F_cur,
        s_cur=l_next,
        s_prev=state.s_cur,
        last=p,
        **_accumulate(state, p.gamma, x_new, lam_new),
    )


def fstopconex_step(
    instance: ProblemInstance,
    oracle: StochasticOracleSpec,
    state: SolverState,
    p: StepParams,
    counter: Optional[OracleCounter] = None,
) -> SolverState:
    """Fully stochastic variant.

    The dual step re-linearizes at x^{t-1} and x^{t-2} with one bar-stream
    sample; the primal step uses a primary-stream Jacobian draw at x^t.
    """
    t = state.t
    gb1, Jb1 = sample_constraints(instance, oracle, state.x_prev, t, BAR)
    gb2, Jb2 = sample_constraints(instance, oracle, state.x_prev2, t, BAR)
    if counter is not None:
        counter.constraints(t, BAR)
    l_cur = stochastic_linearize(gb1, Jb1, state.x_prev, state.x)
    l_prev = stochastic_linearize(gb2, Jb2, state.x_prev2, state.x_prev)
    _, J_t = sample_constraints(instance, oracle, state.x, t, PRIMARY)
    if counter is not None:
        counter.constraints(t, PRIMARY)
    lam_new, x_new = _opconex_core(instance, state, p, l_cur, l_prev, J_t)
    F_next = sample_operator(instance, oracle, x_new, t + 1, PRIMARY)
    if counter is not None:
        counter.operator(t + 1, PRIMARY)
    _check(t, F=F_next)
    return dataclasses.replace(
        state,
        t=t + 1,
        x=x_new,
        x_prev=state.x,
        x_prev2=state.x_prev,
        lam=lam_new,
        F_cur=F_next,
        F_prev=state.F_cur,
        s_cur=l_cur,
        s_prev=l_prev,
        last=p,
        **_accumulate(state, p.gamma, x_new, lam_new),
    )


def adlagex_step(instance: ProblemInstance, state: SolverState, schedule: AdaptiveSchedule) -> SolverState:
    """One iteration of the adaptive Lagrangian extrapolation method.

    The dual and primal updates only read time-t quantities, so they are
    independent of each other.
    """
    t = state.t
    p = schedule.at(t, state.lam_max, state.gamma_prev)
    s = _extrapolate(p.theta, state.s_cur, state.s_prev)
    lam_new = prox_dual(state.lam, s, p.tau) if instance.m else state.lam
    JL_cur = state.J_cur @ state.lam
    q = _extrapolate(p.theta, state.F_cur + JL_cur, state.F_prev + state.JL_prev)
    x_new = prox_primal(state.x, q, p.eta, instance.set)
    _check(t, lam=lam_new, x=x_new)
    F_next = eval_operator(instance, x_new)
    g_next = eval_constraints(instance, x_new)
    J_next = eval_constraint_jacobian(instance, x_new)
    _check(t, F=F_next, g=g_next)
    return dataclasses.replace(
        state,
        t=t + 1,
        x=x_new,
        x_prev=state.x,
        x_prev2=state.x_prev,
        lam=lam_new,
        lam_prev=state.lam,
        F_cur=F_next,
        F_prev=state.F_cur,
        s_cur=g_next,
        s_prev=state.s_cur,
        J_cur=J_next,
        JL_prev=JL_cur,
        lam_max=max(state.lam_max, float(np.linalg.norm(lam_new))),
        gamma_prev=p.gamma,
        last=p,
        **_accumulate(state, p.gamma, x_new, lam_new),
    )


# ---------------------------------------------------------------------------
# driver
# ---------------------------------------------------------------------------


def checkpoints(T: int) -> list:
    """1, 2, 4, ... up to T, plus T itself."""
    pts, k = [], 1
    while k < T:
        pts.append(k)
        k *= 2
    pts.append(T)
    return pts


@dataclass
class SolverResult:
    x_bar: np.ndarray
    lam_bar: np.ndarray
    trace: "object"
    state: SolverState
    lambda_norms: np.ndarray
    etas: np.ndarray
    schedule: object
    counter: Optional[OracleCounter] = None
    iterates: Optional[list] = None
    duals: Optional[list] = None
    params: Optional[list] = None


def run_solver(
    instance: ProblemInstance,
    method: str,
    policy,
    T: int,
    seed: int = 0,
    oracle: Optional[StochasticOracleSpec] = None,
    x0=None,
    probes=None,
    checkpoint_list=None,
    record_iterates: bool = False,
    meta: Optional[dict] = None,
) -> SolverResult:
    """Run ``method`` for ``T`` steps and return ergodic averages plus a trace.

    ``policy`` is either a schedule from :func:`make_policy` or a dict
    ``{"name": ..., **params}``.  For the stochastic methods the oracle's
    master seed is replaced by ``seed``.
    """
    from ..metrics import ConvergenceTrace, default_probes, infeasibility, restricted_weak_gap

    if method not in METHODS:
        raise ConfigError(f"unknown method {method!r}; choose from {METHODS}")
    T = int(T)
    if T < 1:
        raise ConfigError("horizon T must be at least 1")
    if method in ("stopconex", "fstopconex"):
        oracle = dataclasses.replace(oracle or StochasticOracleSpec(), master_seed=int(seed))
    else:
        oracle = None
    if isinstance(policy, dict):
        params = dict(policy)
        name = params.pop("name")
        policy = make_policy(name, instance, T=params.pop("T", T), oracle=oracle, **params)
    if method == "adlagex" and not isinstance(policy, AdaptiveSchedule):
        raise ConfigError("AdLagEx runs only with the adaptive policy")
    if method != "adlagex" and not isinstance(policy, ConstantSchedule):
        raise ConfigError(f"{method} needs a constant policy, not {getattr(policy, 'name', policy)!r}")
    if probes is None:
        probes = default_probes(instance)

    counter = OracleCounter() if oracle is not None else None
    state = init_state(instance, x0, method, oracle, counter)
    x_start = state.x
    cps = set(checkpoints(T) if checkpoint_list is None else checkpoint_list)
    trace = ConvergenceTrace(meta=dict(meta or {}, label=instance.label, method=method,
                                       policy=policy.name, seed=int(seed), T=T))
    lam_norms = np.empty(T)
    etas = np.empty(T)
    iterates = [state.x] if record_iterates else None
    duals = [state.lam] if record_iterates else None
    plist = [] if record_iterates else None
    t0 = time.perf_counter()
    for k in range(T):
        if method == "adlagex":
            state = adlagex_step(instance, state, policy)
        else:
            p = policy.at(k)
            if method == "opconex":
                state = opconex_step(instance, state, p)
            elif method == "stopconex":
                state = stopconex_step(instance, oracle, state, p, counter)
            else:
                state = fstopconex_step(instance, oracle, state, p, counter)
        lam_norms[k] = np.linalg.norm(state.lam)
        etas[k] = state.last.eta
        if record_iterates:
            iterates.append(state.x)
            duals.append(state.lam)
            plist.append(state.last)
        if state.t in cps:
            xb = state.x_bar
            trace.add(
                t=state.t,
                gamma_sum=state.gamma_sum,
                infeas=infeasibility(instance, xb),
                gap_restricted=restricted_weak_gap(instance, xb, probes, validate=False),
                lambda_norm=float(lam_norms[k]),
                eta=float(etas[k]),
                wall_s=time.perf_counter() - t0,
            )
    trace.meta["x0"] = x_start.tolist()
    return SolverResult(
        x_bar=state.x_bar,
        lam_bar=state.lam_bar,
        trace=trace,
        state=state,
        lambda_norms=lam_norms,
        etas=etas,
        schedule=policy,
        counter=counter,
        iterates=iterates,
        duals=duals,
        params=plist,
    )
