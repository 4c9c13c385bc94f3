import dataclasses
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from fcvi.algorithms import (
    AdaptiveSchedule,
    make_policy,
    opconex_step,
    prox_dual,
    prox_primal,
    run_solver,
)
from fcvi.algorithms.policies import POLICIES, StepParams, exact_ratio
from fcvi.algorithms.solvers import checkpoints, fstopconex_step, init_state, stopconex_step
from fcvi.bounds import known_multiplier_bound
from fcvi.errors import ConfigError, NumericalFailure
from fcvi.instances import qq
from fcvi.metrics import infeasibility
from fcvi.oracles import BAR, PRIMARY, StochasticOracleSpec, sample_constraints
from fcvi.problem import (
    AffineConstraint,
    AffineOperator,
    Ball,
    Box,
    ConstraintSet,
    ProblemInstance,
    build_kkt_instance,
    eval_constraints,
)


@pytest.fixture(scope="module")
def unit_instance():
    """L = 1, M_g = 1, D_X = 2, smooth: the hand-computed policy example."""
    return build_kkt_instance(Box([-1.0], [1.0]), [[1.0]], [AffineConstraint([1.0])], [0.0], [0.5])


def _unconstrained(A=((1.0, 2.0), (-2.0, 1.0)), b=(0.3, -0.2)):
    S = Box([-1.0, -1.0], [1.0, 1.0])
    return ProblemInstance(S, AffineOperator(np.array(A), np.array(b)), ConstraintSet((), 2))


# -- prox primitives ----------------------------------------------------------


def test_prox_dual_examples():
    assert prox_dual(np.zeros(2), np.array([2.0, -1.0]), 1.0).tolist() == [2.0, 0.0]
    lam = np.array([0.7, 0.0])
    assert prox_dual(lam, np.zeros(2), 3.0).tolist() == lam.tolist()
    out = prox_dual(np.array([1.0, 1.0]), np.array([-3.0, 0.5]), 2.0)
    np.testing.assert_allclose(out, [0.0, 1.25], atol=1e-15)
    # grid minimisation of <-s, l> + tau/2 ||l - lam||^2 over l >= 0
    g = np.linspace(0, 3, 3001)
    L1, L2 = np.meshgrid(g, g, indexing="ij")
    obj = 3.0 * L1 - 0.5 * L2 + (L1 - 1) ** 2 + (L2 - 1) ** 2
    i, j = np.unravel_index(np.argmin(obj), obj.shape)
    np.testing.assert_allclose(out, [g[i], g[j]], atol=1e-6)


def test_prox_primal_examples():
    S = Box([-1.0, -1.0], [1.0, 1.0])
    x = np.array([0.2, -0.4])
    assert prox_primal(x, np.zeros(2), 1.0, S).tolist() == x.tolist()
    assert prox_primal(np.zeros(2), np.array([4.0, 0.0]), 2.0, S).tolist() == [-1.0, 0.0]


@settings(max_examples=10, deadline=None)
@given(
    x=arrays(np.float64, 2, elements=st.floats(-0.7, 0.7)),
    d=arrays(np.float64, 2, elements=st.floats(-3, 3)),
    eta=st.floats(0.5, 4),
)
def test_prox_primal_matches_grid_on_ball(x, d, eta):
    S = Ball([0.0, 0.0], 1.0)
    x = S.project(x)
    out = prox_primal(x, d, eta, S)
    g = np.linspace(-1, 1, 801)
    P = np.stack(np.meshgrid(g, g, indexing="ij"), axis=-1).reshape(-1, 2)
    P = P[np.linalg.norm(P, axis=1) <= 1]
    ang = np.linspace(0, 2 * np.pi, 20_000, endpoint=False)
    P = np.vstack([P, np.stack([np.cos(ang), np.sin(ang)], axis=1)])
    obj = P @ d + eta / 2 * np.sum((P - x) ** 2, axis=1)
    val = out @ d + eta / 2 * np.sum((out - x) ** 2)
    assert val <= obj.min() + 1e-12
    assert obj.min() - val <= 1e-4


def test_prox_rejects_nonpositive_steps():
    with pytest.raises(ConfigError):
        prox_dual(np.zeros(1), np.zeros(1), 0.0)
    with pytest.raises(ConfigError):
        prox_primal(np.zeros(1), np.zeros(1), -1.0, Box([-1.0], [1.0]))


# -- policies ------------------------------------------------------------------


def test_det_B_policy_example(unit_instance):
    sch = make_policy("det_B", unit_instance, T=100, B=2)
    assert (sch.eta, sch.tau) == (12.0, 6.0)
    assert sch.at(17) == StepParams(1.0, 1.0, 12.0, 6.0)


def test_stoch_B_policy_example(unit_instance):
    sch = make_policy("stoch_B", unit_instance, T=100, B=2, oracle=StochasticOracleSpec(sigma_F=1.0))
    assert sch.eta == pytest.approx(13 + 10 * math.sqrt(3), abs=1e-12)
    assert sch.tau == 6.0


def test_known_lambda_policy_uses_multiplier(QC1):
    sch = make_policy("det_known_lambda", QC1, T=100)
    assert sch.B == 2.0
    assert sch.eta == pytest.approx(6 * math.sqrt(5) + 6 * math.sqrt(2) * 2 / QC1.D_X)
    assert sch.tau == pytest.approx(6 * math.sqrt(2) * QC1.D_X / 2)


def test_policy_modes_and_robustness(QQ):
    s = make_policy("det_B", QQ, T=400, B=1, mode="sum")
    m = make_policy("det_B", QQ, T=400, B=1, mode="max")
    assert m.eta < s.eta
    assert s.c == pytest.approx(QQ.L_g * QQ.D_X)
    assert s.terms["c"] == pytest.approx(s.c * 20)
    informed = make_policy("det_B", QQ, T=400, B=4)
    assert informed.c == 0.0


def test_policy_errors(QC1, unit_instance):
    with pytest.raises(ConfigError):
        make_policy("det_B", QC1, T=10, B=0.5)
    with pytest.raises(ConfigError):
        make_policy("det_B", QC1, T=10)
    with pytest.raises(ConfigError):
        make_policy("nope", QC1, T=10)
    no_sol = dataclasses.replace(unit_instance, known_solution=None)
    with pytest.raises(ConfigError):
        make_policy("det_known_lambda", no_sol, T=10)
    with pytest.raises(ConfigError):
        run_solver(QC1, "opconex", make_policy("adaptive", QC1), 5)
    with pytest.raises(ConfigError):
        run_solver(QC1, "adlagex", make_policy("det_B", QC1, T=5, B=2), 5)


def test_adaptive_constants():
    inst = build_kkt_instance(Box([-1.0, -1.0], [1.0, 1.0]), np.eye(2), [AffineConstraint([1.0, 1.0])], [0.25, 0.25], [1.0])
    sch = make_policy("adaptive", inst)
    assert sch.beta == pytest.approx(2 / 3)
    p0 = sch.at(0, 0.0, None)
    assert p0.eta == 6.0 and p0.tau == pytest.approx(4.0)


@settings(max_examples=200, deadline=None)
@given(a=st.floats(1e-3, 1e3), b=st.floats(1e-3, 1e3))
def test_exact_ratio(a, b):
    theta = exact_ratio(a, b)
    assert abs(theta - a / b) <= 4 * np.spacing(a / b)


@pytest.mark.parametrize("name", POLICIES)
def test_every_policy_meets_step_conditions(name, QQ):
    oracle = StochasticOracleSpec(sigma_F=0.3, sigma_g=0.3, sigma_Gamma=(0.3,))
    method = {"adaptive": "adlagex", "stoch_B": "stopconex", "fully_stoch_B": "fstopconex"}.get(name, "opconex")
    pol = {"name": name} if name in ("det_known_lambda", "adaptive") else {"name": name, "B": 1.5}
    res = run_solver(QQ, method, pol, 300, oracle=oracle, record_iterates=True, x0=[-1.0, -1.0])
    ps = res.params
    for prev, cur in zip(ps, ps[1:]):
        assert cur.gamma * cur.theta == prev.gamma
        assert cur.gamma * cur.eta <= prev.gamma * prev.eta + 1e-12
        assert cur.gamma * cur.tau <= prev.gamma * prev.tau + 1e-12


# -- steps and runs ------------------------------------------------------------


def test_unconstrained_zero_theta_is_projected_step():
    inst = _unconstrained()
    st0 = init_state(inst, [0.9, -0.8])
    p = StepParams(1.0, 0.0, 2.0, 1.0)
    out = opconex_step(inst, st0, p)
    F = inst.operator(np.array([0.9, -0.8]))
    np.testing.assert_array_equal(out.x, inst.set.project(np.array([0.9, -0.8]) - F / 2.0))


def test_first_dual_step_hand_trace(QC1):
    sch = make_policy("det_known_lambda", QC1, T=50)
    x0 = np.array([0.9, 0.8])
    st0 = init_state(QC1, x0)
    st1 = opconex_step(QC1, st0, sch.at(0))
    g0 = eval_constraints(QC1, x0)
    np.testing.assert_allclose(st1.lam, np.maximum(g0 / sch.tau, 0.0), atol=1e-15)


def test_step_is_pure(QC1):
    sch = make_policy("det_known_lambda", QC1, T=50)
    st0 = init_state(QC1, [0.5, 0.5])
    a, b = opconex_step(QC1, st0, sch.at(0)), opconex_step(QC1, st0, sch.at(0))
    assert a.x.tobytes() == b.x.tobytes() and a.lam.tobytes() == b.lam.tobytes()


def test_single_step_average_is_first_iterate(QC1):
    res = run_solver(QC1, "opconex", {"name": "det_B", "B": 2}, 1, record_iterates=True)
    assert res.x_bar.tobytes() == res.iterates[1].tobytes()


def test_constant_weights_give_arithmetic_mean(QQ):
    res = run_solver(QQ, "opconex", {"name": "det_B", "B": 3}, 200, record_iterates=True)
    np.testing.assert_allclose(res.x_bar, np.mean(res.iterates[1:], axis=0), atol=1e-12)
    np.testing.assert_allclose(res.lam_bar, np.mean(res.duals[1:], axis=0), atol=1e-12)


@pytest.mark.parametrize("method,pol", [
    ("opconex", {"name": "det_B", "B": 2}),
    ("stopconex", {"name": "stoch_B", "B": 2}),
    ("fstopconex", {"name": "fully_stoch_B", "B": 2}),
    ("adlagex", {"name": "adaptive"}),
])
def test_iterates_stay_feasible_for_X_and_duals_nonnegative(QQ, method, pol):
    oracle = StochasticOracleSpec(sigma_F=0.5, sigma_g=0.3, sigma_Gamma=(0.3,))
    res = run_solver(QQ, method, pol, 400, seed=3, oracle=oracle, record_iterates=True, x0=[1.0, -1.0])
    assert all(QQ.set.contains(x, 1e-12) for x in res.iterates)
    assert all(np.all(lam >= 0) for lam in res.duals)
    assert QQ.set.contains(res.x_bar, 1e-12)


def test_zero_noise_degeneracy(QC1):
    kw = dict(T=300, record_iterates=True, x0=[-1.0, 1.0])
    ref = run_solver(QC1, "opconex", {"name": "det_B", "B": 2}, **kw)
    for method in ("stopconex", "fstopconex"):
        res = run_solver(QC1, method, {"name": "det_B", "B": 2}, oracle=StochasticOracleSpec(), seed=9, **kw)
        assert all(a.tobytes() == b.tobytes() for a, b in zip(ref.iterates, res.iterates))
        assert all(a.tobytes() == b.tobytes() for a, b in zip(ref.duals, res.duals))


def test_stochastic_runs_reproducible(QC1):
    oracle = StochasticOracleSpec(sigma_F=0.5)
    a = run_solver(QC1, "stopconex", {"name": "stoch_B", "B": 2}, 200, seed=4, oracle=oracle)
    b = run_solver(QC1, "stopconex", {"name": "stoch_B", "B": 2}, 200, seed=4, oracle=oracle)
    c = run_solver(QC1, "stopconex", {"name": "stoch_B", "B": 2}, 200, seed=5, oracle=oracle)
    assert a.x_bar.tobytes() == b.x_bar.tobytes()
    assert a.x_bar.tobytes() != c.x_bar.tobytes()


def test_fstopconex_call_accounting(QC1):
    oracle = StochasticOracleSpec(sigma_F=0.3, sigma_g=0.3, sigma_Gamma=(0.3,))
    T = 50
    res = run_solver(QC1, "fstopconex", {"name": "fully_stoch_B", "B": 2}, T, oracle=oracle)
    c = res.counter
    # one F cell per iteration plus the seed at x^0; two constraint cells per iteration,
    # the seeding bar sample at x^0 being the t = 0 bar cell itself
    assert c.operator_draws == T + 1
    assert c.constraint_draws == 2 * T
    for t in range(1, T):
        assert sorted(c.cells[t]) == [("F", PRIMARY), ("g", BAR), ("g", PRIMARY)]


def test_fstopconex_value_noise_replay(QC1):
    """Value noise only: the dual path is the prox of the exact linearization plus the replayed noise."""
    oracle = StochasticOracleSpec(sigma_g=0.3, master_seed=8)
    T = 60
    sch = make_policy("fully_stoch_B", QC1, T=T, B=2, oracle=oracle)
    state = init_state(QC1, [0.9, 0.9], "fstopconex", oracle)
    lam = np.zeros(1)
    for t in range(T):
        # affine g: the bar-sample linearization equals g(x) plus the cell's value noise
        e = sample_constraints(QC1, oracle, state.x_prev, t, BAR)[0] - eval_constraints(QC1, state.x_prev)
        s = 2 * (eval_constraints(QC1, state.x) + e) - (eval_constraints(QC1, state.x_prev) + e)
        lam = np.maximum(lam + s / sch.tau, 0.0)
        state = fstopconex_step(QC1, oracle, state, sch.at(t))
        np.testing.assert_allclose(state.lam, lam, atol=1e-13)


def test_stopconex_uses_one_fresh_draw_per_iteration(QC1):
    oracle = StochasticOracleSpec(sigma_F=0.5)
    res = run_solver(QC1, "stopconex", {"name": "stoch_B", "B": 2}, 40, oracle=oracle)
    assert res.counter.operator_draws == 41 and res.counter.constraint_draws == 0
    state = init_state(QC1, None, "stopconex", oracle)
    sch = make_policy("stoch_B", QC1, T=40, B=2, oracle=oracle)
    nxt = stopconex_step(QC1, oracle, state, sch.at(0))
    assert nxt.F_prev.tobytes() == state.F_cur.tobytes()


def test_adlagex_affine_constraints_do_not_adapt(QC1):
    res = run_solver(QC1, "adlagex", {"name": "adaptive"}, 100, record_iterates=True)
    sch = res.schedule
    for p in res.params:
        assert p.eta == 6 * QC1.L and p.gamma == 1.0 and p.theta == 1.0
        assert p.tau == pytest.approx(sch.beta * 6 * QC1.L)


def test_adlagex_monotone_adaptivity_and_multiplier_bound():
    inst = qq(2.0)
    x0 = np.array([-1.0, 1.0])
    res = run_solver(inst, "adlagex", {"name": "adaptive"}, 2000, x0=x0, record_iterates=True)
    etas = np.array([p.eta for p in res.params])
    gammas = np.array([p.gamma for p in res.params])
    assert np.all(np.diff(etas) >= 0) and np.all(np.diff(gammas) <= 0)
    sch: AdaptiveSchedule = res.schedule
    bound = sch.multiplier_bound(x0, inst.known_solution.x, inst.known_solution.lam)
    assert res.lambda_norms.max() <= bound


def test_numerical_failure_carries_iteration(QC1):
    sch = make_policy("det_B", QC1, T=5, B=2)
    bad = init_state(QC1, [0.0, 0.0])
    bad = dataclasses.replace(bad, F_cur=np.array([np.nan, 0.0]))
    with pytest.raises(NumericalFailure) as info:
        opconex_step(QC1, bad, sch.at(0))
    assert "0" in str(info.value)


def test_infeasibility_below_known_multiplier_bound(QC1):
    res = run_solver(QC1, "opconex", {"name": "det_known_lambda"}, 4000)
    assert infeasibility(QC1, res.x_bar) <= known_multiplier_bound(QC1, 4000)


def test_trace_checkpoints(QC1):
    assert checkpoints(10) == [1, 2, 4, 8, 10]
    assert checkpoints(8) == [1, 2, 4, 8]
    res = run_solver(QC1, "opconex", {"name": "det_B", "B": 2}, 100)
    ts = res.trace.column("t")
    assert ts.tolist() == [1, 2, 4, 8, 16, 32, 64, 100]
    assert np.all(np.diff(res.trace.column("gamma_sum")) >= 0)
