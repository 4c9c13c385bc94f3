import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from conftest import random_kkt_instance, random_monotone_matrix
from fcvi.errors import ConfigError, InputError
from fcvi.instances import ROTATION, X_STAR, load_builtin, qq
from fcvi.problem import (
    AffineConstraint,
    AffineOperator,
    Ball,
    Box,
    ConstraintSet,
    NormConstraint,
    ProblemInstance,
    QuadraticConstraint,
    Simplex,
    build_kkt_instance,
    check_known_solution,
    eval_constraint_jacobian,
    eval_constraints,
    eval_operator,
    instance_from_dict,
    instance_to_dict,
    kkt_residuals,
    linearize_constraints,
    product_set,
    project,
)

finite = st.floats(-5, 5, allow_nan=False, allow_infinity=False)
vec2 = arrays(np.float64, 2, elements=finite)
unit = st.floats(0, 1)


def _plain(simple_set, A, b, constraints=()):
    return ProblemInstance(simple_set, AffineOperator(A, b), ConstraintSet(tuple(constraints), simple_set.dim))


# -- projections ------------------------------------------------------------


def test_project_box_clamps():
    assert project(Box([-1, -1], [1, 1]), [2, 0.5]).tolist() == [1.0, 0.5]


def test_project_ball_scales_radially():
    np.testing.assert_allclose(project(Ball([0, 0], 1.0), [3, 4]), [0.6, 0.8], atol=1e-15)


def test_project_simplex_frozen_and_grid():
    S = Simplex(2)
    p = project(S, [0.8, 0.8])
    np.testing.assert_allclose(p, [0.5, 0.5], atol=1e-15)
    # brute force on the segment {(s, 1-s)}
    s = np.linspace(0, 1, 100_001)
    pts = np.stack([s, 1 - s], axis=1)
    best = pts[np.argmin(np.sum((pts - [0.8, 0.8]) ** 2, axis=1))]
    np.testing.assert_allclose(p, best, atol=1e-5)


def test_project_dimension_mismatch():
    with pytest.raises(InputError):
        project(Box([-1, -1], [1, 1]), [0.0, 0.0, 0.0])


@pytest.mark.parametrize("S", [Box([-1, -2], [1, 0.5]), Ball([0.3, -0.1], 0.7), Simplex(2, 1.5)])
@settings(max_examples=60, deadline=None)
@given(a=vec2, b=vec2)
def test_projection_nonexpansive_and_inside(S, a, b):
    pa, pb = S.project(a), S.project(b)
    assert np.linalg.norm(pa - pb) <= np.linalg.norm(a - b) + 1e-12
    assert S.contains(pa, 1e-12)


def test_diameters_are_analytic():
    assert Box([-1, -1], [1, 1]).diameter == np.linalg.norm([2.0, 2.0])
    assert Ball([0, 0, 0], 0.75).diameter == 1.5
    assert Simplex(3, 2.0).diameter == pytest.approx(2.0 * np.sqrt(2.0))


def test_set_validation():
    with pytest.raises(InputError):
        Box([1, 0], [0, 1])
    with pytest.raises(InputError):
        Ball([0, 0], 0.0)
    with pytest.raises(InputError):
        Simplex(2, -1.0)


def test_product_set_blocks_and_collapse():
    P = product_set(Ball([0, 0], 1.0), Simplex(2))
    assert P.dim == 4
    p = P.project([3, 4, 0.8, 0.8])
    np.testing.assert_allclose(p, [0.6, 0.8, 0.5, 0.5], atol=1e-15)
    assert P.diameter == pytest.approx(np.hypot(2.0, np.sqrt(2.0)))
    boxes = product_set(Box([-1], [1]), Box([0], [2]))
    assert isinstance(boxes, Box) and boxes.upper.tolist() == [1.0, 2.0]


# -- operator and constraints -------------------------------------------------


def test_eval_operator_qc1_at_solution():
    # F(x*) = A x* + b with b = (-1.75, -0.75): (0.75 - 1.75, -0.25 - 0.75)
    inst = _plain(Box([-1, -1], [1, 1]), ROTATION, [-1.75, -0.75])
    np.testing.assert_array_equal(eval_operator(inst, X_STAR), [-1.0, -1.0])


def test_eval_operator_zero():
    inst = _plain(Box([-1, -1], [1, 1]), np.eye(2), [0.0, 0.0])
    np.testing.assert_array_equal(eval_operator(inst, [0.0, 0.0]), [0.0, 0.0])


def test_nonsmooth_scale_zero_matches_affine():
    rng = np.random.default_rng(3)
    a = AffineOperator(ROTATION, [0.1, 0.2])
    b = AffineOperator(ROTATION, [0.1, 0.2], nonsmooth_scale=0.0)
    X = rng.uniform(-1, 1, (100, 2))
    np.testing.assert_array_equal(a(X), b(X))


def test_nonsmooth_operator_moduli():
    op = AffineOperator(ROTATION, [0.0, 0.0], nonsmooth_scale=0.5)
    assert op.L == pytest.approx(np.sqrt(5))
    assert op.H > 0
    assert AffineOperator(ROTATION, [0.0, 0.0]).H == 0


def test_operator_rejects_non_monotone():
    with pytest.raises(InputError):
        AffineOperator([[-1.0, 0.0], [0.0, 1.0]], [0.0, 0.0])


def test_affine_constraint_value_and_gradient(QC1):
    assert eval_constraints(QC1, X_STAR).tolist() == [0.0]
    np.testing.assert_array_equal(eval_constraint_jacobian(QC1, X_STAR)[:, 0], [1.0, 1.0])


def test_quadratic_constraint_at_origin():
    inst = _plain(Box([-1, -1], [1, 1]), np.eye(2), [0, 0], [QuadraticConstraint(np.eye(2), [0, 0], 1.0)])
    assert eval_constraints(inst, [0.0, 0.0]).tolist() == [-1.0]
    assert eval_constraint_jacobian(inst, [0.0, 0.0])[:, 0].tolist() == [0.0, 0.0]


def test_jacobian_matches_finite_differences():
    rng = np.random.default_rng(11)
    inst = random_kkt_instance(rng, n=4, m=4)
    h = 1e-6
    worst = 0.0
    for x in rng.uniform(-1, 1, (50, 4)):
        J = eval_constraint_jacobian(inst, x)
        for i in range(4):
            e = np.zeros(4)
            e[i] = h
            fd = (eval_constraints(inst, x + e) - eval_constraints(inst, x - e)) / (2 * h)
            worst = max(worst, np.abs(fd - J[i]).max())
    assert worst <= 1e-6


def test_norm_constraint_selection_at_center():
    con = NormConstraint([0.25, 0.25], 1.0, 0.0, linear=[1.0, 1.0])
    np.testing.assert_array_equal(con.gradient(np.array([0.25, 0.25])), [1.0, 1.0])
    assert con.nonsmoothness() == 2.0
    assert con.gradient_bound(Box([-1, -1], [1, 1])) == pytest.approx(np.sqrt(2) + 1)
    plain = NormConstraint([0.0, 0.0], 2.0, 1.0)
    assert plain.value(np.array([0.3, 0.4])) == pytest.approx(0.0)
    assert plain.to_dict().get("linear") is None


def test_moduli_aggregation():
    cons = ConstraintSet(
        (QuadraticConstraint(np.eye(2), [0, 0]), QuadraticConstraint(2 * np.eye(2), [0, 0])), 2
    )
    assert cons.L_g == pytest.approx(np.hypot(2.0, 4.0))
    nc = ConstraintSet((NormConstraint([0, 0], 1.0), NormConstraint([0, 0], 2.0)), 2)
    assert nc.H_g == pytest.approx(np.hypot(2.0, 4.0))


# -- linearization -----------------------------------------------------------


def test_linearize_zero_displacement_exact():
    g, J = np.array([0.3, -1.2]), np.arange(4.0).reshape(2, 2)
    x = np.array([0.1, 0.2])
    assert linearize_constraints(g, J, x, x.copy()).tolist() == g.tolist()


def test_linearize_quadratic_hand_value():
    # g(x) = ||x||^2 - 1: g(1,0) = 0, grad (2,0), so the model at (0,1) is 0 + (2,0).(-1,1) = -2
    inst = _plain(Box([-1, -1], [1, 1]), np.eye(2), [0, 0], [QuadraticConstraint(np.eye(2), [0, 0], 1.0)])
    x_prev, x = np.array([1.0, 0.0]), np.array([0.0, 1.0])
    g_prev, J_prev = eval_constraints(inst, x_prev), eval_constraint_jacobian(inst, x_prev)
    assert linearize_constraints(g_prev, J_prev, x_prev, x).tolist() == [-2.0]
    assert eval_constraints(inst, x).tolist() == [0.0]


def test_linearize_affine_is_exact(QC1):
    rng = np.random.default_rng(0)
    for xp, x in rng.uniform(-1, 1, (20, 2, 2)):
        lin = linearize_constraints(eval_constraints(QC1, xp), eval_constraint_jacobian(QC1, xp), xp, x)
        np.testing.assert_allclose(lin, eval_constraints(QC1, x), atol=1e-15)


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), alpha=unit)
def test_constraint_convexity_and_linearization_underestimates(seed, alpha):
    rng = np.random.default_rng(seed)
    inst = random_kkt_instance(rng, n=3, m=3)
    x, y = rng.uniform(-1, 1, (2, 3))
    gx, gy = eval_constraints(inst, x), eval_constraints(inst, y)
    assert np.all(eval_constraints(inst, alpha * x + (1 - alpha) * y) <= alpha * gx + (1 - alpha) * gy + 1e-9)
    lin = linearize_constraints(gx, eval_constraint_jacobian(inst, x), x, y)
    assert np.all(lin <= gy + 1e-9)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**31 - 1))
def test_operator_monotone_on_random_pairs(seed):
    rng = np.random.default_rng(seed)
    inst = random_kkt_instance(rng)
    X = inst.set.sample(rng, 200)
    Y = inst.set.sample(rng, 200)
    inner = np.einsum("ij,ij->i", eval_operator(inst, X) - eval_operator(inst, Y), X - Y)
    assert inner.min() >= -1e-9


# -- KKT construction --------------------------------------------------------


def test_qc1_constructor(QC1):
    np.testing.assert_allclose(QC1.operator.b, [-1.75, -0.75], atol=1e-15)
    assert QC1.L == pytest.approx(np.sqrt(5))
    assert QC1.M_g == pytest.approx(np.sqrt(2))
    assert QC1.L_g == 0 and QC1.H_g == 0
    r = kkt_residuals(QC1, X_STAR, [1.0])
    assert max(r.values()) == 0.0


def test_no_active_constraints_gives_minus_Ax():
    inst = build_kkt_instance(Box([-1, -1], [1, 1]), ROTATION, [AffineConstraint([1.0, 1.0])], X_STAR, [0.0])
    np.testing.assert_allclose(inst.operator.b, -ROTATION @ X_STAR, atol=1e-15)
    assert eval_constraints(inst, X_STAR)[0] == pytest.approx(-0.25)


def test_quadratic_active_constraint():
    inst = qq(2.0)
    np.testing.assert_allclose(inst.operator.b, -ROTATION @ X_STAR - 2 * np.array([0.5, 0.5]), atol=1e-15)
    assert eval_constraints(inst, X_STAR)[0] == pytest.approx(0.0, abs=1e-15)
    assert kkt_residuals(inst, X_STAR, [2.0])["stationarity"] <= 1e-12


def test_constructor_rejects_boundary_solution():
    with pytest.raises(InputError):
        build_kkt_instance(Box([-1, -1], [1, 1]), ROTATION, [AffineConstraint([1, 1])], [1.0, 0.0], [1.0])


def test_constructor_rejects_bad_active_geometry():
    with pytest.raises(InputError):
        build_kkt_instance(Box([-1, -1], [1, 1]), ROTATION, [AffineConstraint([1, 1])], X_STAR, [1.0], active=[])
    with pytest.raises(InputError):
        # zero gradient at x*: the quadratic ||x - x*||^2 cannot carry a multiplier
        con = QuadraticConstraint(np.eye(2), -2 * X_STAR)
        build_kkt_instance(Box([-1, -1], [1, 1]), ROTATION, [con], X_STAR, [1.0])
    with pytest.raises(InputError):
        build_kkt_instance(Box([-1, -1], [1, 1]), ROTATION, [NormConstraint(X_STAR, 1.0)], X_STAR, [1.0])


def test_known_solution_checked_at_construction(QC1):
    bad = dict(instance_to_dict(QC1), known_solution={"x": [0.25, 0.25], "lambda": [2.0]})
    with pytest.raises(InputError):
        instance_from_dict(bad)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**31 - 1))
def test_built_instances_satisfy_kkt(seed):
    inst = random_kkt_instance(np.random.default_rng(seed))
    r = check_known_solution(inst)
    assert r["stationarity"] <= 1e-10 and r["complementarity"] <= 1e-10


def test_json_round_trip_and_builtins(QC1, QQ, QC1N):
    for inst in (QC1, QQ, QC1N):
        back = instance_from_dict(json.loads(json.dumps(instance_to_dict(inst))))
        x = np.array([0.3, -0.7])
        np.testing.assert_array_equal(eval_operator(back, x), eval_operator(inst, x))
        np.testing.assert_array_equal(eval_constraints(back, x), eval_constraints(inst, x))
        assert back.metadata() == inst.metadata()
        shipped = load_builtin(inst.label)
        np.testing.assert_array_equal(eval_operator(shipped, x), eval_operator(inst, x))


def test_instance_document_errors():
    with pytest.raises(ConfigError):
        instance_from_dict({"set": {"kind": "box", "lower": [0], "upper": [1]}})


def test_random_monotone_helper_is_monotone():
    A = random_monotone_matrix(np.random.default_rng(1), 6)
    assert np.linalg.eigvalsh(A + A.T).min() >= -1e-12
