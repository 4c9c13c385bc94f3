"""Convex-concave saddle point problems with coupling constraints.

    min_{u in U} max_{v in V} f(u, v)   s.t.  g(u, v) <= 0

is reduced to a constrained VI over W = U x V with the stacked operator
F(w) = [grad_u f; -grad_v f].  Built-in payoffs are

    f(u, v) = 1/2 u'Pu + u'Kv + a'u + b'v - 1/2 v'Rv

with P, R PSD (P = R = 0 is the bilinear case).  Gap and equilibrium checks
are probe / grid based, like their VI counterparts.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import ConfigError, InputError, UnsupportedDimension
from .metrics import FEAS_TOL, _set_grid, feasible_grid, validate_probes
from .problem import (
    MONOTONE_TOL,
    AffineOperator,
    ConstraintSet,
    CustomOperator,
    KnownSolution,
    ProblemInstance,
    SimpleSet,
    _mat,
    _vec,
    build_kkt_instance,
    constraint_from_dict,
    product_set,
    set_from_dict,
)

UNCHECKED_TAG = "[convex-concavity unchecked]"


@dataclass(frozen=True, eq=False)
class QuadraticPayoff:
    K: np.ndarray
    a: np.ndarray
    b: np.ndarray
    P: Optional[np.ndarray] = None
    R: Optional[np.ndarray] = None

    def __post_init__(self):
        K = _mat(self.K, "K")
        n_u, n_v = K.shape
        a, b = _vec(self.a, "a"), _vec(self.b, "b")
        if a.size != n_u or b.size != n_v:
            raise InputError(f"a must have {n_u} and b {n_v} entries")
        P = np.zeros((n_u, n_u)) if self.P is None else _mat(self.P, "P")
        R = np.zeros((n_v, n_v)) if self.R is None else _mat(self.R, "R")
        if P.shape != (n_u, n_u) or R.shape != (n_v, n_v):
            raise InputError("P must be n_u x n_u and R n_v x n_v")
        for name, M in (("P", P), ("R", R)):
            if not np.allclose(M, M.T, atol=1e-12):
                raise InputError(f"{name} must be symmetric")
            if M.size and np.linalg.eigvalsh(M).min() < -MONOTONE_TOL:
                side = "convex in u" if name == "P" else "concave in v"
                raise InputError(f"payoff is not {side}: {name} has a negative eigenvalue")
        for name, val in (("K", K), ("a", a), ("b", b), ("P", P), ("R", R)):
            object.__setattr__(self, name, val)

    @property
    def kind(self) -> str:
        return "bilinear" if not (np.any(self.P) or np.any(self.R)) else "quadratic"

    @property
    def n_u(self) -> int:
        return self.K.shape[0]

    @property
    def n_v(self) -> int:
        return self.K.shape[1]

    def value(self, u, v):
        u, v = np.asarray(u, dtype=np.float64), np.asarray(v, dtype=np.float64)
        return (
            0.5 * np.einsum("...i,ij,...j->...", u, self.P, u)
            + np.einsum("...i,ij,...j->...", u, self.K, v)
            + u @ self.a
            + v @ self.b
            - 0.5 * np.einsum("...i,ij,...j->...", v, self.R, v)
        )

    def stacked_matrix(self) -> np.ndarray:
        return np.block([[self.P, self.K], [-self.K.T, self.R]])

    def stacked_offset(self) -> np.ndarray:
        return np.concatenate([self.a, -self.b])

    def to_dict(self) -> dict:
        doc = {"kind": self.kind, "K": self.K.tolist(), "a": self.a.tolist(), "b": self.b.tolist()}
        if self.kind == "quadratic":
            doc["P"] = self.P.tolist()
            doc["R"] = self.R.tolist()
        return doc


@dataclass(frozen=True, eq=False)
class CustomPayoff:
    """Caller-supplied f with its partial gradients; convex-concavity is not checked."""

    func: Callable
    grad_u: Callable
    grad_v: Callable
    n_u: int
    n_v: int
    L: float
    kind = "custom"

    def value(self, u, v):
        u, v = np.asarray(u, dtype=np.float64), np.asarray(v, dtype=np.float64)
        if u.ndim == 1 and v.ndim == 1:
            return float(self.func(u, v))
        U, V = np.atleast_2d(u), np.atleast_2d(v)
        rows = max(U.shape[0], V.shape[0])
        U, V = np.broadcast_to(U, (rows, U.shape[1])), np.broadcast_to(V, (rows, V.shape[1]))
        return np.array([self.func(a, b) for a, b in zip(U, V)])

    def to_dict(self) -> dict:
        raise ConfigError("custom payoffs cannot be serialized")


@dataclass(frozen=True, eq=False)
class SaddleProblem:
    U: SimpleSet
    V: SimpleSet
    payoff: QuadraticPayoff | CustomPayoff
    constraints: tuple = ()
    known_solution: Optional[KnownSolution] = None
    label: str = ""

    def __post_init__(self):
        if self.payoff.n_u != self.U.dim or self.payoff.n_v != self.V.dim:
            raise InputError(
                f"payoff is {self.payoff.n_u} x {self.payoff.n_v} but U, V have dimensions "
                f"{self.U.dim}, {self.V.dim}"
            )
        object.__setattr__(self, "constraints", tuple(self.constraints))
        for c in self.constraints:
            if c.dim != self.n:
                raise InputError("coupling constraints must act on w = (u, v)")

    @property
    def n_u(self) -> int:
        return self.U.dim

    @property
    def n_v(self) -> int:
        return self.V.dim

    @property
    def n(self) -> int:
        return self.n_u + self.n_v

    def split(self, w):
        w = np.asarray(w, dtype=np.float64)
        return w[..., : self.n_u], w[..., self.n_u :]

    def value(self, u, v):
        return self.payoff.value(u, v)


def saddle_to_vi(problem: SaddleProblem) -> ProblemInstance:
    """FCVI over W = U x V with F(w) = [grad_u f(u, v); -grad_v f(u, v)]."""
    W = product_set(problem.U, problem.V)
    cons = ConstraintSet(problem.constraints, problem.n)
    pay = problem.payoff
    if isinstance(pay, QuadraticPayoff):
        op = AffineOperator(pay.stacked_matrix(), pay.stacked_offset())
        label = problem.label
    else:
        n_u = problem.n_u

        def stacked(w, pay=pay):
            u, v = w[:n_u], w[n_u:]
            return np.concatenate([pay.grad_u(u, v), -np.asarray(pay.grad_v(u, v))])

        op = CustomOperator(stacked, problem.n, pay.L)
        label = f"{problem.label} {UNCHECKED_TAG}".strip()
    return ProblemInstance(W, op, cons, problem.known_solution, label=label)


def build_saddle_kkt(
    U: SimpleSet,
    V: SimpleSet,
    K,
    constraints: Sequence,
    w_star,
    lam_star,
    P=None,
    R=None,
    slack: float = 0.25,
    label: str = "",
) -> SaddleProblem:
    """Quadratic saddle problem whose KKT point of the reduced VI is (w_star, lam_star).

    The linear payoff terms a, b are chosen so the stacked operator satisfies
    stationarity at w_star; constraint offsets follow ``build_kkt_instance``.
    """
    K = _mat(K, "K")
    n_u, n_v = K.shape
    base = QuadraticPayoff(K, np.zeros(n_u), np.zeros(n_v), P, R)
    inst = build_kkt_instance(
        product_set(U, V), base.stacked_matrix(), constraints, w_star, lam_star, slack=slack, label=label
    )
    c = inst.operator.b
    payoff = dataclasses.replace(base, a=c[:n_u], b=-c[n_u:])
    return SaddleProblem(U, V, payoff, inst.constraints.items, inst.known_solution, label)


def blockwise_prox(problem: SaddleProblem, w, d, eta: float) -> np.ndarray:
    """Primal prox step on W computed separately for the u- and v-blocks."""
    if eta <= 0:
        raise ConfigError("eta must be positive")
    u, v = problem.split(w)
    du, dv = problem.split(d)
    return np.concatenate([problem.U.project(u - du / eta), problem.V.project(v - dv / eta)])


def _gap_values(problem: SaddleProblem, w_hat, P: np.ndarray) -> np.ndarray:
    u_hat, v_hat = problem.split(_vec(w_hat, "w_hat"))
    up, vp = problem.split(P)
    f_uv = problem.value(np.broadcast_to(u_hat, up.shape), vp)
    f_uv2 = problem.value(up, np.broadcast_to(v_hat, vp.shape))
    return np.atleast_1d(f_uv - f_uv2)


def saddle_gap(problem: SaddleProblem, w_hat, probes, validate: bool = True) -> float:
    """max over probes (u, v) of f(u_hat, v) - f(u, v_hat); a lower bound on the true gap."""
    inst = saddle_to_vi(problem)
    P = validate_probes(inst, probes) if validate else np.atleast_2d(np.asarray(probes, dtype=np.float64))
    if P.shape[0] == 0:
        raise ConfigError("probe set is empty")
    return float(np.max(_gap_values(problem, w_hat, P)))


def saddle_grid_gap(problem: SaddleProblem, w_hat, grid_step: float) -> float:
    """Exhaustive saddle gap over the feasible grid of W (n_u + n_v <= 3)."""
    pts = feasible_grid(saddle_to_vi(problem), grid_step)
    if pts.shape[0] == 0:
        raise InputError("the feasible grid is empty; use a finer grid_step")
    return float(np.max(_gap_values(problem, w_hat, pts)))


@dataclass(frozen=True)
class GNEReport:
    passed: bool
    tol: float
    infeasibility: float
    u_improvement: float
    v_improvement: float
    u_deviation: Optional[list]
    v_deviation: Optional[list]

    def __bool__(self) -> bool:
        return bool(self.passed)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def _coupling(problem: SaddleProblem, W: np.ndarray) -> np.ndarray:
    if not problem.constraints:
        return np.zeros((W.shape[0], 0))
    return ConstraintSet(problem.constraints, problem.n).values(W)


def check_gne(problem: SaddleProblem, w_hat, tol: float, grid_step: float = 1e-3) -> GNEReport:
    """Grid check that neither player gains more than ``tol`` by a feasible unilateral move.

    Player u minimizes f(., v_hat) over U ∩ {g(., v_hat) <= 0}; player v
    maximizes f(u_hat, .) over V ∩ {g(u_hat, .) <= 0}.  ``w_hat`` itself must
    lie in U x V with ||[g(w_hat)]_+|| <= tol.
    """
    if problem.n_u > 3 or problem.n_v > 3:
        raise UnsupportedDimension("check_gne enumerates grids and supports n_u, n_v <= 3")
    if grid_step <= 0:
        raise InputError("grid_step must be positive")
    w_hat = _vec(w_hat, "w_hat")
    u_hat, v_hat = problem.split(w_hat)
    base = float(problem.value(u_hat, v_hat))
    infeas = float(np.linalg.norm(np.maximum(_coupling(problem, w_hat[None, :])[0], 0.0)))
    if not (problem.U.contains(u_hat, 1e-9) and problem.V.contains(v_hat, 1e-9)):
        infeas = float("inf")

    gu = _set_grid(problem.U, grid_step)
    Wu = np.hstack([gu, np.broadcast_to(v_hat, (gu.shape[0], problem.n_v))])
    gu = gu[np.all(_coupling(problem, Wu) <= FEAS_TOL, axis=1)]
    gv = _set_grid(problem.V, grid_step)
    Wv = np.hstack([np.broadcast_to(u_hat, (gv.shape[0], problem.n_u)), gv])
    gv = gv[np.all(_coupling(problem, Wv) <= FEAS_TOL, axis=1)]

    u_gain, u_dev = 0.0, None
    if gu.shape[0]:
        fu = np.atleast_1d(problem.value(gu, np.broadcast_to(v_hat, (gu.shape[0], problem.n_v))))
        k = int(np.argmin(fu))
        u_gain = base - float(fu[k])
        u_dev = gu[k].tolist()
    v_gain, v_dev = 0.0, None
    if gv.shape[0]:
        fv = np.atleast_1d(problem.value(np.broadcast_to(u_hat, (gv.shape[0], problem.n_u)), gv))
        k = int(np.argmax(fv))
        v_gain = float(fv[k]) - base
        v_dev = gv[k].tolist()
    passed = infeas <= tol and u_gain <= tol and v_gain <= tol
    return GNEReport(
        bool(passed),
        float(tol),
        infeas,
        u_gain,
        v_gain,
        u_dev if u_gain > tol else None,
        v_dev if v_gain > tol else None,
    )


# ---------------------------------------------------------------------------
# JSON documents
# ---------------------------------------------------------------------------


def saddle_to_dict(problem: SaddleProblem) -> dict:
    doc = {
        "label": problem.label,
        "U": problem.U.to_dict(),
        "V": problem.V.to_dict(),
        "payoff": problem.payoff.to_dict(),
        "constraints": [c.to_dict() for c in problem.constraints],
    }
    if problem.known_solution is not None:
        doc["known_solution"] = {
            "x": problem.known_solution.x.tolist(),
            "lambda": problem.known_solution.lam.tolist(),
        }
    return doc


def payoff_from_dict(doc: dict) -> QuadraticPayoff:
    kind = doc.get("kind")
    if kind not in ("bilinear", "quadratic"):
        raise ConfigError(f"unknown payoff kind {kind!r}; choose bilinear or quadratic")
    try:
        if kind == "bilinear":
            return QuadraticPayoff(doc["K"], doc["a"], doc["b"])
        return QuadraticPayoff(doc["K"], doc["a"], doc["b"], doc["P"], doc["R"])
    except KeyError as exc:
        raise ConfigError(f"payoff block is missing field {exc}") from None


def saddle_from_dict(doc: dict) -> SaddleProblem:
    try:
        U, V = set_from_dict(doc["U"]), set_from_dict(doc["V"])
        payoff = payoff_from_dict(doc["payoff"])
        cons = tuple(constraint_from_dict(c) for c in doc.get("constraints", []))
        known = doc.get("known_solution")
        sol = KnownSolution(known["x"], known["lambda"]) if known else None
    except KeyError as exc:
        raise ConfigError(f"saddle document is missing field {exc}") from None
    return SaddleProblem(U, V, payoff, cons, sol, doc.get("label", ""))
