"""Convergence criteria, grid oracles and empirical rate fitting.

The weak gap max_{x feasible} <F(x), x_bar - x> has no closed form.  We
report a lower bound restricted to a finite probe set in any dimension, and
an exhaustive grid version for n <= 3 that acts as the desk-scale oracle.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import ConfigError, FitError, InputError, UnsupportedDimension
from .problem import Ball, Box, ProblemInstance, ProductSet, Simplex, eval_constraints, eval_operator

FEAS_TOL = 1e-9
FLOOR = 1e-13
TRACE_FIELDS = ("t", "gamma_sum", "infeas", "gap_restricted", "lambda_norm", "eta", "wall_s")


def infeasibility(instance: ProblemInstance, x) -> float:
    """||[g(x)]_+||."""
    g = eval_constraints(instance, np.asarray(x, dtype=np.float64))
    return float(np.linalg.norm(np.maximum(g, 0.0)))


def _in_set(S, P: np.ndarray, tol: float = 1e-12) -> np.ndarray:
    if isinstance(S, Box):
        return np.all((P >= S.lower - tol) & (P <= S.upper + tol), axis=1)
    if isinstance(S, Ball):
        return np.linalg.norm(P - S.center, axis=1) <= S.radius + tol
    if isinstance(S, ProductSet):
        return np.all([_in_set(f, b, tol) for f, b in zip(S.factors, S.blocks(P))], axis=0)
    return np.all(P >= -tol, axis=1) & (np.abs(P.sum(axis=1) - S.scale) <= tol * max(1.0, S.n))


def _feasible_mask(instance: ProblemInstance, points: np.ndarray, tol: float = FEAS_TOL) -> np.ndarray:
    in_set = _in_set(instance.set, points)
    if instance.m == 0:
        return in_set
    g = eval_constraints(instance, points)
    return in_set & np.all(g <= tol, axis=1)


def validate_probes(instance: ProblemInstance, probes) -> np.ndarray:
    P = np.atleast_2d(np.asarray(probes, dtype=np.float64))
    if P.size == 0:
        raise ConfigError("probe set is empty")
    if P.shape[1] != instance.n:
        raise InputError(f"probes must have {instance.n} columns")
    ok = _feasible_mask(instance, P)
    if not ok.all():
        bad = int(np.flatnonzero(~ok)[0])
        raise InputError(f"probe {bad} = {P[bad].tolist()} is not feasible")
    return P


def restricted_weak_gap(instance: ProblemInstance, x_bar, probes, validate: bool = True) -> float:
    """max over probes p of <F(p), x_bar - p>; a lower bound on the weak gap."""
    P = validate_probes(instance, probes) if validate else np.atleast_2d(probes)
    if P.shape[0] == 0:
        raise ConfigError("probe set is empty")
    FP = eval_operator(instance, P)
    return float(np.max(np.einsum("ij,ij->i", FP, np.asarray(x_bar) - P)))


def _axis(lo: float, hi: float, step: float) -> np.ndarray:
    k = int(math.floor((hi - lo) / step + 1e-9))
    return lo + step * np.arange(k + 1)


def _set_grid(S, step: float) -> np.ndarray:
    n = S.dim
    if isinstance(S, ProductSet):
        parts = [_set_grid(f, step) for f in S.factors]
        idx = np.stack(np.meshgrid(*[np.arange(len(p)) for p in parts], indexing="ij"), axis=-1)
        idx = idx.reshape(-1, len(parts))
        return np.hstack([p[idx[:, k]] for k, p in enumerate(parts)])
    if isinstance(S, Simplex):
        if n == 1:
            return np.array([[S.scale]])
        axes = [_axis(0.0, S.scale, step)] * (n - 1)
        head = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, n - 1)
        head = head[head.sum(axis=1) <= S.scale + 1e-12]
        return np.hstack([head, np.maximum(S.scale - head.sum(axis=1, keepdims=True), 0.0)])
    if isinstance(S, Box):
        lo, hi = S.lower, S.upper
    else:
        lo, hi = S.center - S.radius, S.center + S.radius
    axes = [_axis(lo[i], hi[i], step) for i in range(n)]
    pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, n)
    if isinstance(S, Ball):
        pts = pts[np.linalg.norm(pts - S.center, axis=1) <= S.radius]
    return pts


def feasible_grid(instance: ProblemInstance, grid_step: float) -> np.ndarray:
    """All points of a regular grid (spacing ``grid_step``) lying in X ∩ {g <= 0}."""
    if grid_step <= 0:
        raise InputError("grid_step must be positive")
    if instance.n > 3:
        raise UnsupportedDimension(f"grid oracles support n <= 3, got n = {instance.n}")
    pts = _set_grid(instance.set, grid_step)
    if instance.m:
        pts = pts[np.all(eval_constraints(instance, pts) <= FEAS_TOL, axis=1)]
    return pts


def brute_force_weak_gap(instance: ProblemInstance, x_bar, grid_step: float) -> float:
    """Exhaustive max of <F(p), x_bar - p> over the feasible grid (n <= 3)."""
    pts = feasible_grid(instance, grid_step)
    if pts.shape[0] == 0:
        raise InputError("the feasible grid is empty; use a finer grid_step")
    FP = eval_operator(instance, pts)
    return float(np.max(np.einsum("ij,ij->i", FP, np.asarray(x_bar) - pts)))


def lagrangian_gap(instance: ProblemInstance, x_bar, lam_bar) -> float:
    """L(x_bar, lambda*) - L(x*, lam_bar) with L(x, l) = <F(x*), x> + <l, g(x)>."""
    sol = instance.known_solution
    if sol is None:
        raise ConfigError("lagrangian_gap needs a known solution")
    x_bar = np.asarray(x_bar, dtype=np.float64)
    Fs = eval_operator(instance, sol.x)
    return float(
        Fs @ (x_bar - sol.x)
        + sol.lam @ eval_constraints(instance, x_bar)
        - np.asarray(lam_bar) @ eval_constraints(instance, sol.x)
    )


def default_probes(instance: ProblemInstance, count: int = 64, seed: int = 0) -> np.ndarray:
    """x* (if known), feasible set extreme points, and rejection-sampled feasible points."""
    pts = []
    if instance.known_solution is not None:
        pts.append(instance.known_solution.x)
    S = instance.set
    if isinstance(S, Box) and S.dim <= 10:
        corners = np.array(np.meshgrid(*zip(S.lower, S.upper), indexing="ij")).reshape(S.dim, -1).T
        pts.extend(corners)
    elif isinstance(S, Simplex):
        pts.extend(S.scale * np.eye(S.dim))
    elif isinstance(S, Ball):
        e = np.eye(S.dim) * S.radius
        pts.extend(S.center + e)
        pts.extend(S.center - e)
    elif isinstance(S, ProductSet):
        pts.append(S.center)
    rng = np.random.default_rng(seed)
    sampled, tries = [], 0
    while len(sampled) < count and tries < 200:
        cand = S.sample(rng, 4 * count)
        sampled.extend(cand[_feasible_mask(instance, cand)][: count - len(sampled)])
        tries += 1
    pts.extend(sampled)
    P = np.array(pts, dtype=np.float64).reshape(-1, instance.n)
    keep = _feasible_mask(instance, P)
    if not keep.any():
        raise InputError("could not find any feasible probe point")
    return P[keep]


# ---------------------------------------------------------------------------
# traces and rate fits
# ---------------------------------------------------------------------------


@dataclass
class ConvergenceTrace:
    records: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def add(self, **rec) -> None:
        if self.records:
            prev = self.records[-1]
            if rec["t"] <= prev["t"] or rec["gamma_sum"] < prev["gamma_sum"]:
                raise ValueError("trace records must have increasing t and nondecreasing gamma_sum")
        self.records.append(rec)

    def column(self, name: str) -> np.ndarray:
        return np.array([r[name] for r in self.records], dtype=np.float64)

    def to_csv(self, include_wall: bool = True) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(TRACE_FIELDS)
        for r in self.records:
            row = [r["t"]] + [repr(float(r[k])) for k in TRACE_FIELDS[1:-1]]
            row.append(repr(float(r["wall_s"])) if include_wall else "")
            w.writerow(row)
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str, meta: Optional[dict] = None) -> "ConvergenceTrace":
        tr = cls(meta=dict(meta or {}))
        for row in csv.DictReader(io.StringIO(text)):
            tr.records.append(
                {k: (int(row[k]) if k == "t" else float(row[k] or "nan")) for k in TRACE_FIELDS}
            )
        return tr


@dataclass(frozen=True)
class RateFit:
    slope: float
    intercept: float
    residual: float
    channel: str
    points: int

    def to_dict(self) -> dict:
        return {
            "slope": self.slope,
            "intercept": self.intercept,
            "residual": self.residual,
            "channel": self.channel,
            "points": self.points,
        }


def fit_power_law(ts, errors, channel: str = "", min_points: int = 4) -> RateFit:
    """Least-squares fit of log(error) = slope * log(t) + intercept.

    Points with error below 1e-13 sit on the floating-point floor and are
    dropped.  ``residual`` is the RMS of the log-space residuals.
    """
    ts = np.asarray(ts, dtype=np.float64)
    es = np.asarray(errors, dtype=np.float64)
    keep = np.isfinite(es) & (es >= FLOOR) & (ts > 0)
    if keep.sum() < min_points:
        raise FitError(f"need at least {min_points} points above the floor, have {int(keep.sum())}")
    lx, ly = np.log(ts[keep]), np.log(es[keep])
    A = np.vstack([lx, np.ones_like(lx)]).T
    (slope, intercept), *_ = np.linalg.lstsq(A, ly, rcond=None)
    resid = ly - (slope * lx + intercept)
    return RateFit(float(slope), float(intercept), float(np.sqrt(np.mean(resid**2))), channel, int(keep.sum()))


def fit_rate(trace: ConvergenceTrace, channel: str = "infeas", tail_fraction: float = 0.5) -> RateFit:
    """Fit the log-log slope over the last ``tail_fraction`` of the checkpoints (at least 4)."""
    if channel not in ("infeas", "gap_restricted"):
        raise ConfigError(f"unknown channel {channel!r}")
    if not 0 < tail_fraction <= 1:
        raise ConfigError("tail_fraction must be in (0, 1]")
    ts, es = trace.column("t"), trace.column(channel)
    k = max(4, int(math.ceil(tail_fraction * len(ts))))
    return fit_power_law(ts[-k:], es[-k:], channel)
