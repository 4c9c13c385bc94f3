"""Problem instances: simple sets, monotone operators, convex constraints.

An instance describes the variational inequality

    find x* in X ∩ {g <= 0} with <F(x*), x - x*> >= 0 for every feasible x,

where X is a box, Euclidean ball or scaled simplex, F is monotone and each
g_j is convex.  Everything here is immutable and pure.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Union

import numpy as np

from .errors import ConfigError, InputError

MONOTONE_TOL = 1e-9
KKT_TOL = 1e-10


def _vec(v, name: str = "vector") -> np.ndarray:
    arr = np.asarray(v, dtype=np.float64)
    if arr.ndim != 1:
        raise InputError(f"{name} must be one-dimensional, got shape {arr.shape}")
    return arr


def _mat(v, name: str = "matrix") -> np.ndarray:
    arr = np.asarray(v, dtype=np.float64)
    if arr.ndim != 2:
        raise InputError(f"{name} must be two-dimensional, got shape {arr.shape}")
    return arr


# ---------------------------------------------------------------------------
# simple sets
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Box:
    lower: np.ndarray
    upper: np.ndarray
    kind = "box"

    def __post_init__(self):
        lo, up = _vec(self.lower, "lower"), _vec(self.upper, "upper")
        if lo.shape != up.shape or lo.size == 0:
            raise InputError("box bounds must be non-empty vectors of equal length")
        if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(up))):
            raise InputError("box bounds must be finite (X is compact)")
        if np.any(lo > up):
            raise InputError("box requires lower <= upper componentwise")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", up)

    @property
    def dim(self) -> int:
        return self.lower.size

    @property
    def diameter(self) -> float:
        return float(np.linalg.norm(self.upper - self.lower))

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.lower + self.upper)

    def project(self, point: np.ndarray) -> np.ndarray:
        return np.clip(point, self.lower, self.upper)

    def contains(self, point: np.ndarray, tol: float = 1e-12) -> bool:
        return bool(np.all(point >= self.lower - tol) and np.all(point <= self.upper + tol))

    def is_interior(self, point: np.ndarray) -> bool:
        return bool(np.all(point > self.lower) and np.all(point < self.upper))

    def max_distance_from(self, point: np.ndarray) -> float:
        far = np.maximum(np.abs(point - self.lower), np.abs(point - self.upper))
        return float(np.linalg.norm(far))

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        return rng.uniform(self.lower, self.upper, size=(size, self.dim))

    def to_dict(self) -> dict:
        return {"kind": "box", "lower": self.lower.tolist(), "upper": self.upper.tolist()}


@dataclass(frozen=True, eq=False)
class Ball:
    center: np.ndarray
    radius: float
    kind = "euclidean_ball"

    def __post_init__(self):
        c = _vec(self.center, "center")
        if c.size == 0:
            raise InputError("ball center must be non-empty")
        if not (self.radius > 0 and math.isfinite(self.radius)):
            raise InputError("ball radius must be positive and finite")
        object.__setattr__(self, "center", c)
        object.__setattr__(self, "radius", float(self.radius))

    @property
    def dim(self) -> int:
        return self.center.size

    @property
    def diameter(self) -> float:
        return 2.0 * self.radius

    def project(self, point: np.ndarray) -> np.ndarray:
        d = point - self.center
        r = np.linalg.norm(d)
        if r <= self.radius:
            return point.copy()
        return self.center + d * (self.radius / r)

    def contains(self, point: np.ndarray, tol: float = 1e-12) -> bool:
        return bool(np.linalg.norm(point - self.center) <= self.radius + tol)

    def is_interior(self, point: np.ndarray) -> bool:
        return bool(np.linalg.norm(point - self.center) < self.radius)

    def max_distance_from(self, point: np.ndarray) -> float:
        return float(np.linalg.norm(point - self.center) + self.radius)

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        d = rng.standard_normal((size, self.dim))
        d /= np.linalg.norm(d, axis=1, keepdims=True)
        r = self.radius * rng.uniform(size=(size, 1)) ** (1.0 / self.dim)
        return self.center + r * d

    def to_dict(self) -> dict:
        return {"kind": "euclidean_ball", "center": self.center.tolist(), "radius": self.radius}


@dataclass(frozen=True, eq=False)
class Simplex:
    """{x >= 0 : sum(x) = scale} in R^n."""

    n: int
    scale: float = 1.0
    kind = "simplex"

    def __post_init__(self):
        if int(self.n) < 1:
            raise InputError("simplex dimension must be positive")
        if not (self.scale > 0 and math.isfinite(self.scale)):
            raise InputError("simplex scale must be positive and finite")
        object.__setattr__(self, "n", int(self.n))
        object.__setattr__(self, "scale", float(self.scale))

    @property
    def dim(self) -> int:
        return self.n

    @property
    def diameter(self) -> float:
        return self.scale * math.sqrt(2.0) if self.n > 1 else 0.0

    @property
    def center(self) -> np.ndarray:
        return np.full(self.n, self.scale / self.n)

    def project(self, point: np.ndarray) -> np.ndarray:
        # sort-based projection (Held et al. / Duchi et al.)
        u = np.sort(point)[::-1]
        css = np.cumsum(u) - self.scale
        idx = np.arange(1, self.n + 1)
        rho = np.nonzero(u - css / idx > 0)[0][-1]
        shift = css[rho] / (rho + 1.0)
        return np.maximum(point - shift, 0.0)

    def contains(self, point: np.ndarray, tol: float = 1e-12) -> bool:
        return bool(np.all(point >= -tol) and abs(point.sum() - self.scale) <= tol * max(1.0, self.n))

    def is_interior(self, point: np.ndarray) -> bool:
        # empty interior in R^n for n >= 2
        return False

    def max_distance_from(self, point: np.ndarray) -> float:
        verts = self.scale * np.eye(self.n)
        return float(np.max(np.linalg.norm(verts - point, axis=1)))

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        return self.scale * rng.dirichlet(np.ones(self.n), size=size)

    def to_dict(self) -> dict:
        return {"kind": "simplex", "n": self.n, "scale": self.scale}


@dataclass(frozen=True, eq=False)
class ProductSet:
    """Cartesian product of simple sets; projection acts block by block."""

    factors: tuple
    kind = "product"

    def __post_init__(self):
        facs = tuple(self.factors)
        if not facs:
            raise InputError("a product set needs at least one factor")
        object.__setattr__(self, "factors", facs)

    @property
    def splits(self) -> list:
        return list(np.cumsum([f.dim for f in self.factors])[:-1])

    def blocks(self, point: np.ndarray) -> list:
        return np.split(point, self.splits, axis=-1)

    @property
    def dim(self) -> int:
        return sum(f.dim for f in self.factors)

    @property
    def diameter(self) -> float:
        return math.sqrt(sum(f.diameter**2 for f in self.factors))

    @property
    def center(self) -> np.ndarray:
        return np.concatenate([f.center for f in self.factors])

    def project(self, point: np.ndarray) -> np.ndarray:
        return np.concatenate([f.project(b) for f, b in zip(self.factors, self.blocks(point))])

    def contains(self, point: np.ndarray, tol: float = 1e-12) -> bool:
        return all(f.contains(b, tol) for f, b in zip(self.factors, self.blocks(point)))

    def is_interior(self, point: np.ndarray) -> bool:
        return all(f.is_interior(b) for f, b in zip(self.factors, self.blocks(point)))

    def max_distance_from(self, point: np.ndarray) -> float:
        return math.sqrt(sum(f.max_distance_from(b) ** 2 for f, b in zip(self.factors, self.blocks(point))))

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        return np.hstack([f.sample(rng, size) for f in self.factors])

    def to_dict(self) -> dict:
        return {"kind": "product", "factors": [f.to_dict() for f in self.factors]}


def product_set(*factors) -> "SimpleSet":
    """U x V x ...; boxes collapse into a single box."""
    if all(isinstance(f, Box) for f in factors):
        return Box(np.concatenate([f.lower for f in factors]), np.concatenate([f.upper for f in factors]))
    return ProductSet(tuple(factors))


SimpleSet = Union[Box, Ball, Simplex, ProductSet]


def project(simple_set: SimpleSet, point) -> np.ndarray:
    """Euclidean projection of ``point`` onto ``simple_set``."""
    p = _vec(point, "point")
    if p.size != simple_set.dim:
        raise InputError(f"dimension mismatch: point has {p.size}, set has {simple_set.dim}")
    if not np.all(np.isfinite(p)):
        raise InputError("cannot project a non-finite point")
    return simple_set.project(p)


def set_from_dict(doc: dict) -> SimpleSet:
    kind = doc.get("kind")
    if kind == "box":
        return Box(doc["lower"], doc["upper"])
    if kind in ("euclidean_ball", "ball"):
        return Ball(doc["center"], doc["radius"])
    if kind == "simplex":
        return Simplex(doc["n"], doc.get("scale", 1.0))
    if kind == "product":
        return ProductSet(tuple(set_from_dict(f) for f in doc["factors"]))
    raise ConfigError(f"unknown set kind {kind!r}")


# ---------------------------------------------------------------------------
# operators
# ---------------------------------------------------------------------------


def _sym_min_eig(A: np.ndarray) -> float:
    return float(np.linalg.eigvalsh(0.5 * (A + A.T)).min())


@dataclass(frozen=True, eq=False)
class AffineOperator:
    """F(x) = A x + b + h * sign(x); the sign part is the bounded nonsmooth piece."""

    A: np.ndarray
    b: np.ndarray
    nonsmooth_scale: float = 0.0

    def __post_init__(self):
        A, b = _mat(self.A, "A"), _vec(self.b, "b")
        if A.shape != (b.size, b.size):
            raise InputError(f"A must be {b.size}x{b.size}, got {A.shape}")
        if self.nonsmooth_scale < 0:
            raise InputError("nonsmooth scale must be nonnegative")
        if _sym_min_eig(A) < -MONOTONE_TOL:
            raise InputError("operator is not monotone: (A + A^T)/2 has a negative eigenvalue")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "nonsmooth_scale", float(self.nonsmooth_scale))

    @property
    def kind(self) -> str:
        return "affine_plus_nonsmooth" if self.nonsmooth_scale > 0 else "affine"

    @property
    def dim(self) -> int:
        return self.b.size

    @property
    def L(self) -> float:
        return float(np.linalg.norm(self.A, 2))

    @property
    def H(self) -> float:
        # ||h (sign(x) - sign(y))|| <= 2 h sqrt(n)
        return 2.0 * self.nonsmooth_scale * math.sqrt(self.dim)

    def selection(self, x: np.ndarray) -> np.ndarray:
        return self.nonsmooth_scale * np.sign(x)

    def __call__(self, x: np.ndarray) -> np.ndarray:
        # works row-wise on a batch of points as well
        out = x @ self.A.T + self.b
        if self.nonsmooth_scale > 0:
            out = out + self.selection(x)
        return out

    def with_offset(self, b) -> "AffineOperator":
        return dataclasses.replace(self, b=b)

    def to_dict(self) -> dict:
        doc = {"kind": self.kind, "A": self.A.tolist(), "b": self.b.tolist()}
        if self.nonsmooth_scale > 0:
            doc["nonsmooth_scale"] = self.nonsmooth_scale
        return doc


@dataclass(frozen=True, eq=False)
class CustomOperator:
    """User callback; monotonicity and the moduli are the caller's claim."""

    func: Callable[[np.ndarray], np.ndarray]
    dim: int
    L: float
    H: float = 0.0
    kind = "custom"

    def __call__(self, x: np.ndarray) -> np.ndarray:
        if x.ndim == 2:
            return np.array([self.func(row) for row in x])
        return np.asarray(self.func(x), dtype=np.float64)

    def to_dict(self) -> dict:
        raise ConfigError("custom operators cannot be serialized")


Operator = Union[AffineOperator, CustomOperator]


def operator_from_dict(doc: dict) -> AffineOperator:
    kind = doc.get("kind")
    if kind == "affine":
        return AffineOperator(doc["A"], doc["b"])
    if kind == "affine_plus_nonsmooth":
        return AffineOperator(doc["A"], doc["b"], doc.get("nonsmooth_scale", 0.0))
    raise ConfigError(f"unknown operator kind {kind!r}")


# ---------------------------------------------------------------------------
# constraints
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class AffineConstraint:
    """g(x) = a.x - offset."""

    a: np.ndarray
    offset: float = 0.0
    kind = "affine"

    def __post_init__(self):
        object.__setattr__(self, "a", _vec(self.a, "a"))
        object.__setattr__(self, "offset", float(self.offset))

    @property
    def dim(self) -> int:
        return self.a.size

    def value(self, x):
        return x @ self.a - self.offset

    def gradient(self, x):
        return np.broadcast_to(self.a, np.shape(x)).copy()

    def smoothness(self) -> float:
        return 0.0

    def nonsmoothness(self) -> float:
        return 0.0

    def gradient_bound(self, simple_set: SimpleSet) -> float:
        return float(np.linalg.norm(self.a))

    def to_dict(self) -> dict:
        return {"kind": "affine", "a": self.a.tolist(), "offset": self.offset}


@dataclass(frozen=True, eq=False)
class QuadraticConstraint:
    """g(x) = x'Qx + c.x - offset with Q symmetric PSD."""

    Q: np.ndarray
    c: np.ndarray
    offset: float = 0.0
    kind = "convex_quadratic"

    def __post_init__(self):
        Q, c = _mat(self.Q, "Q"), _vec(self.c, "c")
        if Q.shape != (c.size, c.size):
            raise InputError(f"Q must be {c.size}x{c.size}, got {Q.shape}")
        if not np.allclose(Q, Q.T, atol=1e-12):
            raise InputError("Q must be symmetric")
        if np.linalg.eigvalsh(Q).min() < -MONOTONE_TOL:
            raise InputError("Q must be positive semidefinite (g convex)")
        object.__setattr__(self, "Q", Q)
        object.__setattr__(self, "c", c)
        object.__setattr__(self, "offset", float(self.offset))

    @property
    def dim(self) -> int:
        return self.c.size

    def value(self, x):
        return np.einsum("...i,ij,...j->...", x, self.Q, x) + x @ self.c - self.offset

    def gradient(self, x):
        return 2.0 * x @ self.Q + self.c

    def smoothness(self) -> float:
        return 2.0 * float(np.linalg.norm(self.Q, 2))

    def nonsmoothness(self) -> float:
        return 0.0

    def gradient_bound(self, simple_set: SimpleSet) -> float:
        # ||2Q(x - z) + grad(z)|| <= 2||Q|| max_x ||x - z|| + ||grad(z)||, z the set's center
        z = simple_set.center
        return self.smoothness() * simple_set.max_distance_from(z) + float(
            np.linalg.norm(self.gradient(z))
        )

    def to_dict(self) -> dict:
        return {"kind": "convex_quadratic", "Q": self.Q.tolist(), "c": self.c.tolist(), "offset": self.offset}


@dataclass(frozen=True, eq=False)
class NormConstraint:
    """g(x) = linear . x + scale * ||x - center|| - offset.

    ``linear`` defaults to zero, giving the plain norm-ball constraint.  The
    subgradient selection at the center is ``linear`` (zero for the norm part).
    """

    center: np.ndarray
    scale: float = 1.0
    offset: float = 0.0
    linear: Optional[np.ndarray] = None
    kind = "nonsmooth_norm"

    def __post_init__(self):
        if self.scale < 0:
            raise InputError("norm constraint scale must be nonnegative")
        center = _vec(self.center, "center")
        object.__setattr__(self, "center", center)
        object.__setattr__(self, "scale", float(self.scale))
        object.__setattr__(self, "offset", float(self.offset))
        lin = np.zeros_like(center) if self.linear is None else _vec(self.linear, "linear")
        if lin.size != center.size:
            raise InputError("linear part and center must have the same length")
        object.__setattr__(self, "linear", lin)

    @property
    def dim(self) -> int:
        return self.center.size

    def value(self, x):
        return x @ self.linear + self.scale * np.linalg.norm(x - self.center, axis=-1) - self.offset

    def gradient(self, x):
        d = x - self.center
        r = np.linalg.norm(d, axis=-1, keepdims=True)
        safe = np.where(r > 0, r, 1.0)
        return self.linear + np.where(r > 0, self.scale * d / safe, 0.0)

    def has_strict_sublevel(self) -> bool:
        """Whether {g < 0} is nonempty (over all of R^n)."""
        if np.linalg.norm(self.linear) > self.scale:
            return True
        return float(self.linear @ self.center) < self.offset

    def smoothness(self) -> float:
        return 0.0

    def nonsmoothness(self) -> float:
        return 2.0 * self.scale

    def gradient_bound(self, simple_set: SimpleSet) -> float:
        return float(np.linalg.norm(self.linear)) + self.scale

    def to_dict(self) -> dict:
        doc = {
            "kind": "nonsmooth_norm",
            "center": self.center.tolist(),
            "scale": self.scale,
            "offset": self.offset,
        }
        if np.any(self.linear):
            doc["linear"] = self.linear.tolist()
        return doc


Constraint = Union[AffineConstraint, QuadraticConstraint, NormConstraint]


def constraint_from_dict(doc: dict) -> Constraint:
    kind = doc.get("kind")
    if kind == "affine":
        return AffineConstraint(doc["a"], doc.get("offset", 0.0))
    if kind == "convex_quadratic":
        return QuadraticConstraint(doc["Q"], doc["c"], doc.get("offset", 0.0))
    if kind == "nonsmooth_norm":
        return NormConstraint(doc["center"], doc.get("scale", 1.0), doc.get("offset", 0.0), doc.get("linear"))
    raise ConfigError(f"unknown constraint kind {kind!r}")


@dataclass(frozen=True, eq=False)
class ConstraintSet:
    """The constraint vector g = (g_1, ..., g_m) with aggregate moduli."""

    items: tuple
    dim: int

    def __post_init__(self):
        items = tuple(self.items)
        for j, c in enumerate(items):
            if c.dim != self.dim:
                raise InputError(f"constraint {j} has dimension {c.dim}, expected {self.dim}")
        object.__setattr__(self, "items", items)

    @property
    def m(self) -> int:
        return len(self.items)

    @property
    def L_g(self) -> float:
        return math.sqrt(sum(c.smoothness() ** 2 for c in self.items))

    @property
    def H_g(self) -> float:
        return math.sqrt(sum(c.nonsmoothness() ** 2 for c in self.items))

    def gradient_bound(self, simple_set: SimpleSet) -> float:
        # Frobenius-type aggregate; dominates the spectral norm of the Jacobian
        return math.sqrt(sum(c.gradient_bound(simple_set) ** 2 for c in self.items))

    def values(self, x: np.ndarray) -> np.ndarray:
        if not self.items:
            return np.zeros(x.shape[:-1] + (0,))
        return np.stack([c.value(x) for c in self.items], axis=-1)

    def jacobian(self, x: np.ndarray) -> np.ndarray:
        """n x m matrix whose columns are the constraint (sub)gradients."""
        if not self.items:
            return np.zeros((self.dim, 0))
        return np.stack([c.gradient(x) for c in self.items], axis=-1)


# ---------------------------------------------------------------------------
# instances
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class KnownSolution:
    x: np.ndarray
    lam: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "x", _vec(self.x, "x*"))
        object.__setattr__(self, "lam", _vec(self.lam, "lambda*"))


@dataclass(frozen=True, eq=False)
class ProblemInstance:
    set: SimpleSet
    operator: Operator
    constraints: ConstraintSet
    known_solution: Optional[KnownSolution] = None
    label: str = ""
    M_g_override: Optional[float] = None
    _M_g: float = field(init=False, repr=False, default=0.0)

    def __post_init__(self):
        n = self.set.dim
        if self.operator.dim != n or self.constraints.dim != n:
            raise InputError("set, operator and constraints must share the dimension")
        M_g = self.M_g_override
        if M_g is None:
            M_g = self.constraints.gradient_bound(self.set)
        object.__setattr__(self, "_M_g", float(M_g))
        if self.known_solution is not None:
            check_known_solution(self)

    @property
    def n(self) -> int:
        return self.set.dim

    @property
    def m(self) -> int:
        return self.constraints.m

    @property
    def L(self) -> float:
        return self.operator.L

    @property
    def H(self) -> float:
        return self.operator.H

    @property
    def L_g(self) -> float:
        return self.constraints.L_g

    @property
    def H_g(self) -> float:
        return self.constraints.H_g

    @property
    def M_g(self) -> float:
        return self._M_g

    @property
    def D_X(self) -> float:
        return self.set.diameter

    @property
    def is_smooth(self) -> bool:
        return self.H == 0 and self.H_g == 0

    def metadata(self) -> dict:
        return {
            "L": self.L,
            "H": self.H,
            "L_g": self.L_g,
            "H_g": self.H_g,
            "M_g": self.M_g,
            "D_X": self.D_X,
        }


def eval_operator(instance: ProblemInstance, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != instance.n:
        raise InputError(f"dimension mismatch: expected {instance.n}, got {x.shape[-1]}")
    return instance.operator(x)


def eval_constraints(instance: ProblemInstance, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != instance.n:
        raise InputError(f"dimension mismatch: expected {instance.n}, got {x.shape[-1]}")
    return instance.constraints.values(x)


def eval_constraint_jacobian(instance: ProblemInstance, x) -> np.ndarray:
    x = _vec(x, "x")
    if x.size != instance.n:
        raise InputError(f"dimension mismatch: expected {instance.n}, got {x.size}")
    return instance.constraints.jacobian(x)


def linearize_constraints(g_prev, J_prev, x_prev, x) -> np.ndarray:
    """Linear model g(x_prev) + J(x_prev)^T (x - x_prev)."""
    return g_prev + (x - x_prev) @ J_prev


def check_known_solution(instance: ProblemInstance, tol: float = KKT_TOL) -> dict:
    """Verify the KKT conditions of the recorded (x*, lambda*); raise on violation."""
    sol = instance.known_solution
    if sol is None:
        raise ConfigError("instance has no known solution")
    r = kkt_residuals(instance, sol.x, sol.lam)
    if sol.x.size != instance.n or sol.lam.size != instance.m:
        raise InputError("known solution has wrong dimensions")
    if not instance.set.contains(sol.x, tol):
        raise InputError("x* is not in X")
    problems = []
    if r["infeasibility"] > tol:
        problems.append(f"max g(x*) = {r['infeasibility']:.3e}")
    if r["dual_negativity"] > 0:
        problems.append("lambda* has negative entries")
    if r["complementarity"] > tol:
        problems.append(f"complementarity residual {r['complementarity']:.3e}")
    if instance.set.is_interior(sol.x) and r["stationarity"] > tol:
        problems.append(f"stationarity residual {r['stationarity']:.3e}")
    if problems:
        raise InputError("known solution violates KKT: " + "; ".join(problems))
    return r


def kkt_residuals(instance: ProblemInstance, x, lam) -> dict:
    x, lam = _vec(x), _vec(lam)
    g = eval_constraints(instance, x)
    J = eval_constraint_jacobian(instance, x)
    return {
        "stationarity": float(np.linalg.norm(eval_operator(instance, x) + J @ lam)),
        "infeasibility": float(max(g.max(initial=0.0), 0.0)),
        "complementarity": float(np.abs(lam * g).max(initial=0.0)),
        "dual_negativity": float(max(-lam.min(initial=0.0), 0.0)),
    }


def build_kkt_instance(
    simple_set: SimpleSet,
    A,
    constraints: Sequence[Constraint],
    x_star,
    lam_star,
    active: Optional[Sequence[int]] = None,
    slack: float = 0.25,
    nonsmooth_scale: float = 0.0,
    label: str = "",
) -> ProblemInstance:
    """Build an instance whose KKT point is exactly (x_star, lam_star).

    Constraint offsets are overwritten: active constraints are made tight at
    ``x_star`` and inactive ones get ``g_j(x_star) = -slack``.  The operator
    offset is then chosen so that F(x*) + J(x*) lam* = 0.  When ``active`` is
    omitted, the constraints with a positive multiplier are active.
    """
    x_star, lam_star = _vec(x_star, "x*"), _vec(lam_star, "lambda*")
    m = len(constraints)
    if x_star.size != simple_set.dim or lam_star.size != m:
        raise InputError("x* / lambda* dimensions do not match the set / constraints")
    if not simple_set.is_interior(x_star):
        raise InputError("x* must lie strictly inside X (the normal cone term would not vanish)")
    if np.any(lam_star < 0):
        raise InputError("lambda* must be nonnegative")
    active_set = set(np.flatnonzero(lam_star > 0).tolist() if active is None else active)
    if any(j < 0 or j >= m for j in active_set):
        raise InputError("active index out of range")
    for j in range(m):
        if lam_star[j] > 0 and j not in active_set:
            raise InputError(f"lambda*_{j} > 0 but constraint {j} is not active")
    if slack <= 0:
        raise InputError("slack for inactive constraints must be positive")

    tuned = []
    for j, con in enumerate(constraints):
        raw = float(con.value(x_star) + con.offset)  # value without offset
        offset = raw if j in active_set else raw + slack
        if j in active_set:
            if isinstance(con, NormConstraint) and not dataclasses.replace(con, offset=offset).has_strict_sublevel():
                raise InputError(f"active norm constraint {j} would have an empty sublevel set")
            if np.linalg.norm(con.gradient(x_star)) == 0:
                raise InputError(f"active constraint {j} has a vanishing gradient at x*")
        tuned.append(dataclasses.replace(con, offset=offset))
    cons = ConstraintSet(tuple(tuned), simple_set.dim)

    A = _mat(A, "A")
    J = cons.jacobian(x_star)
    b = -(A @ x_star) - J @ lam_star
    op = AffineOperator(A, np.zeros(simple_set.dim), nonsmooth_scale)
    b = b - op.selection(x_star)
    op = op.with_offset(b)
    return ProblemInstance(
        simple_set, op, cons, KnownSolution(x_star, lam_star), label=label
    )


def estimate_jacobian_bound(instance: ProblemInstance, samples: int = 10_000, seed: int = 0, inflation: float = 1.05) -> float:
    """Sampled estimate of max ||J(x)|| over X (Frobenius), inflated."""
    rng = np.random.default_rng(seed)
    pts = instance.set.sample(rng, samples)
    norms = [np.linalg.norm(instance.constraints.jacobian(p)) for p in pts]
    return inflation * float(max(norms, default=0.0))


# ---------------------------------------------------------------------------
# JSON documents
# ---------------------------------------------------------------------------


def instance_to_dict(instance: ProblemInstance) -> dict:
    doc = {
        "label": instance.label,
        "n": instance.n,
        "set": instance.set.to_dict(),
        "operator": instance.operator.to_dict(),
        "constraints": [c.to_dict() for c in instance.constraints.items],
        "metadata": instance.metadata(),
    }
    if instance.known_solution is not None:
        doc["known_solution"] = {
            "x": instance.known_solution.x.tolist(),
            "lambda": instance.known_solution.lam.tolist(),
        }
    if instance.M_g_override is not None:
        doc["M_g_override"] = instance.M_g_override
    return doc


def instance_from_dict(doc: dict) -> ProblemInstance:
    try:
        simple_set = set_from_dict(doc["set"])
        op = operator_from_dict(doc["operator"])
        cons = ConstraintSet(
            tuple(constraint_from_dict(c) for c in doc.get("constraints", [])), simple_set.dim
        )
        known = doc.get("known_solution")
        sol = KnownSolution(known["x"], known["lambda"]) if known else None
    except KeyError as exc:
        raise ConfigError(f"instance document is missing field {exc}") from None
    return ProblemInstance(
        simple_set, op, cons, sol, label=doc.get("label", ""), M_g_override=doc.get("M_g_override")
    )
