"""Canonical small instances used by the tests, examples and acceptance suite.

The JSON copies under ``fcvi/data`` are generated from these builders and
can be referenced from experiment configs as ``{"builtin": "QC1"}``.
"""

from __future__ import annotations

import json
from importlib import resources

import numpy as np

from .errors import ConfigError
from .problem import (
    AffineConstraint,
    Box,
    NormConstraint,
    ProblemInstance,
    QuadraticConstraint,
    build_kkt_instance,
    instance_from_dict,
)
from .saddle import SaddleProblem, build_saddle_kkt, saddle_from_dict

ROTATION = np.array([[1.0, 2.0], [-2.0, 1.0]])
X_STAR = np.array([0.25, 0.25])


def _square() -> Box:
    return Box([-1.0, -1.0], [1.0, 1.0])


def qc1() -> ProblemInstance:
    """Box [-1,1]^2, F(x) = Ax + b, one affine constraint x1 + x2 <= 0.5."""
    return build_kkt_instance(_square(), ROTATION, [AffineConstraint([1.0, 1.0])], X_STAR, [1.0], label="QC1")


def qq(lam: float = 2.0) -> ProblemInstance:
    """Same operator with the smooth constraint ||x||^2 <= 0.125 active at x*."""
    con = QuadraticConstraint(np.eye(2), [0.0, 0.0])
    return build_kkt_instance(_square(), ROTATION, [con], X_STAR, [lam], label="QQ")


def qc1_nonsmooth(scale: float = 1.0) -> ProblemInstance:
    """QC1 whose constraint gains the term scale * ||x - x*||, kinked at the solution.

    The subgradient selection at x* is the affine part, so the operator is
    the same as QC1's.  Slater's condition needs scale < sqrt(2).
    """
    con = NormConstraint(X_STAR, scale, 0.0, linear=[1.0, 1.0])
    return build_kkt_instance(_square(), ROTATION, [con], X_STAR, [1.0], label="QC1N")


def cg1() -> SaddleProblem:
    """Scalar coupled game f(u, v) = uv + au + bv on [-1,1]^2 with u + v <= 0.5."""
    seg = Box([-1.0], [1.0])
    return build_saddle_kkt(seg, seg, [[1.0]], [AffineConstraint([1.0, 1.0])], X_STAR, [1.0], label="CG1")


BUILDERS = {"QC1": qc1, "QQ": qq, "QC1N": qc1_nonsmooth, "CG1": cg1}
SADDLE_BUILTINS = {"CG1"}


def builtin_document(name: str) -> dict:
    if name not in BUILDERS:
        raise ConfigError(f"unknown builtin instance {name!r}; choose from {sorted(BUILDERS)}")
    text = resources.files("fcvi").joinpath("data", f"{name.lower()}.json").read_text()
    return json.loads(text)


def load_builtin(name: str):
    """Instance (or saddle problem) parsed from the shipped JSON document."""
    doc = builtin_document(name)
    return saddle_from_dict(doc) if name in SADDLE_BUILTINS else instance_from_dict(doc)
