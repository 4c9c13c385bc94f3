"""Seeded stochastic oracles for F, g and the constraint Jacobian.

Noise is additive and zero-mean.  Every draw is keyed by
(master_seed, t, stream, draw index) through a Philox counter, so a run is
a pure function of its seed regardless of evaluation order, and the
primary/bar streams of one iteration never share random numbers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError
from .problem import ProblemInstance, eval_constraint_jacobian, eval_constraints, eval_operator, linearize_constraints

PRIMARY = "primary"
BAR = "bar"
_STREAM_IDS = {PRIMARY: 0, BAR: 1}

# draw indices inside one (t, stream) cell
DRAW_OPERATOR = 0
DRAW_CONSTRAINTS = 1

NOISE_SHAPES = ("gaussian", "bounded_uniform")


@dataclass(frozen=True)
class StochasticOracleSpec:
    sigma_F: float = 0.0
    sigma_g: float = 0.0
    sigma_Gamma: tuple = ()
    noise_shape: str = "gaussian"
    master_seed: int = 0

    def __post_init__(self):
        sg = tuple(float(s) for s in np.atleast_1d(self.sigma_Gamma)) if np.size(self.sigma_Gamma) else ()
        object.__setattr__(self, "sigma_Gamma", sg)
        if self.sigma_F < 0 or self.sigma_g < 0 or any(s < 0 for s in sg):
            raise ConfigError("noise levels must be nonnegative")
        if self.noise_shape not in NOISE_SHAPES:
            raise ConfigError(f"noise_shape must be one of {NOISE_SHAPES}")
        if not 0 <= int(self.master_seed) < 2**64:
            raise ConfigError("master_seed must fit in 64 bits")

    def sigma_Gamma_vector(self, m: int) -> np.ndarray:
        if not self.sigma_Gamma:
            return np.zeros(m)
        if len(self.sigma_Gamma) == 1:
            return np.full(m, self.sigma_Gamma[0])
        if len(self.sigma_Gamma) != m:
            raise ConfigError(f"sigma_Gamma has {len(self.sigma_Gamma)} entries, instance has {m} constraints")
        return np.asarray(self.sigma_Gamma)

    @property
    def is_noiseless(self) -> bool:
        return self.sigma_F == 0 and self.sigma_g == 0 and not any(self.sigma_Gamma)


def stream_rng(master_seed: int, t: int, which: str, draw: int) -> np.random.Generator:
    """Generator for one (t, stream, draw) cell.

    The lowest counter word is left at zero so each cell has 2**64 blocks of
    its own before it could run into a neighbour.
    """
    counter = [0, int(draw), _STREAM_IDS[which], int(t)]
    return np.random.Generator(np.random.Philox(key=int(master_seed), counter=counter))


def _noise(rng: np.random.Generator, shape, scale: np.ndarray | float, noise_shape: str) -> np.ndarray:
    """Zero-mean noise; ``scale`` is the per-entry std for gaussian, half-width for uniform."""
    if noise_shape == "gaussian":
        return scale * rng.standard_normal(shape)
    return scale * rng.uniform(-1.0, 1.0, shape)


def _entry_scale(sigma, count: int, noise_shape: str):
    # split a norm budget sigma over `count` entries: E||e||^2 = sigma^2 (gaussian)
    # or ||e|| <= sigma almost surely (uniform)
    return np.asarray(sigma) / math.sqrt(max(count, 1))


def sample_operator(instance: ProblemInstance, spec: StochasticOracleSpec, x, t: int, which: str = PRIMARY) -> np.ndarray:
    """F(x) plus zero-mean noise with E||noise||^2 <= sigma_F^2."""
    value = eval_operator(instance, x)
    if spec.sigma_F == 0:
        return value
    rng = stream_rng(spec.master_seed, t, which, DRAW_OPERATOR)
    scale = _entry_scale(spec.sigma_F, instance.n, spec.noise_shape)
    return value + _noise(rng, instance.n, scale, spec.noise_shape)


def sample_constraints(instance: ProblemInstance, spec: StochasticOracleSpec, x, t: int, which: str = PRIMARY):
    """Noisy (g(x), J(x)) drawn jointly from the (t, which) cell.

    The same cell always produces the same noise, so evaluating it at two
    points reuses one realization of the random variable.
    """
    g = eval_constraints(instance, x)
    J = eval_constraint_jacobian(instance, x)
    sG = spec.sigma_Gamma_vector(instance.m)
    if spec.sigma_g == 0 and not np.any(sG):
        return g, J
    rng = stream_rng(spec.master_seed, t, which, DRAW_CONSTRAINTS)
    n, m = instance.n, instance.m
    g_noise = _noise(rng, m, _entry_scale(spec.sigma_g, m, spec.noise_shape), spec.noise_shape)
    J_noise = _noise(rng, (n, m), _entry_scale(sG, n, spec.noise_shape), spec.noise_shape)
    if spec.sigma_g > 0:
        g = g + g_noise
    if np.any(sG):
        J = J + J_noise
    return g, J


def stochastic_linearize(g_prev, J_prev, x_prev, x) -> np.ndarray:
    """Linear model built from a noisy (value, Jacobian) sample at ``x_prev``."""
    return linearize_constraints(g_prev, J_prev, x_prev, x)


@dataclass
class OracleCounter:
    """Bookkeeping of how many independent samples a solver consumed."""

    operator_draws: int = 0
    constraint_draws: int = 0
    cells: dict = field(default_factory=dict)

    def operator(self, t: int, which: str) -> None:
        self.operator_draws += 1
        self.cells.setdefault(t, []).append(("F", which))

    def constraints(self, t: int, which: str) -> None:
        key = ("g", which)
        cell = self.cells.setdefault(t, [])
        if key not in cell:
            self.constraint_draws += 1
            cell.append(key)
