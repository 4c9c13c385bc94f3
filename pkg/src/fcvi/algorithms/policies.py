"""Step-size policies.

Four constant policies (known multiplier, bound B, stochastic, fully
stochastic) share the form gamma = theta = 1, eta_t = L_g B + eta,
tau_t = tau.  The adaptive policy computes its parameters online from the
largest multiplier norm seen so far.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ..errors import ConfigError
from ..oracles import StochasticOracleSpec
from ..problem import ProblemInstance

POLICIES = ("det_known_lambda", "det_B", "stoch_B", "fully_stoch_B", "adaptive")
MODES = ("sum", "max")


@dataclass(frozen=True)
class StepParams:
    gamma: float
    theta: float
    eta: float
    tau: float


@dataclass(frozen=True)
class ConstantSchedule:
    """gamma_t = theta_t = 1, eta_t = L_g B + eta, tau_t = tau for all t."""

    name: str
    eta: float
    tau: float
    B: float
    T: int
    c: float = 0.0
    mode: str = "sum"
    terms: dict = field(default_factory=dict)

    adaptive = False

    def at(self, t: int) -> StepParams:
        return StepParams(1.0, 1.0, self.eta, self.tau)

    def describe(self) -> dict:
        return {
            "policy": self.name,
            "B": self.B,
            "T": self.T,
            "c": self.c,
            "mode": self.mode,
            "eta": self.eta,
            "tau": self.tau,
            "eta_terms": dict(self.terms),
        }


def exact_ratio(num: float, den: float) -> float:
    """theta with fl(den * theta) == num whenever such a double exists near num/den."""
    theta = num / den
    if den * theta == num:
        return theta
    lo = hi = theta
    for _ in range(4):
        lo = np.nextafter(lo, -np.inf)
        hi = np.nextafter(hi, np.inf)
        if den * lo == num:
            return float(lo)
        if den * hi == num:
            return float(hi)
    return theta


def exact_pair(gamma_prev: float, gamma: float) -> tuple:
    """(gamma', theta) with gamma' within a few ulps of gamma and fl(gamma' * theta) == gamma_prev.

    Not every quotient has a double theta that multiplies back exactly, so
    gamma is nudged (downward first, which keeps gamma * eta nonincreasing).
    Since eta_t never decreases, gamma never exceeds gamma_prev.
    """
    if gamma >= gamma_prev:
        return gamma_prev, 1.0
    cands = [gamma]
    lo = hi = gamma
    for _ in range(16):
        lo = float(np.nextafter(lo, 0.0))
        cands.append(lo)
    for _ in range(16):
        hi = float(np.nextafter(hi, np.inf))
        cands.append(hi)
    for g in cands:
        if g > gamma_prev:
            continue
        theta = exact_ratio(gamma_prev, g)
        if g * theta == gamma_prev:
            return g, theta
    return gamma, gamma_prev / gamma


@dataclass(frozen=True)
class AdaptiveSchedule:
    """eta_t = c1 L + c2 L_g max_{i<=t} ||lambda^i||, gamma_t = eta_0/eta_t,
    theta_t = gamma_{t-1}/gamma_t, tau_t = beta eta_t."""

    c1: float
    c2: float
    beta: float
    L: float
    L_g: float
    name: str = "adaptive"

    adaptive = True

    @property
    def eta0(self) -> float:
        return self.c1 * self.L

    def at(self, t: int, lam_max: float, gamma_prev: Optional[float]) -> StepParams:
        eta = self.c1 * self.L + self.c2 * self.L_g * lam_max
        gamma = self.eta0 / eta
        theta = 1.0
        if gamma_prev is not None:
            gamma, theta = exact_pair(gamma_prev, gamma)
        return StepParams(gamma, theta, eta, self.beta * eta)

    def multiplier_bound(self, x0, x_star, lam_star) -> float:
        """sqrt(2/beta) ||x0 - x*|| + (sqrt 2 + 1) ||lambda*||."""
        return math.sqrt(2.0 / self.beta) * float(np.linalg.norm(np.asarray(x0) - x_star)) + (
            math.sqrt(2.0) + 1.0
        ) * float(np.linalg.norm(lam_star))

    def describe(self) -> dict:
        return {"policy": self.name, "c1": self.c1, "c2": self.c2, "beta": self.beta}


def _combine(terms: dict, mode: str) -> float:
    if mode not in MODES:
        raise ConfigError(f"mode must be one of {MODES}")
    vals = list(terms.values())
    return max(vals) if mode == "max" else sum(vals)


def _require_B(B, name: str) -> float:
    if B is None:
        raise ConfigError(f"policy {name} needs a multiplier bound B")
    B = float(B)
    if B < 1:
        raise ConfigError(f"policy {name} requires B >= 1, got {B}")
    return B


def default_robustness_constant(instance: ProblemInstance, B: float, sigma: float = 0.0) -> float:
    """L_g D_X for smooth noiseless problems whose B may undershoot ||lambda*||+1; else 0."""
    if not instance.is_smooth or sigma > 0:
        return 0.0
    sol = instance.known_solution
    if sol is not None and B >= float(np.linalg.norm(sol.lam)) + 1.0:
        return 0.0
    return instance.L_g * instance.D_X


def make_policy(
    name: str,
    instance: ProblemInstance,
    T: Optional[int] = None,
    B: Optional[float] = None,
    c: Optional[float] = None,
    mode: str = "sum",
    oracle: Optional[StochasticOracleSpec] = None,
    c1: float = 6.0,
    c2: float = 6.0,
    beta: Optional[float] = None,
):
    """Build the step-size schedule ``name`` for ``instance``.

    ``T`` is the pre-declared horizon for the constant policies.  ``c`` adds
    c*sqrt(T) to eta; when omitted it follows
    :func:`default_robustness_constant` for ``det_B`` and is 0 otherwise.
    """
    if name not in POLICIES:
        raise ConfigError(f"unknown policy {name!r}; choose from {POLICIES}")

    L, H, L_g, H_g, M_g, D = (instance.L, instance.H, instance.L_g, instance.H_g, instance.M_g, instance.D_X)

    if name == "adaptive":
        if L <= 0:
            raise ConfigError("adaptive policy needs L > 0")
        if c1 / 3.0 < c1 / c2 + 1.0 - 1e-12:
            raise ConfigError("adaptive constants must satisfy c1/3 >= c1/c2 + 1")
        if beta is None:
            beta = 12.0 * M_g**2 / (c1**2 * L**2)
        if instance.m > 0 and beta <= 0:
            raise ConfigError("adaptive policy needs beta > 0 (M_g > 0)")
        if instance.m == 0:
            beta = beta or 1.0
        return AdaptiveSchedule(float(c1), float(c2), float(beta), L, L_g)

    if T is None or int(T) < 1:
        raise ConfigError(f"policy {name} needs a horizon T >= 1")
    T = int(T)
    if D <= 0:
        raise ConfigError("the set must have positive diameter")
    root = math.sqrt(T)
    oracle = oracle or StochasticOracleSpec()

    if name == "det_known_lambda":
        sol = instance.known_solution
        if sol is None:
            raise ConfigError("det_known_lambda needs the instance's known multiplier")
        B = float(np.linalg.norm(sol.lam)) + 1.0
        terms = {
            "L": 6 * L,
            "M_g": 6 * M_g * B / D,
            "H": H * math.sqrt(3 * T) / D,
            "H_g": H_g * B * math.sqrt(3 * T) / D,
        }
        tau = 6 * M_g * D / B
        c_default = 0.0
    elif name == "det_B":
        B = _require_B(B, name)
        terms = {
            "L": 6 * L,
            "M_g": 6 * M_g * B / D,
            "H": H * math.sqrt(3 * T) / D,
            "H_g": H_g * B * math.sqrt(3 * T) / D,
        }
        tau = 6 * M_g * D / B
        c_default = default_robustness_constant(instance, B)
    elif name == "stoch_B":
        B = _require_B(B, name)
        sigma = oracle.sigma_F
        terms = {
            "L": 8 * L,
            "M_g": 5 * M_g * B / D,
            "H": 2 * H * root / D,
            "H_g": 2 * H_g * B * root / D,
            "sigma": 2 * math.sqrt(3) * sigma * root / D,
        }
        tau = 6 * M_g * D / B
        c_default = 0.0
    else:  # fully_stoch_B
        B = _require_B(B, name)
        sigma = oracle.sigma_F
        sG = float(np.linalg.norm(oracle.sigma_Gamma_vector(instance.m)))
        sigma_Xg = math.sqrt(oracle.sigma_g**2 + D**2 * sG**2)
        terms = {
            "L": 8 * L,
            "M_g": 8 * M_g * B / D,
            "H": 2 * H * root / D,
            "H_g": 2 * H_g * B * root / D,
            "sigma": 2 * math.sqrt(2) * sigma * root / D,
            "sigma_Gamma": 8 * B * sG * root / D,
        }
        tau = 9 * D / B * max(M_g, sG) + 8 * sigma_Xg * root / B
        c_default = 0.0

    c = c_default if c is None else float(c)
    if c < 0:
        raise ConfigError("robustness constant c must be nonnegative")
    if c > 0:
        terms["c"] = c * root
    eta = _combine(terms, mode)
    if tau <= 0:
        if instance.m > 0:
            raise ConfigError("dual step parameter tau vanished; M_g must be positive")
        tau = 1.0  # unused without constraints
    return ConstantSchedule(name, L_g * B + eta, tau, B, T, c, mode, terms)
