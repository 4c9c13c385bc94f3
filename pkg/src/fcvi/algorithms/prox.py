"""Closed-form prox steps used by every solver."""

import numpy as np

from ..errors import ConfigError


def prox_dual(lam: np.ndarray, s: np.ndarray, tau: float) -> np.ndarray:
    """argmin_{l >= 0} <-s, l> + tau/2 ||l - lam||^2 = max(lam + s/tau, 0)."""
    if not tau > 0:
        raise ConfigError(f"dual step parameter must be positive, got {tau}")
    return np.maximum(lam + s / tau, 0.0)


def prox_primal(x: np.ndarray, d: np.ndarray, eta: float, simple_set) -> np.ndarray:
    """argmin_{y in X} <d, y> + eta/2 ||y - x||^2 = project(x - d/eta)."""
    if not eta > 0:
        raise ConfigError(f"primal step parameter must be positive, got {eta}")
    return simple_set.project(x - d / eta)
