"""Closed-form error bounds for the deterministic constant policies.

Both the gap and the infeasibility of the ergodic average obey the same
right-hand side, so one number per (instance, schedule, T) is reported.
"""

from __future__ import annotations

import math
from typing import Optional

import numpy as np

from .algorithms.policies import ConstantSchedule
from .problem import ProblemInstance


def known_multiplier_bound(instance: ProblemInstance, T: int) -> float:
    """[3LD^2 + (|l*|+1) D (L_g D/2 + 6 M_g)]/T + sqrt(3)(H + H_g(|l*|+1)) D/sqrt(T)."""
    L, H, L_g, H_g, M_g, D = _moduli(instance)
    B = _lam_norm(instance) + 1.0
    return (3 * L * D**2 + B * D * (L_g * D / 2 + 6 * M_g)) / T + math.sqrt(3) * (H + H_g * B) * D / math.sqrt(T)


def robust_bound(instance: ProblemInstance, T: int, B: float) -> Optional[float]:
    """Bound for the policy that only knows a guess B of the multiplier size.

    Returns None for smooth problems with B < |l*|+1, where the nonsmooth
    term has a zero denominator and the bound degenerates to a constant.
    """
    L, H, L_g, H_g, M_g, D = _moduli(instance)
    a = _lam_norm(instance) + 1.0
    h_star = _h_star(instance, B)
    first = (3 * L * D**2 + B * L_g * D**2 / 2 + 3 * M_g * D * (B + a**2 / B)) / T
    denom = H + H_g * B
    if h_star == 0:
        extra = 0.0
    elif denom > 0:
        extra = h_star**2 / denom
    else:
        return None
    return first + math.sqrt(3) * D / math.sqrt(T) * (H + extra)


def eta_form_bound(instance: ProblemInstance, schedule: ConstantSchedule) -> float:
    """Bound written in terms of the schedule's actual eta:

    (L_g B D^2 + eta D^2 + 6 M_g D (|l*|+1)^2 / B) / (2T) + 3 (H^2 + Hs^2) / (2 eta),

    valid for every constant deterministic schedule, including the c sqrt(T)
    and max-combined variants.
    """
    L, H, L_g, H_g, M_g, D = _moduli(instance)
    B, T = schedule.B, schedule.T
    a = _lam_norm(instance) + 1.0
    eta = schedule.eta - L_g * B
    h_star = _h_star(instance, B)
    return (L_g * B * D**2 + eta * D**2 + 6 * M_g * D * a**2 / B) / (2 * T) + 3 * (H**2 + h_star**2) / (2 * eta)


def theorem_bound(instance: ProblemInstance, schedule, T: Optional[int] = None) -> Optional[float]:
    """Coded bound for a deterministic constant schedule, or None when none applies."""
    if instance.known_solution is None or not isinstance(schedule, ConstantSchedule):
        return None
    T = schedule.T if T is None else int(T)
    if schedule.name == "det_known_lambda" and schedule.c == 0 and schedule.mode == "sum":
        return known_multiplier_bound(instance, T)
    if schedule.name in ("det_known_lambda", "det_B"):
        if schedule.c == 0 and schedule.mode == "sum":
            closed = robust_bound(instance, T, schedule.B)
            if closed is not None:
                return closed
        if schedule.c > 0 or _h_star(instance, schedule.B) == 0:
            return eta_form_bound(instance, schedule)
    return None


def _moduli(instance: ProblemInstance):
    return instance.L, instance.H, instance.L_g, instance.H_g, instance.M_g, instance.D_X


def _lam_norm(instance: ProblemInstance) -> float:
    return float(np.linalg.norm(instance.known_solution.lam))


def _h_star(instance: ProblemInstance, B: float) -> float:
    a = _lam_norm(instance) + 1.0
    return instance.H_g * a + instance.L_g * instance.D_X * max(a - B, 0.0) / 2
