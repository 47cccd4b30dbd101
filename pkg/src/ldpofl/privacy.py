"""Gaussian noise calibration for an (epsilon, delta) local DP budget.

The budget is converted to zero-concentrated DP, ``rho``, and the per-node
noise variance is ``sensitivity**2 / (2 rho)`` where the sensitivity of
``C @ G`` under replacement of one clipped gradient is
``2 * clip_bound * max_k ||c^k||``.
"""

from __future__ import annotations

import dataclasses
import math

from .mf_mechanism import Factorization


@dataclasses.dataclass(frozen=True)
class PrivacyBudget:
    epsilon: float
    delta: float
    rho: float
    clip_bound: float
    max_col_sq_norm: float
    sensitivity: float
    noise_variance: float

    @property
    def noise_std(self) -> float:
        return math.sqrt(self.noise_variance)

    def to_json(self) -> dict:
        return {
            "epsilon": self.epsilon,
            "delta": self.delta,
            "rho": self.rho,
            "sensitivity": self.sensitivity,
            "noise_variance": self.noise_variance,
            "max_col_sq_norm": self.max_col_sq_norm,
        }


def _check_budget(epsilon: float, delta: float) -> None:
    if not (isinstance(epsilon, (int, float)) and math.isfinite(epsilon) and epsilon > 0):
        raise ValueError(f"epsilon must be a positive finite number, got {epsilon!r}")
    if not (isinstance(delta, (int, float)) and 0 < delta <= 1):
        raise ValueError(f"delta must lie in (0, 1], got {delta!r}")


def rho_from_eps_delta(epsilon: float, delta: float) -> float:
    _check_budget(epsilon, delta)
    log_inv = math.log(1.0 / delta)
    return (math.sqrt(epsilon + log_inv) - math.sqrt(log_inv)) ** 2


def rho_small_eps_approx(epsilon: float, delta: float) -> float:
    """``eps^2 / (4 ln(1/delta))``; for reports only, never used to calibrate."""
    _check_budget(epsilon, delta)
    return epsilon**2 / (4.0 * math.log(1.0 / delta))


def sensitivity(clip_bound: float, f: Factorization) -> float:
    if clip_bound < 0:
        raise ValueError(f"clip_bound must be nonnegative, got {clip_bound!r}")
    return 2.0 * clip_bound * math.sqrt(float(f.col_sq_norms().max()))


def calibrate(epsilon: float, delta: float, clip_bound: float, f: Factorization) -> PrivacyBudget:
    if not clip_bound > 0:
        raise ValueError(f"clip_bound must be positive, got {clip_bound!r}")
    rho = rho_from_eps_delta(epsilon, delta)
    max_col = float(f.col_sq_norms().max())
    sens = sensitivity(clip_bound, f)
    return PrivacyBudget(
        epsilon=float(epsilon),
        delta=float(delta),
        rho=rho,
        clip_bound=float(clip_bound),
        max_col_sq_norm=max_col,
        sensitivity=sens,
        noise_variance=sens**2 / (2.0 * rho),
    )
