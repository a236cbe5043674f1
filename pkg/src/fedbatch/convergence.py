"""Iteration-count analysis for federated SGD on strongly convex losses.

With step sizes eta_k = c / (gamma + k), the expected optimality gap of
the aggregated model after k iterations is bounded by nu / (gamma + k),
where nu depends on the smoothness/convexity constants, the per-sample
gradient bound, the device count, and the total batch size.  Inverting
the bound gives the number of iterations needed for a target gap.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .core import InvalidConfig


class DegenerateConstants(ValueError):
    """The constants make the gap bound vacuous (2*c*M - 1 <= 0)."""


@dataclass(frozen=True)
class ConvergenceConstants:
    """Constants of the gap bound and step-size schedule.

    smoothness:       L, gradient Lipschitz constant of the global loss.
    strong_convexity: M, strong-convexity modulus (M <= L).
    grad_bound:       lambda, uniform bound on the per-sample stochastic
                      gradient norm (second moment <= lambda**2 / batch).
    step_scale:       c in eta_k = c / (gamma + k); must exceed 1/M.
    step_shift:       gamma > 0; the first step c/(gamma+1) must not
                      exceed 1/L.
    initial_gap:      f(w_1) - f_star, the optimality gap of the initial
                      model.  Unknown before training; supply a measured
                      or estimated value (see fl_trainer.estimate_constants).
    """

    smoothness: float
    strong_convexity: float
    grad_bound: float
    step_scale: float
    step_shift: float
    initial_gap: float

    def validate(self) -> None:
        """Raise :class:`InvalidConfig` naming the first violated invariant."""
        if self.smoothness <= 0:
            raise InvalidConfig(f"smoothness: must be > 0, got {self.smoothness!r}")
        if self.strong_convexity <= 0:
            raise InvalidConfig(
                f"strong_convexity: must be > 0, got {self.strong_convexity!r}"
            )
        if self.strong_convexity > self.smoothness:
            raise InvalidConfig(
                "strong_convexity: cannot exceed smoothness "
                f"(M={self.strong_convexity!r} > L={self.smoothness!r})"
            )
        # grad_bound = 0 is admitted as the degenerate noise-free case.
        if self.grad_bound < 0:
            raise InvalidConfig(f"grad_bound: must be >= 0, got {self.grad_bound!r}")
        if self.step_scale <= 1.0 / self.strong_convexity:
            raise InvalidConfig(
                f"step_scale: must exceed 1/strong_convexity = "
                f"{1.0 / self.strong_convexity!r}, got {self.step_scale!r}"
            )
        if self.step_shift <= 0:
            raise InvalidConfig(f"step_shift: must be > 0, got {self.step_shift!r}")
        if self.step_scale / (self.step_shift + 1.0) > 1.0 / self.smoothness + 1e-12:
            raise InvalidConfig(
                "step_shift: first step c/(gamma+1) = "
                f"{self.step_scale / (self.step_shift + 1.0)!r} exceeds "
                f"1/smoothness = {1.0 / self.smoothness!r}"
            )
        if self.initial_gap < 0:
            raise InvalidConfig(f"initial_gap: must be >= 0, got {self.initial_gap!r}")


def step_size(k: int, consts: ConvergenceConstants) -> float:
    """Step size for iteration k >= 1: c / (gamma + k), strictly decreasing."""
    if k < 1:
        raise ValueError(f"iteration index must be >= 1, got {k}")
    return consts.step_scale / (consts.step_shift + k)


def compute_nu(consts: ConvergenceConstants, n_devices: int, total_batch: int) -> float:
    """Numerator of the gap bound nu / (gamma + k).

    nu = max( L c^2 lambda^2 N / (2 B (2 c M - 1)),
              (gamma + 1) * (f(w_1) - f_star) )

    Grows with the device count and shrinks with the total batch.
    """
    if total_batch < 1:
        raise ValueError(f"total_batch must be >= 1, got {total_batch}")
    denom = 2.0 * consts.step_scale * consts.strong_convexity - 1.0
    if denom <= 0:
        raise DegenerateConstants(
            f"2*c*M - 1 = {denom!r} <= 0; the step scale is too small "
            "for the strong-convexity modulus"
        )
    variance_term = (
        consts.smoothness
        * consts.step_scale**2
        * consts.grad_bound**2
        * n_devices
        / (2.0 * total_batch * denom)
    )
    init_term = (consts.step_shift + 1.0) * consts.initial_gap
    return max(variance_term, init_term)


def required_iterations(epsilon: float, nu: float, gamma: float) -> int:
    """Iterations needed for the gap bound to fall below ``epsilon``.

    The analytic value nu/epsilon - gamma is real-valued and can be
    negative for loose targets; it is ceiled and clamped to at least one
    iteration.
    """
    if epsilon <= 0:
        raise ValueError(f"epsilon must be > 0, got {epsilon}")
    if nu < 0:
        raise ValueError(f"nu must be >= 0, got {nu}")
    return max(1, math.ceil(nu / epsilon - gamma))


def gap_bound(k: int, nu: float, gamma: float) -> float:
    """Expected-optimality-gap bound after k iterations: nu / (gamma + k)."""
    if k < 1:
        raise ValueError(f"iteration index must be >= 1, got {k}")
    return nu / (gamma + k)
