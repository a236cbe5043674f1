"""Batch-allocation strategies: the step-wise scheme and the analytic optima.

The step-wise allocation staggers batch sizes by a fixed gap so devices
finish computing one after another instead of all at once.  A gap equal
to the per-slot compute rate is provably optimal for TDMA; for random
access the two-device optimum has a closed form, the three-device case
is a small constrained program solved to KKT stationarity, and larger
systems are handled by sweeping the gap numerically.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .convergence import ConvergenceConstants, compute_nu, required_iterations
from .core import BatchAllocation, McEstimate, derive_seed
from .timing_ra import expected_iter_ra, p_suc
from .timing_tdma import tdma_iter_time


class NoConvergence(RuntimeError):
    """The iterative solver did not reach the requested tolerance."""


def stepwise_allocation(n_devices: int, total_batch: int, delta: int) -> BatchAllocation:
    """Assign batches in rounds of a fixed gap, largest device first.

    Round r grants ``delta`` samples to each of the top r+1 devices
    (bounded by the device count) until the budget is exhausted; the
    final grant is trimmed so the sizes sum exactly to the budget.  The
    result is ascending with consecutive gaps of ``delta`` except around
    the trimmed entry.  ``delta = 0`` means the equal split, with the
    remainder spread over the highest-index devices.
    """
    if n_devices < 1:
        raise ValueError(f"n_devices must be >= 1, got {n_devices}")
    if total_batch < 1:
        raise ValueError(f"total_batch must be >= 1, got {total_batch}")
    if not 0 <= delta <= total_batch:
        raise ValueError(f"delta must lie in [0, total_batch], got {delta}")

    if delta == 0:
        base, rem = divmod(total_batch, n_devices)
        sizes = [base] * (n_devices - rem) + [base + 1] * rem
        return BatchAllocation(tuple(sizes))

    sizes = [0] * n_devices
    granted = 0
    top = 0  # devices currently receiving grants, counted from the largest
    while True:
        for k in range(top + 1):  # range frozen at loop entry
            dev = n_devices - 1 - k
            sizes[dev] += delta
            granted += delta
            if granted >= total_batch:
                sizes[dev] -= granted - total_batch
                return BatchAllocation(tuple(sizes))
            top = min(top + 1, n_devices - 1)


@dataclass(frozen=True)
class TwoDeviceOptimum:
    """Real-valued optimal two-device split.

    case_tag is "equal" when the stationary gap is negative (equal split
    optimal), "degenerate" when it exceeds the budget (everything on one
    device), and "interior" otherwise.  ``delta_star`` is the unclipped
    stationary gap.
    """

    b1: float
    b2: float
    case_tag: str
    delta_star: float


def two_device_objective(delta: float, rho: int, p_tr: float) -> float:
    """Expected iteration time for two devices, up to an additive constant,
    as a function of the (real-valued) batch gap."""
    p1 = p_suc(1, p_tr)
    p2 = p_suc(2, p_tr)
    return delta / (2.0 * rho) + (1.0 / p2) * (1.0 - p1) ** (delta / rho)


def optimal_two(total_batch: int, rho: int, p_tr: float) -> TwoDeviceOptimum:
    """Closed-form minimizer of the two-device expected iteration time.

    The stationary gap is rho / ln(1-p_suc(1)) * ln(-p_suc(2) / (2 ln(1-p_suc(1)))),
    clipped to the feasible range [0, B]; sizes are real-valued (see
    :func:`round_two_device` for the integer version).
    """
    if not (0.0 < p_tr < 1.0):
        raise ValueError(f"p_tr must lie in (0, 1), got {p_tr!r}")
    if total_batch < 1:
        raise ValueError(f"total_batch must be >= 1, got {total_batch}")
    p1 = p_suc(1, p_tr)
    p2 = p_suc(2, p_tr)
    log_fail = math.log(1.0 - p1)
    delta_star = (rho / log_fail) * math.log(-p2 / (2.0 * log_fail))
    b = float(total_batch)
    if delta_star < 0.0:
        return TwoDeviceOptimum(b / 2.0, b / 2.0, "equal", delta_star)
    if delta_star > b:
        return TwoDeviceOptimum(0.0, b, "degenerate", delta_star)
    return TwoDeviceOptimum((b - delta_star) / 2.0, (b + delta_star) / 2.0, "interior", delta_star)


def round_two_device(opt: TwoDeviceOptimum, total_batch: int) -> BatchAllocation:
    """Integer version of the analytic split: floor the smaller size and
    give the remainder to the larger one."""
    b1 = math.floor(opt.b1)
    return BatchAllocation((b1, total_batch - b1))


@dataclass(frozen=True)
class ThreeDeviceOptimum:
    """KKT point of the three-device gap program.

    deltas:       (gap between devices 1-2, gap between devices 2-3).
    multipliers:  KKT multipliers for delta1 >= 0, delta2 >= 0 and the
                  budget constraint 2*delta1 + delta2 <= B.
    objective:    objective value at the solution.
    kkt_residual: max of stationarity, dual-feasibility, complementary-
                  slackness and primal violations at the solution.
    """

    deltas: tuple[float, float]
    multipliers: tuple[float, float, float]
    objective: float
    kkt_residual: float


def three_device_sizes(total_batch: float, d1: float, d2: float) -> tuple[float, float, float]:
    """Reconstruct per-device sizes from the gaps: b1 = (B - 2*d1 - d2)/3.

    The budget constraint 2*d1 + d2 <= B is exactly b1 >= 0.
    """
    b1 = (total_batch - 2.0 * d1 - d2) / 3.0
    return b1, b1 + d1, b1 + d1 + d2


def _three_terms(rho: int, p_tr: float) -> tuple[float, float, float, float, float]:
    p1 = p_suc(1, p_tr)
    p2 = p_suc(2, p_tr)
    p3 = p_suc(3, p_tr)
    u = math.log(1.0 - p1) / rho
    v = math.log(1.0 - p2) / rho
    return p1, p2, p3, u, v


def three_device_objective(d1, d2, rho: int, p_tr: float):
    """Expected iteration time for three devices, up to an additive
    constant, as a function of the real-valued gaps.

    Away from p_tr = 1/2 this is the telescoped closed form; at the
    singular point the telescoped coefficient diverges and the analytic
    limit is used.  Accepts scalars or numpy arrays.
    """
    p1, p2, p3, u, v = _three_terms(rho, p_tr)
    d1 = np.asarray(d1, dtype=float)
    d2 = np.asarray(d2, dtype=float)
    linear = (d1 + d2) / rho
    if abs(p2 - p1) < 1e-12:
        a = 1.0 - p1
        value = (
            linear
            + (1.0 / p1) * np.exp(u * d2)
            + (d2 / rho) * np.exp(u * (d1 + d2)) / a
            + (1.0 / p3) * np.exp(u * (d1 + d2))
        )
    else:
        kappa = p1 / (p2 - p1)
        value = (
            linear
            + (1.0 / p2)
            * (
                np.exp(u * d2)
                + kappa * np.exp(u * (d1 + d2))
                - kappa * np.exp(u * d1 + v * d2)
            )
            + (1.0 / p3) * np.exp(u * d1 + v * d2)
        )
    return value if value.ndim else float(value)


def _three_device_gradient(d1: float, d2: float, rho: int, p_tr: float) -> np.ndarray:
    p1, p2, p3, u, v = _three_terms(rho, p_tr)
    if abs(p2 - p1) < 1e-12:
        a = 1.0 - p1
        es = math.exp(u * (d1 + d2))
        e2 = math.exp(u * d2)
        g1 = 1.0 / rho + (d2 / rho) * u * es / a + (u / p3) * es
        g2 = (
            1.0 / rho
            + (u / p1) * e2
            + es / (rho * a)
            + (d2 / rho) * u * es / a
            + (u / p3) * es
        )
        return np.array([g1, g2])
    kappa = p1 / (p2 - p1)
    es = math.exp(u * (d1 + d2))
    e2 = math.exp(u * d2)
    em = math.exp(u * d1 + v * d2)
    g1 = 1.0 / rho + (kappa * u / p2) * (es - em) + (u / p3) * em
    g2 = (
        1.0 / rho
        + (1.0 / p2) * (u * e2 + kappa * u * es - kappa * v * em)
        + (v / p3) * em
    )
    return np.array([g1, g2])


def _project_simplex(point: np.ndarray, budget: float) -> np.ndarray:
    """Euclidean projection onto {d1 >= 0, d2 >= 0, 2*d1 + d2 <= budget}."""
    x, y = float(point[0]), float(point[1])
    if x >= 0.0 and y >= 0.0 and 2.0 * x + y <= budget:
        return np.array([x, y])
    candidates = [
        np.array([0.0, min(max(y, 0.0), budget)]),
        np.array([min(max(x, 0.0), budget / 2.0), 0.0]),
    ]
    # Projection onto the budget edge: drop onto the line 2x + y = budget,
    # then clamp to the segment between (0, budget) and (budget/2, 0).
    shift = (2.0 * x + y - budget) / 5.0
    ex = min(max(x - 2.0 * shift, 0.0), budget / 2.0)
    candidates.append(np.array([ex, budget - 2.0 * ex]))
    dists = [np.hypot(c[0] - x, c[1] - y) for c in candidates]
    return candidates[int(np.argmin(dists))]


def _kkt_state(
    point: np.ndarray, grad: np.ndarray, budget: float, active_tol: float
) -> tuple[tuple[float, float, float], float]:
    """Recover multipliers from the active set and measure the KKT residual."""
    d1, d2 = float(point[0]), float(point[1])
    slack = budget - 2.0 * d1 - d2
    active_budget = slack <= active_tol
    a3 = 0.0
    if active_budget:
        if d2 <= active_tol and not d1 <= active_tol:
            # vertex (budget/2, 0): stationarity in d1 pins a3
            a3 = -grad[0] / 2.0
        elif d1 <= active_tol and not d2 <= active_tol:
            # vertex (0, budget): stationarity in d2 pins a3
            a3 = -grad[1]
        else:
            # edge interior: least squares over grad + a3*(2,1) = 0
            a3 = -(2.0 * grad[0] + grad[1]) / 5.0
    a1 = grad[0] + 2.0 * a3 if d1 <= active_tol else 0.0
    a2 = grad[1] + a3 if d2 <= active_tol else 0.0
    stationarity = np.array([grad[0] - a1 + 2.0 * a3, grad[1] - a2 + a3])
    residual = max(
        float(np.abs(stationarity).max()),
        max(0.0, -a1),
        max(0.0, -a2),
        max(0.0, -a3),
        abs(a1 * d1),
        abs(a2 * d2),
        abs(a3 * slack),
        max(0.0, -d1),
        max(0.0, -d2),
        max(0.0, -slack),
    )
    return (a1, a2, a3), residual


def optimal_three(
    total_batch: int,
    rho: int,
    p_tr: float,
    tol: float = 1e-8,
    max_iters: int = 200_000,
    grid: int = 200,
) -> ThreeDeviceOptimum:
    """Minimize the three-device gap objective over the feasible triangle.

    Warm-starts projected gradient descent (Armijo backtracking) from the
    best point of a ``grid`` x ``grid`` scan, so the returned objective is
    never above the scan's; stops once the KKT residual is within ``tol``.
    """
    if not (0.0 < p_tr < 1.0):
        raise ValueError(f"p_tr must lie in (0, 1), got {p_tr!r}")
    if total_batch < 0:
        raise ValueError(f"total_batch must be >= 0, got {total_batch}")
    budget = float(total_batch)
    if budget == 0.0:
        point = np.zeros(2)
        grad = _three_device_gradient(0.0, 0.0, rho, p_tr)
        mults, residual = _kkt_state(point, grad, budget, active_tol=1e-12)
        return ThreeDeviceOptimum(
            (0.0, 0.0), mults, float(three_device_objective(0.0, 0.0, rho, p_tr)), residual
        )

    g1 = np.linspace(0.0, budget / 2.0, grid)
    g2 = np.linspace(0.0, budget, grid)
    mesh1, mesh2 = np.meshgrid(g1, g2, indexing="ij")
    values = three_device_objective(mesh1, mesh2, rho, p_tr)
    values = np.where(2.0 * mesh1 + mesh2 <= budget + 1e-9, values, np.inf)
    best = np.unravel_index(int(np.argmin(values)), values.shape)
    point = np.array([mesh1[best], mesh2[best]])

    active_tol = max(1e-10, tol)
    value = float(three_device_objective(point[0], point[1], rho, p_tr))
    step = 1.0
    for _ in range(max_iters):
        grad = _three_device_gradient(point[0], point[1], rho, p_tr)
        mults, residual = _kkt_state(point, grad, budget, active_tol)
        if residual <= tol:
            return ThreeDeviceOptimum(
                (float(point[0]), float(point[1])), mults, value, residual
            )
        step = min(step * 2.0, 1e6)
        while True:
            trial = _project_simplex(point - step * grad, budget)
            trial_value = float(three_device_objective(trial[0], trial[1], rho, p_tr))
            move = trial - point
            if trial_value <= value + 1e-4 * float(grad @ move) or step < 1e-18:
                break
            step *= 0.5
        if step < 1e-18:
            break
        point, value = trial, trial_value
    grad = _three_device_gradient(point[0], point[1], rho, p_tr)
    _, residual = _kkt_state(point, grad, budget, active_tol)
    raise NoConvergence(
        f"KKT residual {residual:.3e} above tol {tol:.3e} after {max_iters} iterations"
    )


@dataclass(frozen=True)
class DeltaSweepEntry:
    """One row of a gap sweep: expected times for a single candidate gap."""

    delta: int
    allocation: BatchAllocation
    expected_iter: float
    iter_std_err: float
    iterations: int
    expected_completion: float
    completion_std_err: float


def optimize_delta(
    n_devices: int,
    total_batch: int,
    rho: int,
    p_tr: float,
    deltas: Sequence[int],
    trials: int = 100_000,
    seed: int = 0,
    consts: ConvergenceConstants | None = None,
    epsilon: float | None = None,
    protocol: str = "ra",
) -> tuple[int, list[DeltaSweepEntry]]:
    """Evaluate step-wise allocations for each candidate gap.

    Returns the gap minimizing the expected completion time (iteration
    time scaled by the required iteration count when convergence
    constants and a target gap are supplied) together with the full
    table; ties break toward the smaller gap.  Every candidate draws
    from its own sub-stream derived from (seed, delta), so the table does
    not depend on evaluation order.
    """
    if not deltas:
        raise ValueError("need at least one candidate delta")
    if protocol not in ("tdma", "ra"):
        raise ValueError(f"protocol must be 'tdma' or 'ra', got {protocol!r}")
    if (consts is None) != (epsilon is None):
        raise ValueError("consts and epsilon must be supplied together")
    if consts is not None:
        iterations = required_iterations(
            epsilon, compute_nu(consts, n_devices, total_batch), consts.step_shift
        )
    else:
        iterations = 1

    entries: list[DeltaSweepEntry] = []
    for delta in deltas:
        alloc = stepwise_allocation(n_devices, total_batch, delta)
        if protocol == "tdma":
            mean, err = float(tdma_iter_time(alloc, rho)), 0.0
        else:
            _, estimate = expected_iter_ra(
                alloc, rho, p_tr, trials=trials, seed=derive_seed(seed, delta)
            )
            mean, err = estimate.mean, estimate.std_err
        entries.append(
            DeltaSweepEntry(
                delta=int(delta),
                allocation=alloc,
                expected_iter=mean,
                iter_std_err=err,
                iterations=iterations,
                expected_completion=iterations * mean,
                completion_std_err=iterations * err,
            )
        )
    best = min(entries, key=lambda e: (e.expected_completion, e.delta))
    return best.delta, entries
