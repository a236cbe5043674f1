"""Iteration-time analysis for the centrally scheduled (TDMA) uplink.

One model transmission fits in one slot.  Ready devices are scheduled
lowest-index-first; because batch sizes are assigned in ascending order,
device n is always scheduled in slot

    t_n = max(compute_time_n, t_{n-1}) + 1,     t_0 = 0,

and the iteration ends when the last device has transmitted.  Unrolling
the recursion yields the closed form

    iter_time = max{ tau_N, tau_{N-1} + 1, ..., tau_1 + N - 1 } + 1

with tau_n the per-device compute time.  Devices with a zero batch still
occupy a transmission slot (they deliver an un-updated model); the
recursion has no skip rule, and skipping would silently change the
iteration time.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

from .core import BatchAllocation, as_allocation


@dataclass(frozen=True)
class TdmaTiming:
    """Per-device compute times, scheduled transmit slots, and iteration time."""

    compute_slots: tuple[int, ...]
    transmit_slots: tuple[int, ...]
    iter_time: int


def compute_time(batch: int, rho: int) -> int:
    """Slots needed to process ``batch`` samples at ``rho`` samples/slot.

    ceil(batch / rho); zero only for an empty batch.
    """
    if rho < 1:
        raise ValueError(f"compute_rate must be >= 1, got {rho}")
    if batch < 0:
        raise ValueError(f"batch must be >= 0, got {batch}")
    return -(-batch // rho)


def tdma_schedule(alloc: BatchAllocation | Sequence[int], rho: int) -> TdmaTiming:
    """Evaluate the scheduling recursion slot by slot.

    Kept independent of :func:`tdma_iter_time` (the unrolled closed form)
    so the two can be cross-checked.
    """
    alloc = as_allocation(alloc)
    taus = tuple(compute_time(b, rho) for b in alloc.sizes)
    transmit: list[int] = []
    prev = 0
    for tau in taus:
        prev = max(tau, prev) + 1
        transmit.append(prev)
    return TdmaTiming(compute_slots=taus, transmit_slots=tuple(transmit), iter_time=prev)


def tdma_iter_time(alloc: BatchAllocation | Sequence[int], rho: int) -> int:
    """Closed-form iteration time: max over n of tau_n + (N - n), plus 1."""
    alloc = as_allocation(alloc)
    n = alloc.n_devices
    return max(compute_time(b, rho) + (n - 1 - i) for i, b in enumerate(alloc.sizes)) + 1


def tdma_lower_bound(n_devices: int, total_batch: int, rho: int) -> int:
    """Lower bound m + N + 1 on the TDMA iteration time over all allocations.

    m is the integer with rho*((m-1)N + N(N+1)/2) < B <= rho*(mN + N(N+1)/2),
    clamped at 0 so the function is total.  The bound is tight: the
    step-wise allocation with gap rho achieves it.  Note the clamp makes
    the returned value exceed the best achievable time for very small
    batches (B <= rho*(N(N+1)/2 - N)), where fewer than N+1 slots can
    suffice; within the m >= 0 bracket it is a true lower bound.
    """
    if n_devices < 1 or total_batch < 1 or rho < 1:
        raise ValueError("n_devices, total_batch and rho must all be >= 1")
    # ceil((B/rho - N(N+1)/2) / N) in exact integer arithmetic
    num = 2 * total_batch - rho * n_devices * (n_devices + 1)
    den = 2 * rho * n_devices
    m = max(0, -(-num // den))
    return m + n_devices + 1
