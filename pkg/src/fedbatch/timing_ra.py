"""Expected iteration time under slotted random access.

Each ready device transmits in a slot with probability ``p_tr``; a slot
delivers a model only when exactly one device transmits.  With M
contenders the per-slot success probability is

    p_suc(M) = M * (1 - p_tr)**(M-1) * p_tr,

and inter-delivery times are geometric.  The iteration time decomposes
as the compute time of the slowest device plus the communication time
needed to drain the devices still undelivered at that point; the count
of those devices (at least 1, since the slowest device cannot finish
earlier) has a closed-form distribution for two and three devices and is
estimated by Monte Carlo otherwise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import BatchAllocation, McEstimate, as_allocation, make_rng
from .timing_tdma import compute_time

# |p_suc(2) - p_suc(1)| below this is treated as the singular point
# (p_tr = 1/2), where the telescoped three-device closed form divides by
# zero and the untelescoped geometric sum is evaluated instead.
SINGULAR_EPS = 1e-12

# Trials per vectorized Monte-Carlo block.  Each block draws from its own
# sub-stream (seed, block index), so estimates are independent of how
# blocks are scheduled; changing the block size changes the draws.
MC_BLOCK = 1 << 16


class SingularRate(ValueError):
    """Telescoped closed form evaluated at p_suc(2) == p_suc(1) (p_tr = 1/2)."""


class UnsupportedN(ValueError):
    """No closed form for this device count; use the Monte-Carlo path."""


@dataclass(frozen=True)
class AvailabilityPmf:
    """Distribution of the number of undelivered devices when the slowest
    device finishes computing.  ``probs[m-1]`` is P(count = m), m in [1:N]."""

    probs: tuple[float, ...]

    def __post_init__(self) -> None:
        if len(self.probs) == 0:
            raise ValueError("probs must be non-empty")
        if any(p < -1e-9 or p > 1.0 + 1e-9 for p in self.probs):
            raise ValueError(f"probs must lie in [0, 1], got {self.probs!r}")
        total = sum(self.probs)
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"probs must sum to 1 within 1e-9, got {total!r}")
        clipped = tuple(min(1.0, max(0.0, p)) for p in self.probs)
        object.__setattr__(self, "probs", clipped)

    @property
    def n_devices(self) -> int:
        return len(self.probs)


@dataclass(frozen=True)
class RaTiming:
    """Expected iteration-time decomposition for random access.

    compute_tail:   compute time of the slowest device (slots).
    expected_comm:  expected slots to drain the undelivered devices,
                    counted from the first slot after ``compute_tail``;
                    always at least 1/p_tr.
    expected_iter:  compute_tail + expected_comm.
    """

    compute_tail: int
    expected_comm: float
    expected_iter: float


def p_suc(m: int, p_tr: float) -> float:
    """Probability that exactly one of ``m`` contenders transmits in a slot."""
    if m < 1:
        raise ValueError(f"contender count must be >= 1, got {m}")
    if not (0.0 < p_tr <= 1.0):
        raise ValueError(f"p_tr must lie in (0, 1], got {p_tr!r}")
    return m * (1.0 - p_tr) ** (m - 1) * p_tr


def expected_comm_given_avail(n_avail: int, p_tr: float) -> float:
    """Expected drain time given ``n_avail`` undelivered devices.

    Sum of geometric means 1/p_suc(m) for m = n_avail down to 1; strictly
    increasing in ``n_avail``.
    """
    if n_avail < 1:
        raise ValueError(f"n_avail must be >= 1, got {n_avail}")
    if n_avail >= 2 and p_tr >= 1.0:
        raise ValueError("p_tr must be < 1 when two or more devices contend")
    return sum(1.0 / p_suc(m, p_tr) for m in range(1, n_avail + 1))


def pmf_avail_two(tau1: int, tau2: int, p_tr: float) -> AvailabilityPmf:
    """Two-device availability PMF.

    Device 1 fails to deliver during its head start of tau2 - tau1 slots
    with probability (1 - p_suc(1))**(tau2 - tau1).
    """
    if tau1 > tau2:
        raise ValueError(f"compute times must be ascending, got ({tau1}, {tau2})")
    p_two = (1.0 - p_suc(1, p_tr)) ** (tau2 - tau1)
    return AvailabilityPmf((1.0 - p_two, p_two))


def _pmf_three_telescoped(d1: int, d2: int, p1: float, p2: float) -> tuple[float, float, float]:
    """Closed form with the geometric sum telescoped; undefined at p2 == p1."""
    if abs(p2 - p1) < SINGULAR_EPS:
        raise SingularRate(
            f"p_suc(2) - p_suc(1) = {p2 - p1!r} is below {SINGULAR_EPS}; "
            "evaluate the untelescoped sum instead"
        )
    a, c = 1.0 - p1, 1.0 - p2
    p_three = a**d1 * c**d2
    p_two = a**d2 + (p1 / (p2 - p1)) * a ** (d1 + d2) - (p2 / (p2 - p1)) * a**d1 * c**d2
    return 1.0 - p_two - p_three, p_two, p_three


def _pmf_three_direct(d1: int, d2: int, p1: float, p2: float) -> tuple[float, float, float]:
    """Same distribution via the explicit finite sum over the first-delivery slot."""
    a, c = 1.0 - p1, 1.0 - p2
    p_three = a**d1 * c**d2
    # First delivery during device 1's head start, then the survivor fails
    # through the last window.
    p_two = (1.0 - a**d1) * a**d2
    # First delivery while devices 1 and 2 compete (slot offset t in the
    # second window), then the survivor fails for the remaining d2 - t slots.
    p_two += a**d1 * sum(p2 * c ** (t - 1) * a ** (d2 - t) for t in range(1, d2 + 1))
    return 1.0 - p_two - p_three, p_two, p_three


def pmf_avail_three(tau1: int, tau2: int, tau3: int, p_tr: float) -> AvailabilityPmf:
    """Three-device availability PMF.

    Uses the telescoped closed form away from p_tr = 1/2 and falls back
    to the untelescoped finite geometric sum at the singular point, where
    the distribution itself is perfectly finite.
    """
    if not (tau1 <= tau2 <= tau3):
        raise ValueError(f"compute times must be ascending, got ({tau1}, {tau2}, {tau3})")
    d1, d2 = tau2 - tau1, tau3 - tau2
    p1, p2 = p_suc(1, p_tr), p_suc(2, p_tr)
    try:
        p_one, p_two, p_three = _pmf_three_telescoped(d1, d2, p1, p2)
    except SingularRate:
        p_one, p_two, p_three = _pmf_three_direct(d1, d2, p1, p2)
    return AvailabilityPmf((p_one, p_two, p_three))


def expected_iter_ra_closed(
    alloc: BatchAllocation | Sequence[int], rho: int, p_tr: float
) -> RaTiming:
    """Closed-form expected iteration time for two or three devices."""
    alloc = as_allocation(alloc)
    taus = [compute_time(b, rho) for b in alloc.sizes]
    if alloc.n_devices == 2:
        pmf = pmf_avail_two(taus[0], taus[1], p_tr)
    elif alloc.n_devices == 3:
        pmf = pmf_avail_three(taus[0], taus[1], taus[2], p_tr)
    else:
        raise UnsupportedN(
            f"closed-form availability PMF exists only for 2 or 3 devices, "
            f"got {alloc.n_devices}; use the Monte-Carlo path"
        )
    comm = sum(
        p * expected_comm_given_avail(m, p_tr)
        for m, p in enumerate(pmf.probs, start=1)
    )
    return RaTiming(compute_tail=taus[-1], expected_comm=comm, expected_iter=taus[-1] + comm)


def _avail_counts_mc(
    taus: Sequence[int], p_tr: float, trials: int, seed: int
) -> np.ndarray:
    """Histogram of the undelivered-device count over Monte-Carlo trials.

    Each trial walks the slots between the first and the last compute
    finish; a device is eligible from the slot after its own finish,
    transmits independently with probability p_tr, and is removed once it
    is the sole transmitter in a slot.  Devices finishing together with
    the slowest one never transmit inside the window, so the count is
    always at least 1.  Trials are simulated in blocks, each on its own
    (seed, block) sub-stream.
    """
    n = len(taus)
    taus_arr = np.asarray(taus, dtype=np.int64)
    window = range(int(taus_arr[0]) + 1, int(taus_arr[-1]) + 1)
    counts = np.zeros(n + 1, dtype=np.int64)
    for block, lo in enumerate(range(0, trials, MC_BLOCK)):
        size = min(MC_BLOCK, trials - lo)
        rng = make_rng(seed, block)
        undelivered = np.ones((size, n), dtype=bool)
        for slot in window:
            eligible = undelivered & (taus_arr < slot)
            tx = eligible & (rng.random((size, n)) < p_tr)
            success = tx.sum(axis=1) == 1
            if success.any():
                rows = np.nonzero(success)[0]
                undelivered[rows, tx[rows].argmax(axis=1)] = False
        counts += np.bincount(undelivered.sum(axis=1), minlength=n + 1)
    return counts


def estimate_pmf_avail_mc(
    alloc: BatchAllocation | Sequence[int],
    rho: int,
    p_tr: float,
    trials: int,
    seed: int,
) -> tuple[AvailabilityPmf, tuple[McEstimate, ...]]:
    """Monte-Carlo availability PMF with a standard error per entry."""
    alloc = as_allocation(alloc)
    if trials < 1:
        raise ValueError(f"trials must be >= 1, got {trials}")
    taus = [compute_time(b, rho) for b in alloc.sizes]
    counts = _avail_counts_mc(taus, p_tr, trials, seed)[1:]
    probs = counts / trials
    # Defend the sum-to-1 invariant against float accumulation.
    probs = probs / probs.sum()
    if trials > 1:
        errs = np.sqrt(probs * (1.0 - probs) / (trials - 1))
    else:
        errs = np.zeros_like(probs)
    estimates = tuple(
        McEstimate(mean=float(p), std_err=float(e), trials=trials, seed=seed)
        for p, e in zip(probs, errs)
    )
    return AvailabilityPmf(tuple(float(p) for p in probs)), estimates


def expected_iter_ra(
    alloc: BatchAllocation | Sequence[int],
    rho: int,
    p_tr: float,
    trials: int = 100_000,
    seed: int = 0,
) -> tuple[RaTiming, McEstimate]:
    """Expected iteration time, closed form where one exists, else Monte Carlo.

    One device is the plain geometric wait, two and three devices use the
    closed-form PMF (``trials`` ignored, zero standard error), and larger
    systems combine the Monte-Carlo PMF with the per-count expected drain
    time.  The estimate is the sample mean of the per-trial conditional
    expectation, so the reported standard error is the linear propagation
    of the PMF entry errors.
    """
    alloc = as_allocation(alloc)
    n = alloc.n_devices
    if n == 1:
        tail = compute_time(alloc.sizes[0], rho)
        comm = 1.0 / p_suc(1, p_tr)
        timing = RaTiming(tail, comm, tail + comm)
        return timing, McEstimate(timing.expected_iter, 0.0, 0, seed)
    if n in (2, 3):
        timing = expected_iter_ra_closed(alloc, rho, p_tr)
        return timing, McEstimate(timing.expected_iter, 0.0, 0, seed)

    taus = [compute_time(b, rho) for b in alloc.sizes]
    counts = _avail_counts_mc(taus, p_tr, trials, seed)[1:]
    drain = np.array([expected_comm_given_avail(m, p_tr) for m in range(1, n + 1)])
    mean_comm = float(counts @ drain) / trials
    sq = float(counts @ drain**2) / trials
    var = max(0.0, (sq - mean_comm**2) * trials / max(1, trials - 1))
    std_err = math.sqrt(var / trials)
    timing = RaTiming(taus[-1], mean_comm, taus[-1] + mean_comm)
    return timing, McEstimate(timing.expected_iter, std_err, trials, seed)
