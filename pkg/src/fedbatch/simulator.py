"""Slot-accurate simulation of one learning iteration (and full runs).

This is the ground-truth oracle for the closed forms: the TDMA walk must
reproduce the scheduling recursion exactly, and the random-access walk
draws an independent Bernoulli(p_tr) per ready device per slot, exactly
as the channel model states.  Readiness starts in the slot after a
device's compute time; delivered devices stop transmitting immediately.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import IO, Sequence

import numpy as np

from .core import BatchAllocation, McEstimate, as_allocation, make_rng
from .timing_tdma import compute_time, tdma_iter_time

# Trials per vectorized block in mc_iter_time_ra; each block has its own
# (seed, block) sub-stream.
MC_BLOCK = 1 << 16


class SlotCapExceeded(RuntimeError):
    """No completion within the slot cap; the configuration is pathological
    (for example p_tr so extreme that collisions never resolve)."""


@dataclass(frozen=True)
class SlotEvent:
    """What happened in one slot.

    transmitters: devices that transmitted (0-based indices).
    contenders:   devices ready and still undelivered at this slot.
    outcome:      "idle", "collision", or "success".
    delivered:    the delivering device for a success, else None.
    """

    slot: int
    transmitters: tuple[int, ...]
    contenders: tuple[int, ...]
    outcome: str
    delivered: int | None = None


@dataclass(frozen=True)
class SlotTrace:
    """Per-slot event log of one iteration plus its total slot count."""

    events: tuple[SlotEvent, ...]
    iter_time: int


def simulate_iter_tdma(
    alloc: BatchAllocation | Sequence[int], rho: int, record: bool = True
) -> SlotTrace:
    """Greedy slot walk of the TDMA uplink.

    Ready devices are served lowest index first; with ascending batches
    the delivered set is always a prefix, so the walk serves devices in
    index order.  With ``record=False`` only the iteration time is kept.
    """
    alloc = as_allocation(alloc)
    taus = [compute_time(b, rho) for b in alloc.sizes]
    events: list[SlotEvent] = []
    slot = 0
    for dev, tau in enumerate(taus):
        t = max(slot + 1, tau + 1)
        if record:
            for idle in range(slot + 1, t):
                events.append(SlotEvent(idle, (), (), "idle"))
            events.append(SlotEvent(t, (dev,), (dev,), "success", dev))
        slot = t
    return SlotTrace(tuple(events), slot)


def _walk_iter_ra(
    taus: Sequence[int],
    p_tr: float,
    rng: np.random.Generator,
    slot_cap: int,
    record: bool,
) -> SlotTrace:
    n = len(taus)
    undelivered = [True] * n
    remaining = n
    events: list[SlotEvent] = []
    slot = 0
    while remaining:
        slot += 1
        if slot > slot_cap:
            raise SlotCapExceeded(
                f"no completion within {slot_cap} slots "
                f"(p_tr={p_tr!r}, {remaining} devices undelivered)"
            )
        contenders = [d for d in range(n) if undelivered[d] and taus[d] < slot]
        tx = [d for d in contenders if rng.random() < p_tr]
        if len(tx) == 1:
            dev = tx[0]
            undelivered[dev] = False
            remaining -= 1
            if record:
                events.append(SlotEvent(slot, (dev,), tuple(contenders), "success", dev))
        elif record:
            outcome = "collision" if len(tx) > 1 else "idle"
            events.append(SlotEvent(slot, tuple(tx), tuple(contenders), outcome))
    return SlotTrace(tuple(events), slot)


def simulate_iter_ra(
    alloc: BatchAllocation | Sequence[int],
    rho: int,
    p_tr: float,
    rng: np.random.Generator,
    slot_cap: int = 10**6,
    record: bool = True,
) -> SlotTrace:
    """One random-access iteration; ends at the slot of the last delivery."""
    alloc = as_allocation(alloc)
    if alloc.n_devices >= 2 and not (0.0 < p_tr < 1.0):
        raise ValueError(
            f"p_tr must lie in (0, 1) with two or more devices, got {p_tr!r}"
        )
    if alloc.n_devices == 1 and not (0.0 < p_tr <= 1.0):
        raise ValueError(f"p_tr must lie in (0, 1], got {p_tr!r}")
    taus = [compute_time(b, rho) for b in alloc.sizes]
    return _walk_iter_ra(taus, p_tr, rng, slot_cap, record)


def simulate_completion(
    protocol: str,
    alloc: BatchAllocation | Sequence[int],
    rho: int,
    p_tr: float,
    iterations: int,
    rng: np.random.Generator | None = None,
    slot_cap: int = 10**6,
) -> int:
    """Total slots over ``iterations`` independent rounds.

    TDMA is deterministic (iterations times the closed-form time); random
    access re-runs the contention fresh each round, consuming ``rng``.
    """
    if iterations < 1:
        raise ValueError(f"iterations must be >= 1, got {iterations}")
    alloc = as_allocation(alloc)
    if protocol == "tdma":
        return iterations * tdma_iter_time(alloc, rho)
    if protocol != "ra":
        raise ValueError(f"protocol must be 'tdma' or 'ra', got {protocol!r}")
    if rng is None:
        raise ValueError("random access needs an rng (see core.make_rng)")
    taus = [compute_time(b, rho) for b in alloc.sizes]
    total = 0
    for _ in range(iterations):
        total += _walk_iter_ra(taus, p_tr, rng, slot_cap, record=False).iter_time
    return total


def mc_iter_time_ra(
    alloc: BatchAllocation | Sequence[int],
    rho: int,
    p_tr: float,
    trials: int,
    seed: int,
    slot_cap: int = 10**6,
) -> McEstimate:
    """Mean random-access iteration time over many simulated rounds.

    Runs the same per-slot Bernoulli process as :func:`simulate_iter_ra`,
    vectorized across trials (blocks of MC_BLOCK trials, each on its own
    (seed, block) sub-stream, finished trials dropped as they complete).
    """
    alloc = as_allocation(alloc)
    if trials < 1:
        raise ValueError(f"trials must be >= 1, got {trials}")
    if alloc.n_devices >= 2 and not (0.0 < p_tr < 1.0):
        raise ValueError(
            f"p_tr must lie in (0, 1) with two or more devices, got {p_tr!r}"
        )
    taus = np.array([compute_time(b, rho) for b in alloc.sizes], dtype=np.int64)
    n = alloc.n_devices
    total = 0.0
    total_sq = 0.0
    for block, lo in enumerate(range(0, trials, MC_BLOCK)):
        size = min(MC_BLOCK, trials - lo)
        rng = make_rng(seed, block)
        undelivered = np.ones((size, n), dtype=bool)
        live = np.arange(size)
        finish = np.zeros(size, dtype=np.int64)
        slot = int(taus[0])
        while live.size:
            slot += 1
            if slot > slot_cap:
                raise SlotCapExceeded(
                    f"no completion within {slot_cap} slots (p_tr={p_tr!r})"
                )
            eligible = undelivered & (taus < slot)
            tx = eligible & (rng.random(undelivered.shape) < p_tr)
            success = tx.sum(axis=1) == 1
            if success.any():
                rows = np.nonzero(success)[0]
                undelivered[rows, tx[rows].argmax(axis=1)] = False
                done = rows[~undelivered[rows].any(axis=1)]
                if done.size:
                    finish[live[done]] = slot
                    keep = np.ones(live.size, dtype=bool)
                    keep[done] = False
                    undelivered = undelivered[keep]
                    live = live[keep]
        total += float(finish.sum())
        total_sq += float((finish.astype(np.float64) ** 2).sum())
    mean = total / trials
    var = max(0.0, (total_sq / trials - mean**2) * trials / max(1, trials - 1))
    return McEstimate(mean=mean, std_err=math.sqrt(var / trials), trials=trials, seed=seed)


def format_event(event: SlotEvent) -> str:
    """Stable dump format: ``slot,transmitters,outcome`` with device ids
    ';'-joined and successes written as ``success:<device>``."""
    tx = ";".join(str(d) for d in event.transmitters)
    outcome = event.outcome if event.delivered is None else f"success:{event.delivered}"
    return f"{event.slot},{tx},{outcome}"


def dump_trace(trace: SlotTrace, fh: IO[str]) -> None:
    """Write a trace as newline-delimited ``slot,transmitters,outcome`` records."""
    fh.write("slot,transmitters,outcome\n")
    for event in trace.events:
        fh.write(format_event(event) + "\n")
