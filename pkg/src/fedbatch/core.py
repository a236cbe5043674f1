"""Shared domain types, validation, and the seeded-randomness contract.

Every stochastic routine in this package draws from a
``numpy.random.Generator`` built by :func:`make_rng`, so results are
bit-reproducible across runs and across machines for a fixed seed.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np


class InvalidConfig(ValueError):
    """A system configuration or allocation violates an invariant.

    The message always starts with the name of the offending field.
    """


@dataclass(frozen=True)
class SystemConfig:
    """Static description of the uplink system.

    n_devices:     number of devices sharing the channel (N >= 1).
    total_batch:   total samples processed per iteration across devices (B >= 1).
    compute_rate:  samples each device can process per slot (rho >= 1);
                   all devices compute at the same rate.
    p_tr:          per-slot transmission probability for random access,
                   in (0, 1]. With two or more devices it must be < 1,
                   otherwise every slot collides and no model is ever
                   delivered.
    """

    n_devices: int
    total_batch: int
    compute_rate: int
    p_tr: float


def validate_config(cfg: SystemConfig) -> None:
    """Raise :class:`InvalidConfig` naming the first violated invariant."""
    if not isinstance(cfg.n_devices, int) or cfg.n_devices < 1:
        raise InvalidConfig(f"n_devices: must be a positive integer, got {cfg.n_devices!r}")
    if not isinstance(cfg.total_batch, int) or cfg.total_batch < 1:
        raise InvalidConfig(f"total_batch: must be a positive integer, got {cfg.total_batch!r}")
    if not isinstance(cfg.compute_rate, int) or cfg.compute_rate < 1:
        raise InvalidConfig(f"compute_rate: must be a positive integer, got {cfg.compute_rate!r}")
    if not (0.0 < cfg.p_tr <= 1.0):
        raise InvalidConfig(f"p_tr: must lie in (0, 1], got {cfg.p_tr!r}")
    if cfg.n_devices >= 2 and cfg.p_tr >= 1.0:
        raise InvalidConfig(
            "p_tr: must be < 1 with two or more devices "
            "(simultaneous transmissions would collide in every slot)"
        )


@dataclass(frozen=True)
class BatchAllocation:
    """Per-device batch sizes, kept in ascending order.

    Device indices follow the ascending-batch convention: device 0 gets
    the smallest batch, device N-1 the largest.  Sizes are integers
    because samples are indivisible; real-valued analytic optima are
    rounded in a separate, explicit step (see :mod:`fedbatch.allocation`).
    """

    sizes: tuple[int, ...]

    def __post_init__(self) -> None:
        sizes = tuple(int(s) for s in self.sizes)
        if any(int(s) != s for s in self.sizes):
            raise InvalidConfig(f"sizes: batch sizes must be integers, got {self.sizes!r}")
        object.__setattr__(self, "sizes", sizes)
        if len(sizes) == 0:
            raise InvalidConfig("sizes: allocation must cover at least one device")
        if any(s < 0 for s in sizes):
            raise InvalidConfig(f"sizes: batch sizes must be non-negative, got {sizes!r}")
        if any(a > b for a, b in zip(sizes, sizes[1:])):
            raise InvalidConfig(f"sizes: batch sizes must be non-decreasing, got {sizes!r}")

    @property
    def n_devices(self) -> int:
        return len(self.sizes)

    @property
    def total(self) -> int:
        return sum(self.sizes)

    @classmethod
    def from_sizes(cls, sizes: Iterable[int]) -> "BatchAllocation":
        """Canonicalize an unsorted multiset of sizes into an allocation."""
        return cls(tuple(sorted(int(s) for s in sizes)))

    @classmethod
    def for_config(cls, cfg: SystemConfig, sizes: Iterable[int]) -> "BatchAllocation":
        """Build an allocation and check it against its owning config."""
        alloc = cls(tuple(int(s) for s in sizes))
        if alloc.n_devices != cfg.n_devices:
            raise InvalidConfig(
                f"sizes: expected {cfg.n_devices} entries, got {alloc.n_devices}"
            )
        if alloc.total != cfg.total_batch:
            raise InvalidConfig(
                f"sizes: must sum to total_batch={cfg.total_batch}, got {alloc.total}"
            )
        return alloc


def as_allocation(alloc: "BatchAllocation | Sequence[int]") -> BatchAllocation:
    """Coerce a plain sequence of sizes into a :class:`BatchAllocation`."""
    if isinstance(alloc, BatchAllocation):
        return alloc
    return BatchAllocation(tuple(int(s) for s in alloc))


@dataclass(frozen=True)
class McEstimate:
    """A Monte-Carlo point estimate with its standard error.

    ``std_err`` is the sample standard deviation (ddof=1) divided by
    sqrt(trials).  ``trials == 0`` marks an exact (closed-form) value,
    in which case ``std_err`` is 0.  Estimates are reproducible given
    (seed, trials).
    """

    mean: float
    std_err: float
    trials: int
    seed: int

    def __post_init__(self) -> None:
        if self.std_err < 0:
            raise InvalidConfig(f"std_err: must be >= 0, got {self.std_err!r}")
        if self.trials < 0:
            raise InvalidConfig(f"trials: must be >= 0, got {self.trials!r}")
        if self.trials == 0 and self.std_err != 0.0:
            raise InvalidConfig("std_err: exact estimates (trials=0) must have std_err 0")


def make_rng(seed: int, *stream: int) -> np.random.Generator:
    """Return a deterministic random stream for ``seed`` and a stream path.

    The generator is PCG64 keyed by ``numpy.random.SeedSequence`` with
    entropy ``(seed, *stream)``.  Equal arguments always yield identical
    streams; distinct trailing path components yield statistically
    independent sub-streams, so per-trial generators such as
    ``make_rng(seed, trial)`` make each Monte-Carlo trial reproducible in
    isolation and safe to run concurrently.  All components must be
    non-negative integers.
    """
    entropy = (int(seed),) + tuple(int(s) for s in stream)
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))


def derive_seed(seed: int, *path: int) -> int:
    """Collapse (seed, *path) into a fresh 64-bit seed for a child task."""
    entropy = (int(seed),) + tuple(int(p) for p in path)
    return int(np.random.SeedSequence(entropy).generate_state(1, dtype=np.uint64)[0])
