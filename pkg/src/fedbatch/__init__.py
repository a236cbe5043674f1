"""Completion-time analysis and batch allocation for federated learning
over slotted TDMA and random-access uplinks."""

__version__ = "0.1.0"

from .allocation import (
    DeltaSweepEntry,
    NoConvergence,
    ThreeDeviceOptimum,
    TwoDeviceOptimum,
    optimal_three,
    optimal_two,
    optimize_delta,
    round_two_device,
    stepwise_allocation,
    three_device_objective,
    three_device_sizes,
    two_device_objective,
)
from .convergence import (
    ConvergenceConstants,
    DegenerateConstants,
    compute_nu,
    gap_bound,
    required_iterations,
    step_size,
)
from .core import (
    BatchAllocation,
    InvalidConfig,
    McEstimate,
    SystemConfig,
    as_allocation,
    derive_seed,
    make_rng,
    validate_config,
)
from .fl_trainer import (
    Dataset,
    LossTrajectory,
    aggregate,
    estimate_constants,
    global_loss,
    load_dataset_csv,
    local_step,
    reference_optimum,
    save_dataset_csv,
    smoothness_bound,
    synthetic_dataset,
    train_federated,
)
from .simulator import (
    SlotCapExceeded,
    SlotEvent,
    SlotTrace,
    dump_trace,
    mc_iter_time_ra,
    simulate_completion,
    simulate_iter_ra,
    simulate_iter_tdma,
)
from .timing_ra import (
    AvailabilityPmf,
    RaTiming,
    SingularRate,
    UnsupportedN,
    estimate_pmf_avail_mc,
    expected_comm_given_avail,
    expected_iter_ra,
    expected_iter_ra_closed,
    p_suc,
    pmf_avail_three,
    pmf_avail_two,
)
from .timing_tdma import (
    TdmaTiming,
    compute_time,
    tdma_iter_time,
    tdma_lower_bound,
    tdma_schedule,
)

__all__ = [
    "__version__",
    "AvailabilityPmf",
    "BatchAllocation",
    "ConvergenceConstants",
    "Dataset",
    "DegenerateConstants",
    "DeltaSweepEntry",
    "InvalidConfig",
    "LossTrajectory",
    "McEstimate",
    "NoConvergence",
    "RaTiming",
    "SingularRate",
    "SlotCapExceeded",
    "SlotEvent",
    "SlotTrace",
    "SystemConfig",
    "TdmaTiming",
    "ThreeDeviceOptimum",
    "TwoDeviceOptimum",
    "UnsupportedN",
    "aggregate",
    "as_allocation",
    "compute_nu",
    "compute_time",
    "derive_seed",
    "dump_trace",
    "estimate_constants",
    "estimate_pmf_avail_mc",
    "expected_comm_given_avail",
    "expected_iter_ra",
    "expected_iter_ra_closed",
    "gap_bound",
    "global_loss",
    "load_dataset_csv",
    "local_step",
    "make_rng",
    "mc_iter_time_ra",
    "optimal_three",
    "optimal_two",
    "optimize_delta",
    "p_suc",
    "pmf_avail_three",
    "pmf_avail_two",
    "reference_optimum",
    "required_iterations",
    "round_two_device",
    "save_dataset_csv",
    "simulate_completion",
    "simulate_iter_ra",
    "simulate_iter_tdma",
    "smoothness_bound",
    "step_size",
    "stepwise_allocation",
    "synthetic_dataset",
    "tdma_iter_time",
    "tdma_lower_bound",
    "tdma_schedule",
    "three_device_objective",
    "three_device_sizes",
    "train_federated",
    "two_device_objective",
    "validate_config",
]
