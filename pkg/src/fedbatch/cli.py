"""Command-line front end: experiment runners with CSV/JSON output.

Subcommands: ktarget, time, allocate, sweep-delta, train, simulate.
Every run is driven by a single JSON config document plus a few override
flags; result tables are CSV (header row, '.' decimals, LF endings) and
each run leaves a ``<command>.meta.json`` sidecar with the seed, library
versions and wall time.  Result files are byte-identical across reruns
of the same config and seed; the sidecar is metadata and carries the
wall time, so it is exempt.

Exit codes: 0 success, 2 config error, 3 numerical non-convergence,
4 slot cap exceeded.
"""

from __future__ import annotations

import argparse
import csv
import json
import platform
import sys
import time
from pathlib import Path
from typing import Any, Callable, Sequence

import numpy as np

from . import __version__
from .allocation import (
    NoConvergence,
    optimal_three,
    optimal_two,
    optimize_delta,
    round_two_device,
    stepwise_allocation,
    three_device_sizes,
)
from .convergence import (
    ConvergenceConstants,
    DegenerateConstants,
    compute_nu,
    required_iterations,
)
from .core import BatchAllocation, InvalidConfig, SystemConfig, make_rng, validate_config
from .fl_trainer import (
    estimate_constants,
    reference_optimum,
    synthetic_dataset,
    train_federated,
)
from .simulator import SlotCapExceeded, dump_trace, simulate_iter_ra, simulate_iter_tdma
from .timing_ra import expected_iter_ra
from .timing_tdma import tdma_iter_time

_CONST_FIELDS = (
    "smoothness",
    "strong_convexity",
    "grad_bound",
    "step_scale",
    "step_shift",
    "initial_gap",
)


def _fmt(value: Any) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _write_csv(path: Path, header: Sequence[str], rows: Sequence[Sequence[Any]]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


def _write_sidecar(out: Path, command: str, doc: dict, extra: dict, started: float) -> None:
    meta = {
        "command": command,
        "config": doc,
        "versions": {
            "fedbatch": __version__,
            "numpy": np.__version__,
            "python": platform.python_version(),
        },
        "wall_time_s": time.monotonic() - started,
    }
    meta.update(extra)
    with open(out / f"{command}.meta.json", "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _require(doc: dict, key: str, context: str = "") -> Any:
    label = f"{context}.{key}" if context else key
    if key not in doc:
        raise InvalidConfig(f"{label}: missing")
    return doc[key]


def _system(doc: dict) -> SystemConfig:
    block = _require(doc, "system")
    cfg = SystemConfig(
        n_devices=int(_require(block, "n_devices", "system")),
        total_batch=int(_require(block, "total_batch", "system")),
        compute_rate=int(_require(block, "compute_rate", "system")),
        p_tr=float(_require(block, "p_tr", "system")),
    )
    validate_config(cfg)
    return cfg


def _constants(doc: dict) -> ConvergenceConstants:
    block = _require(doc, "constants")
    consts = ConvergenceConstants(
        **{name: float(_require(block, name, "constants")) for name in _CONST_FIELDS}
    )
    consts.validate()
    return consts


def _allocation(doc: dict, cfg: SystemConfig) -> tuple[BatchAllocation, int | None]:
    """Resolve the allocation: explicit sizes, or a step-wise gap."""
    if "allocation" in doc:
        return BatchAllocation.for_config(cfg, doc["allocation"]), None
    if "delta" in doc:
        delta = int(doc["delta"])
        return stepwise_allocation(cfg.n_devices, cfg.total_batch, delta), delta
    raise InvalidConfig("allocation: missing (supply 'allocation' sizes or a 'delta' gap)")


def _iteration_count(doc: dict, cfg: SystemConfig) -> int | None:
    """Required iterations, from an explicit count or constants + epsilon."""
    if "iterations" in doc:
        return int(doc["iterations"])
    if "constants" in doc and "epsilon" in doc:
        consts = _constants(doc)
        nu = compute_nu(consts, cfg.n_devices, cfg.total_batch)
        return required_iterations(float(doc["epsilon"]), nu, consts.step_shift)
    return None


def cmd_ktarget(doc: dict, out: Path | None, seed: int, args) -> int:
    started = time.monotonic()
    cfg = _system(doc)
    consts = _constants(doc)
    epsilons = [float(e) for e in _require(doc, "epsilons")]
    nu = compute_nu(consts, cfg.n_devices, cfg.total_batch)
    rows = [
        (eps, nu, required_iterations(eps, nu, consts.step_shift)) for eps in epsilons
    ]
    print(f"nu = {_fmt(nu)}")
    for eps, _, k in rows:
        print(f"K({_fmt(eps)}) = {k}")
    report = {"nu": nu, "iterations": {_fmt(e): k for e, _, k in rows}}
    if out is not None:
        _write_csv(out / "ktarget.csv", ["epsilon", "nu", "iterations"], rows)
        with open(out / "ktarget.json", "w") as fh:
            json.dump(report, fh, indent=2, sort_keys=True)
            fh.write("\n")
        _write_sidecar(out, "ktarget", doc, {"seed": seed}, started)
    else:
        print(json.dumps(report, sort_keys=True))
    return 0


def cmd_time(doc: dict, out: Path | None, seed: int, args) -> int:
    started = time.monotonic()
    cfg = _system(doc)
    protocol = doc.get("protocol", "tdma")
    alloc, delta = _allocation(doc, cfg)
    trials = int(doc.get("trials", 100_000))
    if protocol == "tdma":
        mean, err = float(tdma_iter_time(alloc, cfg.compute_rate)), 0.0
    elif protocol == "ra":
        _, est = expected_iter_ra(alloc, cfg.compute_rate, cfg.p_tr, trials, seed)
        mean, err = est.mean, est.std_err
    else:
        raise InvalidConfig(f"protocol: must be 'tdma' or 'ra', got {protocol!r}")
    iterations = _iteration_count(doc, cfg)
    completion = iterations * mean if iterations is not None else None
    completion_err = iterations * err if iterations is not None else None
    print(f"iter_time = {_fmt(mean)} +/- {_fmt(err)} slots ({protocol})")
    if completion is not None:
        print(
            f"completion = {_fmt(completion)} +/- {_fmt(completion_err)} slots "
            f"over {iterations} iterations"
        )
    if out is not None:
        _write_csv(
            out / "time.csv",
            [
                "protocol",
                "p_tr",
                "delta",
                "allocation",
                "iter_time",
                "iter_std_err",
                "iterations",
                "completion",
                "completion_std_err",
            ],
            [
                (
                    protocol,
                    cfg.p_tr,
                    "" if delta is None else delta,
                    ";".join(str(s) for s in alloc.sizes),
                    mean,
                    err,
                    "" if iterations is None else iterations,
                    "" if completion is None else completion,
                    "" if completion_err is None else completion_err,
                )
            ],
        )
        _write_sidecar(out, "time", doc, {"seed": seed, "trials": trials}, started)
    return 0


def cmd_allocate(doc: dict, out: Path | None, seed: int, args) -> int:
    started = time.monotonic()
    cfg = _system(doc)
    delta = int(doc.get("delta", cfg.compute_rate))
    rows: list[tuple[str, int, float]] = []
    stepwise = stepwise_allocation(cfg.n_devices, cfg.total_batch, delta)
    rows += [("stepwise", dev, float(b)) for dev, b in enumerate(stepwise.sizes)]
    print(f"stepwise(delta={delta}) = {list(stepwise.sizes)}")
    if cfg.n_devices == 2:
        opt = optimal_two(cfg.total_batch, cfg.compute_rate, cfg.p_tr)
        rounded = round_two_device(opt, cfg.total_batch)
        rows += [("optimal_real", 0, opt.b1), ("optimal_real", 1, opt.b2)]
        rows += [("optimal_rounded", dev, float(b)) for dev, b in enumerate(rounded.sizes)]
        print(
            f"optimal split = ({_fmt(opt.b1)}, {_fmt(opt.b2)}) "
            f"[{opt.case_tag}, gap {_fmt(opt.delta_star)}] -> rounded {list(rounded.sizes)}"
        )
    elif cfg.n_devices == 3:
        opt = optimal_three(
            cfg.total_batch,
            cfg.compute_rate,
            cfg.p_tr,
            tol=float(doc.get("kkt_tol", 1e-8)),
            max_iters=int(doc.get("kkt_max_iters", 200_000)),
        )
        sizes = three_device_sizes(cfg.total_batch, *opt.deltas)
        rows += [("optimal_real", dev, b) for dev, b in enumerate(sizes)]
        floored = [int(sizes[0]), int(sizes[1])]
        floored.append(cfg.total_batch - sum(floored))
        rows += [("optimal_rounded", dev, float(b)) for dev, b in enumerate(floored)]
        print(
            f"optimal gaps = {tuple(_fmt(d) for d in opt.deltas)} "
            f"-> sizes {tuple(_fmt(s) for s in sizes)} -> rounded {floored}"
        )
    if out is not None:
        _write_csv(out / "allocate.csv", ["method", "device", "batch"], rows)
        _write_sidecar(out, "allocate", doc, {"seed": seed, "delta": delta}, started)
    return 0


def cmd_sweep_delta(doc: dict, out: Path | None, seed: int, args) -> int:
    started = time.monotonic()
    cfg = _system(doc)
    deltas = [int(d) for d in _require(doc, "deltas")]
    trials = int(doc.get("trials", 100_000))
    protocol = doc.get("protocol", "ra")
    protocols = ["tdma", "ra"] if protocol == "both" else [protocol]
    consts = _constants(doc) if "constants" in doc else None
    epsilon = float(doc["epsilon"]) if "epsilon" in doc else None
    rows: list[tuple] = []
    for proto in protocols:
        best, entries = optimize_delta(
            cfg.n_devices,
            cfg.total_batch,
            cfg.compute_rate,
            cfg.p_tr,
            deltas,
            trials=trials,
            seed=seed,
            consts=consts,
            epsilon=epsilon,
            protocol=proto,
        )
        for entry in entries:
            rows.append(
                (
                    entry.delta,
                    proto,
                    cfg.p_tr,
                    entry.expected_completion,
                    entry.completion_std_err,
                    1 if entry.delta == best else 0,
                )
            )
        print(f"{proto}: best delta = {best}")
    if out is not None:
        _write_csv(
            out / "sweep.csv",
            ["delta", "protocol", "p_tr", "expected_completion", "std_err", "is_argmin"],
            rows,
        )
        _write_sidecar(out, "sweep-delta", doc, {"seed": seed, "trials": trials}, started)
    return 0


def cmd_train(doc: dict, out: Path | None, seed: int, args) -> int:
    started = time.monotonic()
    cfg = _system(doc)
    block = _require(doc, "train")
    data = synthetic_dataset(
        n_samples=int(block.get("n_samples", 2000)),
        dim=int(block.get("dim", 10)),
        n_devices=cfg.n_devices,
        seed=int(block.get("data_seed", 0)),
        reg_strength=float(_require(block, "reg_strength", "train")),
        separation=float(block.get("separation", 2.0)),
        feature_scale=float(block.get("feature_scale", 1.0)),
    )
    if "constants" in doc:
        consts = _constants(doc)
        _, f_star = reference_optimum(data)
    else:
        consts, _, f_star = estimate_constants(
            data, grad_bound=float(block.get("grad_bound", 0.1))
        )
    alloc, _ = _allocation(doc, cfg)
    iterations = _iteration_count(doc, cfg)
    if iterations is None:
        raise InvalidConfig("iterations: missing (or supply constants + epsilon)")
    protocol = doc.get("protocol", "tdma")
    seeds = [int(s) for s in doc.get("seeds", [seed])]

    trajectories = [
        train_federated(
            data, cfg, alloc, consts, iterations, run_seed, protocol=protocol, f_star=f_star
        )
        for run_seed in seeds
    ]
    rows = [
        (traj.seed, int(k), int(slots), loss, gap, bound)
        for traj in trajectories
        for k, slots, loss, gap, bound in zip(
            traj.iterations, traj.cum_slots, traj.losses, traj.gaps, traj.bounds
        )
    ]
    summary = [
        (
            k + 1,
            float(np.mean([t.cum_slots[k] for t in trajectories])),
            float(np.mean([t.losses[k] for t in trajectories])),
            float(np.mean([t.gaps[k] for t in trajectories])),
            float(trajectories[0].bounds[k]),
        )
        for k in range(iterations)
    ]
    final = summary[-1]
    print(
        f"{len(seeds)} seed(s), {iterations} iterations ({protocol}): "
        f"mean final gap = {_fmt(final[3])}, bound = {_fmt(final[4])}, "
        f"mean slots = {_fmt(final[1])}"
    )
    print(f"max per-sample grad norm = {_fmt(max(t.max_grad_norm for t in trajectories))}")
    if out is not None:
        _write_csv(
            out / "train_trajectories.csv",
            ["seed", "iteration", "cum_slots", "loss", "gap", "bound"],
            rows,
        )
        _write_csv(
            out / "train_summary.csv",
            ["iteration", "cum_slots_mean", "loss_mean", "gap_mean", "bound"],
            summary,
        )
        _write_sidecar(
            out,
            "train",
            doc,
            {
                "seed": seed,
                "seeds": seeds,
                "f_star": f_star,
                "max_grad_norm": max(t.max_grad_norm for t in trajectories),
                "constants": {name: getattr(consts, name) for name in _CONST_FIELDS},
            },
            started,
        )
    return 0


def cmd_simulate(doc: dict, out: Path | None, seed: int, args) -> int:
    started = time.monotonic()
    cfg = _system(doc)
    protocol = doc.get("protocol", "ra")
    alloc, _ = _allocation(doc, cfg)
    iterations = int(doc.get("iterations", 1))
    slot_cap = int(doc.get("slot_cap", 10**6))
    rng = make_rng(seed)
    traces = []
    for _ in range(iterations):
        if protocol == "tdma":
            traces.append(simulate_iter_tdma(alloc, cfg.compute_rate))
        elif protocol == "ra":
            traces.append(
                simulate_iter_ra(alloc, cfg.compute_rate, cfg.p_tr, rng, slot_cap)
            )
        else:
            raise InvalidConfig(f"protocol: must be 'tdma' or 'ra', got {protocol!r}")
    total = sum(t.iter_time for t in traces)
    print(f"iter_time = {traces[0].iter_time} slots ({protocol})")
    if iterations > 1:
        print(f"completion = {total} slots over {iterations} iterations")
    if out is not None:
        with open(out / "trace.csv", "w", newline="") as fh:
            dump_trace(traces[0], fh)
        cum = 0
        completion_rows = []
        for idx, trace in enumerate(traces, start=1):
            cum += trace.iter_time
            completion_rows.append((idx, trace.iter_time, cum))
        _write_csv(
            out / "completion.csv", ["iteration", "iter_slots", "cum_slots"], completion_rows
        )
        _write_sidecar(out, "simulate", doc, {"seed": seed}, started)
    return 0


_COMMANDS: dict[str, Callable] = {
    "ktarget": cmd_ktarget,
    "time": cmd_time,
    "allocate": cmd_allocate,
    "sweep-delta": cmd_sweep_delta,
    "train": cmd_train,
    "simulate": cmd_simulate,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fedbatch",
        description="Completion-time analysis and batch allocation for "
        "federated learning over slotted uplinks.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in _COMMANDS:
        cmd = sub.add_parser(name)
        cmd.add_argument("--config", required=True, help="JSON config document")
        cmd.add_argument("--seed", type=int, default=None, help="override config seed")
        cmd.add_argument("--out", default=None, help="output directory for CSV/JSON")
        cmd.add_argument("--trials", type=int, default=None, help="override MC trials")
        cmd.add_argument("--protocol", choices=("tdma", "ra"), default=None)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        with open(args.config) as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    if args.trials is not None:
        doc["trials"] = args.trials
    if args.protocol is not None:
        doc["protocol"] = args.protocol
    seed = args.seed if args.seed is not None else int(doc.get("seed", 0))
    out_path = args.out if args.out is not None else doc.get("out")
    out = None
    if out_path is not None:
        out = Path(out_path)
        out.mkdir(parents=True, exist_ok=True)
    try:
        return _COMMANDS[args.command](doc, out, seed, args)
    except (InvalidConfig, DegenerateConstants, ValueError, KeyError, TypeError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except NoConvergence as exc:
        print(f"non-convergence: {exc}", file=sys.stderr)
        return 3
    except SlotCapExceeded as exc:
        print(f"slot cap exceeded: {exc}", file=sys.stderr)
        return 4


def run() -> None:
    sys.exit(main())


if __name__ == "__main__":
    run()
