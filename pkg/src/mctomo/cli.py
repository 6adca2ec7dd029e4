"""Command line front end for the gated reconstruction pipeline.

Subcommands compose the library end to end: ``phantom`` and
``simulate`` produce inputs, ``reference`` computes a converged saddle
point, ``reconstruct`` runs one solver, ``rates`` prints the predicted
rate table, and ``experiment`` chains everything across seeds and
renders the report figures next to the CSV output.

Every command writes a manifest capturing all effective parameters and
seeds, so each output is reconstructible from the command line alone.
Given identical flags and seeds, outputs are bitwise identical.
Exit codes: 0 success, 1 runtime or I/O failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import math
import os
import sys
from typing import Sequence

from . import __version__
from .experiment_io import (
    ConvergenceRecord,
    fit_rate,
    geometry_to_dict,
    load_dataset,
    load_saddle,
    rmse,
    save_dataset,
    save_saddle,
    write_manifest,
    write_pgm16,
    write_raster,
)
from .figures import save_convergence_plot, save_panel_grid
from .motion import KINDS as MOTION_KINDS
from .motion import motion_sequence
from .projector import Geometry
from .simulate import (
    PHANTOM_KINDS,
    GatedDataset,
    NoiseModel,
    estimate_norms,
    gate_operators,
    generate,
    make_phantom,
    nonrigid_preset,
    rigid_preset,
)
from .solvers import (
    Problem,
    cg_reference,
    default_config,
    optimality_residual,
    run,
)
from .theory import build_rate_report

__all__ = ["main", "build_parser"]

DEFAULT_KAPPA = 70.0
PRESETS = ("rigid", "nonrigid")
SIZES = ("default", "fast")


def _positive_float(text: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"{text!r} is not a number")
    if not (value > 0 and math.isfinite(value)):
        raise argparse.ArgumentTypeError(f"{text!r} must be positive and finite")
    return value


def _nonnegative_float(text: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"{text!r} is not a number")
    if not (value >= 0 and math.isfinite(value)):
        raise argparse.ArgumentTypeError(f"{text!r} must be >= 0 and finite")
    return value


def _positive_int(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"{text!r} is not an integer")
    if value < 1:
        raise argparse.ArgumentTypeError(f"{text!r} must be >= 1")
    return value


def _nonnegative_int(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"{text!r} is not an integer")
    if value < 0:
        raise argparse.ArgumentTypeError(f"{text!r} must be >= 0")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mctomo",
        description="Motion compensated tomographic reconstruction pipeline.",
    )
    parser.add_argument("--version", action="version", version=f"mctomo {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("phantom", help="write a phantom raster and preview")
    p.add_argument("--kind", choices=PHANTOM_KINDS, default="nested_shells")
    p.add_argument("--rows", type=_positive_int, default=100)
    p.add_argument("--cols", type=_positive_int, default=100)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_phantom)

    p = sub.add_parser("simulate", help="simulate a gated dataset")
    p.add_argument("--preset", choices=PRESETS, help="rigid (N=20) or nonrigid (N=10)")
    p.add_argument("--size", choices=SIZES, default="default", help="preset geometry")
    p.add_argument("--phantom", choices=PHANTOM_KINDS, help="custom: phantom kind")
    p.add_argument("--motion", choices=MOTION_KINDS, help="custom: motion kind")
    p.add_argument("--gates", type=_positive_int, help="custom: number of gates")
    p.add_argument("--rows", type=_positive_int, default=64, help="custom: image rows")
    p.add_argument("--cols", type=_positive_int, default=64, help="custom: image cols")
    p.add_argument("--angles", type=_positive_int, default=128, help="custom: angles")
    p.add_argument("--bins", type=_positive_int, default=128, help="custom: bins")
    p.add_argument("--magnitude", type=_nonnegative_float, default=1.0)
    p.add_argument("--sigma", type=_nonnegative_float, default=None,
                   help="total noise level (default: 2%% of the brightest bin)")
    p.add_argument("--seed", type=_nonnegative_int, default=0)
    p.add_argument("--no-norms", action="store_true",
                   help="skip the power-iteration norm estimates")
    p.add_argument("--power-iterations", type=_positive_int, default=100)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("reference", help="compute a converged saddle point")
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--kappa", type=_positive_float, default=DEFAULT_KAPPA)
    p.add_argument("--tol", type=_positive_float, default=1e-12)
    p.add_argument("--max-iter", type=_positive_int, default=2000)
    p.add_argument("--no-mc", action="store_true",
                   help="drop motion compensation from the model")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_reference)

    p = sub.add_parser("reconstruct", help="run one solver on a dataset")
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--algo", choices=("pdhg", "spdhg"), default="spdhg")
    p.add_argument("--epochs", type=_nonnegative_int, default=30)
    p.add_argument("--kappa", type=_positive_float, default=DEFAULT_KAPPA)
    p.add_argument("--seed", type=_nonnegative_int, default=0)
    p.add_argument("--no-mc", action="store_true",
                   help="drop motion compensation from the model")
    p.add_argument("--saddle", default=None,
                   help="saddle point directory for distance logging")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_reconstruct)

    p = sub.add_parser("rates", help="print the predicted rate table")
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--kappa", type=_positive_float, default=DEFAULT_KAPPA)
    p.add_argument("--out", default=None,
                   help="report JSON path (default: <data>/rates.json)")
    p.set_defaults(func=cmd_rates)

    p = sub.add_parser("experiment", help="full pipeline: data, references, runs, figures")
    p.add_argument("--preset", choices=PRESETS, required=True)
    p.add_argument("--size", choices=SIZES, default="default")
    p.add_argument("--epochs", type=_positive_int, default=30)
    p.add_argument("--seeds", type=_positive_int, default=10,
                   help="number of spdhg seeds")
    p.add_argument("--kappa", type=_positive_float, default=DEFAULT_KAPPA)
    p.add_argument("--sigma", type=_nonnegative_float, default=None)
    p.add_argument("--data-seed", type=_nonnegative_int, default=0)
    p.add_argument("--tol", type=_positive_float, default=1e-12,
                   help="relative tolerance of the reference solves")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_experiment)

    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return int(args.func(args) or 0)
    except (OSError, ValueError, KeyError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


# ---------------------------------------------------------------- commands


def cmd_phantom(args) -> int:
    os.makedirs(args.out, exist_ok=True)
    image = make_phantom(args.kind, args.rows, args.cols)
    write_raster(os.path.join(args.out, "phantom.f64"), image)
    write_pgm16(os.path.join(args.out, "phantom.pgm"), image)
    write_manifest(
        os.path.join(args.out, "manifest.json"),
        {
            "command": "phantom",
            "kind": args.kind,
            "rows": args.rows,
            "cols": args.cols,
            "files": ["phantom.f64", "phantom.pgm"],
        },
    )
    print(f"wrote {args.kind} phantom {args.rows}x{args.cols} to {args.out}")
    return 0


def _simulate_dataset(args, parser_error) -> GatedDataset:
    if args.preset is not None:
        for flag in ("phantom", "motion", "gates"):
            if getattr(args, flag) is not None:
                parser_error(f"--{flag} conflicts with --preset")
        maker = rigid_preset if args.preset == "rigid" else nonrigid_preset
        return maker(
            size=args.size,
            sigma=args.sigma,
            seed=args.seed,
            magnitude=args.magnitude,
        )
    for flag in ("phantom", "motion", "gates"):
        if getattr(args, flag) is None:
            parser_error(f"--{flag} is required without --preset")
    spacing = math.hypot(args.rows, args.cols) / args.bins
    geom = Geometry(args.rows, args.cols, args.angles, args.bins, spacing)
    phantom = make_phantom(args.phantom, args.rows, args.cols)
    motion = motion_sequence(args.motion, args.gates, args.magnitude)
    noise = NoiseModel(args.sigma) if args.sigma is not None else None
    return generate(
        phantom,
        motion,
        geom,
        noise,
        master_seed=args.seed,
        phantom_kind=args.phantom,
        magnitude=args.magnitude,
    )


def cmd_simulate(args) -> int:
    # flag conflicts are usage errors and exit 2, same as argparse's own
    def usage_error(message: str) -> None:
        print(f"usage error: {message}", file=sys.stderr)
        raise SystemExit(2)

    dataset = _simulate_dataset(args, usage_error)
    norms = None
    if not args.no_norms:
        norms = estimate_norms(
            dataset.geometry, dataset.motion, iterations=args.power_iterations
        )
    save_dataset(dataset, args.out, norms=norms)
    print(
        f"wrote dataset: {dataset.num_gates} gates, "
        f"geometry {dataset.geometry.rows}x{dataset.geometry.cols}/"
        f"{dataset.geometry.num_angles}x{dataset.geometry.num_bins}, "
        f"sigma {dataset.sigma:.6g}, seed {dataset.master_seed} -> {args.out}"
    )
    return 0


def _load_problem(data_dir: str, kappa: float, no_mc: bool):
    """Dataset + solver problem + the norm/alpha bookkeeping dict."""
    dataset, manifest = load_dataset(data_dir)
    norms = manifest.get("norms")
    if norms is None:
        print(
            "note: dataset carries no norm estimates, running power iteration now",
            file=sys.stderr,
        )
        norms = estimate_norms(dataset.geometry, dataset.motion)
    base_norm_sq = float(norms["base_norm_sq"])
    n = dataset.num_gates
    if no_mc:
        # Identical blocks: every gate norm equals the base norm and the
        # stacked squared norm is exactly N times the base squared norm.
        gate_norms = [math.sqrt(base_norm_sq)] * n
        stacked_norm_sq = n * base_norm_sq
    else:
        gate_norms = [float(v) for v in norms["gate_norms"]]
        stacked_norm_sq = float(norms["stacked_norm_sq"])
    alpha = base_norm_sq / kappa
    operators = gate_operators(dataset.geometry, dataset.motion, compensated=not no_mc)
    problem = Problem.from_parts(alpha, operators, dataset.sinograms)
    info = {
        "alpha": alpha,
        "kappa": kappa,
        "no_mc": no_mc,
        "gate_norms": gate_norms,
        "stacked_norm_sq": stacked_norm_sq,
        "base_norm_sq": base_norm_sq,
        "power_iterations": int(norms["power_iterations"]),
        "power_seed": int(norms["power_seed"]),
    }
    return dataset, problem, info


def cmd_reference(args) -> int:
    dataset, problem, info = _load_problem(args.data, args.kappa, args.no_mc)
    saddle = cg_reference(problem, tol=args.tol, max_iter=args.max_iter)
    if not saddle.converged:
        print(
            f"warning: cg stopped at relative residual {saddle.residual:.3e} "
            f"after {args.max_iter} iterations",
            file=sys.stderr,
        )
    meta = dict(info)
    meta.update(
        {
            "command": "reference",
            "data": os.path.abspath(args.data),
            "tol": args.tol,
            "max_iter": args.max_iter,
            "optimality_residual": optimality_residual(problem, saddle),
            "rmse_to_truth": rmse(saddle.x_star, dataset.truth),
        }
    )
    save_saddle(args.out, saddle, meta=meta)
    write_pgm16(os.path.join(args.out, "x_star.pgm"), saddle.x_star)
    print(
        f"reference saddle point: converged={saddle.converged}, "
        f"relative residual {saddle.residual:.3e}, "
        f"rmse to truth {meta['rmse_to_truth']:.6g} -> {args.out}"
    )
    return 0


def _check_saddle(saddle, problem: Problem) -> None:
    if len(saddle.y_star) != problem.num_gates:
        raise ValueError(
            f"saddle point has {len(saddle.y_star)} dual blocks, "
            f"dataset has {problem.num_gates} gates"
        )
    if saddle.x_star.shape != problem.image_shape:
        raise ValueError("saddle point image shape does not match the dataset")


def cmd_reconstruct(args) -> int:
    dataset, problem, info = _load_problem(args.data, args.kappa, args.no_mc)
    config = default_config(
        args.algo,
        info["gate_norms"],
        info["alpha"],
        args.epochs,
        seed=args.seed,
        stacked_norm_sq=info["stacked_norm_sq"],
    )
    saddle = None
    if args.saddle is not None:
        saddle = load_saddle(args.saddle)
        _check_saddle(saddle, problem)
    x, record = run(config, problem, saddle=saddle, truth=dataset.truth)
    os.makedirs(args.out, exist_ok=True)
    write_raster(os.path.join(args.out, "reconstruction.f64"), x)
    write_pgm16(os.path.join(args.out, "reconstruction.pgm"), x)
    record.write_csv(os.path.join(args.out, "convergence.csv"))
    manifest = {
        "command": "reconstruct",
        "data": os.path.abspath(args.data),
        "algo": args.algo,
        "epochs": args.epochs,
        "seed": args.seed,
        "saddle": os.path.abspath(args.saddle) if args.saddle else None,
        "config": {
            "sigmas": list(config.sigmas),
            "tau": config.tau,
            "theta": config.theta,
            "probs": list(config.probs),
        },
        "files": ["reconstruction.f64", "reconstruction.pgm", "convergence.csv"],
    }
    manifest.update(info)
    if len(record):
        manifest["final"] = {
            "epoch": record.epochs[-1],
            "dist_sq": record.dist_sq[-1],
            "objective": record.objective[-1],
            "rmse_to_truth": record.rmse_to_truth[-1],
            "fwd_calls": record.fwd_calls[-1],
            "adj_calls": record.adj_calls[-1],
        }
    try:
        fit = fit_rate(record)
        manifest["fitted_rate"] = {
            "rate": fit.rate,
            "r_squared": fit.r_squared,
            "epoch_window": list(fit.epoch_window),
        }
    except ValueError:
        manifest["fitted_rate"] = None
    write_manifest(os.path.join(args.out, "manifest.json"), manifest)
    if len(record):
        print(
            f"{args.algo}: {args.epochs} epochs, objective {record.objective[-1]:.6g}, "
            f"rmse to truth {record.rmse_to_truth[-1]:.6g}, "
            f"dist_sq {record.dist_sq[-1]:.6g} -> {args.out}"
        )
    else:
        print(f"{args.algo}: 0 epochs, zero image -> {args.out}")
    return 0


def _rate_report(dataset: GatedDataset, norms: dict, kappa: float):
    alpha = float(norms["base_norm_sq"]) / kappa
    return build_rate_report(
        gate_norms_sq=[float(v) ** 2 for v in norms["gate_norms"]],
        stacked_norm_sq=float(norms["stacked_norm_sq"]),
        base_norm_sq=float(norms["base_norm_sq"]),
        alpha=alpha,
        num_gates=dataset.num_gates,
        power_iterations=int(norms["power_iterations"]),
        power_seed=int(norms["power_seed"]),
    )


def cmd_rates(args) -> int:
    dataset, manifest = load_dataset(args.data)
    norms = manifest.get("norms")
    if norms is None:
        print(
            "note: dataset carries no norm estimates, running power iteration now",
            file=sys.stderr,
        )
        norms = estimate_norms(dataset.geometry, dataset.motion)
    report = _rate_report(dataset, norms, args.kappa)
    print(report.format_table())
    out = args.out or os.path.join(args.data, "rates.json")
    write_manifest(
        out,
        {
            "command": "rates",
            "data": os.path.abspath(args.data),
            "kappa": args.kappa,
            "report": report.to_dict(),
        },
    )
    return 0


def cmd_experiment(args) -> int:
    out = os.path.abspath(args.out)
    os.makedirs(out, exist_ok=True)

    maker = rigid_preset if args.preset == "rigid" else nonrigid_preset
    dataset = maker(size=args.size, sigma=args.sigma, seed=args.data_seed)
    norms = estimate_norms(dataset.geometry, dataset.motion)
    data_dir = os.path.join(out, "dataset")
    save_dataset(dataset, data_dir, norms=norms)
    print(f"dataset: {dataset.num_gates} gates, sigma {dataset.sigma:.6g}")

    report = _rate_report(dataset, norms, args.kappa)
    write_manifest(
        os.path.join(out, "rates.json"),
        {
            "command": "experiment/rates",
            "kappa": args.kappa,
            "report": report.to_dict(),
        },
    )
    print(report.format_table())

    alpha = report.alpha
    n = dataset.num_gates
    gate_norms = [float(v) for v in norms["gate_norms"]]
    base_norm = math.sqrt(float(norms["base_norm_sq"]))

    problem_mc = Problem.from_parts(
        alpha, gate_operators(dataset.geometry, dataset.motion, True), dataset.sinograms
    )
    problem_nomc = Problem.from_parts(
        alpha, gate_operators(dataset.geometry, dataset.motion, False), dataset.sinograms
    )

    print("solving reference saddle points (cg) ...")
    ref_mc = cg_reference(problem_mc, tol=args.tol)
    ref_nomc = cg_reference(problem_nomc, tol=args.tol)
    rmse_mc = rmse(ref_mc.x_star, dataset.truth)
    rmse_nomc = rmse(ref_nomc.x_star, dataset.truth)
    save_saddle(
        os.path.join(out, "reference_mc"),
        ref_mc,
        meta={"alpha": alpha, "kappa": args.kappa, "no_mc": False, "rmse_to_truth": rmse_mc},
    )
    save_saddle(
        os.path.join(out, "reference_nomc"),
        ref_nomc,
        meta={"alpha": alpha, "kappa": args.kappa, "no_mc": True, "rmse_to_truth": rmse_nomc},
    )
    print(
        f"converged rmse to truth: compensated {rmse_mc:.6g}, "
        f"uncompensated {rmse_nomc:.6g}"
    )

    runs = []

    def one_run(name: str, mode: str, seed: int) -> ConvergenceRecord:
        config = default_config(
            mode,
            gate_norms,
            alpha,
            args.epochs,
            seed=seed,
            stacked_norm_sq=float(norms["stacked_norm_sq"]),
        )
        x, record = run(config, problem_mc, saddle=ref_mc, truth=dataset.truth)
        run_dir = os.path.join(out, "runs", name)
        os.makedirs(run_dir, exist_ok=True)
        write_raster(os.path.join(run_dir, "reconstruction.f64"), x)
        write_pgm16(os.path.join(run_dir, "reconstruction.pgm"), x)
        record.write_csv(os.path.join(run_dir, "convergence.csv"))
        try:
            fit = fit_rate(record)
            fitted = {"rate": fit.rate, "r_squared": fit.r_squared}
        except ValueError:
            fitted = None
        runs.append(
            {
                "name": name,
                "algo": mode,
                "seed": seed,
                "final_dist_sq": record.dist_sq[-1],
                "final_rmse": record.rmse_to_truth[-1],
                "fitted": fitted,
                "image": x,
                "record": record,
            }
        )
        return record

    print(f"running pdhg, {args.epochs} epochs ...")
    one_run("pdhg", "pdhg", 0)
    for seed in range(args.seeds):
        print(f"running spdhg seed {seed}, {args.epochs} epochs ...")
        one_run(f"spdhg_seed{seed:03d}", "spdhg", seed)

    # combined per-epoch distance table, one column per run
    combined = os.path.join(out, "combined_dist.csv")
    with open(combined, "w", encoding="ascii", newline="\n") as fh:
        fh.write("epoch," + ",".join(r["name"] for r in runs) + "\n")
        for k in range(args.epochs):
            row = [format(float(k + 1), ".17g")]
            row += [format(r["record"].dist_sq[k], ".17g") for r in runs]
            fh.write(",".join(row) + "\n")

    summary = os.path.join(out, "summary.csv")
    with open(summary, "w", encoding="ascii", newline="\n") as fh:
        fh.write(
            "name,algo,seed,predicted_rate,fitted_rate,fit_r_squared,"
            "final_dist_sq,final_rmse,fwd_calls,adj_calls\n"
        )
        for r in runs:
            predicted = report.r_pdhg if r["algo"] == "pdhg" else report.r_spdhg
            fitted = r["fitted"]
            fh.write(
                ",".join(
                    (
                        r["name"],
                        r["algo"],
                        str(r["seed"]),
                        format(predicted, ".17g"),
                        format(fitted["rate"], ".17g") if fitted else "nan",
                        format(fitted["r_squared"], ".17g") if fitted else "nan",
                        format(r["final_dist_sq"], ".17g"),
                        format(r["final_rmse"], ".17g"),
                        str(r["record"].fwd_calls[-1]),
                        str(r["record"].adj_calls[-1]),
                    )
                )
                + "\n"
            )

    curves = [
        (r["name"], r["record"].epochs, r["record"].dist_sq) for r in runs
    ]
    guides = []
    anchor_epoch = min(5.0, float(args.epochs))
    for r in runs[:2]:
        k = r["record"].epochs.index(anchor_epoch) if anchor_epoch in r["record"].epochs else 0
        predicted = report.r_pdhg if r["algo"] == "pdhg" else report.r_spdhg
        guides.append(
            (
                f"predicted {r['algo']} rate {predicted:.3f}",
                predicted,
                r["record"].epochs[k],
                r["record"].dist_sq[k],
            )
        )
    save_convergence_plot(
        os.path.join(out, "convergence.png"),
        curves,
        guides=guides,
        title=f"{args.preset} preset, kappa {args.kappa:g}, N {n}",
    )

    spdhg0 = next(r for r in runs if r["algo"] == "spdhg")
    pdhg0 = next(r for r in runs if r["algo"] == "pdhg")
    save_panel_grid(
        os.path.join(out, "panels.png"),
        [
            ("ground truth", dataset.truth),
            ("compensated optimum (cg)", ref_mc.x_star),
            ("uncompensated optimum (cg)", ref_nomc.x_star),
            (f"pdhg, epoch {args.epochs}", pdhg0["image"]),
            (f"spdhg seed 0, epoch {args.epochs}", spdhg0["image"]),
        ],
        suptitle=f"{args.preset} preset",
    )

    manifest = {
        "command": "experiment",
        "preset": args.preset,
        "size": args.size,
        "epochs": args.epochs,
        "seeds": args.seeds,
        "kappa": args.kappa,
        "sigma": dataset.sigma,
        "data_seed": args.data_seed,
        "tol": args.tol,
        "alpha": alpha,
        "geometry": geometry_to_dict(dataset.geometry),
        "norms": norms,
        "rates": report.to_dict(),
        "reference": {
            "mc": {
                "rmse_to_truth": rmse_mc,
                "converged": ref_mc.converged,
                "residual": ref_mc.residual,
            },
            "nomc": {
                "rmse_to_truth": rmse_nomc,
                "converged": ref_nomc.converged,
                "residual": ref_nomc.residual,
            },
        },
        "runs": [
            {k: v for k, v in r.items() if k not in ("image", "record")} for r in runs
        ],
        "files": [
            "dataset/",
            "reference_mc/",
            "reference_nomc/",
            "runs/",
            "rates.json",
            "combined_dist.csv",
            "summary.csv",
            "convergence.png",
            "panels.png",
        ],
    }
    write_manifest(os.path.join(out, "manifest.json"), manifest)
    print(f"experiment complete -> {out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
