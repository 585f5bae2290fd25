"""Command-line front end.

Exit codes:

    0  registration produced a result (criterion fired or iteration cap hit)
    2  bad command-line usage
    3  unreadable or malformed input file
    4  no overlap: no source point had a neighbour within the search radius
    5  batch mode: every problem failed
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from . import io_formats
from .association import Gaussian, TDistribution
from .io_formats import FormatError
from .metrics import aggregate, mse_to_ground_truth
from .optimizer import LmConfig
from .registration import (
    NO_OVERLAP,
    CostDrop,
    FixedIterations,
    RegistrationConfig,
    RelativeMse,
    register,
)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_INPUT = 3
EXIT_NO_OVERLAP = 4
EXIT_ALL_FAILED = 5

log = logging.getLogger("ppcr")


def _add_config_flags(p):
    g = p.add_argument_group("algorithm parameters")
    g.add_argument("-k", "--max-neighbors", type=int, default=10,
                   help="candidate target points per source point (default 10)")
    g.add_argument("--max-dist", type=float, default=None,
                   help="neighbour search radius in metres (default 10x target resolution)")
    g.add_argument("--weight-model", choices=("t", "gaussian"), default="t")
    g.add_argument("--nu", type=float, default=5.0, help="t-distribution degrees of freedom (default 5)")
    g.add_argument("--criterion", choices=("cost-drop", "relative-mse", "fixed"), default="cost-drop")
    g.add_argument("--threshold", type=float, default=0.01,
                   help="relative threshold for cost-drop / relative-mse (default 0.01)")
    g.add_argument("--consecutive", type=int, default=10,
                   help="iterations the condition must hold (default 10)")
    g.add_argument("--cap", type=int, default=100,
                   help="hard iteration cap; also the n of --criterion fixed (default 100)")
    g.add_argument("--lm-max-iterations", type=int, default=LmConfig.max_lm_iterations)
    g.add_argument("--lm-damping", type=float, default=LmConfig.initial_damping)
    g.add_argument("--lm-step-tol", type=float, default=LmConfig.step_tolerance)
    g.add_argument("--lm-func-tol", type=float, default=LmConfig.function_tolerance)


def build_config(args, criterion=None) -> RegistrationConfig:
    if criterion is None:
        if args.criterion == "cost-drop":
            criterion = CostDrop(args.threshold, args.consecutive)
        elif args.criterion == "relative-mse":
            criterion = RelativeMse(args.threshold, args.consecutive)
        else:
            criterion = FixedIterations(args.cap)
    model = TDistribution(args.nu) if args.weight_model == "t" else Gaussian()
    lm = LmConfig(
        max_lm_iterations=args.lm_max_iterations,
        initial_damping=args.lm_damping,
        step_tolerance=args.lm_step_tol,
        function_tolerance=args.lm_func_tol,
    )
    return RegistrationConfig(
        max_neighbors=args.max_neighbors,
        max_neighbor_distance=args.max_dist,
        weight_model=model,
        criterion=criterion,
        max_iterations=args.cap,
        lm=lm,
    )


def _load_inputs(args):
    source = io_formats.read_cloud(args.source)
    target = io_formats.read_cloud(args.target)
    guess = io_formats.read_transform(args.initial_guess) if args.initial_guess else None
    truth = io_formats.read_transform(args.ground_truth) if getattr(args, "ground_truth", None) else None
    return source, target, guess, truth


def run_register(args) -> int:
    try:
        source, target, guess, truth = _load_inputs(args)
        config = build_config(args)
    except (OSError, FormatError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INPUT
    result = register(source, target, guess, config, ground_truth=truth)
    if args.output:
        io_formats.write_transform(args.output, result.transform)
    else:
        sys.stdout.write(io_formats.format_transform(result.transform))
    if args.trace:
        io_formats.write_trace(args.trace, result.trace)
    final_cost = result.trace[-1].final_cost if result.trace else float("nan")
    print(f"termination: {result.termination_reason}")
    print(f"iterations: {result.iterations}")
    print(f"final cost: {final_cost:.9g}")
    if truth is not None and result.trace:
        print(f"mse to ground truth: {result.trace[-1].mse_ground_truth:.9g}")
    return EXIT_NO_OVERLAP if result.termination_reason == NO_OVERLAP else EXIT_OK


def run_compare_criteria(args) -> int:
    try:
        source, target, guess, truth = _load_inputs(args)
        config_cd = build_config(args, CostDrop(args.threshold, args.consecutive))
        config_fixed = build_config(args, FixedIterations(args.cap))
    except (OSError, FormatError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INPUT
    rows = []
    status = EXIT_OK
    for label, config in ((f"fixed-{args.cap}", config_fixed), ("cost-drop", config_cd)):
        result = register(source, target, guess, config, ground_truth=truth)
        if result.termination_reason == NO_OVERLAP:
            status = EXIT_NO_OVERLAP
        mse = mse_to_ground_truth(source, result.transform, truth)
        rows.append([label, io_formats.format_number(mse), str(result.iterations), result.termination_reason])
    out = open(args.output, "w", newline="") if args.output else sys.stdout
    try:
        w = csv.writer(out, lineterminator="\n")
        w.writerow(["criterion", "mse_gt", "iterations", "termination"])
        w.writerows(rows)
    finally:
        if out is not sys.stdout:
            out.close()
    return status


def read_manifest(path):
    """Problems as ``(source, target, ground_truth)`` paths, relative to the manifest."""
    base = Path(path).parent
    problems = []
    with open(path) as f:
        for lineno, line in enumerate(f, 1):
            s = line.split("#", 1)[0].strip()
            if not s:
                continue
            parts = s.split()
            if len(parts) != 3:
                raise FormatError("expected 'source target ground_truth'", path, lineno)
            problems.append(tuple(str(base / p) for p in parts))
    return problems


def _batch_one(job):
    i, (src_path, tgt_path, gt_path), config, out_dir = job
    try:
        source = io_formats.read_cloud(src_path)
        target = io_formats.read_cloud(tgt_path)
        truth = io_formats.read_transform(gt_path)
    except (OSError, FormatError) as e:
        return {"status": "failed", "error": str(e)}
    result = register(source, target, None, config, ground_truth=truth)
    if result.termination_reason == NO_OVERLAP:
        return {"status": "failed", "error": "no overlap"}
    stem = Path(out_dir) / f"problem_{i:04d}"
    io_formats.write_transform(f"{stem}.transform.txt", result.transform)
    io_formats.write_trace(f"{stem}.trace.csv", result.trace)
    return {
        "status": "ok",
        "mse_gt": mse_to_ground_truth(source, result.transform, truth),
        "iterations": result.iterations,
        "termination": result.termination_reason,
    }


def run_batch(args) -> int:
    try:
        problems = read_manifest(args.manifest)
        config = build_config(args)
    except (OSError, FormatError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INPUT
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    jobs = [(i, p, config, str(out_dir)) for i, p in enumerate(problems)]
    if args.jobs > 1:
        with ProcessPoolExecutor(args.jobs) as pool:
            results = list(pool.map(_batch_one, jobs))
    else:
        results = [_batch_one(j) for j in jobs]

    with open(out_dir / "results.csv", "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["problem", "source", "target", "status", "mse_gt", "iterations", "termination", "error"])
        for (i, (s, t, _), _, _), r in zip(jobs, results):
            w.writerow([i, s, t, r["status"], io_formats.format_number(r.get("mse_gt")),
                        r.get("iterations", ""), r.get("termination", ""), r.get("error", "")])
    ok = [r for r in results if r["status"] == "ok"]
    for (i, p, _, _), r in zip(jobs, results):
        if r["status"] != "ok":
            log.warning("problem %d (%s) failed: %s", i, p[0], r["error"])
    print(f"{len(ok)}/{len(results)} problems registered")
    if not ok:
        return EXIT_ALL_FAILED
    summary = aggregate([r["mse_gt"] for r in ok], [r["iterations"] for r in ok])
    io_formats.write_summary(out_dir / "summary.csv", [("mse_gt", summary)])
    print(f"median {summary.median:.9g}  q75 {summary.q75:.9g}  q95 {summary.q95:.9g}  "
          f"mean iterations {summary.mean_iterations:.4g}")
    return EXIT_OK


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ppcr", description="Probabilistic point cloud registration.")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("register", help="align one source cloud to a target cloud")
    p.add_argument("source")
    p.add_argument("target")
    p.add_argument("--initial-guess", help="4x4 transform file (default identity)")
    p.add_argument("--ground-truth", help="4x4 transform file; fills the mse_gt trace column")
    p.add_argument("-o", "--output", help="write the final transform here (default stdout)")
    p.add_argument("--trace", help="write the per-iteration trace here")
    _add_config_flags(p)
    p.set_defaults(func=run_register)

    p = sub.add_parser("compare-criteria", help="fixed iteration count vs cost drop on one pair")
    p.add_argument("source")
    p.add_argument("target")
    p.add_argument("--ground-truth", required=True)
    p.add_argument("--initial-guess")
    p.add_argument("-o", "--output", help="write the two-row summary here (default stdout)")
    _add_config_flags(p)
    p.set_defaults(func=run_compare_criteria)

    p = sub.add_parser("batch", help="run every problem listed in a manifest")
    p.add_argument("manifest", help="lines of 'source target ground_truth'")
    p.add_argument("--out-dir", required=True)
    p.add_argument("-j", "--jobs", type=int, default=1)
    _add_config_flags(p)
    p.set_defaults(func=run_batch)
    return parser


def main(argv=None) -> int:
    parser = make_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except (OSError, FormatError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INPUT
    except ValueError as e:
        # invalid parameter values (thresholds outside (0, 1), k < 1, ...)
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
