"""Command line entry point: ``apbf run | compare | bench``.

Exit codes: 0 success, 1 tolerance failure, 2 usage error, 3 numerical abort.
"""

import argparse
import logging
import sys
import warnings

from . import harness
from .errors import ConfigError, InvalidParameterError, NumericalAbort
from .scenarios import build_scenario

EXIT_OK, EXIT_FAIL, EXIT_USAGE, EXIT_NUMERIC = 0, 1, 2, 3

log = logging.getLogger("apbf")


def _scenario_args(p):
    p.add_argument("--scenario", required=True, help="built-in name or scenario file path")
    p.add_argument("--scale", type=float, default=1.0,
                   help="fraction of the full-size particle count")
    p.add_argument("--frames", type=int, help="override the scenario frame count")
    p.add_argument("--seed", type=int, help="seed for the lattice jitter")
    p.add_argument("--deterministic", action="store_true",
                   help="single-threaded passes and reproducible metrics files")


def _load(args, mode=None, lod_model=None):
    overrides = {}
    if args.frames is not None:
        overrides["scenario.frames"] = args.frames
    if args.seed is not None:
        overrides["scenario.seed"] = args.seed
    spec = build_scenario(args.scenario, args.scale, overrides)
    if mode:
        spec = spec.with_mode(mode, lod_model=lod_model)
    return spec


def cmd_run(args):
    spec = _load(args, args.mode, args.lod_model)
    log.info("%s: %d particles, %d frames, mode %s %s", spec.name, spec.particle_count,
             spec.frames, spec.solver.mode, spec.solver.range)

    def progress(stats):
        if stats.frame % 50 == 0:
            log.info("frame %d  %.1f ms  avg density %.2f%%", stats.frame, stats.time_ms,
                     stats.avg_density_pct)

    report = harness.run_scenario(spec, deterministic=args.deterministic, out_dir=args.out,
                                  dump_images=args.dump_images,
                                  dump_particles=args.dump_particles, progress=progress)
    print(f"frames={len(report.frames)} median_frame_ms={report.median_frame_ms:.2f} "
          f"total_iterations={report.total_iterations} max_speed={report.max_speed:.6g} "
          f"velocity_cap={spec.solver.velocity_cap:.6g} hash={report.scenario_hash}")
    return EXIT_OK


def cmd_compare(args):
    result = harness.compare_runs(args.ref, args.test, args.tolerance_pct)
    verdict = "PASS" if result.passed else "FAIL"
    print(f"max |delta avg_density_pct| = {result.max_difference:.4f} "
          f"(tolerance {result.tolerance}) {verdict}")
    return EXIT_OK if result.passed else EXIT_FAIL


def cmd_bench(args):
    spec = _load(args)
    rows = harness.bench(spec, harness.parse_modes(args.modes), args.reps,
                         deterministic=args.deterministic)
    print(f"{spec.name}: {spec.particle_count} particles, {spec.frames} frames, "
          f"{args.reps} repetition(s)")
    print(harness.format_bench(rows))
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(prog="apbf", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="simulate a scenario and write metrics")
    _scenario_args(run)
    run.add_argument("--mode", choices=("pbf", "apbf"), default="apbf")
    run.add_argument("--lod-model", choices=("dtc", "dtvs"), default=None)
    run.add_argument("--out", help="output directory for metrics.csv and dumps")
    run.add_argument("--dump-images", type=int, default=0, metavar="K",
                     help="write a level-coloured PPM every K frames")
    run.add_argument("--dump-particles", type=int, default=0, metavar="K",
                     help="write an x,y,z,level CSV every K frames")
    run.set_defaults(func=cmd_run)

    cmp_ = sub.add_parser("compare", help="compare average-density series of two runs")
    cmp_.add_argument("--ref", required=True)
    cmp_.add_argument("--test", required=True)
    cmp_.add_argument("--tolerance-pct", type=float, default=4.0)
    cmp_.set_defaults(func=cmd_compare)

    bench = sub.add_parser("bench", help="median frame time and iteration totals per mode")
    _scenario_args(bench)
    bench.add_argument("--modes", default="pbf:6,apbf:dtvs",
                       help="comma list of pbf:N and apbf:dtc|dtvs")
    bench.add_argument("--reps", type=int, default=1)
    bench.set_defaults(func=cmd_bench)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    # numba reports an outdated system TBB once per process; it falls back on its own
    warnings.filterwarnings("ignore", message="The TBB threading layer")
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(message)s")
    try:
        return args.func(args)
    except NumericalAbort as exc:
        print(f"numerical abort: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigError, InvalidParameterError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
