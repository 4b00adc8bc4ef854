"""Running scenarios, metrics CSV files, run comparison and benchmarking."""

import logging
import statistics
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import ConfigError, InvalidParameterError
from .scenarios import ScenarioSpec
from .solver import FrameStats, step_frame
from .splat import render_levels, write_ppm

log = logging.getLogger(__name__)

CSV_COLUMNS = ("frame", "time_ms", "avg_density_pct", "min_density_pct",
               "max_density_pct", "total_iterations", "contacts")


@dataclass
class RunReport:
    frames: list
    config: dict
    scenario_hash: str
    state: object = field(default=None, repr=False)

    @property
    def median_frame_ms(self):
        return statistics.median(f.time_ms for f in self.frames) if self.frames else float("nan")

    @property
    def total_iterations(self):
        return sum(f.total_iterations for f in self.frames)

    @property
    def max_speed(self):
        return max((f.max_speed for f in self.frames), default=0.0)

    def density_series(self):
        return np.array([f.avg_density_pct for f in self.frames])

    def write_csv(self, path, timing=True):
        """Metrics CSV with a ``#`` header echoing the configuration.

        With ``timing=False`` the wall-time column is written as zeros so the
        file is byte-reproducible.
        """
        lines = [f"# scenario_hash = {self.scenario_hash}"]
        lines += [f"# {k} = {v}" for k, v in self.config.items()]
        if not timing:
            lines.append("# time_ms = suppressed (deterministic run)")
        lines.append(",".join(CSV_COLUMNS))
        for f in self.frames:
            t = f.time_ms if timing else 0.0
            lines.append(
                f"{f.frame},{t:.3f},{f.avg_density_pct:.10g},{f.min_density_pct:.10g},"
                f"{f.max_density_pct:.10g},{f.total_iterations},{f.contacts}"
            )
        Path(path).write_text("\n".join(lines) + "\n")


def read_metrics_csv(path):
    """Return ``(header dict, rows as FrameStats)``."""
    header = {}
    rows = []
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read metrics file {path}: {exc}") from exc
    columns = None
    for line in text.splitlines():
        if not line.strip():
            continue
        if line.startswith("#"):
            key, _, value = line[1:].partition("=")
            header[key.strip()] = value.strip()
            continue
        if columns is None:
            columns = line.split(",")
            if tuple(columns) != CSV_COLUMNS:
                raise ConfigError(f"{path}: unexpected columns {columns}")
            continue
        v = line.split(",")
        rows.append(FrameStats(int(v[0]), float(v[1]), float(v[2]), float(v[3]),
                               float(v[4]), int(v[5]), int(v[6])))
    return header, rows


def run_scenario(spec: ScenarioSpec, deterministic=False, out_dir=None,
                 dump_images=0, dump_particles=0, state=None, progress=None):
    """Simulate ``spec.frames`` frames and return a :class:`RunReport`.

    Raises :class:`~apbf.errors.NumericalAbort` if a pass goes non-finite.
    """
    solver = replace(spec.solver, parallel=not deterministic)
    state = spec.spawn() if state is None else state
    lod = spec.lod if solver.mode == "apbf" else None
    out = Path(out_dir) if out_dir else None
    if out:
        out.mkdir(parents=True, exist_ok=True)
    frames = []
    for k in range(spec.frames):
        stats = step_frame(state, spec.scene, spec.cameras, solver, lod=lod, frame=k)
        frames.append(stats)
        if out and dump_images and k % dump_images == 0:
            rng = solver.range
            img = render_levels(state.x, state.level, solver.particle_radius,
                                spec.camera, rng.n_min, rng.n_max)
            write_ppm(img, out / f"frame_{k:05d}.ppm")
        if out and dump_particles and k % dump_particles == 0:
            state.to_csv(out / f"particles_{k:05d}.csv")
        if progress:
            progress(stats)
    report = RunReport(frames, spec.echo(), spec.scenario_hash(), state)
    if out:
        report.write_csv(out / "metrics.csv", timing=not deterministic)
        if deterministic:
            (out / "timing.csv").write_text(
                "frame,time_ms\n" + "".join(f"{f.frame},{f.time_ms:.3f}\n" for f in frames)
            )
    return report


@dataclass
class Comparison:
    differences: np.ndarray
    max_difference: float
    tolerance: float

    @property
    def passed(self):
        return bool(self.max_difference < self.tolerance)


def compare_series(ref, test, tolerance=4.0):
    ref = np.asarray(ref, dtype=float)
    test = np.asarray(test, dtype=float)
    if ref.shape != test.shape:
        raise InvalidParameterError(f"frame counts differ: {len(ref)} vs {len(test)}")
    diff = np.abs(test - ref)
    return Comparison(diff, float(diff.max()) if len(diff) else 0.0, tolerance)


def compare_runs(ref_csv, test_csv, tolerance=4.0):
    """Per-frame ``|avg_density_pct|`` differences between two metrics files.

    Refuses files whose scenario hashes or frame counts differ.
    """
    ref_head, ref_rows = read_metrics_csv(ref_csv)
    test_head, test_rows = read_metrics_csv(test_csv)
    h_ref = ref_head.get("scenario_hash")
    h_test = test_head.get("scenario_hash")
    if h_ref != h_test:
        raise InvalidParameterError(f"scenario hash mismatch: {h_ref} (ref) vs {h_test} (test)")
    if len(ref_rows) != len(test_rows):
        raise InvalidParameterError(
            f"frame count mismatch: {len(ref_rows)} (ref) vs {len(test_rows)} (test)"
        )
    return compare_series([r.avg_density_pct for r in ref_rows],
                          [r.avg_density_pct for r in test_rows], tolerance)


# ---------------------------------------------------------------- bench

def parse_modes(text):
    """``"pbf:6,apbf:dtvs"`` -> ``[("pbf", 6), ("apbf", "dtvs")]``."""
    modes = []
    for item in text.split(","):
        kind, _, arg = item.strip().partition(":")
        kind = kind.lower()
        if kind == "pbf":
            try:
                modes.append(("pbf", int(arg) if arg else None))
            except ValueError as exc:
                raise ConfigError(f"bad iteration count in mode '{item}'") from exc
        elif kind == "apbf":
            modes.append(("apbf", (arg or "dtvs").lower()))
        else:
            raise ConfigError(f"unknown mode '{item}', expected pbf:N or apbf:dtc|dtvs")
    return modes


def mode_label(mode):
    kind, arg = mode
    return f"pbf:{arg}" if kind == "pbf" else f"apbf:{arg}"


def spec_for_mode(spec: ScenarioSpec, mode):
    kind, arg = mode
    if kind == "pbf":
        return spec.with_mode("pbf", n_iterations=arg)
    return spec.with_mode("apbf", lod_model=arg)


@dataclass
class BenchRow:
    mode: str
    median_frame_ms: float
    total_iterations: int
    gain_vs_apbf_time: float | None = None
    gain_vs_pbf_time: float | None = None


def bench(spec: ScenarioSpec, modes, repetitions=1, deterministic=False, warmup=1):
    """Median frame time and iteration totals per mode.

    Improvements are quoted against PBF at the scenario's ``n_max`` when that
    mode is present, both as ``(t_pbf - t)/t`` and ``(t_pbf - t)/t_pbf``.
    The first ``warmup`` frames of each repetition are excluded from timing.
    """
    if repetitions < 1:
        raise InvalidParameterError("repetitions must be >= 1")
    rows = []
    for mode in modes:
        if mode[0] == "pbf" and mode[1] is None:
            mode = ("pbf", spec.solver.range.n_max)
        mspec = spec_for_mode(spec, mode)
        times = []
        total = None
        for _ in range(repetitions):
            report = run_scenario(mspec, deterministic=deterministic)
            times += [f.time_ms for f in report.frames[warmup:]] or \
                [f.time_ms for f in report.frames]
            total = report.total_iterations
        rows.append(BenchRow(mode_label(mode), statistics.median(times), total))
    n_max = spec.solver.range.n_max
    ref = next((r for r in rows if r.mode == f"pbf:{n_max}"), None)
    if ref is not None:
        for r in rows:
            if r.mode.startswith("apbf"):
                r.gain_vs_apbf_time = (ref.median_frame_ms - r.median_frame_ms) / r.median_frame_ms
                r.gain_vs_pbf_time = (ref.median_frame_ms - r.median_frame_ms) / ref.median_frame_ms
    return rows


def format_bench(rows):
    head = f"{'mode':<12}{'median ms':>11}{'iterations':>14}{'gain/t_apbf':>13}{'gain/t_pbf':>12}"
    out = [head]
    for r in rows:
        g1 = f"{100 * r.gain_vs_apbf_time:.1f}%" if r.gain_vs_apbf_time is not None else "-"
        g2 = f"{100 * r.gain_vs_pbf_time:.1f}%" if r.gain_vs_pbf_time is not None else "-"
        out.append(f"{r.mode:<12}{r.median_frame_ms:>11.2f}{r.total_iterations:>14}{g1:>13}{g2:>12}")
    return "\n".join(out)
