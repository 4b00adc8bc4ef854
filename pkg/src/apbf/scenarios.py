"""Built-in benchmark scenes and the key/value scenario file format.

All built-in scenes keep their physical size fixed; ``scale`` multiplies the
particle count, so per-axis counts shrink by ``cbrt(scale)`` and the spacing
grows to match. The smoothing length is twice the spacing and the collision
radius half of it.
"""

import configparser
import copy
import hashlib
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .collision import Box, Cone, SdfScene, primitive_from_dict
from .errors import ConfigError, InvalidParameterError
from .lod import LodModelConfig
from .particles import IterationRange, ParticleSet
from .solver import SolverConfig, rest_denominator
from .splat import Camera

BUILTIN = ("dam_break", "double_dam_break", "multi_dam_break")
BASE_SPACING = 1.0 / 60.0
REST_DENSITY = 1000.0


def spawn_block(origin, counts, spacing, jitter=0.0, rng=None):
    """Axis-aligned lattice of ``counts[0] * counts[1] * counts[2]`` points.

    ``jitter`` is a fraction of the spacing (at most 0.01) drawn uniformly
    from ``rng``; the first lattice point sits at ``origin``.
    """
    counts = tuple(int(c) for c in counts)
    if len(counts) != 3 or min(counts) < 1:
        raise InvalidParameterError(f"block counts must be >= 1 per axis, got {counts}")
    if not spacing > 0:
        raise InvalidParameterError(f"spacing must be > 0, got {spacing}")
    if not 0 <= jitter <= 0.01:
        raise InvalidParameterError("jitter must lie in [0, 0.01] of the spacing")
    ix, iy, iz = np.meshgrid(*(np.arange(c) for c in counts), indexing="ij")
    pts = np.stack([ix, iy, iz], axis=-1).reshape(-1, 3) * float(spacing)
    pts += np.asarray(origin, dtype=float)
    if jitter > 0:
        rng = rng if rng is not None else np.random.default_rng(0)
        pts += rng.uniform(-jitter * spacing, jitter * spacing, pts.shape)
    return pts


@dataclass
class FluidBlock:
    origin: tuple
    counts: tuple
    spacing: float


@dataclass
class ScenarioSpec:
    name: str
    blocks: list
    scene: SdfScene
    cameras: list
    solver: SolverConfig
    lod: LodModelConfig
    frames: int = 1000
    scale: float = 1.0
    seed: int = 0
    jitter: float = 0.01
    # per-model LOD settings picked up by with_mode(lod_model=...)
    lod_presets: dict = field(default_factory=dict)

    @property
    def camera(self):
        return self.cameras[0]

    @property
    def particle_count(self):
        return sum(math.prod(b.counts) for b in self.blocks)

    @property
    def spacing(self):
        return self.blocks[0].spacing

    def spawn(self):
        """Fresh :class:`ParticleSet` with lattice mass ``rho0 * spacing**3``."""
        rng = np.random.default_rng(self.seed)
        pos, mass = [], []
        for b in self.blocks:
            p = spawn_block(b.origin, b.counts, b.spacing, self.jitter, rng)
            pos.append(p)
            mass.append(np.full(len(p), self.solver.rest_density * b.spacing**3))
        state = ParticleSet(np.concatenate(pos), np.concatenate(mass),
                            level=self.solver.range.n_max)
        return state

    def with_mode(self, mode, lod_model=None, n_iterations=None):
        """Copy set up for ``pbf`` with ``n_iterations`` or ``apbf`` with ``lod_model``."""
        spec = copy.copy(self)
        if mode == "pbf":
            n = n_iterations or self.solver.range.n_max
            spec.solver = replace(self.solver, mode="pbf", range=IterationRange.uniform(n),
                                  stab_threshold=n)
        elif mode == "apbf":
            spec.solver = replace(self.solver, mode="apbf")
            if lod_model and lod_model != self.lod.model:
                preset = self.lod_presets.get(lod_model)
                spec.lod = (replace(preset, range=self.lod.range) if preset
                            else replace(self.lod, model=lod_model))
        else:
            raise InvalidParameterError(f"unknown mode '{mode}'")
        return spec

    def scenario_hash(self):
        """Digest of everything that must match for two runs to be comparable.

        Solver mode, iteration range and LOD settings are excluded, so a PBF
        reference and an APBF run of the same scene share a hash.
        """
        s = self.solver
        parts = [
            f"frames={self.frames}", f"scale={self.scale!r}", f"seed={self.seed}",
            f"jitter={self.jitter!r}", f"dt_frame={s.dt_frame!r}", f"substeps={s.substeps}",
            f"h={s.h!r}", f"rest_density={s.rest_density!r}", f"epsilon={s.epsilon!r}",
            f"gravity={s.gravity!r}", f"radius={s.particle_radius!r}",
        ]
        for b in self.blocks:
            parts.append(f"block={tuple(b.origin)!r}/{tuple(b.counts)!r}/{b.spacing!r}")
        parts.append(f"scene={self.scene.kinds.tolist()!r}/{self.scene.params.tolist()!r}")
        return hashlib.sha256("\n".join(parts).encode()).hexdigest()[:16]

    def echo(self):
        """Flat ``key -> value`` description for report headers."""
        s, lod = self.solver, self.lod
        out = {
            "scenario": self.name, "particles": self.particle_count, "frames": self.frames,
            "scale": self.scale, "seed": self.seed, "jitter": self.jitter,
            "mode": s.mode, "iterations": str(s.range), "dt_frame": s.dt_frame,
            "substeps": s.substeps, "h": s.h, "rest_density": s.rest_density,
            "epsilon": s.epsilon, "gravity": " ".join(repr(g) for g in s.gravity),
            "stab_iterations": s.stab_iterations, "stab_threshold": s.stab_threshold,
            "particle_radius": s.particle_radius, "velocity_cap": s.velocity_cap,
            "inactive_lambda": s.inactive_lambda,
        }
        if s.mode == "apbf":
            out["lod_model"] = lod.model
            out["lod_range"] = "auto" if lod.auto_range else f"{lod.d_min} {lod.d_max}"
        return out


# ---------------------------------------------------------------- built-ins

def _scaled_counts(counts, scale):
    f = scale ** (1.0 / 3.0)
    return tuple(max(1, int(round(c * f))) for c in counts)


def _spacing(scale):
    return BASE_SPACING / scale ** (1.0 / 3.0)


def _solver(spacing, n_min, n_max):
    h = 2.0 * spacing
    # epsilon equal to the rest-lattice denominator halves the interior step,
    # which keeps the Jacobi passes from overshooting at every resolution
    eps = rest_denominator(spacing, h, REST_DENSITY)
    return SolverConfig(h=h, rest_density=REST_DENSITY, range=IterationRange(n_min, n_max),
                        particle_radius=0.5 * spacing, epsilon=eps)


def _lod_presets(solver):
    """DTVS: full iterations within ``3h`` of the visible surface, the minimum
    beyond it. DTC: range resolved from the frame's distance percentiles."""
    dtvs = LodModelConfig("dtvs", solver.range, d_min=0.0, d_max=3.0 * solver.h)
    return dtvs, {"dtvs": dtvs, "dtc": LodModelConfig("dtc", solver.range, auto_range=True)}


def _block_at(corner, counts, spacing):
    """Block whose lattice fills the box starting at ``corner``."""
    return FluidBlock(tuple(c + 0.5 * spacing for c in corner), counts, spacing)


def _dam_break(scale):
    s = _spacing(scale)
    counts = _scaled_counts((60, 60, 60), scale)
    solver = _solver(s, 3, 6)
    scene = SdfScene([Box((1.5, 1.0, 0.5), (1.5, 1.0, 0.5), interior=True)],
                     fd_step=1e-4 * solver.h)
    cam = Camera(eye=(1.5, 1.3, 4.2), look_at=(1.5, 0.4, 0.5),
                 vertical_fov=math.radians(50.0), resolution=(256, 256), near=0.01)
    lod, presets = _lod_presets(solver)
    return ScenarioSpec("dam_break", [_block_at((0.0, 0.0, 0.0), counts, s)], scene, [cam],
                        solver, lod, scale=scale, lod_presets=presets)


def _double_dam_break(scale):
    s = _spacing(scale)
    counts = _scaled_counts((58, 100, 58), scale)
    solver = _solver(s, 5, 10)
    scene = SdfScene([Box((2.0, 1.25, 0.5), (2.0, 1.25, 0.5), interior=True)],
                     fd_step=1e-4 * solver.h)
    blocks = [_block_at((0.0, 0.0, 0.0), counts, s),
              _block_at((4.0 - counts[0] * s, 0.0, 0.0), counts, s)]
    cam = Camera(eye=(2.0, 1.6, 5.0), look_at=(2.0, 0.5, 0.5),
                 vertical_fov=math.radians(55.0), resolution=(256, 256), near=0.01)
    lod, presets = _lod_presets(solver)
    return ScenarioSpec("double_dam_break", blocks, scene, [cam], solver, lod, scale=scale,
                        lod_presets=presets)


def _multi_dam_break(scale):
    s = _spacing(scale)
    counts = _scaled_counts((35, 46, 35), scale)
    solver = _solver(s, 4, 8)
    side = 2.4
    scene = SdfScene([Box((side / 2, 1.0, side / 2), (side / 2, 1.0, side / 2), interior=True),
                      Cone((side / 2, 0.0, side / 2), radius=0.5, height=0.8)],
                     fd_step=1e-4 * solver.h)
    wx, wz = counts[0] * s, counts[2] * s
    blocks = [_block_at((x, 0.0, z), counts, s)
              for x in (0.0, side - wx) for z in (0.0, side - wz)]
    cam = Camera(eye=(side / 2, 2.2, side + 2.6), look_at=(side / 2, 0.3, side / 2),
                 vertical_fov=math.radians(55.0), resolution=(256, 256), near=0.01)
    lod, presets = _lod_presets(solver)
    return ScenarioSpec("multi_dam_break", blocks, scene, [cam], solver, lod, scale=scale,
                        lod_presets=presets)


_BUILDERS = {"dam_break": _dam_break, "double_dam_break": _double_dam_break,
             "multi_dam_break": _multi_dam_break}


def build_scenario(name, scale=1.0, overrides=None):
    """Built-in scenario by name, or a scenario file when ``name`` is a path.

    ``overrides`` maps ``section.key`` strings (as in scenario files) to values.
    """
    if not scale > 0:
        raise InvalidParameterError(f"scale must be > 0, got {scale}")
    if name in _BUILDERS:
        spec = _BUILDERS[name](scale)
    elif Path(name).is_file():
        return load_scenario_file(name, scale, overrides)
    else:
        raise ConfigError(
            f"unknown scenario '{name}'; valid names: {', '.join(BUILTIN)} or a config file path"
        )
    if overrides:
        spec = apply_overrides(spec, overrides)
    return spec


# ---------------------------------------------------------------- scenario files

def _floats(text, n=None, key="value"):
    try:
        if isinstance(text, str):
            vals = [float(v) for v in text.replace(",", " ").split()]
        else:
            vals = [float(v) for v in np.ravel(text)]
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{key}: expected numbers, got '{text}'") from exc
    if n is not None and len(vals) != n:
        raise ConfigError(f"{key}: expected {n} numbers, got '{text}'")
    return tuple(vals)


def _bool(text):
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"expected a boolean, got '{text}'")


_SOLVER_KEYS = {
    "dt_frame": float, "substeps": int, "rest_density": float, "h": float,
    "epsilon": float, "stab_iterations": int, "stab_threshold": int,
    "particle_radius": float, "velocity_cap": float, "inactive_lambda": str, "mode": str,
}
_CAMERA_KEYS = ("eye", "look_at", "up", "fov_deg", "width", "height", "near")


def apply_overrides(spec: ScenarioSpec, overrides):
    spec = copy.copy(spec)
    solver = {}
    lod = {}
    rng = [spec.solver.range.n_min, spec.solver.range.n_max]
    cam = {}
    for full_key, value in overrides.items():
        section, _, key = full_key.partition(".")
        if section == "scenario":
            if key == "frames":
                spec.frames = int(value)
            elif key == "seed":
                spec.seed = int(value)
            elif key == "jitter":
                spec.jitter = float(value)
            elif key in ("name", "base", "scale"):
                if key == "name":
                    spec.name = str(value)
            else:
                raise ConfigError(f"unknown key '{full_key}'")
        elif section == "solver":
            if key in ("n_min", "n_max"):
                rng[key == "n_max"] = int(value)
            elif key == "gravity":
                solver["gravity"] = _floats(value, 3, full_key)
            elif key in _SOLVER_KEYS:
                solver[key] = _SOLVER_KEYS[key](value)
            else:
                raise ConfigError(f"unknown key '{full_key}'")
        elif section == "lod":
            if key == "model":
                lod["model"] = str(value).lower()
            elif key == "auto_range":
                lod["auto_range"] = _bool(value)
            elif key in ("d_min", "d_max"):
                lod[key] = float(value)
                lod.setdefault("auto_range", False)
            else:
                raise ConfigError(f"unknown key '{full_key}'")
        elif section == "camera":
            if key not in _CAMERA_KEYS:
                raise ConfigError(f"unknown key '{full_key}'")
            cam[key] = value
        else:
            raise ConfigError(f"unknown section in key '{full_key}'")
    try:
        new_range = IterationRange(*rng)
        if "stab_threshold" not in solver and spec.solver.stab_threshold == spec.solver.range.n_max:
            solver["stab_threshold"] = new_range.n_max
        if "velocity_cap" not in solver and ("h" in solver or "dt_frame" in solver
                                             or "substeps" in solver):
            solver["velocity_cap"] = None
        if "epsilon" not in solver and ("h" in solver or "rest_density" in solver):
            solver["epsilon"] = rest_denominator(
                spec.spacing, solver.get("h", spec.solver.h),
                solver.get("rest_density", spec.solver.rest_density))
        spec.solver = replace(spec.solver, range=new_range, **solver)
        if lod:
            spec.lod = replace(spec.lod, range=new_range, **lod)
            spec.lod_presets = {}  # explicit settings win over the presets
        elif "h" in solver and spec.lod_presets:
            # presets are stated in multiples of h
            _, spec.lod_presets = _lod_presets(spec.solver)
            spec.lod = spec.lod_presets[spec.lod.model]
        else:
            spec.lod = replace(spec.lod, range=new_range)
    except InvalidParameterError as exc:
        raise ConfigError(str(exc)) from exc
    if cam:
        spec.cameras = [_camera(cam, spec.cameras[0])] + spec.cameras[1:]
    return spec


def _camera(values, base: Camera | None = None):
    def get(key, default):
        return values[key] if key in values else default

    try:
        return Camera(
            eye=_floats(get("eye", base.eye if base else None), 3, "camera.eye"),
            look_at=_floats(get("look_at", base.look_at if base else None), 3, "camera.look_at"),
            up=_floats(get("up", base.up if base else (0, 1, 0)), 3, "camera.up"),
            vertical_fov=math.radians(float(get("fov_deg", math.degrees(base.vertical_fov)
                                                if base else 60.0))),
            resolution=(int(get("width", base.width if base else 256)),
                        int(get("height", base.height if base else 256))),
            near=float(get("near", base.near if base else 0.01)),
        )
    except (TypeError, InvalidParameterError) as exc:
        raise ConfigError(f"invalid camera: {exc}") from exc


def _obstacle(section):
    d = dict(section)
    for key in ("point", "normal", "center", "half_size", "base"):
        if key in d:
            d[key] = _floats(d[key], 3, key)
    try:
        return primitive_from_dict(d)
    except KeyError as exc:
        raise ConfigError(f"obstacle is missing key {exc}") from exc
    except InvalidParameterError as exc:
        raise ConfigError(str(exc)) from exc


def load_scenario_file(path, scale=1.0, overrides=None):
    """Read a scenario from an INI-style ``key = value`` file.

    ``[scenario] base = <builtin>`` starts from a built-in scene; ``[fluid.*]``
    and ``[obstacle.*]`` sections replace its blocks and obstacles.
    """
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        with open(path) as fh:
            cp.read_file(fh)
    except (OSError, configparser.Error) as exc:
        raise ConfigError(f"cannot read scenario file {path}: {exc}") from exc
    sc = cp["scenario"] if cp.has_section("scenario") else {}
    base = sc.get("base", "dam_break")
    if base not in _BUILDERS:
        raise ConfigError(f"unknown base scenario '{base}'; valid names: {', '.join(BUILTIN)}")
    spec = _BUILDERS[base](scale)
    spec.name = sc.get("name", Path(path).stem)

    f = scale ** (1.0 / 3.0)
    fluid = [s for s in cp.sections() if s.startswith("fluid")]
    if fluid:
        blocks = []
        for name in fluid:
            sec = cp[name]
            counts = tuple(int(c) for c in _floats(sec["counts"], 3, f"{name}.counts"))
            spacing = float(sec.get("spacing", BASE_SPACING)) / f
            origin = _floats(sec["origin"], 3, f"{name}.origin")
            blocks.append(FluidBlock(origin, _scaled_counts(counts, scale), spacing))
        spec.blocks = blocks
    obstacles = [s for s in cp.sections() if s.startswith("obstacle")]
    if obstacles:
        spec.scene = SdfScene([_obstacle(cp[s]) for s in obstacles],
                              fd_step=spec.scene.fd_step)

    flat = {}
    for section in ("scenario", "solver", "lod", "camera"):
        if cp.has_section(section):
            for key, value in cp[section].items():
                flat[f"{section}.{key}"] = value
    if fluid and "solver.h" not in flat:
        flat["solver.h"] = 2.0 * spec.blocks[0].spacing
        flat.setdefault("solver.particle_radius", 0.5 * spec.blocks[0].spacing)
    flat.update(overrides or {})
    spec = apply_overrides(spec, flat)
    spec.scene.fd_step = 1e-4 * spec.solver.h
    return spec
