"""Camera-driven per-particle levels.

Two distance measures feed the same linear distance-to-level map:

* ``dtc``  Euclidean distance from the particle to the camera eye.
* ``dtvs`` depth gap between the particle and the nearest splatted sphere
  along its pixel ray, i.e. how far it sits behind the visible surface.
"""

from dataclasses import dataclass

import numpy as np

from .errors import InvalidParameterError
from .particles import IterationRange
from .splat import Camera, splat

MODELS = ("dtc", "dtvs")


@dataclass(frozen=True)
class LodModelConfig:
    model: str
    range: IterationRange
    d_min: float = 0.0
    d_max: float = 1.0
    auto_range: bool = False
    percentiles: tuple = (5.0, 95.0)

    def __post_init__(self):
        if self.model not in MODELS:
            raise InvalidParameterError(f"unknown LOD model '{self.model}', expected one of {MODELS}")
        if not self.auto_range and not self.d_min < self.d_max:
            raise InvalidParameterError(
                f"LOD distance range needs d_min < d_max, got {self.d_min} >= {self.d_max}"
            )


def _round_half_away(x):
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


def map_distance_to_level(d, cfg: LodModelConfig, d_min=None, d_max=None):
    """Linear map from ``[d_min, d_max]`` onto ``[n_max, n_min]``.

    Near particles get the highest level. Ties round half away from zero.
    Works elementwise on arrays; a scalar input returns an ``int``.
    """
    lo = cfg.d_min if d_min is None else d_min
    hi = cfg.d_max if d_max is None else d_max
    n_min, n_max = cfg.range.n_min, cfg.range.n_max
    d = np.asarray(d, dtype=float)
    if hi > lo:
        t = np.clip((d - lo) / (hi - lo), 0.0, 1.0)
        level = _round_half_away(n_max + t * (n_min - n_max))
    else:
        # collapsed automatic range: a step at d_min
        level = np.where(d <= lo, n_max, n_min)
    level = np.clip(level, n_min, n_max).astype(np.int64)
    return int(level) if level.ndim == 0 else level


def _resolve_range(dist, cfg):
    if not cfg.auto_range:
        return cfg.d_min, cfg.d_max
    finite = dist[np.isfinite(dist)]
    if finite.size == 0:
        return 0.0, 0.0
    lo, hi = np.percentile(finite, cfg.percentiles)
    return float(lo), float(hi)


def dtc_distances(positions, camera: Camera):
    return np.linalg.norm(np.asarray(positions, dtype=float).reshape(-1, 3) - camera.eye, axis=1)


def dtvs_distances(positions, camera: Camera, r):
    """Distance behind the visible surface; ``inf`` for particles that are not on screen.

    Gaps below ``r`` count as 0, since a visible particle's own sphere sits
    up to ``r`` in front of its centre.
    """
    pos = np.asarray(positions, dtype=float).reshape(-1, 3)
    buf = splat(pos, r, camera)
    u, v, z, dist = camera.project(pos)
    on_screen = (z > camera.near) & (u >= 0) & (u < camera.width) & (v >= 0) & (v < camera.height)
    out = np.full(len(pos), np.inf)
    iu = np.floor(u[on_screen]).astype(np.int64)
    iv = np.floor(v[on_screen]).astype(np.int64)
    surface = buf.depth[iv, iu]
    gap = np.maximum(0.0, dist[on_screen] - surface)
    # inf surface means the particle's own splat missed its pixel centre
    gap = np.where(np.isfinite(surface), gap, 0.0)
    out[on_screen] = np.where(gap < r, 0.0, gap)
    return out


def lod_dtc(positions, camera: Camera, cfg: LodModelConfig):
    dist = dtc_distances(positions, camera)
    lo, hi = _resolve_range(dist, cfg)
    return map_distance_to_level(dist, cfg, lo, hi)


def lod_dtvs(positions, camera: Camera, cfg: LodModelConfig, r):
    """Levels from the visible-surface gap; off-screen particles get ``n_min``."""
    dist = dtvs_distances(positions, camera, r)
    lo, hi = _resolve_range(dist, cfg)
    levels = np.full(len(dist), cfg.range.n_min, dtype=np.int64)
    seen = np.isfinite(dist)
    levels[seen] = map_distance_to_level(dist[seen], cfg, lo, hi)
    return levels


def blend_lod(level_arrays):
    """Elementwise maximum across cameras."""
    arrays = [np.asarray(a, dtype=np.int64) for a in level_arrays]
    if not arrays:
        raise InvalidParameterError("blend_lod needs at least one level array")
    if len({len(a) for a in arrays}) != 1:
        raise InvalidParameterError(
            f"level arrays differ in length: {[len(a) for a in arrays]}"
        )
    return np.maximum.reduce(arrays)


def compute_levels(positions, cameras, cfg: LodModelConfig, r):
    """Levels for one frame from one camera or a list of cameras."""
    if isinstance(cameras, Camera):
        cameras = [cameras]
    if cfg.model == "dtc":
        per_cam = [lod_dtc(positions, cam, cfg) for cam in cameras]
    else:
        per_cam = [lod_dtvs(positions, cam, cfg, r) for cam in cameras]
    return blend_lod(per_cam)


__all__ = [
    "LodModelConfig", "map_distance_to_level", "lod_dtc", "lod_dtvs", "blend_lod",
    "compute_levels", "dtc_distances", "dtvs_distances", "MODELS",
]
