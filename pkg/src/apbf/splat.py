"""Sphere splatting into a per-pixel view-distance buffer, plus PPM export."""

import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from .errors import InvalidIndexError, InvalidParameterError


@dataclass
class Camera:
    eye: tuple
    look_at: tuple
    up: tuple = (0.0, 1.0, 0.0)
    vertical_fov: float = math.radians(60.0)
    resolution: tuple = (256, 256)
    near: float = 1e-3

    def __post_init__(self):
        self.eye = np.asarray(self.eye, dtype=float)
        self.look_at = np.asarray(self.look_at, dtype=float)
        self.up = np.asarray(self.up, dtype=float)
        fwd = self.look_at - self.eye
        if np.linalg.norm(fwd) <= 0:
            raise InvalidParameterError("camera eye and look_at coincide")
        if not 0 < self.vertical_fov < math.pi:
            raise InvalidParameterError("vertical_fov must be in (0, pi)")
        if not self.near > 0:
            raise InvalidParameterError("near plane distance must be > 0")
        width, height = self.resolution
        if width <= 0 or height <= 0:
            raise InvalidParameterError(f"zero-area resolution {self.resolution}")
        fwd = fwd / np.linalg.norm(fwd)
        right = np.cross(fwd, self.up)
        if np.linalg.norm(right) == 0:
            raise InvalidParameterError("camera up vector is parallel to view direction")
        right /= np.linalg.norm(right)
        self.basis = np.ascontiguousarray(np.stack([right, np.cross(right, fwd), fwd]))
        self.focal = 0.5 * height / math.tan(0.5 * self.vertical_fov)

    @property
    def width(self):
        return int(self.resolution[0])

    @property
    def height(self):
        return int(self.resolution[1])

    def project(self, positions):
        """Pixel coordinates ``(u, v)``, view-axis depth and eye distance per point.

        ``u`` grows to the right and ``v`` downwards; pixel ``(i, j)`` covers
        ``[i, i+1) x [j, j+1)``.
        """
        rel = np.asarray(positions, dtype=float).reshape(-1, 3) - self.eye
        view = rel @ self.basis.T
        z = view[:, 2]
        with np.errstate(divide="ignore", invalid="ignore"):
            u = 0.5 * self.width + self.focal * view[:, 0] / z
            v = 0.5 * self.height - self.focal * view[:, 1] / z
        return u, v, z, np.linalg.norm(rel, axis=1)


@dataclass
class DepthBuffer:
    width: int
    height: int
    depth: np.ndarray
    owner: np.ndarray | None = None

    @classmethod
    def empty(cls, width, height):
        return cls(width, height, np.full((height, width), np.inf),
                   np.full((height, width), -1, dtype=np.int64))


@njit(cache=True)
def _splat_kernel(pos, r, eye, basis, focal, width, height, near, depth, owner):
    r2 = r * r
    cx0 = 0.5 * width
    cy0 = 0.5 * height
    for i in range(pos.shape[0]):
        ox = pos[i, 0] - eye[0]
        oy = pos[i, 1] - eye[1]
        oz = pos[i, 2] - eye[2]
        vx = basis[0, 0] * ox + basis[0, 1] * oy + basis[0, 2] * oz
        vy = basis[1, 0] * ox + basis[1, 1] * oy + basis[1, 2] * oz
        vz = basis[2, 0] * ox + basis[2, 1] * oy + basis[2, 2] * oz
        if vz <= near:
            continue
        c2 = ox * ox + oy * oy + oz * oz
        # projected disc bound from the tangent cone, padded by one pixel
        if vz * vz > r2:
            rad = focal * r / math.sqrt(vz * vz - r2) + 1.0
        else:
            rad = focal + width + height
        u = cx0 + focal * vx / vz
        v = cy0 - focal * vy / vz
        i0 = max(int(math.floor(u - rad)), 0)
        i1 = min(int(math.floor(u + rad)), width - 1)
        j0 = max(int(math.floor(v - rad)), 0)
        j1 = min(int(math.floor(v + rad)), height - 1)
        for j in range(j0, j1 + 1):
            py = (cy0 - (j + 0.5)) / focal
            for k in range(i0, i1 + 1):
                px = ((k + 0.5) - cx0) / focal
                dx = basis[0, 0] * px + basis[1, 0] * py + basis[2, 0]
                dy = basis[0, 1] * px + basis[1, 1] * py + basis[2, 1]
                dz = basis[0, 2] * px + basis[1, 2] * py + basis[2, 2]
                dn = math.sqrt(dx * dx + dy * dy + dz * dz)
                b = (ox * dx + oy * dy + oz * dz) / dn
                disc = b * b - (c2 - r2)
                if disc < 0.0:
                    continue
                t = b - math.sqrt(disc)
                if t <= near:
                    continue
                if t < depth[j, k] or (t == depth[j, k] and i < owner[j, k]):
                    depth[j, k] = t
                    owner[j, k] = i


def splat(positions, r, camera: Camera, buffer: DepthBuffer | None = None):
    """Rasterise each particle as a sphere of radius ``r``.

    A pixel stores the distance from the eye along its centre ray to the
    nearest sphere hit. ``owner`` records which particle won the pixel, with
    ties going to the lower index so the result is independent of order.
    """
    if not r > 0:
        raise InvalidParameterError(f"splat radius must be > 0, got {r}")
    buf = buffer or DepthBuffer.empty(camera.width, camera.height)
    pos = np.ascontiguousarray(positions, dtype=float).reshape(-1, 3)
    _splat_kernel(pos, float(r), camera.eye, camera.basis, camera.focal,
                  camera.width, camera.height, camera.near, buf.depth, buf.owner)
    return buf


def sample_depth(buffer: DepthBuffer, pixel):
    x, y = pixel
    if not (0 <= x < buffer.width and 0 <= y < buffer.height):
        raise InvalidIndexError(
            f"pixel {tuple(pixel)} outside {buffer.width}x{buffer.height} buffer"
        )
    return float(buffer.depth[y, x])


def depth_to_rgb(buffer: DepthBuffer, background=0):
    """Near pixels bright, far pixels dark, unwritten pixels ``background``."""
    d = buffer.depth
    finite = np.isfinite(d)
    gray = np.full(d.shape, background, dtype=np.uint8)
    if finite.any():
        lo, hi = d[finite].min(), d[finite].max()
        span = hi - lo
        t = (d[finite] - lo) / span if span > 0 else np.zeros(finite.sum())
        gray[finite] = np.round(255 - 215 * t).astype(np.uint8)
    return np.repeat(gray[:, :, None], 3, axis=2)


def level_colors(levels, n_min, n_max):
    """Green for the highest level through yellow to red for the lowest."""
    levels = np.asarray(levels, dtype=float)
    t = (levels - n_min) / (n_max - n_min) if n_max > n_min else np.ones_like(levels)
    red = np.where(t < 0.5, 255, np.round(255 * (2 - 2 * t)))
    green = np.where(t < 0.5, np.round(255 * 2 * t), 255)
    return np.stack([red, green, np.zeros_like(t)], axis=-1).astype(np.uint8)


def render_levels(positions, levels, r, camera: Camera, n_min, n_max, background=(0, 0, 0)):
    """Opaque level-coloured splat image, ``(height, width, 3)`` uint8."""
    buf = splat(positions, r, camera)
    img = np.empty((camera.height, camera.width, 3), dtype=np.uint8)
    img[:] = background
    hit = buf.owner >= 0
    img[hit] = level_colors(np.asarray(levels)[buf.owner[hit]], n_min, n_max)
    return img


def write_ppm(image, path):
    """Write a binary P6 file from a :class:`DepthBuffer` or an RGB uint8 array."""
    if isinstance(image, DepthBuffer):
        image = depth_to_rgb(image)
    image = np.ascontiguousarray(image, dtype=np.uint8)
    if image.ndim != 3 or image.shape[2] != 3:
        raise InvalidParameterError(f"expected an (h, w, 3) image, got shape {image.shape}")
    h, w, _ = image.shape
    try:
        with open(path, "wb") as fh:
            fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
            fh.write(image.tobytes())
    except OSError as exc:
        raise OSError(f"cannot write PPM to {path}: {exc}") from exc
