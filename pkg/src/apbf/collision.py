"""Signed-distance obstacles, contact detection and contact projection.

Primitives are packed into ``(kinds, params)`` arrays so the numba solver
passes can evaluate the scene without touching Python objects. Distances are
negative inside solid material and positive in free space.
"""

import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .errors import InvalidParameterError

HALF_SPACE, BOX, CONTAINER, SPHERE, CONE = range(5)
_KIND_NAMES = {"half_space": HALF_SPACE, "box": BOX, "container": CONTAINER,
               "sphere": SPHERE, "cone": CONE}
_NPARAM = 6


@dataclass(frozen=True)
class HalfSpace:
    """Free space on the side ``normal`` points to."""
    point: tuple
    normal: tuple

    def packed(self):
        n = np.asarray(self.normal, dtype=float)
        n = n / np.linalg.norm(n)
        return HALF_SPACE, [*self.point, *n]


@dataclass(frozen=True)
class Box:
    """Solid axis-aligned box; with ``interior=True`` it is a container whose inside is free."""
    center: tuple
    half_size: tuple
    interior: bool = False

    def packed(self):
        return (CONTAINER if self.interior else BOX), [*self.center, *self.half_size]


@dataclass(frozen=True)
class Sphere:
    center: tuple
    radius: float

    def packed(self):
        return SPHERE, [*self.center, self.radius, 0.0, 0.0]


@dataclass(frozen=True)
class Cone:
    """Solid cone along +y: base disc at ``base`` with ``radius``, apex ``height`` above."""
    base: tuple
    radius: float
    height: float

    def packed(self):
        return CONE, [*self.base, self.radius, self.height, 0.0]


@dataclass
class SdfScene:
    primitives: list = field(default_factory=list)
    fd_step: float = 1e-5

    def __post_init__(self):
        self.pack()

    def pack(self):
        kinds = np.empty(len(self.primitives), dtype=np.int64)
        params = np.zeros((len(self.primitives), _NPARAM))
        for k, prim in enumerate(self.primitives):
            kind, vals = prim.packed()
            kinds[k] = kind
            params[k, : len(vals)] = vals
        self.kinds = kinds
        self.params = params
        return kinds, params

    def add(self, prim):
        self.primitives.append(prim)
        self.pack()
        return self


def primitive_from_dict(d):
    """Build a primitive from a flat ``{kind, ...}`` mapping (config files)."""
    kind = d["kind"]
    vec = lambda key: tuple(float(v) for v in d[key])  # noqa: E731
    if kind == "half_space":
        return HalfSpace(vec("point"), vec("normal"))
    if kind in ("box", "container"):
        return Box(vec("center"), vec("half_size"), interior=kind == "container")
    if kind == "sphere":
        return Sphere(vec("center"), float(d["radius"]))
    if kind == "cone":
        return Cone(vec("base"), float(d["radius"]), float(d["height"]))
    raise InvalidParameterError(
        f"unknown obstacle kind '{kind}', expected one of {sorted(_KIND_NAMES)}"
    )


@njit(cache=True)
def _sd_box(px, py, pz, prm):
    ox = px - prm[0]
    oy = py - prm[1]
    oz = pz - prm[2]
    qx = abs(ox) - prm[3]
    qy = abs(oy) - prm[4]
    qz = abs(oz) - prm[5]
    sx = 1.0 if ox >= 0 else -1.0
    sy = 1.0 if oy >= 0 else -1.0
    sz = 1.0 if oz >= 0 else -1.0
    mx = max(qx, 0.0)
    my = max(qy, 0.0)
    mz = max(qz, 0.0)
    outside = math.sqrt(mx * mx + my * my + mz * mz)
    if outside > 0.0:
        return outside, sx * mx / outside, sy * my / outside, sz * mz / outside
    if qx >= qy and qx >= qz:
        return qx, sx, 0.0, 0.0
    if qy >= qz:
        return qy, 0.0, sy, 0.0
    return qz, 0.0, 0.0, sz


@njit(cache=True)
def _sd_cone_value(px, py, pz, prm):
    r1 = prm[3]
    hh = 0.5 * prm[4]
    qx = math.sqrt((px - prm[0]) ** 2 + (pz - prm[2]) ** 2)
    qy = py - (prm[1] + hh)
    # capped cone with top radius 0
    k1x, k1y = 0.0, hh
    k2x, k2y = -r1, 2.0 * hh
    cax = qx - min(qx, r1 if qy < 0.0 else 0.0)
    cay = abs(qy) - hh
    t = ((k1x - qx) * k2x + (k1y - qy) * k2y) / (k2x * k2x + k2y * k2y)
    t = min(max(t, 0.0), 1.0)
    cbx = qx - k1x + k2x * t
    cby = qy - k1y + k2y * t
    s = -1.0 if (cbx < 0.0 and cay < 0.0) else 1.0
    return s * math.sqrt(min(cax * cax + cay * cay, cbx * cbx + cby * cby))


@njit(cache=True)
def primitive_sdf(kind, prm, px, py, pz, fd):
    if kind == HALF_SPACE:
        d = (px - prm[0]) * prm[3] + (py - prm[1]) * prm[4] + (pz - prm[2]) * prm[5]
        return d, prm[3], prm[4], prm[5]
    if kind == BOX:
        return _sd_box(px, py, pz, prm)
    if kind == CONTAINER:
        d, gx, gy, gz = _sd_box(px, py, pz, prm)
        return -d, -gx, -gy, -gz
    if kind == SPHERE:
        ox = px - prm[0]
        oy = py - prm[1]
        oz = pz - prm[2]
        r = math.sqrt(ox * ox + oy * oy + oz * oz)
        if r == 0.0:
            return -prm[3], 0.0, 1.0, 0.0
        return r - prm[3], ox / r, oy / r, oz / r
    d = _sd_cone_value(px, py, pz, prm)
    gx = _sd_cone_value(px + fd, py, pz, prm) - _sd_cone_value(px - fd, py, pz, prm)
    gy = _sd_cone_value(px, py + fd, pz, prm) - _sd_cone_value(px, py - fd, pz, prm)
    gz = _sd_cone_value(px, py, pz + fd, prm) - _sd_cone_value(px, py, pz - fd, prm)
    g = math.sqrt(gx * gx + gy * gy + gz * gz)
    if g == 0.0:
        return d, 0.0, 1.0, 0.0
    return d, gx / g, gy / g, gz / g


@njit(cache=True)
def scene_sdf(kinds, params, px, py, pz, fd):
    best = np.inf
    bx, by, bz = 0.0, 1.0, 0.0
    for k in range(kinds.shape[0]):
        d, gx, gy, gz = primitive_sdf(kinds[k], params[k], px, py, pz, fd)
        if d < best:
            best, bx, by, bz = d, gx, gy, gz
    return best, bx, by, bz


@njit(cache=True)
def project_out(kinds, params, fd, r, px, py, pz):
    """Move a point along the surface normal until it is ``r`` clear of the scene."""
    if kinds.shape[0] == 0:
        return px, py, pz, False
    d, nx, ny, nz = scene_sdf(kinds, params, px, py, pz, fd)
    if d < r:
        depth = r - d
        return px + depth * nx, py + depth * ny, pz + depth * nz, True
    return px, py, pz, False


@njit(cache=True)
def _contacts_kernel(kinds, params, fd, pos, r):
    n = pos.shape[0]
    depth = np.zeros(n)
    normal = np.zeros((n, 3))
    hit = np.zeros(n, dtype=np.bool_)
    if kinds.shape[0] == 0:
        return hit, depth, normal
    for i in range(n):
        d, nx, ny, nz = scene_sdf(kinds, params, pos[i, 0], pos[i, 1], pos[i, 2], fd)
        if d < r:
            hit[i] = True
            depth[i] = r - d
            normal[i, 0] = nx
            normal[i, 1] = ny
            normal[i, 2] = nz
    return hit, depth, normal


@njit(cache=True)
def _prestabilize_kernel(kinds, params, fd, r, x, x_pred, idx, iterations):
    moved = 0
    for _ in range(iterations):
        for k in range(idx.shape[0]):
            i = idx[k]
            px, py, pz, hit = project_out(kinds, params, fd, r,
                                          x_pred[i, 0], x_pred[i, 1], x_pred[i, 2])
            if hit:
                dx = px - x_pred[i, 0]
                dy = py - x_pred[i, 1]
                dz = pz - x_pred[i, 2]
                x_pred[i, 0] = px
                x_pred[i, 1] = py
                x_pred[i, 2] = pz
                x[i, 0] += dx
                x[i, 1] += dy
                x[i, 2] += dz
                moved += 1
    return moved


@dataclass(frozen=True)
class Contact:
    particle: int
    depth: float
    normal: np.ndarray


def scene_distance(scene: SdfScene, p):
    """Signed distance to the closest primitive and that primitive's unit gradient."""
    if not scene.primitives:
        raise InvalidParameterError("scene has no primitives")
    p = np.asarray(p, dtype=float)
    d, gx, gy, gz = scene_sdf(scene.kinds, scene.params, p[0], p[1], p[2], scene.fd_step)
    return float(d), np.array([gx, gy, gz])


def contact_arrays(scene: SdfScene, positions, r):
    """Vectorised contact query: ``(mask, depth, normal)`` per particle."""
    pos = np.ascontiguousarray(positions, dtype=float).reshape(-1, 3)
    return _contacts_kernel(scene.kinds, scene.params, scene.fd_step, pos, float(r))


def find_contacts(scene: SdfScene, positions, r):
    hit, depth, normal = contact_arrays(scene, positions, r)
    return [Contact(int(i), float(depth[i]), normal[i].copy()) for i in np.flatnonzero(hit)]


def resolve_contact(p, contact: Contact):
    return np.asarray(p, dtype=float) + contact.depth * np.asarray(contact.normal)


def prestabilize(state, scene: SdfScene, subset, iterations, r, contacts=None):
    """Push contacted particles of ``subset`` out of obstacles.

    Current and predicted positions receive the same correction, so the
    velocity implied at the end of the step is not changed by this pass.
    ``contacts`` restricts the pass to particles flagged during contact
    detection; by default every particle of ``subset`` is checked.
    Returns the number of corrections applied.
    """
    if iterations <= 0 or len(subset) == 0 or not scene.primitives:
        return 0
    idx = np.asarray(subset, dtype=np.int64)
    if contacts is not None:
        idx = idx[np.asarray(contacts, dtype=bool)[idx]]
    return int(_prestabilize_kernel(scene.kinds, scene.params, scene.fd_step, float(r),
                                    state.x, state.x_pred, idx, int(iterations)))
