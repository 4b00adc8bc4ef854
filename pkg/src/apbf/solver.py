"""Density-constraint solver and the adaptive frame loop.

PBF is the special case where every particle has the same level. A frame
runs ``substeps`` times:

1. apply gravity and predict positions for every particle;
2. sort particles into the grid, build neighbour lists, detect contacts;
3. pre-stabilise contacts of particles whose level is below the threshold;
4. for ``it = 1..n_max`` over particles with ``level >= it``: compute lambda,
   then the position correction plus contact response, then apply;
5. derive velocities from the predicted positions and commit them.

Particles that leave the loop keep their predicted position and their last
lambda, which active neighbours keep reading.
"""

import math
import time
from dataclasses import dataclass, field

import numpy as np
from numba import njit, prange

from .collision import SdfScene, contact_arrays, prestabilize, project_out
from .errors import InvalidParameterError, NumericalAbort
from .grid import UniformGrid
from .kernels import POLY6_COEF, SPIKY_GRAD_COEF, poly6_scalar, spiky_grad_scalar
from .particles import IterationRange, finished_set
from .lod import LodModelConfig, compute_levels

MODES = ("pbf", "apbf")


@dataclass
class SolverConfig:
    h: float = 0.1
    rest_density: float = 1000.0
    dt_frame: float = 0.0016
    substeps: int = 2
    range: IterationRange = field(default_factory=lambda: IterationRange(3, 6))
    epsilon: float = 1e-5
    gravity: tuple = (0.0, -9.81, 0.0)
    stab_iterations: int = 2
    stab_threshold: int | None = None
    particle_radius: float | None = None
    mode: str = "apbf"
    velocity_cap: float | None = None
    inactive_lambda: str = "frozen"
    parallel: bool = True

    def __post_init__(self):
        if not self.dt_frame > 0:
            raise InvalidParameterError("dt_frame must be > 0")
        if not self.rest_density > 0:
            raise InvalidParameterError("rest_density must be > 0")
        if not self.h > 0:
            raise InvalidParameterError("smoothing length h must be > 0")
        if self.substeps < 1:
            raise InvalidParameterError("substeps must be >= 1")
        if self.epsilon < 0:
            raise InvalidParameterError("epsilon must be >= 0")
        if self.mode not in MODES:
            raise InvalidParameterError(f"mode must be one of {MODES}, got '{self.mode}'")
        if self.inactive_lambda not in ("frozen", "zero"):
            raise InvalidParameterError("inactive_lambda must be 'frozen' or 'zero'")
        if self.stab_threshold is None:
            self.stab_threshold = self.range.n_max
        if not 1 <= self.stab_threshold <= self.range.n_max:
            raise InvalidParameterError(
                f"stab_threshold must lie in [1, {self.range.n_max}], got {self.stab_threshold}"
            )
        if self.particle_radius is None:
            self.particle_radius = 0.25 * self.h
        if self.velocity_cap is None:
            self.velocity_cap = self.h / self.dt
        self.gravity = tuple(float(g) for g in self.gravity)

    @property
    def dt(self):
        return self.dt_frame / self.substeps


@dataclass
class FrameStats:
    frame: int
    time_ms: float
    avg_density_pct: float
    min_density_pct: float
    max_density_pct: float
    total_iterations: int
    contacts: int
    max_speed: float = float("nan")


# ---------------------------------------------------------------- per particle

@njit(cache=True)
def _density_i(i, nb, x, m, h):
    coef = POLY6_COEF / h**9
    rho = 0.0
    for j in nb:
        rho += m[j] * poly6_scalar(x[i, 0] - x[j, 0], x[i, 1] - x[j, 1], x[i, 2] - x[j, 2],
                                   h, coef)
    return rho


@njit(cache=True)
def _lambda_i(i, nb, x, m, w, h, rho0, eps):
    # poly6 density and spiky gradients fused over one neighbour sweep. The
    # constraint gradient carries the neighbour mass, grad_j C_i = -(m_j/rho0) grad W,
    # so that w_j |grad_j C_i|^2 = m_j |grad W|^2 / rho0^2.
    c6 = POLY6_COEF / h**9
    cg = SPIKY_GRAD_COEF / h**6 / rho0
    h2 = h * h
    rho = 0.0
    gx = 0.0
    gy = 0.0
    gz = 0.0
    denom = 0.0
    for j in nb:
        dx = x[i, 0] - x[j, 0]
        dy = x[i, 1] - x[j, 1]
        dz = x[i, 2] - x[j, 2]
        r2 = dx * dx + dy * dy + dz * dz
        if r2 >= h2:
            continue
        diff = h2 - r2
        rho += m[j] * (c6 * diff * diff * diff)
        if r2 == 0.0:
            continue
        r = math.sqrt(r2)
        q = h - r
        s = cg * q * q / r
        ax = s * dx
        ay = s * dy
        az = s * dz
        gx += m[j] * ax
        gy += m[j] * ay
        gz += m[j] * az
        if j != i:
            denom += m[j] * (ax * ax + ay * ay + az * az)
    denom += w[i] * (gx * gx + gy * gy + gz * gz)
    return -(rho / rho0 - 1.0) / (denom + eps), rho


@njit(cache=True)
def _delta_i(i, nb, x, m, w, lam, level, it, zero_inactive, h, rho0):
    # own constraint pushes with m_j, neighbour constraints with m_i
    sx = 0.0
    sy = 0.0
    sz = 0.0
    li = lam[i]
    mi = m[i]
    coef = SPIKY_GRAD_COEF / h**6
    for j in nb:
        lj = lam[j]
        if zero_inactive and level[j] < it:
            lj = 0.0
        ax, ay, az = spiky_grad_scalar(x[i, 0] - x[j, 0], x[i, 1] - x[j, 1],
                                       x[i, 2] - x[j, 2], h, coef)
        s = li * m[j] + lj * mi
        sx += s * ax
        sy += s * ay
        sz += s * az
    f = w[i] / rho0
    return f * sx, f * sy, f * sz


# ---------------------------------------------------------------- bulk passes

def _make_passes(parallel):
    @njit(cache=True, parallel=parallel)
    def predict(x, v, x_pred, dt, gx, gy, gz):
        for i in prange(x.shape[0]):
            v[i, 0] += dt * gx
            v[i, 1] += dt * gy
            v[i, 2] += dt * gz
            x_pred[i, 0] = x[i, 0] + dt * v[i, 0]
            x_pred[i, 1] = x[i, 1] + dt * v[i, 1]
            x_pred[i, 2] = x[i, 2] + dt * v[i, 2]

    @njit(cache=True, parallel=parallel)
    def densities(idx, x, m, offs, nbrs, h, rho):
        for k in prange(idx.shape[0]):
            i = idx[k]
            rho[i] = _density_i(i, nbrs[offs[i]:offs[i + 1]], x, m, h)

    @njit(cache=True, parallel=parallel)
    def lambdas(idx, x, m, w, offs, nbrs, h, rho0, eps, lam, rho):
        for k in prange(idx.shape[0]):
            i = idx[k]
            lam[i], rho[i] = _lambda_i(i, nbrs[offs[i]:offs[i + 1]], x, m, w, h, rho0, eps)

    @njit(cache=True, parallel=parallel)
    def corrections(idx, x, m, w, lam, level, it, zero_inactive, offs, nbrs, h, rho0,
                    kinds, params, fd, r, out):
        for k in prange(idx.shape[0]):
            i = idx[k]
            dx, dy, dz = _delta_i(i, nbrs[offs[i]:offs[i + 1]], x, m, w, lam, level, it,
                                  zero_inactive, h, rho0)
            px, py, pz, _ = project_out(kinds, params, fd, r,
                                        x[i, 0] + dx, x[i, 1] + dy, x[i, 2] + dz)
            out[k, 0] = px
            out[k, 1] = py
            out[k, 2] = pz

    @njit(cache=True, parallel=parallel)
    def apply(idx, x, out):
        for k in prange(idx.shape[0]):
            i = idx[k]
            x[i, 0] = out[k, 0]
            x[i, 1] = out[k, 1]
            x[i, 2] = out[k, 2]

    @njit(cache=True, parallel=parallel)
    def finalize(x, x_pred, v, dt, cap):
        for i in prange(x.shape[0]):
            vx = (x_pred[i, 0] - x[i, 0]) / dt
            vy = (x_pred[i, 1] - x[i, 1]) / dt
            vz = (x_pred[i, 2] - x[i, 2]) / dt
            speed = math.sqrt(vx * vx + vy * vy + vz * vz)
            if speed > cap:
                s = cap / speed
                vx *= s
                vy *= s
                vz *= s
            v[i, 0] = vx
            v[i, 1] = vy
            v[i, 2] = vz
            x[i, 0] = x_pred[i, 0]
            x[i, 1] = x_pred[i, 1]
            x[i, 2] = x_pred[i, 2]

    return dict(predict=predict, densities=densities, lambdas=lambdas,
                corrections=corrections, apply=apply, finalize=finalize)


_PASSES = {False: _make_passes(False), True: _make_passes(True)}


@njit(cache=True)
def _first_nonfinite(idx, a):
    for k in range(idx.shape[0]):
        i = idx[k]
        for c in range(a.shape[1]):
            if not np.isfinite(a[i, c]):
                return i
    return -1


def _check(idx, arr, pass_name, frame):
    bad = _first_nonfinite(idx, arr.reshape(len(arr), -1))
    if bad >= 0:
        raise NumericalAbort(int(bad), pass_name, frame)


# ---------------------------------------------------------------- public ops

def _as_neighbors(neighbors):
    return np.ascontiguousarray(neighbors, dtype=np.int64)


def compute_density(i, neighbors, masses, positions, h):
    """SPH density at particle ``i`` summed over ``neighbors`` (which include ``i``)."""
    return float(_density_i(i, _as_neighbors(neighbors),
                            np.ascontiguousarray(positions, dtype=float),
                            np.asarray(masses, dtype=float), float(h)))


def compute_lambda(i, neighbors, state, config: SolverConfig):
    """Scaling factor of particle ``i``'s density constraint; cached in ``state.lam``."""
    lam, _ = _lambda_i(i, _as_neighbors(neighbors), state.x_pred, state.mass, state.inv_mass,
                       config.h, config.rest_density, config.epsilon)
    state.lam[i] = lam
    return lam


def compute_delta_p(i, neighbors, state, config: SolverConfig, iteration=1):
    return np.array(_delta_i(i, _as_neighbors(neighbors), state.x_pred, state.mass,
                             state.inv_mass, state.lam, state.level, iteration,
                             config.inactive_lambda == "zero", config.h, config.rest_density))


@njit(cache=True)
def _grid_densities(pos, coords, starts, dims, m, h, rho):
    c6 = POLY6_COEF / h**9
    h2 = h * h
    for i in range(pos.shape[0]):
        acc = 0.0
        cx0 = max(coords[i, 0] - 1, 0)
        cx1 = min(coords[i, 0] + 1, dims[0] - 1)
        for dz in range(-1, 2):
            cz = coords[i, 2] + dz
            if cz < 0 or cz >= dims[2]:
                continue
            for dy in range(-1, 2):
                cy = coords[i, 1] + dy
                if cy < 0 or cy >= dims[1]:
                    continue
                row = dims[0] * (cy + dims[1] * cz)
                for j in range(starts[row + cx0], starts[row + cx1 + 1]):
                    dx = pos[i, 0] - pos[j, 0]
                    dy_ = pos[i, 1] - pos[j, 1]
                    dz_ = pos[i, 2] - pos[j, 2]
                    r2 = dx * dx + dy_ * dy_ + dz_ * dz_
                    if r2 < h2:
                        diff = h2 - r2
                        acc += m[j] * (c6 * diff * diff * diff)
        rho[i] = acc


def rest_denominator(spacing, h, rest_density):
    """Lambda denominator (without epsilon) of an interior particle of a cubic
    lattice with mass ``rest_density * spacing**3``.

    Useful for stating ``epsilon`` relative to the constraint stiffness, which
    keeps its damping effect the same when the resolution changes.
    """
    k = int(math.ceil(h / spacing)) + 1
    ax = np.arange(-k, k + 1) * spacing
    pos = np.stack(np.meshgrid(ax, ax, ax, indexing="ij"), axis=-1).reshape(-1, 3)
    centre = len(pos) // 2
    m = np.full(len(pos), rest_density * spacing**3)
    lam, _ = _lambda_i(centre, np.arange(len(pos)), pos, m, 1.0 / m, float(h),
                       float(rest_density), 0.0)
    # lambda = -C / denom with C taken from the lattice density
    rho = _density_i(centre, np.arange(len(pos)), pos, m, float(h))
    return float(-(rho / rest_density - 1.0) / lam)


def density_field(positions, masses, h):
    """Densities of all particles at ``positions``, returned in input order."""
    pos = np.ascontiguousarray(positions, dtype=float).reshape(-1, 3)
    if len(pos) == 0:
        return np.zeros(0)
    grid = UniformGrid.build(pos, h)
    m = np.ascontiguousarray(np.broadcast_to(masses, (len(pos),))[grid.sorted_permutation])
    rho_sorted = np.empty(len(pos))
    _grid_densities(grid.sorted_positions, grid.sorted_coords, grid.cell_starts, grid.dims,
                    m, float(h), rho_sorted)
    rho = np.empty(len(pos))
    rho[grid.sorted_permutation] = rho_sorted
    return rho


def _solve_substep(state, scene: SdfScene, config: SolverConfig, frame=None,
                   observer=None):
    """One substep in place; returns ``(iterations, contacts)``."""
    passes = _PASSES[bool(config.parallel)]
    dt = config.dt
    h = config.h
    rho0 = config.rest_density
    r = config.particle_radius
    n = state.count
    everyone = np.arange(n)

    passes["predict"](state.x, state.v, state.x_pred, dt, *config.gravity)
    _check(everyone, state.x_pred, "predict", frame)

    grid = UniformGrid.build(state.x_pred, h, state=state)
    offs, nbrs = grid.neighbor_lists(parallel=config.parallel)
    hit, _, _ = contact_arrays(scene, state.x_pred, r)
    n_contacts = int(hit.sum())

    if config.mode == "apbf" and config.stab_iterations > 0:
        low = finished_set(state.level, config.stab_threshold)
        prestabilize(state, scene, low, config.stab_iterations, r, contacts=hit)
        _check(low, state.x_pred, "prestabilize", frame)
    if observer is not None:
        observer("prestabilized", 0, state)

    zero_inactive = config.inactive_lambda == "zero"
    rho = np.empty(n)
    total = 0
    for it in range(1, config.range.n_max + 1):
        active = np.flatnonzero(state.level >= it) if config.mode == "apbf" else everyone
        if len(active) == 0:
            break
        total += len(active)
        passes["lambdas"](active, state.x_pred, state.mass, state.inv_mass, offs, nbrs,
                          h, rho0, config.epsilon, state.lam, rho)
        _check(active, state.lam, "lambda", frame)
        out = np.empty((len(active), 3))
        passes["corrections"](active, state.x_pred, state.mass, state.inv_mass, state.lam,
                              state.level, it, zero_inactive, offs, nbrs, h, rho0,
                              scene.kinds, scene.params, scene.fd_step, r, out)
        passes["apply"](active, state.x_pred, out)
        _check(active, state.x_pred, "position update", frame)
        if observer is not None:
            observer("iteration", it, state)

    passes["finalize"](state.x, state.x_pred, state.v, dt, config.velocity_cap)
    _check(everyone, state.v, "velocity update", frame)
    return total, n_contacts


def assign_levels(state, config: SolverConfig, cameras=None, lod: LodModelConfig | None = None):
    """Per-frame level refresh. PBF forces ``n_max``; APBF without a model keeps levels."""
    if config.mode == "pbf":
        state.level = np.full(state.count, config.range.n_max, dtype=np.int64)
    elif lod is not None and cameras is not None:
        levels = compute_levels(state.x, cameras, lod, config.particle_radius)
        state.set_levels(levels, config.range)
    else:
        state.set_levels(state.level, config.range)


def step_frame(state, scene: SdfScene, cameras, config: SolverConfig,
               lod: LodModelConfig | None = None, frame=0, observer=None,
               with_stats=True):
    """Advance ``state`` in place by one frame and return its :class:`FrameStats`.

    ``observer(event, iteration, state)`` is called after pre-stabilisation
    and after every solver iteration; tests use it to inspect intermediate
    positions.
    """
    t0 = time.perf_counter()
    assign_levels(state, config, cameras, lod)
    total = 0
    contacts = 0
    for _ in range(config.substeps):
        it, c = _solve_substep(state, scene, config, frame, observer)
        total += it
        contacts += c
    elapsed = (time.perf_counter() - t0) * 1e3
    if with_stats:
        rho = density_field(state.x, state.mass, config.h)
        pct = 100.0 * rho / config.rest_density
        avg, lo, hi = avg_density_pct(rho, config.rest_density), pct.min(), pct.max()
        vmax = float(np.sqrt((state.v * state.v).sum(axis=1).max())) if state.count else 0.0
    else:
        avg = lo = hi = vmax = float("nan")
    return FrameStats(frame, elapsed, avg, float(lo), float(hi), total, contacts, vmax)


def avg_density_pct(densities, rest_density):
    """``100 * sum(rho) / (n * rho0)``."""
    rho = np.asarray(densities, dtype=float)
    return float(100.0 * rho.sum() / (len(rho) * rest_density))
