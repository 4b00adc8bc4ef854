"""Particle storage and the per-iteration active/finished set algebra."""

from dataclasses import dataclass

import numpy as np

from .errors import InvalidParameterError


@dataclass(frozen=True)
class IterationRange:
    n_min: int
    n_max: int

    def __post_init__(self):
        if not (1 <= self.n_min <= self.n_max):
            raise InvalidParameterError(
                f"iteration range needs 1 <= n_min <= n_max, got {{{self.n_min}..{self.n_max}}}"
            )

    @classmethod
    def uniform(cls, n):
        return cls(n, n)

    def clamp(self, levels):
        return np.clip(levels, self.n_min, self.n_max).astype(np.int64)

    def __str__(self):
        return f"{{{self.n_min}..{self.n_max}}}"


def is_active(level, l):
    """A particle takes part in iteration ``l`` while its level is at least ``l``."""
    return level >= l


def active_set(levels, l):
    return np.flatnonzero(np.asarray(levels) >= l)


def finished_set(levels, l):
    """Particles that left the solver loop before iteration ``l``; empty for ``l <= 1``."""
    levels = np.asarray(levels)
    if l <= 1:
        return np.empty(0, dtype=np.int64)
    return np.flatnonzero(levels < l)


class ParticleSet:
    """Structure-of-arrays fluid state.

    ``ids`` tracks the spawn index of each particle, since neighbour search
    reorders every array in place each substep.
    """

    _fields = ("x", "x_pred", "v", "mass", "inv_mass", "lam", "level", "ids")

    def __init__(self, positions, mass, level=1, velocities=None):
        x = np.ascontiguousarray(positions, dtype=np.float64).reshape(-1, 3)
        n = len(x)
        mass = np.broadcast_to(np.asarray(mass, dtype=np.float64), (n,)).copy()
        if np.any(mass <= 0):
            raise InvalidParameterError("particle masses must be > 0")
        self.x = x.copy()
        self.x_pred = x.copy()
        self.v = (
            np.zeros((n, 3))
            if velocities is None
            else np.ascontiguousarray(velocities, dtype=np.float64).reshape(n, 3).copy()
        )
        self.mass = mass
        self.inv_mass = 1.0 / mass
        self.lam = np.zeros(n)
        self.level = np.broadcast_to(np.asarray(level, dtype=np.int64), (n,)).copy()
        self.ids = np.arange(n, dtype=np.int64)

    @property
    def count(self):
        return len(self.x)

    def __len__(self):
        return len(self.x)

    def copy(self):
        new = object.__new__(ParticleSet)
        for name in self._fields:
            setattr(new, name, getattr(self, name).copy())
        return new

    def reorder(self, perm):
        """Apply one permutation jointly to every array."""
        for name in self._fields:
            setattr(self, name, np.ascontiguousarray(getattr(self, name)[perm]))

    def by_id(self, name):
        """Return field ``name`` in spawn order."""
        out = np.empty_like(getattr(self, name))
        out[self.ids] = getattr(self, name)
        return out

    def set_levels(self, levels, rng: IterationRange):
        self.level = rng.clamp(levels)

    def validate(self, rng: IterationRange | None = None):
        n = self.count
        for name in self._fields:
            if len(getattr(self, name)) != n:
                raise InvalidParameterError(f"array '{name}' has wrong length")
        if not np.allclose(self.inv_mass * self.mass, 1.0):
            raise InvalidParameterError("inverse masses out of sync with masses")
        if rng is not None and n and (
            self.level.min() < rng.n_min or self.level.max() > rng.n_max
        ):
            raise InvalidParameterError(f"levels outside iteration range {rng}")
        for name in ("x", "x_pred", "v", "lam"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise InvalidParameterError(f"non-finite entries in '{name}'")

    def to_csv(self, path):
        """Write one ``x,y,z,level`` record per particle, in spawn order."""
        x = self.by_id("x")
        lv = self.by_id("level")
        with open(path, "w") as fh:
            fh.write("x,y,z,level\n")
            for p, l in zip(x, lv):
                fh.write(f"{p[0]:.9g},{p[1]:.9g},{p[2]:.9g},{l}\n")
