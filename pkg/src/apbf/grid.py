"""Uniform-grid neighbour search with a counting sort over cells.

Cell size equals the query radius, so the 27 cells around a particle's own
cell cover its whole neighbourhood.
"""

import numpy as np
from numba import njit, prange

from .errors import InvalidIndexError, InvalidParameterError


@njit(cache=True)
def _cell_coords(pos, lo, h, dims):
    n = pos.shape[0]
    coords = np.empty((n, 3), dtype=np.int64)
    cell = np.empty(n, dtype=np.int64)
    for i in range(n):
        for a in range(3):
            c = int(np.floor((pos[i, a] - lo[a]) / h))
            if c < 0:
                c = 0
            elif c >= dims[a]:
                c = dims[a] - 1
            coords[i, a] = c
        cell[i] = coords[i, 0] + dims[0] * (coords[i, 1] + dims[1] * coords[i, 2])
    return coords, cell


@njit(cache=True)
def _counting_sort(cell, n_cells):
    n = cell.shape[0]
    counts = np.zeros(n_cells, dtype=np.int64)
    for i in range(n):
        counts[cell[i]] += 1
    starts = np.empty(n_cells + 1, dtype=np.int64)
    starts[0] = 0
    for c in range(n_cells):
        starts[c + 1] = starts[c] + counts[c]
    fill = starts[:-1].copy()
    perm = np.empty(n, dtype=np.int64)
    for i in range(n):
        c = cell[i]
        perm[fill[c]] = i
        fill[c] += 1
    return counts, starts, perm


def _make_csr_builder(parallel):
    # Cells are numbered x-fastest, so the three x-neighbours of a cell form
    # one contiguous slice of the sorted particle array.
    @njit(cache=True, parallel=parallel)
    def gather(pos, coords, starts, dims, h, cap, out, cnt):
        n = pos.shape[0]
        h2 = h * h
        for i in prange(n):
            k = 0
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
                        rx = pos[i, 0] - pos[j, 0]
                        ry = pos[i, 1] - pos[j, 1]
                        rz = pos[i, 2] - pos[j, 2]
                        if rx * rx + ry * ry + rz * rz < h2:
                            if k < cap:
                                out[i, k] = j
                            k += 1
            cnt[i] = k

    @njit(cache=True, parallel=parallel)
    def compact(mat, offsets, out):
        for i in prange(mat.shape[0]):
            s = offsets[i]
            for k in range(offsets[i + 1] - s):
                out[s + k] = mat[i, k]

    def build(sorted_pos, sorted_coords, starts, dims, h, cap=48):
        n = len(sorted_pos)
        cnt = np.empty(n, dtype=np.int64)
        while True:
            mat = np.empty((n, cap), dtype=np.int64)
            gather(sorted_pos, sorted_coords, starts, dims, h, cap, mat, cnt)
            most = int(cnt.max()) if n else 0
            if most <= cap:
                break
            cap = most
        offsets = np.zeros(n + 1, dtype=np.int64)
        np.cumsum(cnt, out=offsets[1:])
        out = np.empty(offsets[-1], dtype=np.int64)
        compact(mat, offsets, out)
        return offsets, out

    return build


_csr_serial = _make_csr_builder(False)
_csr_parallel = _make_csr_builder(True)


def check_finite(positions):
    bad = ~np.all(np.isfinite(positions), axis=1)
    if bad.any():
        idx = int(np.flatnonzero(bad)[0])
        raise InvalidParameterError(
            f"non-finite position at particle {idx}: {positions[idx].tolist()}"
        )


class UniformGrid:
    """Counting-sort cell index over a fixed set of positions.

    :meth:`neighbors` speaks in indices of the positions passed to
    :meth:`build`; :meth:`neighbor_lists` works in sorted order, which is the
    order of a state reordered during the build.
    """

    def __init__(self, cell_size, domain_min, domain_max, dims, cell_counts,
                 cell_starts, sorted_permutation, sorted_positions, sorted_coords):
        self.cell_size = cell_size
        self.domain_min = domain_min
        self.domain_max = domain_max
        self.dims = dims
        self.cell_counts = cell_counts
        self.cell_starts = cell_starts
        self.sorted_permutation = sorted_permutation
        self.sorted_positions = sorted_positions
        self.sorted_coords = sorted_coords
        self._rank = np.empty_like(sorted_permutation)
        self._rank[sorted_permutation] = np.arange(len(sorted_permutation))

    @classmethod
    def build(cls, positions, h, padding=None, state=None):
        """Bin ``positions`` into cells of size ``h``.

        ``padding`` (default one cell) widens the particle bounding box. When
        ``state`` is given, its arrays are reordered by the sort permutation.
        """
        if not h > 0:
            raise InvalidParameterError(f"cell size must be > 0, got {h}")
        pos = np.ascontiguousarray(positions, dtype=np.float64).reshape(-1, 3)
        check_finite(pos)
        pad = h if padding is None else float(padding)
        if len(pos):
            lo = pos.min(axis=0) - pad
            hi = pos.max(axis=0) + pad
        else:
            lo = np.zeros(3)
            hi = np.zeros(3)
        dims = (np.floor((hi - lo) / h).astype(np.int64) + 1).clip(min=1)
        coords, cell = _cell_coords(pos, lo, float(h), dims)
        counts, starts, perm = _counting_sort(cell, int(np.prod(dims)))
        if state is not None:
            state.reorder(perm)
        return cls(float(h), lo, hi, dims, counts, starts, perm,
                   np.ascontiguousarray(pos[perm]), np.ascontiguousarray(coords[perm]))

    @property
    def count(self):
        return len(self.sorted_permutation)

    def cell_of(self, i):
        return tuple(int(c) for c in self.sorted_coords[self._rank[i]])

    def neighbor_lists(self, parallel=False):
        """CSR ``(offsets, indices)`` of neighbours in sorted order.

        Entry ``k`` of the CSR describes sorted particle ``k`` and lists
        sorted indices; :meth:`neighbors` translates back to input indices.
        """
        build = _csr_parallel if parallel else _csr_serial
        return build(self.sorted_positions, self.sorted_coords, self.cell_starts,
                     self.dims, self.cell_size)

    def neighbors(self, i):
        """Input indices ``j`` with ``|x_i - x_j| < h``, including ``i``, ascending."""
        if not 0 <= i < self.count:
            raise InvalidIndexError(f"particle index {i} out of range [0, {self.count})")
        k = self._rank[i]
        p = self.sorted_positions[k]
        c = self.sorted_coords[k]
        h2 = self.cell_size**2
        found = []
        nx, ny, nz = self.dims
        for dz in (-1, 0, 1):
            cz = c[2] + dz
            if not 0 <= cz < nz:
                continue
            for dy in (-1, 0, 1):
                cy = c[1] + dy
                if not 0 <= cy < ny:
                    continue
                for dx in (-1, 0, 1):
                    cx = c[0] + dx
                    if not 0 <= cx < nx:
                        continue
                    cell = cx + nx * (cy + ny * cz)
                    s, e = self.cell_starts[cell], self.cell_starts[cell + 1]
                    d = self.sorted_positions[s:e] - p
                    hit = np.flatnonzero(np.einsum("ij,ij->i", d, d) < h2)
                    found.append(self.sorted_permutation[s + hit])
        return np.sort(np.concatenate(found)) if found else np.empty(0, dtype=np.int64)
