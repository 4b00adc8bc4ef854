import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from apbf.errors import InvalidIndexError, InvalidParameterError
from apbf.grid import UniformGrid
from apbf.particles import ParticleSet


def brute_force(pos, h):
    d2 = ((pos[:, None, :] - pos[None, :, :]) ** 2).sum(-1)
    return [set(np.flatnonzero(row < h * h).tolist()) for row in d2]


def csr_sets(grid, parallel):
    offs, nbrs = grid.neighbor_lists(parallel=parallel)
    perm = grid.sorted_permutation
    out = [None] * grid.count
    for k in range(grid.count):
        out[perm[k]] = set(perm[nbrs[offs[k]:offs[k + 1]]].tolist())
    return out


def test_singleton():
    g = UniformGrid.build([(0.0, 0.0, 0.0)], 1.0)
    assert g.cell_counts.sum() == 1
    assert np.count_nonzero(g.cell_counts) == 1
    assert g.sorted_permutation.tolist() == [0]
    assert g.neighbors(0).tolist() == [0]


def test_integer_binning():
    g = UniformGrid.build([(0, 0, 0), (2.5, 0, 0)], 1.0)
    assert g.cell_of(1)[0] - g.cell_of(0)[0] == 2


def test_small_neighbourhood():
    g = UniformGrid.build([(0, 0, 0), (0.5, 0, 0), (2, 0, 0)], 1.0)
    assert g.neighbors(0).tolist() == [0, 1]
    with pytest.raises(InvalidIndexError):
        g.neighbors(3)


def test_cell_count_conservation():
    pos = np.random.default_rng(1).uniform(size=(1000, 3))
    g = UniformGrid.build(pos, 0.1)
    assert g.cell_counts.sum() == 1000
    assert g.cell_starts[-1] == 1000
    assert np.all(np.diff(g.cell_starts) >= 0)
    assert sorted(g.sorted_permutation.tolist()) == list(range(1000))


def test_cell_size_and_rebuild_idempotent():
    pos = np.random.default_rng(2).uniform(size=(300, 3))
    a = UniformGrid.build(pos, 0.15)
    b = UniformGrid.build(pos, 0.15)
    assert a.cell_size == 0.15
    assert np.array_equal(a.cell_counts, b.cell_counts)
    assert np.array_equal(a.sorted_permutation, b.sorted_permutation)


def test_non_finite_position_names_the_particle():
    pos = np.zeros((5, 3))
    pos[3, 1] = np.nan
    with pytest.raises(InvalidParameterError, match="particle 3"):
        UniformGrid.build(pos, 0.1)


def test_exact_distance_h_is_excluded():
    g = UniformGrid.build([(0, 0, 0), (0.25, 0, 0)], 0.25)
    assert g.neighbors(0).tolist() == [0]


def test_build_reorders_state_jointly():
    pos = np.random.default_rng(4).uniform(size=(50, 3))
    state = ParticleSet(pos, 1.0)
    state.v[:] = pos * 2
    g = UniformGrid.build(state.x, 0.2, state=state)
    assert np.array_equal(state.x, g.sorted_positions)
    assert np.array_equal(state.v, 2 * state.x)
    assert np.array_equal(state.by_id("x"), pos)


def test_random_box_matches_brute_force():
    pos = np.random.default_rng(5).uniform(0, 2, size=(500, 3))
    g = UniformGrid.build(pos, 0.3)
    ref = brute_force(pos, 0.3)
    assert [set(g.neighbors(i).tolist()) for i in range(500)] == ref
    assert csr_sets(g, parallel=False) == ref


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 400), st.floats(0.02, 0.5), st.integers(0, 2**32 - 1))
def test_oracle_property(n, h, seed):
    rng = np.random.default_rng(seed)
    pos = rng.uniform(-1, 1, size=(n, 3))
    # clustered points stress cells with many occupants
    pos[: n // 3] *= 0.05
    g = UniformGrid.build(pos, h)
    ref = brute_force(pos, h)
    sets = csr_sets(g, parallel=False)
    assert sets == ref
    for i, s in enumerate(sets):
        assert i in s
        assert all(i in sets[j] for j in s)


def test_parallel_matches_serial():
    pos = np.random.default_rng(6).uniform(size=(2000, 3))
    g = UniformGrid.build(pos, 0.08)
    o1, n1 = g.neighbor_lists(parallel=False)
    o2, n2 = g.neighbor_lists(parallel=True)
    assert np.array_equal(o1, o2)
    assert np.array_equal(n1, n2)
