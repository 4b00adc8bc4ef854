import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from apbf.errors import InvalidParameterError
from apbf.particles import IterationRange, ParticleSet, active_set, finished_set, is_active

levels_st = st.lists(st.integers(1, 12), min_size=0, max_size=60)


@pytest.mark.parametrize("level, l, expected", [(3, 3, True), (3, 4, False), (6, 1, True)])
def test_is_active(level, l, expected):
    assert is_active(level, l) is expected


@pytest.mark.parametrize("l, expected", [(4, [1, 2]), (1, [0, 1, 2]), (7, [])])
def test_active_set(l, expected):
    assert active_set([3, 4, 6], l).tolist() == expected


@pytest.mark.parametrize("l, expected", [(1, []), (4, [0]), (7, [0, 1, 2])])
def test_finished_set(l, expected):
    assert finished_set([3, 4, 6], l).tolist() == expected


@given(levels_st, st.integers(1, 14))
def test_nesting(levels, l):
    assert set(active_set(levels, l + 1)) <= set(active_set(levels, l))


@given(levels_st, st.integers(1, 14))
def test_partition(levels, l):
    act = set(active_set(levels, l).tolist())
    fin = set(finished_set(levels, l).tolist())
    assert act | fin == set(active_set(levels, 1).tolist())
    assert not act & fin


@given(levels_st)
def test_nothing_finished_before_first_iteration(levels):
    assert len(finished_set(levels, 1)) == 0


@given(st.integers(1, 10), st.integers(1, 12))
def test_monotone_exit(level, l):
    if not is_active(level, l):
        assert not any(is_active(level, k) for k in range(l, l + 5))


def test_iteration_range_validation():
    with pytest.raises(InvalidParameterError):
        IterationRange(0, 3)
    with pytest.raises(InvalidParameterError):
        IterationRange(5, 4)
    assert IterationRange(3, 6).clamp([1, 4, 9]).tolist() == [3, 4, 6]
    assert str(IterationRange(3, 6)) == "{3..6}"


def test_particle_set_fields():
    ps = ParticleSet(np.zeros((4, 3)), 2.0, level=5)
    assert ps.count == 4
    assert np.all(ps.inv_mass == 0.5)
    assert ps.level.dtype == np.int64
    ps.validate(IterationRange(3, 6))
    with pytest.raises(InvalidParameterError):
        ps.validate(IterationRange(1, 4))
    with pytest.raises(InvalidParameterError):
        ParticleSet(np.zeros((2, 3)), 0.0)


def test_reorder_keeps_ids_in_sync(tmp_path):
    x = np.arange(12, dtype=float).reshape(4, 3)
    ps = ParticleSet(x, 1.0, level=[3, 4, 5, 6])
    ps.reorder(np.array([2, 0, 3, 1]))
    assert ps.ids.tolist() == [2, 0, 3, 1]
    assert np.array_equal(ps.by_id("x"), x)
    ps.to_csv(tmp_path / "p.csv")
    lines = (tmp_path / "p.csv").read_text().splitlines()
    assert lines[0] == "x,y,z,level"
    assert lines[1] == "0,1,2,3"
    assert len(lines) == 5


def test_validate_rejects_nan():
    ps = ParticleSet(np.zeros((2, 3)), 1.0)
    ps.v[1, 0] = np.nan
    with pytest.raises(InvalidParameterError):
        ps.validate()
