import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from conftest import ball_mask
from hireqsm.errors import GridMismatch
from hireqsm.volume import (GridSpec, RoiMask, ScalarVolume, band_mask, boundary_set,
                            crop_center, interior_set, pad_zero)


def brute_boundary(member):
    n1, n2, n3 = member.shape
    out = np.zeros_like(member)
    for i, j, k in zip(*np.nonzero(member)):
        for d in ((1, 0, 0), (-1, 0, 0), (0, 1, 0), (0, -1, 0), (0, 0, 1), (0, 0, -1)):
            a, b, c = i + d[0], j + d[1], k + d[2]
            if not (0 <= a < n1 and 0 <= b < n2 and 0 <= c < n3) or not member[a, b, c]:
                out[i, j, k] = True
                break
    return out


def test_grid_rejects_bad_dims_and_spacing():
    with pytest.raises(ValueError):
        GridSpec((3, 8, 8))
    with pytest.raises(ValueError):
        GridSpec((8, 8, 8), (1.0, 0.0, 1.0))


def test_flat_order_is_x_fastest():
    grid = GridSpec((4, 5, 6))
    data = np.arange(grid.size, dtype=float)
    vol = ScalarVolume(grid, data)
    assert vol.data[1, 0, 0] == 1.0
    assert vol.data[0, 1, 0] == 4.0
    np.testing.assert_array_equal(vol.flat(), data)


@pytest.mark.parametrize("bad", [np.nan, np.inf, -np.inf])
def test_non_finite_rejected(bad):
    data = np.zeros((4, 4, 4))
    data[1, 2, 3] = bad
    with pytest.raises(ValueError):
        ScalarVolume(GridSpec((4, 4, 4)), data)


def test_shape_mismatch_rejected():
    with pytest.raises(GridMismatch):
        ScalarVolume(GridSpec((4, 4, 4)), np.zeros((4, 4, 5)))


def test_empty_mask_has_no_boundary():
    m = RoiMask(GridSpec((8, 8, 8)), np.zeros((8, 8, 8), bool))
    assert boundary_set(m).count == 0
    assert band_mask(m, 3).count == 0


def test_full_grid_boundary_is_outer_shell():
    m = RoiMask(GridSpec((8, 8, 8)), np.ones((8, 8, 8), bool))
    assert boundary_set(m).count == 8**3 - 6**3 == 296


def test_centered_cube_boundary():
    member = np.zeros((8, 8, 8), bool)
    member[3:6, 3:6, 3:6] = True
    b = boundary_set(RoiMask(GridSpec((8, 8, 8)), member))
    assert b.count == 26
    assert not b.member[4, 4, 4]


def test_band_matches_brute_force_chebyshev():
    roi = ball_mask((32, 32, 32), 10)
    k = 2
    edge = np.argwhere(boundary_set(roi).member)
    idx = np.indices(roi.grid.shape).reshape(3, -1).T
    # Chebyshev distance from every voxel to the nearest boundary voxel
    dist = np.full(len(idx), np.inf)
    for chunk in np.array_split(edge, 8):
        d = np.abs(idx[:, None, :] - chunk[None, :, :]).max(axis=2).min(axis=1)
        dist = np.minimum(dist, d)
    expected = (dist <= k).reshape(roi.grid.shape)
    got = band_mask(roi, k).member
    assert got.sum() == expected.sum()
    np.testing.assert_array_equal(got, expected)


def test_band_zero_is_boundary():
    roi = ball_mask((16, 16, 16), 5)
    np.testing.assert_array_equal(band_mask(roi, 0).member, boundary_set(roi).member)


def test_band_is_monotone():
    roi = ball_mask((24, 24, 24), 7)
    prev = band_mask(roi, 0).member
    for k in range(1, 6):
        cur = band_mask(roi, k).member
        assert np.all(cur[prev])
        prev = cur


@settings(max_examples=40, deadline=None)
@given(arrays(bool, st.tuples(st.integers(4, 9), st.integers(4, 9), st.integers(4, 9))))
def test_boundary_matches_definition(member):
    roi = RoiMask(GridSpec(member.shape), member)
    b = boundary_set(roi).member
    np.testing.assert_array_equal(b, brute_boundary(member))
    assert not np.any(b & ~member)
    np.testing.assert_array_equal(interior_set(roi).member, member & ~b)


@settings(max_examples=25, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(4, 7), st.integers(4, 7), st.integers(4, 7)),
              elements=st.floats(-1e6, 1e6)),
       st.integers(1, 3))
def test_pad_crop_round_trip(data, factor):
    vol = ScalarVolume(GridSpec(data.shape, (1.0, 0.5, 2.0)), data)
    padded = pad_zero(vol, factor)
    assert padded.grid.dims == tuple(factor * n for n in data.shape)
    assert padded.data.sum() == pytest.approx(data.sum(), abs=1e-6)
    back = crop_center(padded, vol.grid)
    assert np.array_equal(back.data, vol.data)


def test_pad_zero_volume_stays_zero():
    vol = ScalarVolume.zeros(GridSpec((5, 6, 7)))
    assert not pad_zero(vol, 2).data.any()


def test_crop_rejects_larger_target():
    vol = ScalarVolume.zeros(GridSpec((5, 6, 7)))
    with pytest.raises(GridMismatch):
        crop_center(vol, GridSpec((6, 6, 7)))


def test_volumes_are_read_only():
    vol = ScalarVolume.zeros(GridSpec((4, 4, 4)))
    with pytest.raises(ValueError):
        vol.data[0, 0, 0] = 1.0


def test_mask_set_algebra():
    g = GridSpec((4, 4, 4))
    a = RoiMask(g, np.indices(g.shape)[0] < 2)
    b = RoiMask(g, np.indices(g.shape)[1] < 2)
    assert (a & b).count == 16
    assert (a | b).count == 48
    assert (a - b).count == 16
    assert (~a).count == 32
    for x, y in itertools.product([a, b], repeat=2):
        assert (x & y).count <= min(x.count, y.count)
