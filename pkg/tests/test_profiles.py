import numpy as np
import pytest
from numpy.testing import assert_allclose

from povsched.errors import ValidationError
from povsched.profiles import (
    SpreadProfile,
    TimeGrid,
    VolumeProfile,
    build_uniform_grid,
    constant_spread,
    load_profile,
    save_profile,
    slice_horizon,
    slice_spread,
    synth_u_shape_volume,
)


def test_uniform_grid_boundaries():
    grid = build_uniform_grid(0.0, 10.0, 2.5)
    assert_allclose(grid.boundaries, [0.0, 2.5, 5.0, 7.5, 10.0])
    assert grid.n == 4
    assert grid.span == 10.0
    assert_allclose(grid.midpoints, [1.25, 3.75, 6.25, 8.75])
    assert_allclose(grid.elapsed_midpoints, grid.midpoints)


def test_uniform_grid_offset_start():
    grid = build_uniform_grid(150.0, 240.0, 1.0)
    assert grid.n == 90
    assert grid.t_start == 150.0 and grid.t_end == 240.0
    assert_allclose(grid.elapsed_midpoints[0], 0.5)
    assert_allclose(grid.elapsed_midpoints[-1], 89.5)


def test_uniform_grid_rejects_nondivisible_dt():
    with pytest.raises(ValidationError, match="does not divide"):
        build_uniform_grid(0.0, 10.0, 3.0)


def test_grid_validation():
    with pytest.raises(ValidationError, match="strictly increasing"):
        TimeGrid(np.array([0.0, 1.0, 1.0]))
    with pytest.raises(ValidationError, match="at least two"):
        TimeGrid(np.array([1.0]))
    with pytest.raises(ValidationError, match="finite"):
        TimeGrid(np.array([0.0, np.inf]))


def test_grid_boundaries_read_only():
    grid = build_uniform_grid(0.0, 5.0, 1.0)
    with pytest.raises(ValueError):
        grid.boundaries[0] = -1.0


def test_grid_matches_and_index_of():
    a = build_uniform_grid(0.0, 5.0, 1.0)
    b = TimeGrid(a.boundaries + 5e-10)
    c = build_uniform_grid(0.0, 10.0, 2.0)
    assert a.matches(b)
    assert not a.matches(c)
    assert a.index_of(3.0) == 3
    with pytest.raises(ValidationError, match="does not sit on a grid boundary"):
        a.index_of(3.5)


def test_flat_profile_when_skew_zero():
    grid = build_uniform_grid(0.0, 60.0, 1.0)
    profile = synth_u_shape_volume(grid, 6000.0, 0.0)
    assert_allclose(profile.d, np.full(60, 100.0))
    assert profile.v1 == pytest.approx(6000.0)


def test_u_shape_two_intervals_is_flat():
    # u = 1/4 and 3/4 give the same density 1 + skew/4, so any skew still
    # splits adv evenly across two intervals.
    grid = build_uniform_grid(0.0, 2.0, 1.0)
    profile = synth_u_shape_volume(grid, 1000.0, 0.8)
    assert_allclose(profile.d, [500.0, 500.0])


def test_u_shape_four_intervals_hand_values():
    # densities 1 + (2u-1)^2 at u = 1/8, 3/8, 5/8, 7/8:
    # 1.5625, 1.0625, 1.0625, 1.5625; sum 5.25
    grid = build_uniform_grid(0.0, 4.0, 1.0)
    profile = synth_u_shape_volume(grid, 525.0, 1.0)
    assert_allclose(profile.d, [156.25, 106.25, 106.25, 156.25])


def test_u_shape_symmetry_and_normalization():
    grid = build_uniform_grid(0.0, 390.0, 1.0)
    profile = synth_u_shape_volume(grid, 5e6, 0.5)
    assert profile.d.sum() == pytest.approx(5e6, rel=1e-14)
    assert_allclose(profile.d, profile.d[::-1])
    # smile: more volume at the wings than the trough
    assert profile.d[0] > profile.d[195]


def test_volume_profile_validation():
    grid = build_uniform_grid(0.0, 3.0, 1.0)
    with pytest.raises(ValidationError, match="3 intervals"):
        VolumeProfile(grid, np.array([1.0, 2.0]), adv=10.0)
    with pytest.raises(ValidationError, match="negative volume in interval 1"):
        VolumeProfile(grid, np.array([1.0, -2.0, 3.0]), adv=10.0)
    with pytest.raises(ValidationError, match="adv must be positive"):
        VolumeProfile(grid, np.array([1.0, 2.0, 3.0]), adv=0.0)


def test_v_mid_is_midpoint_of_cumulative_volume():
    grid = build_uniform_grid(0.0, 3.0, 1.0)
    profile = VolumeProfile(grid, np.array([100.0, 200.0, 50.0]), adv=1000.0)
    assert_allclose(profile.v_cum, [100.0, 300.0, 350.0])
    assert_allclose(profile.v_mid, [50.0, 200.0, 325.0])


def test_slice_restarts_volume_clock():
    day = synth_u_shape_volume(build_uniform_grid(0.0, 390.0, 1.0), 5e6, 0.5)
    window = slice_horizon(day, 150.0, 240.0)
    assert window.grid.n == 90
    assert window.v1 == pytest.approx(997789.0464816815, rel=1e-12)
    assert window.adv == day.adv
    assert_allclose(window.d, day.d[150:240])
    # cumulative volume counts from the window start, not the open
    assert window.v_cum[0] == pytest.approx(window.d[0])


def test_slice_requires_boundary_alignment():
    day = synth_u_shape_volume(build_uniform_grid(0.0, 390.0, 1.0), 5e6, 0.5)
    with pytest.raises(ValidationError, match="boundary"):
        slice_horizon(day, 150.5, 240.0)
    with pytest.raises(ValidationError, match="empty slice"):
        slice_horizon(day, 240.0, 150.0)


def test_constant_spread():
    grid = build_uniform_grid(0.0, 5.0, 1.0)
    spread = constant_spread(grid, 0.0165)
    assert_allclose(spread.theta_bar, np.full(5, 0.0165))
    with pytest.raises(ValidationError):
        constant_spread(grid, -0.01)


def test_spread_profile_kernel_validation():
    grid = build_uniform_grid(0.0, 2.0, 1.0)
    with pytest.raises(ValidationError, match="symmetric"):
        SpreadProfile(grid, np.array([0.01, 0.01]), kernel=np.array([[1.0, 0.2], [0.1, 1.0]]))
    with pytest.raises(ValidationError, match="shape"):
        SpreadProfile(grid, np.array([0.01, 0.01]), kernel=np.eye(3))


def test_slice_spread_keeps_kernel_block():
    grid = build_uniform_grid(0.0, 4.0, 1.0)
    kernel = np.diag([1.0, 2.0, 3.0, 4.0])
    spread = SpreadProfile(grid, np.array([0.01, 0.02, 0.03, 0.04]), kernel=kernel)
    sub = slice_spread(spread, 1.0, 3.0)
    assert_allclose(sub.theta_bar, [0.02, 0.03])
    assert_allclose(sub.kernel, np.diag([2.0, 3.0]))


def test_volume_csv_round_trip(tmp_path):
    day = synth_u_shape_volume(build_uniform_grid(30.0, 90.0, 2.0), 120000.0, 0.7)
    path = tmp_path / "vol.csv"
    save_profile(day, path)
    loaded = load_profile(path)
    assert isinstance(loaded, VolumeProfile)
    assert loaded.grid.matches(day.grid)
    assert_allclose(loaded.d, day.d, rtol=1e-10)


def test_spread_csv_round_trip(tmp_path):
    spread = constant_spread(build_uniform_grid(0.0, 10.0, 1.0), 0.0165)
    path = tmp_path / "spr.csv"
    save_profile(spread, path)
    loaded = load_profile(path)
    assert isinstance(loaded, SpreadProfile)
    assert_allclose(loaded.theta_bar, spread.theta_bar)


def test_load_infers_last_interval_length(tmp_path):
    path = tmp_path / "vol.csv"
    path.write_text("minute,volume\n0,10\n1,20\n3,30\n")
    profile = load_profile(path)
    # spacing before the last row is 2 minutes, so the final interval
    # also gets 2: boundaries 0,1,3,5
    assert_allclose(profile.grid.boundaries, [0.0, 1.0, 3.0, 5.0])
    assert_allclose(profile.d, [10.0, 20.0, 30.0])


def test_load_profile_error_rows(tmp_path):
    bad_header = tmp_path / "a.csv"
    bad_header.write_text("time,volume\n0,10\n")
    with pytest.raises(ValidationError, match="unrecognized header"):
        load_profile(bad_header)

    negative = tmp_path / "b.csv"
    negative.write_text("minute,volume\n0,10\n1,-5\n")
    with pytest.raises(ValidationError, match="row 3: negative volume"):
        load_profile(negative)

    jumbled = tmp_path / "c.csv"
    jumbled.write_text("minute,volume\n0,10\n2,10\n1,10\n")
    with pytest.raises(ValidationError, match="not strictly increasing"):
        load_profile(jumbled)

    words = tmp_path / "d.csv"
    words.write_text("minute,volume\n0,ten\n")
    with pytest.raises(ValidationError, match="row 2: non-numeric"):
        load_profile(words)

    with pytest.raises(ValidationError, match="no such file"):
        load_profile(tmp_path / "missing.csv")
