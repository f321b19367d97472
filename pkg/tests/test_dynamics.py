import numpy as np
import pytest
from numpy.testing import assert_allclose

from povsched.dynamics import (
    KernelMatrix,
    SDESpec,
    asv_diffusion,
    brownian_kernel,
    check_psd,
    combined_risk_kernel,
    max_asymmetry,
    mc_estimate_kernel,
    mc_estimate_kernel_repair,
    mc_kernel_stderr,
    mean_reversion_kernel,
    project_psd,
    read_kernel_csv,
    save_kernel_csv,
    simulate_paths,
    thread_count,
)
from povsched.errors import ValidationError
from povsched.profiles import build_uniform_grid, synth_u_shape_volume


def test_brownian_kernel_hand_values():
    # midpoints of [0,1] and [1,2] sit at 0.5 and 1.5 elapsed minutes;
    # with (p0 sigma0)^2 = 0.04 the min(s,t) surface is
    # [[0.02, 0.02], [0.02, 0.06]]
    grid = build_uniform_grid(0.0, 2.0, 1.0)
    kernel = brownian_kernel(grid, sigma0=0.02, p0=10.0)
    assert_allclose(kernel.values, [[0.02, 0.02], [0.02, 0.06]], rtol=1e-15)


def test_brownian_kernel_tau_override():
    grid = build_uniform_grid(0.0, 2.0, 1.0)
    kernel = brownian_kernel(grid, 0.02, 10.0, tau=np.array([1.0, 3.0]))
    assert_allclose(kernel.values, [[0.04, 0.04], [0.04, 0.12]], rtol=1e-15)
    with pytest.raises(ValidationError, match="one entry per interval"):
        brownian_kernel(grid, 0.02, 10.0, tau=np.array([1.0]))


def test_brownian_kernel_uses_elapsed_time():
    # a horizon starting at minute 150 must give the same kernel as one
    # starting at zero
    late = brownian_kernel(build_uniform_grid(150.0, 240.0, 1.0), 1e-3, 30.0)
    early = brownian_kernel(build_uniform_grid(0.0, 90.0, 1.0), 1e-3, 30.0)
    assert_allclose(late.values, early.values, rtol=1e-14)


def test_mean_reversion_variance_and_decay():
    kappa, alpha, p0 = 0.2, 0.05, 30.0
    grid = build_uniform_grid(0.0, 40.0, 1.0)
    kernel = mean_reversion_kernel(grid, kappa, alpha, p0)
    tau = grid.elapsed_midpoints
    # diagonal: variance of an OU process started at zero
    expect_var = p0**2 * alpha**2 / (2 * kappa) * (1 - np.exp(-2 * kappa * tau))
    assert_allclose(np.diag(kernel.values), expect_var, rtol=1e-13)
    # off-diagonal decay in the time gap at fixed younger time
    row = kernel.values[5, 5:]
    ratios = row[1:] / row[:-1]
    assert_allclose(ratios, np.exp(-kappa * 1.0), rtol=1e-12)
    # the last diagonal entry is within 0.1% of the stationary variance
    assert kernel.values[-1, -1] == pytest.approx(p0**2 * alpha**2 / (2 * kappa), rel=1e-3)


def test_mean_reversion_small_kappa_limit_is_brownian():
    grid = build_uniform_grid(0.0, 30.0, 1.0)
    slow = mean_reversion_kernel(grid, 1e-8, 0.02, 30.0)
    flat = brownian_kernel(grid, 0.02, 30.0)
    assert_allclose(slow.values, flat.values, rtol=1e-5)


def test_closed_form_kernels_are_psd():
    grid = build_uniform_grid(0.0, 20.0, 1.0)
    assert check_psd(brownian_kernel(grid, 1e-3, 30.0)).passed
    assert check_psd(mean_reversion_kernel(grid, 0.1, 0.01, 30.0)).passed


def test_asv_diffusion_hand_values():
    delta = np.array([1.0, 0.0, -0.5, -5.0])
    vol = asv_diffusion(delta, sigma0=2.0, beta=1.0, cap=3.0)
    assert_allclose(vol, [2.0, 2.0, 2.0 * np.exp(0.5), 6.0], rtol=1e-15)


def test_sde_spec_validation():
    with pytest.raises(ValidationError, match="unknown dynamics model"):
        SDESpec(model="jump")
    with pytest.raises(ValidationError, match="sigma0"):
        SDESpec(model="brownian", sigma0=0.0)
    with pytest.raises(ValidationError, match="kappa"):
        SDESpec(model="mean_reversion", alpha=0.1)
    with pytest.raises(ValidationError, match="cap"):
        SDESpec(model="asv", sigma0=0.1, beta=1.0, cap=0.5)


def test_simulation_is_deterministic_in_seed():
    spec = SDESpec(model="brownian", sigma0=0.01)
    grid = build_uniform_grid(0.0, 4.0, 1.0)
    a = simulate_paths(spec, grid, 50, substeps=4, seed=3)
    b = simulate_paths(spec, grid, 50, substeps=4, seed=3)
    c = simulate_paths(spec, grid, 50, substeps=4, seed=4)
    assert np.array_equal(a.midpoint_values, b.midpoint_values)
    assert np.array_equal(a.boundary_values, b.boundary_values)
    assert not np.array_equal(a.midpoint_values, c.midpoint_values)


def test_simulation_independent_of_worker_count():
    # spans three path blocks; per-path counter streams make the split
    # over workers irrelevant
    spec = SDESpec(model="mean_reversion", kappa=0.1, alpha=0.02)
    grid = build_uniform_grid(0.0, 3.0, 1.0)
    serial = simulate_paths(spec, grid, 9000, substeps=2, seed=11, max_workers=1)
    threaded = simulate_paths(spec, grid, 9000, substeps=2, seed=11, max_workers=4)
    assert np.array_equal(serial.midpoint_values, threaded.midpoint_values)
    assert np.array_equal(serial.boundary_values, threaded.boundary_values)


def test_path_prefix_stable_when_adding_paths():
    spec = SDESpec(model="brownian", sigma0=0.01)
    grid = build_uniform_grid(0.0, 2.0, 1.0)
    small = simulate_paths(spec, grid, 40, substeps=2, seed=5)
    large = simulate_paths(spec, grid, 90, substeps=2, seed=5)
    assert np.array_equal(large.midpoint_values[:40], small.midpoint_values)


def test_brownian_terminal_variance():
    spec = SDESpec(model="brownian", sigma0=0.05)
    grid = build_uniform_grid(0.0, 16.0, 1.0)
    paths = simulate_paths(spec, grid, 4000, substeps=2, seed=21)
    terminal = paths.boundary_values[:, -1]
    assert terminal.var() == pytest.approx(0.05**2 * 16.0, rel=0.1)


def test_ou_terminal_variance_matches_closed_form():
    kappa, alpha = 0.3, 0.04
    spec = SDESpec(model="mean_reversion", kappa=kappa, alpha=alpha)
    grid = build_uniform_grid(0.0, 30.0, 1.0)
    paths = simulate_paths(spec, grid, 4000, substeps=8, seed=22)
    expect = alpha**2 / (2 * kappa) * (1 - np.exp(-2 * kappa * 30.0))
    assert paths.boundary_values[:, -1].var() == pytest.approx(expect, rel=0.1)


def test_mc_kernel_matches_brownian_closed_form():
    sigma0, p0 = 1e-3, 30.0
    grid = build_uniform_grid(0.0, 10.0, 1.0)
    paths = simulate_paths(SDESpec(model="brownian", sigma0=sigma0), grid, 6000, substeps=4, seed=9)
    est = mc_estimate_kernel(paths, p0)
    exact = brownian_kernel(grid, sigma0, p0).values
    se = mc_kernel_stderr(paths, p0)
    inside = np.abs(est.values - exact) <= 3.0 * se
    assert inside.mean() >= 0.95


def test_asv_kernel_diagonal_dominates_brownian():
    # downside amplification only adds variance
    sigma0 = 1e-3
    grid = build_uniform_grid(0.0, 20.0, 1.0)
    spec = SDESpec(model="asv", sigma0=sigma0, beta=200.0, cap=2.0)
    paths = simulate_paths(spec, grid, 4000, substeps=4, seed=13)
    est = mc_estimate_kernel(paths, 30.0)
    flat = brownian_kernel(grid, sigma0, 30.0).values
    assert np.all(np.diag(est.values) >= 0.9 * np.diag(flat))
    assert np.diag(est.values)[-1] > np.diag(flat)[-1]


def test_mc_estimate_repair_reports_clipping():
    grid = build_uniform_grid(0.0, 6.0, 1.0)
    paths = simulate_paths(SDESpec(model="brownian", sigma0=0.01), grid, 64, substeps=1, seed=2)
    kernel, n_clipped, mass = mc_estimate_kernel_repair(paths, 30.0)
    assert check_psd(kernel, tol=1e-12).passed
    assert n_clipped >= 0 and mass >= 0.0


def test_check_psd_and_project_psd():
    good = np.diag([1.0, 2.0])
    assert check_psd(good).passed
    bad = np.diag([1.0, -2.0])
    report = check_psd(bad)
    assert not report.passed
    assert report.min_eig == pytest.approx(-2.0)
    repaired, n_clipped, mass = project_psd(bad)
    assert_allclose(repaired, np.diag([1.0, 0.0]), atol=1e-14)
    assert n_clipped == 1
    assert mass == pytest.approx(2.0)
    # near-PSD sampling noise passes under the relative tolerance
    assert check_psd(np.diag([1.0, -1e-10])).passed


def test_max_asymmetry_locates_worst_pair():
    values = np.array([[1.0, 0.5, 0.0], [0.4, 1.0, 0.0], [0.0, 0.0, 1.0]])
    dev, i, j = max_asymmetry(values)
    assert dev == pytest.approx(0.1)
    assert {i, j} == {0, 1}


def test_kernel_matrix_validation():
    grid = build_uniform_grid(0.0, 2.0, 1.0)
    with pytest.raises(ValidationError, match="does not match"):
        KernelMatrix(grid, np.eye(3))
    with pytest.raises(ValidationError, match="not symmetric"):
        KernelMatrix(grid, np.array([[1.0, 0.5], [0.1, 1.0]]))
    kernel = KernelMatrix(grid, np.eye(2))
    with pytest.raises(ValueError):
        kernel.values[0, 0] = 5.0


def test_combined_risk_kernel_adds_scaled_spread_part():
    grid = build_uniform_grid(0.0, 2.0, 1.0)
    price = KernelMatrix(grid, np.eye(2))
    spread = np.full((2, 2), 0.5)
    combined = combined_risk_kernel(price, spread, alpha0=0.4)
    assert_allclose(combined.values, np.eye(2) + 0.16 * np.full((2, 2), 0.5))
    assert_allclose(combined_risk_kernel(price, None, alpha0=0.4).values, np.eye(2))
    other_grid = build_uniform_grid(0.0, 4.0, 2.0)
    with pytest.raises(ValidationError, match="different grids"):
        combined_risk_kernel(price, KernelMatrix(other_grid, np.eye(2)), alpha0=0.4)


def test_kernel_csv_round_trip(tmp_path):
    grid = build_uniform_grid(0.0, 3.0, 1.0)
    kernel = brownian_kernel(grid, 1e-3, 30.0)
    path = tmp_path / "k.csv"
    save_kernel_csv(kernel, path)
    loaded = read_kernel_csv(path)
    assert np.array_equal(loaded, kernel.values)


def test_kernel_csv_error_cases(tmp_path):
    missing = tmp_path / "m.csv"
    missing.write_text("i,j,value\n0,0,1.0\n0,1,0.0\n1,0,0.0\n")
    with pytest.raises(ValidationError, match="expected 4 entries"):
        read_kernel_csv(missing)

    dup = tmp_path / "d.csv"
    dup.write_text("i,j,value\n0,0,1.0\n0,0,2.0\n")
    with pytest.raises(ValidationError, match="duplicate entry"):
        read_kernel_csv(dup)

    header = tmp_path / "h.csv"
    header.write_text("a,b,c\n0,0,1.0\n")
    with pytest.raises(ValidationError, match="expected header"):
        read_kernel_csv(header)


def test_thread_count_env(monkeypatch):
    monkeypatch.delenv("POVSCHED_THREADS", raising=False)
    assert thread_count() == 1
    monkeypatch.setenv("POVSCHED_THREADS", "6")
    assert thread_count() == 6
    monkeypatch.setenv("POVSCHED_THREADS", "0")
    assert thread_count() == 1
    monkeypatch.setenv("POVSCHED_THREADS", "lots")
    with pytest.raises(ValidationError, match="POVSCHED_THREADS"):
        thread_count()


def test_u_shape_day_kernel_grid_consistency():
    # kernels built on a sliced window line up with the window grid
    day = synth_u_shape_volume(build_uniform_grid(0.0, 390.0, 1.0), 5e6, 0.5)
    from povsched.profiles import slice_horizon

    window = slice_horizon(day, 150.0, 240.0)
    kernel = brownian_kernel(window.grid, 2e-4, 30.0)
    assert kernel.grid.matches(window.grid)
    assert kernel.values.shape == (90, 90)
