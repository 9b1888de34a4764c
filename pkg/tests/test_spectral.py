"""Periodic functional calculus: grids, propagation and localization."""

import numpy as np
import pytest

from fracwkb.metric import flat_metric, gaussian_bump_metric
from fracwkb.spectral import (SpectralGapError, SpectralOperator,
                              discretize_P_1d, flat_operator,
                              frequency_localize, kernel_projection,
                              lp_lq_norm, make_grid, measure_bernstein,
                              modulated_gaussian, plane_wave, propagate,
                              sobolev_norm, state_from_fourier,
                              state_from_values)
from fracwkb.symbols import littlewood_paley_partition, make_bump

# divergence-form FD + Richardson reference for the epsilon=0.1, L=16 bump
# metric (notes/oracles/eigs_bump.py); each nonzero eigenvalue is double
BUMP_EIGS = [0.0, 0.1558489529, 0.1558489529, 0.6233958114, 0.6233958114,
             1.4026405754, 1.4026405754, 2.4935832441, 2.4935832441,
             3.8962238151]


def test_plane_wave_norms():
    grid = make_grid(1, 128)
    u = plane_wave(grid, 3)
    np.testing.assert_allclose(u.l2_norm(), np.sqrt(2.0 * np.pi), rtol=1e-13)
    np.testing.assert_allclose(u.lq_norm(np.inf), 1.0, rtol=1e-13)
    assert u.parseval_gap() < 1e-12


def test_fourier_round_trip():
    grid = make_grid(1, 64)
    u = modulated_gaussian(grid, np.pi, 0.4, omega=5.0)
    v = state_from_fourier(grid, u.fourier)
    np.testing.assert_allclose(v.values, u.values, atol=1e-13)
    assert u.parseval_gap() < 1e-12


def test_propagate_zero_time_identity():
    grid = make_grid(1, 64)
    u = modulated_gaussian(grid, np.pi, 0.4, omega=3.0)
    v = propagate(u, flat_operator(grid), 2.0, 0.0)
    np.testing.assert_allclose(v.values, u.values, atol=1e-14)


@pytest.mark.parametrize("sigma", [0.5, 2.0, 3.0])
def test_propagate_is_unitary(sigma):
    grid = make_grid(1, 128)
    u = modulated_gaussian(grid, 2.0, 0.3, omega=8.0)
    v = propagate(u, flat_operator(grid), sigma, 0.7)
    np.testing.assert_allclose(v.l2_norm(), u.l2_norm(), rtol=1e-12)


def test_propagate_single_mode_phase():
    grid = make_grid(1, 64)
    u = plane_wave(grid, 3)
    op = flat_operator(grid)
    t = 0.7
    for sigma in (0.5, 2.0):
        v = propagate(u, op, sigma, t)
        np.testing.assert_allclose(v.values, np.exp(1j * t * 3.0**sigma) * u.values,
                                   atol=1e-12)
    w = propagate(u, op, 2.0, t, h=0.25)
    np.testing.assert_allclose(w.values, np.exp(1j * t * 0.25 * 9.0) * u.values,
                               atol=1e-12)


def test_propagate_group_property():
    grid = make_grid(1, 128)
    op = discretize_P_1d(gaussian_bump_metric(dim=1, epsilon=0.1), 65)
    u = modulated_gaussian(op.grid, 8.0, 1.0, omega=2.0)
    via = propagate(propagate(u, op, 0.5, 0.3), op, 0.5, 0.4)
    direct = propagate(u, op, 0.5, 0.7)
    np.testing.assert_allclose(via.values, direct.values, atol=1e-12)


def test_frequency_localize_plateau_and_tail():
    grid = make_grid(1, 256)
    cut = make_bump(0.25, 4.0, (0.5, 2.0))
    h = 1.0 / 8.0
    on_plateau = frequency_localize(plane_wave(grid, 8), cut, h)   # h^2 lam = 1
    np.testing.assert_allclose(on_plateau.values, plane_wave(grid, 8).values,
                               atol=1e-13)
    killed = frequency_localize(plane_wave(grid, 40), cut, h)      # h^2 lam = 25
    assert killed.lq_norm(np.inf) < 1e-13


def test_littlewood_paley_reconstruction():
    grid = make_grid(1, 256)
    part = littlewood_paley_partition(8)
    u = modulated_gaussian(grid, np.pi, 0.3, omega=20.0)
    h = 1.0
    total = frequency_localize(u, part.phi0, h).values.copy()
    for k in range(1, part.k_max + 1):
        block = frequency_localize(u, lambda lam, k=k: part.phi(lam / 4.0**k), h)
        total += block.values
    np.testing.assert_allclose(total, u.values, atol=1e-10)


def test_sobolev_norm_gamma_zero_is_l2():
    grid = make_grid(1, 128)
    u = modulated_gaussian(grid, 1.0, 0.4, omega=6.0)
    np.testing.assert_allclose(sobolev_norm(u, 0.0), u.l2_norm(), rtol=1e-12)


def test_sobolev_norm_single_mode():
    grid = make_grid(1, 128)
    u = plane_wave(grid, 4)
    expected = np.sqrt(2.0 * np.pi) * (1.0 + 16.0) ** 1.0
    np.testing.assert_allclose(sobolev_norm(u, 2.0), expected, rtol=1e-12)


def test_sobolev_norm_eigenbasis_mode():
    op = discretize_P_1d(gaussian_bump_metric(dim=1, epsilon=0.1), 65)
    j = 5
    u = state_from_values(op.grid, op.basis[:, j])
    np.testing.assert_allclose(sobolev_norm(u, 2.0, op), 1.0 + op.lam[j],
                               rtol=1e-8)


def test_eigenbasis_weighted_orthonormality():
    op = discretize_P_1d(gaussian_bump_metric(dim=1, epsilon=0.1), 65)
    gram = (op.basis.T * (op.weight * op.grid.spacing)) @ op.basis
    np.testing.assert_allclose(gram, np.eye(65), atol=1e-10)


def test_lp_lq_norm_closed_forms():
    grid = make_grid(1, 64)
    states = [plane_wave(grid, 2) for _ in range(9)]
    times = np.linspace(0.0, 1.0, 9)
    L = 2.0 * np.pi
    np.testing.assert_allclose(lp_lq_norm(states, times, 2, 2), L ** 0.5,
                               rtol=1e-12)
    np.testing.assert_allclose(lp_lq_norm(states, times, np.inf, 4),
                               L ** 0.25, rtol=1e-12)
    np.testing.assert_allclose(lp_lq_norm(states, times, 2, np.inf), 1.0,
                               rtol=1e-12)


def test_lp_lq_norm_refinement_stable():
    grid = make_grid(1, 64)

    def sampled(n):
        times = np.linspace(0.0, 1.0, n)
        states = [state_from_values(grid, (1.0 + t**2) * plane_wave(grid, 1).values)
                  for t in times]
        return lp_lq_norm(states, times, 4, 2)

    coarse, fine = sampled(33), sampled(65)
    assert abs(coarse - fine) / fine < 5e-3


def test_lp_lq_norm_validation():
    grid = make_grid(1, 16)
    with pytest.raises(ValueError):
        lp_lq_norm([], [], 2, 2)
    with pytest.raises(ValueError):
        lp_lq_norm([plane_wave(grid, 0)], [0.0, 1.0], 2, 2)


def test_flat_eigensolver_recovers_squares():
    op = discretize_P_1d(flat_metric(dim=1), 65)
    np.testing.assert_allclose(op.lam[:7], [0, 1, 1, 4, 4, 9, 9], atol=1e-10)


def test_bump_eigenvalues_match_reference():
    op = discretize_P_1d(gaussian_bump_metric(dim=1, epsilon=0.1), 129)
    np.testing.assert_allclose(op.lam[:10], BUMP_EIGS, atol=1e-8)


def test_eigenvalues_spectrally_converged():
    metric = gaussian_bump_metric(dim=1, epsilon=0.1)
    lam_a = discretize_P_1d(metric, 129).lam[1]
    lam_b = discretize_P_1d(metric, 257).lam[1]
    assert abs(lam_a - lam_b) < 1e-10


def test_eigensolver_input_validation():
    metric = gaussian_bump_metric(dim=1, epsilon=0.1)
    with pytest.raises(ValueError):
        discretize_P_1d(metric, 128)
    with pytest.raises(ValueError):
        discretize_P_1d(metric, 2001)
    with pytest.raises(ValueError):
        discretize_P_1d(gaussian_bump_metric(dim=2, epsilon=0.1), 65)


def test_kernel_projection_cases():
    op = discretize_P_1d(flat_metric(dim=1), 65)
    const = state_from_values(op.grid, np.ones(65))
    np.testing.assert_allclose(kernel_projection(op, const).values,
                               const.values, atol=1e-12)
    wave = plane_wave(op.grid, 1)
    assert kernel_projection(op, wave).l2_norm() < 1e-12
    with pytest.raises(ValueError):
        kernel_projection(flat_operator(make_grid(1, 16)), const)


def test_kernel_projection_gap_guard():
    grid = make_grid(1, 5)
    op = SpectralOperator(kind="eig", grid=grid,
                          lam=np.array([0.0, 1e-7, 1.0, 2.0, 3.0]),
                          basis=np.eye(5), weight=np.ones(5))
    with pytest.raises(SpectralGapError):
        kernel_projection(op, state_from_values(grid, np.ones(5)))


def test_bernstein_localization_slope():
    grid = make_grid(1, 512)
    cut = make_bump(0.25, 4.0, (0.5, 2.0))
    fit = measure_bernstein(grid, cut, [2.0**-k for k in range(2, 7)])
    assert abs(fit.slope + 0.5) < 0.1
    assert fit.r2 > 0.99


def test_bernstein_rejects_unresolvable_band():
    grid = make_grid(1, 32)
    cut = make_bump(0.25, 4.0, (0.5, 2.0))
    with pytest.raises(ValueError):
        measure_bernstein(grid, cut, [1.0 / 16.0, 1.0 / 8.0])
