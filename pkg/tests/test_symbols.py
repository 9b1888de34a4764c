"""Cutoffs, the dyadic partition, and phase-space symbol factories."""

import numpy as np
import pytest

from fracwkb.metric import flat_metric, gaussian_bump_metric, principal_symbol
from fracwkb.symbols import (ConstantWindow, GaussianWindow, fractional_symbol,
                             littlewood_paley_partition, localized_amplitude,
                             make_bump, semiclassical_psi)

# mpmath 50-digit values of the glued-exponential construction
# (notes/oracles/bump_values.py)
BUMP_QUARTER_4 = {
    0.3: 0.022977369910025588,
    0.35: 0.30294071603459255,
    0.45: 0.97702263008997441,
    3.0: 0.5,
    3.5: 0.064969169128664062,
}
BUMP_KERNEL_CFG = {0.4: 0.69705928396540745, 3.3: 0.74396249132475822}


def test_bump_plateau_and_outside():
    cut = make_bump(0.25, 4.0, (0.5, 2.0))
    assert cut(1.0) == 1.0
    assert cut(0.5) == 1.0
    assert cut(2.0) == 1.0
    assert cut(5.0) == 0.0
    assert cut(0.1) == 0.0


@pytest.mark.parametrize("lam,val", sorted(BUMP_QUARTER_4.items()))
def test_bump_frozen_values(lam, val):
    cut = make_bump(0.25, 4.0, (0.5, 2.0))
    np.testing.assert_allclose(cut(lam), val, rtol=1e-14)


@pytest.mark.parametrize("lam,val", sorted(BUMP_KERNEL_CFG.items()))
def test_bump_frozen_values_kernel_config(lam, val):
    cut = make_bump(0.25, 3.8, (0.5, 3.0))
    np.testing.assert_allclose(cut(lam), val, rtol=1e-14)


def test_bump_monotone_on_ramps():
    cut = make_bump(0.25, 4.0, (0.5, 2.0))
    rising = cut(np.linspace(0.25, 0.5, 60))
    falling = cut(np.linspace(2.0, 4.0, 60))
    assert np.all(np.diff(rising) >= 0.0)
    assert np.all(np.diff(falling) <= 0.0)
    assert np.all((cut(np.linspace(0.26, 0.49, 40)) > 0.0)
                  & (cut(np.linspace(0.26, 0.49, 40)) < 1.0))


def test_bump_rejects_inverted_intervals():
    with pytest.raises(ValueError):
        make_bump(1.0, 0.5, (0.6, 0.7))
    with pytest.raises(ValueError):
        make_bump(0.25, 4.0, (2.0, 0.5))
    with pytest.raises(ValueError):
        make_bump(-1.0, 4.0, (0.5, 2.0))


def test_bump_derivative_vanishes_off_ramps():
    cut = make_bump(0.25, 4.0, (0.5, 2.0))
    assert cut.derivative(1.0) == pytest.approx(0.0, abs=1e-10)
    assert cut.derivative(5.0) == 0.0


def test_partition_at_zero():
    part = littlewood_paley_partition(6)
    assert part.phi0(0.0) == 1.0
    for k in range(1, 7):
        assert part.phi(0.0 / 4.0**k) == 0.0


def test_partition_sums_to_one_in_coverage():
    part = littlewood_paley_partition(6)
    lams = np.geomspace(1e-3, part.coverage_limit, 400)
    report = part.check(lams)
    assert report["max_deviation"] < 1e-12
    assert report["truncated_lams"] == []


def test_partition_flags_truncation():
    part = littlewood_paley_partition(3)
    lam_far = 4.0 ** (3 + 2)
    report = part.check(np.array([1.0, lam_far]))
    assert report["truncated_lams"] == [lam_far]
    assert part.partial_sum(lam_far) < 1.0


def test_partition_blocks_telescope():
    part = littlewood_paley_partition(4)
    lams = np.geomspace(0.05, 40.0, 200)
    direct = part.phi0(lams) + sum(part.phi(lams / 4.0**k) for k in range(1, 5))
    np.testing.assert_allclose(direct, part.partial_sum(lams), rtol=0, atol=1e-15)


@pytest.mark.parametrize("sigma,lam,expected", [
    (2.0, 1.0, 1.0),
    (3.0, 4.0, 8.0),
    (0.5, 9.0, 0.0),   # beyond the cutoff support, weight or not
])
def test_semiclassical_psi_plateau_values(sigma, lam, expected):
    cut = make_bump(0.25, 5.0, (0.5, 4.0))
    psi = semiclassical_psi(cut, sigma)
    np.testing.assert_allclose(psi(lam), expected, rtol=1e-13)


def test_semiclassical_psi_rejects_sigma_one():
    cut = make_bump(0.25, 4.0, (0.5, 2.0))
    with pytest.raises(ValueError):
        semiclassical_psi(cut, 1.0)


@pytest.mark.parametrize("sigma", [0.5, 2.0, 3.0])
def test_fractional_symbol_matches_metric_power(sigma):
    m = gaussian_bump_metric(dim=1, epsilon=0.1)
    q0 = fractional_symbol(m, sigma, xi_band=(0.3, 3.0))
    x = np.linspace(-1.0, 1.0, 7)[:, None]
    xi = np.linspace(0.9, 1.5, 7)[:, None]
    p = principal_symbol(m, x, xi)
    np.testing.assert_allclose(q0(x, xi), p ** (0.5 * sigma), rtol=1e-13)


def test_fractional_symbol_gradients_match_differences():
    rng = np.random.default_rng(3)
    m = gaussian_bump_metric(dim=1, epsilon=0.1)
    q0 = fractional_symbol(m, 2.0, xi_band=(0.3, 3.0))
    step = 1e-6
    for _ in range(10):
        x = rng.uniform(-1.0, 1.0, size=(1, 1))
        xi = rng.uniform(0.9, 1.4, size=(1, 1))
        fd_x = (q0(x + step, xi) - q0(x - step, xi)) / (2 * step)
        fd_xi = (q0(x, xi + step) - q0(x, xi - step)) / (2 * step)
        np.testing.assert_allclose(q0.grad_x(x, xi)[0, 0], fd_x[0], rtol=1e-6)
        np.testing.assert_allclose(q0.grad_xi(x, xi)[0, 0], fd_xi[0], rtol=1e-6)


def test_fractional_symbol_hessians_match_differences():
    m = gaussian_bump_metric(dim=1, epsilon=0.1)
    q0 = fractional_symbol(m, 2.0, xi_band=(0.3, 3.0))
    x = np.array([[0.4]])
    xi = np.array([[1.1]])
    step = 1e-5
    fd = (q0.grad_x(x, xi + step) - q0.grad_x(x, xi - step)) / (2 * step)
    np.testing.assert_allclose(q0.hess_xxi(x, xi)[0, 0, 0], fd[0, 0], rtol=1e-5)
    fd2 = (q0.grad_xi(x, xi + step) - q0.grad_xi(x, xi - step)) / (2 * step)
    np.testing.assert_allclose(q0.hess_xixi(x, xi)[0, 0, 0], fd2[0, 0], rtol=1e-5)


@pytest.mark.parametrize("window", [ConstantWindow(1),
                                    GaussianWindow(1, center=0.3, width=0.8)])
def test_window_derivatives_match_differences(window):
    pts = np.linspace(-1.0, 1.0, 9)[:, None]
    step = 1e-6
    fd = (window(pts + step) - window(pts - step)) / (2 * step)
    np.testing.assert_allclose(window.grad(pts)[:, 0], fd, rtol=1e-6, atol=1e-9)


def test_localized_amplitude_support():
    m = flat_metric(dim=1)
    cut = make_bump(0.25, 4.0, (0.5, 2.0))
    a = localized_amplitude(m, cut)
    x = np.zeros((1, 1))
    assert a(x, np.array([[1.0]]))[0] == 1.0       # p = 1 on the plateau
    assert a(x, np.array([[3.0]]))[0] == 0.0       # p = 9 outside the support
    assert a(x, np.array([[0.3]]))[0] == 0.0       # p = 0.09 below the support


def test_localized_amplitude_inherits_window():
    m = flat_metric(dim=1)
    cut = make_bump(0.25, 4.0, (0.5, 2.0))
    win = GaussianWindow(1, center=0.0, width=0.5)
    a = localized_amplitude(m, cut, window=win)
    x = np.array([[0.0], [1.0]])
    xi = np.array([[1.0], [1.0]])
    vals = a(x, xi)
    np.testing.assert_allclose(vals, win(x) * cut(np.array([1.0, 1.0])), rtol=1e-13)
