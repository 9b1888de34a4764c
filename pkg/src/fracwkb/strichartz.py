"""Admissible-pair arithmetic and space-time norm scaling sweeps.

The bookkeeping side is exact exponent arithmetic: which (p, q) pairs are
admissible in dimension d, the smoothing exponent gamma, the compact-domain
loss (sigma - 1)/p, and the interval tiling count behind the long-time
estimate.  The measurement side sweeps dyadic h, builds frequency-localized
Gaussian states, propagates them with the exact multiplier on the periodic
box, and fits the L^p_t L^q_x / L^2 norm ratio against h.  Every estimate
under test is an upper bound, so fits are judged one-sided: the measured
slope must not fall below minus the predicted exponent by more than the
margin.
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy.stats import linregress

from .fio import ResolutionError
from .spectral import (flat_operator, frequency_localize, lp_lq_norm,
                       make_grid, modulated_gaussian, propagate)

__all__ = [
    "AdmissiblePair",
    "ScalingFit",
    "classify_pair",
    "tile_interval",
    "measure_semiclassical_scaling",
    "measure_unscaled_scaling",
    "rescaling_identity_gap",
    "SLOPE_MARGIN",
    "DYADIC_SWEEP",
]

SLOPE_MARGIN = 0.1
DYADIC_SWEEP = tuple(2.0**-k for k in range(3, 10))
GRID_CAP = 1 << 15
POINTS_PER_MODE = 4


@dataclass(frozen=True)
class AdmissiblePair:
    """Exponent bookkeeping for one (p, q) pair in dimension d.

    gamma, loss and total are None when the pair is not admissible; total is
    computed directly as d/2 - d/q - 1/p (not gamma + loss) so that its value
    is independent of sigma down to the last bit.
    """

    p: float
    q: float
    d: int
    sigma: float
    valid: bool
    gamma: float = None
    loss: float = None
    total: float = None


def classify_pair(p, q, d, sigma):
    """Admissibility of (p, q) in dimension d with dispersion exponent sigma.

    The conditions are p in [2, inf], q in [2, inf), (p, q, d) != (2, inf, 2)
    and the scaling line 2/p + d/q <= d/2.  Invalid pairs come back with
    valid=False and no exponents rather than raising.
    """
    p = float(p)
    q = float(q)
    d = int(d)
    sigma = float(sigma)
    if sigma <= 0.0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    inv_p = 0.0 if p == np.inf else 1.0 / p
    inv_q = 0.0 if q == np.inf else 1.0 / q
    ok = (
        p >= 2.0
        and 2.0 <= q < np.inf
        and not (p == 2.0 and q == np.inf and d == 2)
        and 2.0 * inv_p + d * inv_q <= 0.5 * d
    )
    if not ok:
        return AdmissiblePair(p=p, q=q, d=d, sigma=sigma, valid=False)
    gamma = 0.5 * d - d * inv_q - sigma * inv_p
    loss = (sigma - 1.0) * inv_p if sigma > 1.0 else 0.0
    total = 0.5 * d - d * inv_q - inv_p
    return AdmissiblePair(p=p, q=q, d=d, sigma=sigma, valid=True,
                          gamma=gamma, loss=loss, total=total)


def tile_interval(interval, h, sigma):
    """Number of length-2h^{sigma-1} tiles covering the interval.

    Only meaningful for sigma >= 1, where the semiclassical time scale
    h^{sigma-1} is shorter than the unit interval; below that the roles
    flip and no cumulation is needed.
    """
    if sigma < 1.0:
        raise ValueError(
            "tiling applies to sigma >= 1; for sigma < 1 a unit interval is "
            "already covered by one semiclassical window"
        )
    a, b = float(interval[0]), float(interval[1])
    length = abs(b - a)
    if not np.isfinite(length):
        raise ValueError("interval must have finite length")
    h = float(h)
    if not 0.0 < h:
        raise ValueError(f"h must be positive, got {h}")
    return int(math.ceil(length / (2.0 * h ** (sigma - 1.0))))


@dataclass
class ScalingFit:
    """Log-log fit of the space-time norm ratio against h."""

    slope: float
    intercept: float
    r2: float
    exponent_bound: float
    h: np.ndarray
    ratios: np.ndarray

    def passes(self, margin=SLOPE_MARGIN):
        return self.slope >= -self.exponent_bound - margin


def _localized_state(cut, h, box_length, grid_cap):
    """Gaussian at frequency ~1/h, localized by phi(h^2 P), on an adequate grid."""
    k_max = np.sqrt(cut.support[1]) / h
    need = int(np.ceil(POINTS_PER_MODE * k_max * box_length / (2.0 * np.pi)))
    n = 256
    while n < need:
        n *= 2
    if n > grid_cap:
        raise ResolutionError(
            f"h={h} needs {need} grid points, above the cap {grid_cap}"
        )
    grid = make_grid(1, n, box_length)
    op = flat_operator(grid)
    omega_c = np.sqrt(0.5 * (cut.plateau[0] + cut.plateau[1])) / h
    seed = modulated_gaussian(grid, 0.5 * box_length, np.sqrt(h), omega_c)
    return frequency_localize(seed, cut, h), op


def _norm_ratio(u, op, pair, sigma, times, h):
    states = [propagate(u, op, sigma, t, h=h) for t in times]
    return lp_lq_norm(states, times, pair.p, pair.q) / u.l2_norm()


def _fit(h_sweep, ratios, bound):
    fit = linregress(np.log(h_sweep), np.log(ratios))
    return ScalingFit(slope=float(fit.slope), intercept=float(fit.intercept),
                      r2=float(fit.rvalue**2), exponent_bound=float(bound),
                      h=h_sweep, ratios=ratios)


def measure_semiclassical_scaling(sigma, pair, cut, h_sweep=DYADIC_SWEEP,
                                  t0=1.0, n_t=65, box_length=2.0 * np.pi,
                                  grid_cap=GRID_CAP):
    """Norm-ratio growth of the h-rescaled group over [-t0, t0].

    Each h propagates a frequency-localized Gaussian with the multiplier
    e^{i t h^{sigma-1} Lambda^sigma} and records the L^p L^q norm over the
    fixed window divided by the initial L^2 norm.  The slope bound is the
    sigma-independent exponent d/2 - d/q - 1/p.
    """
    if not pair.valid:
        raise ValueError(f"pair (p={pair.p}, q={pair.q}) is not admissible")
    if len(h_sweep) < 5:
        raise ValueError("need at least 5 dyadic h values for the sweep fit")
    h_sweep = np.asarray(sorted(h_sweep, reverse=True), dtype=float)
    times = np.linspace(-t0, t0, int(n_t))
    ratios = np.empty_like(h_sweep)
    for i, h in enumerate(h_sweep):
        u, op = _localized_state(cut, h, box_length, grid_cap)
        ratios[i] = _norm_ratio(u, op, pair, sigma, times, h)
    bound = 0.5 * pair.d - pair.d / pair.q - (0.0 if pair.p == np.inf else 1.0 / pair.p)
    return _fit(h_sweep, ratios, bound)


def measure_unscaled_scaling(sigma, pair, cut, h_sweep=DYADIC_SWEEP,
                             interval=(0.0, 1.0), n_t=65,
                             box_length=2.0 * np.pi, grid_cap=GRID_CAP):
    """Norm-ratio growth of the unrescaled group over a fixed interval.

    Same state family as the semiclassical sweep, but the propagator is
    e^{i t Lambda^sigma} and the window does not shrink with h, so the
    cumulated bound gamma + loss is the relevant exponent.
    """
    if not pair.valid:
        raise ValueError(f"pair (p={pair.p}, q={pair.q}) is not admissible")
    if len(h_sweep) < 5:
        raise ValueError("need at least 5 dyadic h values for the sweep fit")
    h_sweep = np.asarray(sorted(h_sweep, reverse=True), dtype=float)
    times = np.linspace(float(interval[0]), float(interval[1]), int(n_t))
    ratios = np.empty_like(h_sweep)
    for i, h in enumerate(h_sweep):
        u, op = _localized_state(cut, h, box_length, grid_cap)
        ratios[i] = _norm_ratio(u, op, pair, sigma, times, None)
    return _fit(h_sweep, ratios, pair.gamma + pair.loss)


def rescaling_identity_gap(sigma, v, h, p, q, t0=0.5, n_t=33, op=None):
    """Relative gap in the change-of-variables identity between the two groups.

    The unrescaled group over the shrunk window h^{sigma-1}[-t0, t0] must
    match h^{(sigma-1)/p} times the rescaled group over [-t0, t0]; with the
    time grids mapped through the same scale factor the quadratures agree to
    rounding, so the gap is a pure floating-point check.
    """
    op = op or flat_operator(v.grid)
    times = np.linspace(-t0, t0, int(n_t))
    scaled_times = h ** (sigma - 1.0) * times
    lhs_states = [propagate(v, op, sigma, s) for s in scaled_times]
    lhs = lp_lq_norm(lhs_states, scaled_times, p, q)
    rhs_states = [propagate(v, op, sigma, t, h=h) for t in times]
    factor = 1.0 if p == np.inf else h ** ((sigma - 1.0) / p)
    rhs = factor * lp_lq_norm(rhs_states, times, p, q)
    return abs(lhs - rhs) / max(rhs, 1e-300)
