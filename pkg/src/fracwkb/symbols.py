"""Smooth cutoffs, dyadic partitions and phase-space symbols.

Cutoffs are built from glued exponentials, so they are genuinely C^infinity
with closed-form support and plateau intervals.  Phase-space symbols carry
evaluators for values and partial derivatives up to second order; the central
factory is :func:`fractional_symbol`, which realizes q0(x, xi) = p(x, xi)^{sigma/2}
with fully analytic derivatives assembled from the metric's derivative tables.
"""

from dataclasses import dataclass

import numpy as np

from .metric import as_points, check_sigma, principal_symbol

__all__ = [
    "CutoffFunction",
    "LowPassCutoff",
    "LittlewoodPaleyPartition",
    "SymbolFunction",
    "GaussianWindow",
    "make_bump",
    "littlewood_paley_partition",
    "semiclassical_psi",
    "fractional_symbol",
    "localized_amplitude",
]

FD_STEP = 1e-5


def _glue(t):
    """exp(-1/t) continued by 0 for t <= 0;  C^infinity on the line."""
    t = np.asarray(t, dtype=float)
    out = np.zeros_like(t)
    pos = t > 0.0
    with np.errstate(over="ignore"):
        out[pos] = np.exp(-1.0 / t[pos])
    return out


def smooth_step(t):
    """Monotone C^infinity step: 0 for t <= 0, 1 for t >= 1."""
    a = _glue(t)
    b = _glue(1.0 - np.asarray(t, dtype=float))
    with np.errstate(invalid="ignore"):
        out = np.where(a + b > 0.0, a / (a + b), 0.0)
    return out


class CutoffFunction:
    """Smooth bump equal to 1 on a plateau and 0 outside a compact support.

    Values rise from 0 at r1 to 1 at the plateau's left edge and fall back to 0
    at r2.  The function is monotone on each ramp.
    """

    def __init__(self, r1, r2, plateau):
        p1, p2 = float(plateau[0]), float(plateau[1])
        if not (0.0 < r1 < p1 < p2 < r2):
            raise ValueError(
                f"need 0 < r1 < plateau < r2, got r1={r1}, plateau=({p1},{p2}), r2={r2}"
            )
        self.support = (float(r1), float(r2))
        self.plateau = (p1, p2)

    def __call__(self, lam):
        lam = np.asarray(lam, dtype=float)
        r1, r2 = self.support
        p1, p2 = self.plateau
        rise = smooth_step((lam - r1) / (p1 - r1))
        fall = smooth_step((r2 - lam) / (r2 - p2))
        return rise * fall

    def derivative(self, lam, order=1, step=FD_STEP):
        """Central-difference derivative of the requested order.

        The bump has closed-form value only; derivatives are numerical, which
        is all the smoothness checks and chain rules downstream require.
        """
        if order == 0:
            return self(lam)
        lam = np.asarray(lam, dtype=float)
        lower = self.derivative(lam - step, order - 1, step)
        upper = self.derivative(lam + step, order - 1, step)
        return (upper - lower) / (2.0 * step)

    def __repr__(self):
        return f"CutoffFunction(support={self.support}, plateau={self.plateau})"


class LowPassCutoff:
    """Smooth low-pass profile: 1 on (-inf, r1], 0 on [r2, inf)."""

    def __init__(self, r1=1.0, r2=4.0):
        if not 0.0 < r1 < r2:
            raise ValueError("need 0 < r1 < r2")
        self.plateau_edge = float(r1)
        self.support_edge = float(r2)

    def __call__(self, lam):
        lam = np.asarray(lam, dtype=float)
        return smooth_step((self.support_edge - lam) / (self.support_edge - self.plateau_edge))

    def __repr__(self):
        return f"LowPassCutoff({self.plateau_edge}, {self.support_edge})"


def make_bump(r1, r2, plateau):
    """Construct a smooth cutoff with support [r1, r2] and value 1 on `plateau`."""
    return CutoffFunction(r1, r2, plateau)


@dataclass
class LittlewoodPaleyPartition:
    """Dyadic partition of unity phi0(lam) + sum_k phi(4^{-k} lam) = 1.

    Built by telescoping a low-pass chi: phi(lam) = chi(lam) - chi(4 lam), so
    phi(4^{-k} lam) = chi(4^{-k} lam) - chi(4^{-(k-1)} lam) and the truncated
    sum collapses to chi(4^{-k_max} lam), which equals 1 exactly for
    lam <= coverage_limit.
    """

    phi0: LowPassCutoff
    k_max: int

    def phi(self, lam):
        lam = np.asarray(lam, dtype=float)
        return self.phi0(lam) - self.phi0(4.0 * lam)

    @property
    def phi_support(self):
        return (self.phi0.plateau_edge / 4.0, self.phi0.support_edge)

    @property
    def coverage_limit(self):
        """Largest lam up to which the truncated sum still equals 1."""
        return self.phi0.plateau_edge * 4.0**self.k_max

    def partial_sum(self, lam):
        lam = np.asarray(lam, dtype=float)
        total = self.phi0(lam)
        for k in range(1, self.k_max + 1):
            total = total + self.phi(lam / 4.0**k)
        return total

    def check(self, lams):
        """Max deviation |1 - partial sum| on `lams`, with truncation flags."""
        lams = np.asarray(lams, dtype=float)
        sums = self.partial_sum(lams)
        covered = lams <= self.coverage_limit
        dev_covered = float(np.max(np.abs(1.0 - sums[covered]))) if covered.any() else 0.0
        truncated = [float(l) for l in lams[~covered]]
        return {"max_deviation": dev_covered, "truncated_lams": truncated}


def littlewood_paley_partition(k_max, low=1.0, high=4.0):
    """Dyadic partition with k_max retained blocks; see the partition class."""
    if k_max < 1:
        raise ValueError("k_max must be >= 1")
    return LittlewoodPaleyPartition(phi0=LowPassCutoff(low, high), k_max=int(k_max))


class PsiWeight:
    """lam -> cut(lam) * lam^{sigma/2}; agrees with the pure power on the plateau."""

    def __init__(self, cut, sigma):
        self.cut = cut
        self.sigma = check_sigma(sigma)

    def __call__(self, lam):
        lam = np.asarray(lam, dtype=float)
        power = np.where(lam > 0.0, np.abs(lam) ** (0.5 * self.sigma), 0.0)
        return self.cut(lam) * power


def semiclassical_psi(cut, sigma):
    """Attach the sqrt-power weight lam^{sigma/2} to a cutoff supported off 0."""
    if isinstance(cut, CutoffFunction) and cut.support[0] <= 0.0:
        raise ValueError("cutoff must be supported away from 0")
    return PsiWeight(cut, sigma)


class SymbolFunction:
    """Phase-space symbol a(x, xi) with derivative evaluators up to order 2.

    Evaluators receive (n, d) point batches and return (n, ...) arrays.
    Derivatives not supplied analytically fall back to vectorized central
    differences of the value evaluator.

    Index conventions: `grad_x`/`grad_xi` return (n, d); the Hessians return
    (n, d, d) with `hess_xxi[m, i, j] = d^2 a / dx_i dxi_j`.
    """

    def __init__(self, dim, fn, grad_x=None, grad_xi=None, hess_xx=None,
                 hess_xixi=None, hess_xxi=None, xi_band=None, fd_step=FD_STEP,
                 label=""):
        self.dim = int(dim)
        self._fn = fn
        self._grad_x = grad_x
        self._grad_xi = grad_xi
        self._hess_xx = hess_xx
        self._hess_xixi = hess_xixi
        self._hess_xxi = hess_xxi
        self.xi_band = None if xi_band is None else (float(xi_band[0]), float(xi_band[1]))
        self.fd_step = fd_step
        self.label = label

    def _pair(self, x, xi):
        pts = as_points(x, self.dim)
        cov = as_points(xi, self.dim)
        if pts.shape[0] == 1 and cov.shape[0] > 1:
            pts = np.broadcast_to(pts, cov.shape).copy()
        if cov.shape[0] == 1 and pts.shape[0] > 1:
            cov = np.broadcast_to(cov, pts.shape).copy()
        if pts.shape[0] != cov.shape[0]:
            raise ValueError("x and xi batches do not match")
        return pts, cov

    def __call__(self, x, xi):
        pts, cov = self._pair(x, xi)
        return self._fn(pts, cov)

    def _fd_grad(self, x, xi, which):
        pts, cov = self._pair(x, xi)
        h = self.fd_step
        out = None
        for j in range(self.dim):
            shift = np.zeros(self.dim)
            shift[j] = h
            if which == "x":
                hi = self._fn(pts + shift, cov)
                lo = self._fn(pts - shift, cov)
            else:
                hi = self._fn(pts, cov + shift)
                lo = self._fn(pts, cov - shift)
            col = (hi - lo) / (2.0 * h)
            if out is None:
                out = np.empty(pts.shape[:1] + (self.dim,), dtype=col.dtype)
            out[:, j] = col
        return out

    def grad_x(self, x, xi):
        if self._grad_x is not None:
            pts, cov = self._pair(x, xi)
            return self._grad_x(pts, cov)
        return self._fd_grad(x, xi, "x")

    def grad_xi(self, x, xi):
        if self._grad_xi is not None:
            pts, cov = self._pair(x, xi)
            return self._grad_xi(pts, cov)
        return self._fd_grad(x, xi, "xi")

    def _fd_hess(self, x, xi, first, second):
        pts, cov = self._pair(x, xi)
        h = 10.0 * self.fd_step
        grad = {"x": self.grad_x, "xi": self.grad_xi}[second]
        out = None
        for j in range(self.dim):
            shift = np.zeros(self.dim)
            shift[j] = h
            if first == "x":
                hi = grad(pts + shift, cov)
                lo = grad(pts - shift, cov)
            else:
                hi = grad(pts, cov + shift)
                lo = grad(pts, cov - shift)
            row = (hi - lo) / (2.0 * h)
            if out is None:
                out = np.empty(pts.shape[:1] + (self.dim, self.dim), dtype=row.dtype)
            out[:, j, :] = row
        return out

    def hess_xx(self, x, xi):
        if self._hess_xx is not None:
            pts, cov = self._pair(x, xi)
            return self._hess_xx(pts, cov)
        return self._fd_hess(x, xi, "x", "x")

    def hess_xixi(self, x, xi):
        if self._hess_xixi is not None:
            pts, cov = self._pair(x, xi)
            return self._hess_xixi(pts, cov)
        return self._fd_hess(x, xi, "xi", "xi")

    def hess_xxi(self, x, xi):
        """Mixed Hessian, [m, i, j] = d^2 a / dx_i dxi_j."""
        if self._hess_xxi is not None:
            pts, cov = self._pair(x, xi)
            return self._hess_xxi(pts, cov)
        return self._fd_hess(x, xi, "x", "xi")

    def __neg__(self):
        def flip(f):
            return None if f is None else (lambda pts, cov: -f(pts, cov))

        out = SymbolFunction(
            self.dim,
            lambda pts, cov: -self._fn(pts, cov),
            grad_x=flip(self._grad_x),
            grad_xi=flip(self._grad_xi),
            hess_xx=flip(self._hess_xx),
            hess_xixi=flip(self._hess_xixi),
            hess_xxi=flip(self._hess_xxi),
            xi_band=self.xi_band,
            fd_step=self.fd_step,
            label=f"-({self.label})" if self.label else "",
        )
        for attr in ("metric", "sigma"):
            if hasattr(self, attr):
                setattr(out, attr, getattr(self, attr))
        return out


def fractional_symbol(metric, sigma, xi_band=None):
    """q0(x, xi) = p(x, xi)^{sigma/2} with analytic derivatives from the metric.

    All first and second partials are assembled from the chain rule applied to
    p = xi^T G(x) xi, so no finite differencing enters the flow right-hand
    sides.  `xi_band` optionally records the compact p-interval J on which the
    construction is meant to live (the guard band for flows).
    """
    sigma = check_sigma(sigma)
    s = 0.5 * sigma
    d = metric.dim

    def _core(pts, cov):
        G = metric.inverse_metric(pts)
        dG = metric.inverse_metric_grad(pts)
        p = np.einsum("ni,nij,nj->n", cov, G, cov)
        px = np.einsum("ni,nkij,nj->nk", cov, dG, cov)
        pxi = 2.0 * np.einsum("nij,nj->ni", G, cov)
        return G, dG, p, px, pxi

    def _fn(pts, cov):
        G = metric.inverse_metric(pts)
        p = np.einsum("ni,nij,nj->n", cov, G, cov)
        return p**s

    def _grad_x(pts, cov):
        _, _, p, px, _ = _core(pts, cov)
        return s * (p ** (s - 1.0))[:, None] * px

    def _grad_xi(pts, cov):
        _, _, p, _, pxi = _core(pts, cov)
        return s * (p ** (s - 1.0))[:, None] * pxi

    def _hess_xixi(pts, cov):
        G, _, p, _, pxi = _core(pts, cov)
        t1 = s * (s - 1.0) * (p ** (s - 2.0))[:, None, None] * pxi[:, :, None] * pxi[:, None, :]
        t2 = 2.0 * s * (p ** (s - 1.0))[:, None, None] * G
        return t1 + t2

    def _hess_xxi(pts, cov):
        _, dG, p, px, pxi = _core(pts, cov)
        # [n, i, j] = d^2 q0 / dx_i dxi_j
        pxxi = 2.0 * np.einsum("nkij,nj->nki", dG, cov)
        t1 = s * (s - 1.0) * (p ** (s - 2.0))[:, None, None] * px[:, :, None] * pxi[:, None, :]
        t2 = s * (p ** (s - 1.0))[:, None, None] * pxxi
        return t1 + t2

    def _hess_xx(pts, cov):
        _, _, p, px, _ = _core(pts, cov)
        d2G = metric.inverse_metric_hess(pts)
        pxx = np.einsum("ni,nklij,nj->nkl", cov, d2G, cov)
        t1 = s * (s - 1.0) * (p ** (s - 2.0))[:, None, None] * px[:, :, None] * px[:, None, :]
        t2 = s * (p ** (s - 1.0))[:, None, None] * pxx
        return t1 + t2

    sym = SymbolFunction(
        d,
        _fn,
        grad_x=_grad_x,
        grad_xi=_grad_xi,
        hess_xx=_hess_xx,
        hess_xixi=_hess_xixi,
        hess_xxi=_hess_xxi,
        xi_band=xi_band,
        label=f"p^{{{sigma}/2}}",
    )
    sym.metric = metric
    sym.sigma = sigma
    return sym


class GaussianWindow:
    """Spatial envelope exp(-|x - center|^2 / (2 width^2)) with analytic derivatives."""

    def __init__(self, dim=1, center=0.0, width=1.0):
        self.dim = int(dim)
        self.center = np.broadcast_to(np.asarray(center, dtype=float), (self.dim,)).copy()
        self.width = float(width)

    def __call__(self, pts):
        z = (as_points(pts, self.dim) - self.center) / self.width
        return np.exp(-0.5 * np.sum(z**2, axis=1))

    def grad(self, pts):
        p = as_points(pts, self.dim)
        z = (p - self.center) / self.width
        return -(z / self.width) * self(p)[:, None]

    def hess(self, pts):
        p = as_points(pts, self.dim)
        z = (p - self.center) / self.width
        outer = z[:, :, None] * z[:, None, :]
        return (outer - np.eye(self.dim)) / self.width**2 * self(p)[:, None, None]


class ConstantWindow:
    """Envelope identically 1 (x-independent amplitudes)."""

    def __init__(self, dim=1):
        self.dim = int(dim)

    def __call__(self, pts):
        return np.ones(as_points(pts, self.dim).shape[0])

    def grad(self, pts):
        return np.zeros((as_points(pts, self.dim).shape[0], self.dim))

    def hess(self, pts):
        return np.zeros((as_points(pts, self.dim).shape[0], self.dim, self.dim))


def localized_amplitude(metric, cut, window=None):
    """Initial symbol a(x, xi) = window(x) * cut(p(x, xi)).

    The cutoff rides on the principal symbol, so the support automatically sits
    inside p^{-1}(supp cut) for any metric.  x-derivatives combine the analytic
    window derivatives with numerical derivatives of the cutoff profile,
    accurate enough for the second-order uses downstream.
    """
    window = window or ConstantWindow(metric.dim)

    def _p(pts, cov):
        G = metric.inverse_metric(pts)
        return np.einsum("ni,nij,nj->n", cov, G, cov)

    def _fn(pts, cov):
        return window(pts) * cut(_p(pts, cov))

    def _grad_x(pts, cov):
        G = metric.inverse_metric(pts)
        dG = metric.inverse_metric_grad(pts)
        p = np.einsum("ni,nij,nj->n", cov, G, cov)
        px = np.einsum("ni,nkij,nj->nk", cov, dG, cov)
        c = cut(p)
        dc = cut.derivative(p)
        return window.grad(pts) * c[:, None] + window(pts)[:, None] * dc[:, None] * px

    def _hess_xx(pts, cov):
        G = metric.inverse_metric(pts)
        dG = metric.inverse_metric_grad(pts)
        d2G = metric.inverse_metric_hess(pts)
        p = np.einsum("ni,nij,nj->n", cov, G, cov)
        px = np.einsum("ni,nkij,nj->nk", cov, dG, cov)
        pxx = np.einsum("ni,nklij,nj->nkl", cov, d2G, cov)
        c = cut(p)
        dc = cut.derivative(p)
        d2c = cut.derivative(p, order=2)
        w = window(pts)
        gw = window.grad(pts)
        t = window.hess(pts) * c[:, None, None]
        t += (gw[:, :, None] * px[:, None, :] + gw[:, None, :] * px[:, :, None]) * dc[:, None, None]
        t += w[:, None, None] * (
            d2c[:, None, None] * px[:, :, None] * px[:, None, :]
            + dc[:, None, None] * pxx
        )
        return t

    lo, hi = (cut.support if hasattr(cut, "support") else (None, None))
    sym = SymbolFunction(
        metric.dim,
        _fn,
        grad_x=_grad_x,
        hess_xx=_hess_xx,
        xi_band=(lo, hi) if lo is not None else None,
        label="window*cut(p)",
    )
    sym.metric = metric
    sym.cut = cut
    sym.window = window
    return sym
