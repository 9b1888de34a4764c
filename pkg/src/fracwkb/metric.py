"""Bounded elliptic inverse metrics on a periodic box, with derivative access.

The spatial domain is a periodic box of side length L centered at the origin,
used as a proxy for the whole space: all metric perturbations decay to machine
precision well inside the box, so FFT-based reference calculations see a smooth
periodic coefficient field.  A metric is stored through its inverse matrix
G(x) = (g^{jk}(x)), which is what the principal symbol and the Hamiltonian
machinery consume.
"""

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "MetricField",
    "SemiclassicalScale",
    "AssumptionReport",
    "EllipticityError",
    "flat_metric",
    "gaussian_bump_metric",
    "principal_symbol",
    "audit_assumptions",
]


class EllipticityError(ValueError):
    """The sampled inverse metric failed to be symmetric positive definite."""


def as_points(x, dim):
    """Promote `x` to an (n, dim) float array of sample points."""
    pts = np.atleast_1d(np.asarray(x, dtype=float))
    if pts.ndim == 1:
        if dim == 1:
            pts = pts[:, None]
        else:
            pts = pts[None, :]
    if pts.shape[-1] != dim:
        raise ValueError(f"expected points with {dim} component(s), got shape {pts.shape}")
    return pts.reshape(-1, dim)


@dataclass(frozen=True)
class MetricField:
    """Inverse metric g^{jk} on a periodic box, immutable after construction.

    Parameters
    ----------
    dim : int
        Spatial dimension d >= 1.
    box_length : float
        Side length L of the periodic box, centered at the origin.
    inverse_metric : callable
        Map from an (n, d) array of points to an (n, d, d) array of symmetric
        positive definite matrices G(x).
    inverse_metric_grad : callable
        Map to the (n, d, d, d) array of first partials, index [m, j, :, :]
        holding d/dx_j G at the m-th point.
    inverse_metric_hess : callable
        Map to the (n, d, d, d, d) array of second partials, index
        [m, j, k, :, :] holding d^2/dx_j dx_k G.
    derivative_order : int
        Highest order of analytic partial derivatives available (>= 2).
    is_flat : bool
        True when G is identically the identity; downstream modules use this
        to unlock closed-form checks and higher expansion orders.
    """

    dim: int
    box_length: float
    inverse_metric: callable = field(repr=False)
    inverse_metric_grad: callable = field(repr=False)
    inverse_metric_hess: callable = field(repr=False)
    derivative_order: int = 2
    is_flat: bool = False
    label: str = ""

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError("dim must be a positive integer")
        if not self.box_length > 0:
            raise ValueError("box_length must be positive")
        if self.derivative_order < 2:
            raise ValueError("need analytic derivatives up to order >= 2")

    def G(self, x):
        """Inverse-metric matrices at the sample points, shape (n, d, d)."""
        return self.inverse_metric(as_points(x, self.dim))

    def dG(self, x):
        """First partials of G, shape (n, d, d, d) with axis 1 the x_j index."""
        return self.inverse_metric_grad(as_points(x, self.dim))

    def d2G(self, x):
        """Second partials of G, shape (n, d, d, d, d)."""
        return self.inverse_metric_hess(as_points(x, self.dim))

    def volume_density(self, x):
        """sqrt|g|(x) = det(G(x))^{-1/2}, the Riemannian volume weight."""
        return np.linalg.det(self.G(x)) ** -0.5


@dataclass(frozen=True)
class SemiclassicalScale:
    """Frequency scale h in (0, 1] paired with a dispersion exponent sigma != 1."""

    h: float
    sigma: float

    def __post_init__(self):
        if not 0.0 < self.h <= 1.0:
            raise ValueError(f"h must lie in (0, 1], got {self.h}")
        check_sigma(self.sigma)


def check_sigma(sigma):
    """Reject dispersion exponents outside (0, inf) \\ {1}."""
    if not sigma > 0.0 or sigma == 1.0:
        raise ValueError(f"sigma must be positive and != 1, got {sigma}")
    return float(sigma)


def flat_metric(dim=1, box_length=2.0 * np.pi):
    """Identity inverse metric; every downstream object has a closed form."""

    def _eye(pts):
        n = pts.shape[0]
        return np.broadcast_to(np.eye(dim), (n, dim, dim)).copy()

    def _zero1(pts):
        n = pts.shape[0]
        return np.zeros((n, dim, dim, dim))

    def _zero2(pts):
        n = pts.shape[0]
        return np.zeros((n, dim, dim, dim, dim))

    return MetricField(
        dim=dim,
        box_length=box_length,
        inverse_metric=_eye,
        inverse_metric_grad=_zero1,
        inverse_metric_hess=_zero2,
        derivative_order=99,
        is_flat=True,
        label="flat",
    )


def gaussian_bump_metric(dim=1, epsilon=0.1, box_length=16.0):
    """Conformal Gaussian perturbation G(x) = (1 + eps*exp(-|x|^2)) * Id.

    For d=1 this is the reference variable metric g^{11}(x) = 1 + eps e^{-x^2}.
    The default box is wide enough that exp(-|x|^2) is below machine epsilon at
    the boundary, so periodization does not spoil smoothness.
    """
    if epsilon < 0:
        raise ValueError("epsilon must be nonnegative")
    eye = np.eye(dim)

    def _g(pts):
        w = 1.0 + epsilon * np.exp(-np.sum(pts**2, axis=1))
        return w[:, None, None] * eye

    def _dg(pts):
        # d/dx_j w = -2 x_j eps e^{-|x|^2}
        e = epsilon * np.exp(-np.sum(pts**2, axis=1))
        dw = -2.0 * pts * e[:, None]
        return dw[:, :, None, None] * eye

    def _d2g(pts):
        # d^2/dx_j dx_k w = (4 x_j x_k - 2 delta_jk) eps e^{-|x|^2}
        e = epsilon * np.exp(-np.sum(pts**2, axis=1))
        quad = 4.0 * pts[:, :, None] * pts[:, None, :] - 2.0 * eye
        d2w = quad * e[:, None, None]
        return d2w[:, :, :, None, None] * eye

    return MetricField(
        dim=dim,
        box_length=box_length,
        inverse_metric=_g,
        inverse_metric_grad=_dg,
        inverse_metric_hess=_d2g,
        derivative_order=2,
        is_flat=(epsilon == 0.0),
        label=f"gaussian_bump(eps={epsilon})",
    )


def principal_symbol(m, x, xi):
    """Evaluate p(x, xi) = xi^T G(x) xi at matched point batches.

    Inputs are broadcast to (n, d); the result has shape (n,).  Non-finite
    inputs are rejected.
    """
    pts = as_points(x, m.dim)
    cov = as_points(xi, m.dim)
    if pts.shape[0] != cov.shape[0]:
        if pts.shape[0] == 1:
            pts = np.broadcast_to(pts, cov.shape)
        elif cov.shape[0] == 1:
            cov = np.broadcast_to(cov, pts.shape)
        else:
            raise ValueError("x and xi batches do not match")
    if not (np.all(np.isfinite(pts)) and np.all(np.isfinite(cov))):
        raise ValueError("non-finite input to principal_symbol")
    G = m.inverse_metric(np.ascontiguousarray(pts))
    return np.einsum("ni,nij,nj->n", cov, G, cov)


@dataclass
class AssumptionReport:
    """Smallest constants observed for the ellipticity and boundedness audits."""

    C_ellipticity: float
    C_alpha: dict
    min_eigenvalue: float
    n_samples: int

    def __str__(self):
        orders = ", ".join(f"|alpha|={k}: {v:.6g}" for k, v in sorted(self.C_alpha.items()))
        return (
            f"ellipticity C = {self.C_ellipticity:.6g} "
            f"(min eig {self.min_eigenvalue:.3g}, {self.n_samples} samples); {orders}"
        )


def audit_assumptions(m, sample_grid=None, n_samples=201):
    """Audit ellipticity and derivative boundedness of a metric on a grid.

    Returns the smallest constant C with C^{-1}|xi|^2 <= xi^T G xi <= C|xi|^2
    over the sampled points (via eigenvalue extremes of G) together with the
    observed sup of |partial^alpha g^{jk}| per derivative order.  A sample with
    a nonpositive eigenvalue raises :class:`EllipticityError`.
    """
    if sample_grid is None:
        half = 0.5 * m.box_length
        axes = [np.linspace(-half, half, n_samples if m.dim == 1 else 33)] * m.dim
        mesh = np.meshgrid(*axes, indexing="ij")
        sample_grid = np.stack([a.ravel() for a in mesh], axis=-1)
    pts = as_points(sample_grid, m.dim)

    G = m.inverse_metric(pts)
    if not np.allclose(G, np.swapaxes(G, -1, -2), atol=0.0):
        raise EllipticityError("inverse metric is not exactly symmetric")
    eigs = np.linalg.eigvalsh(G)
    lam_min = float(eigs.min())
    lam_max = float(eigs.max())
    if lam_min <= 0.0:
        bad = pts[np.nonzero(eigs.min(axis=1) <= 0.0)[0][0]]
        raise EllipticityError(f"nonpositive Rayleigh quotient at x = {bad}")
    C_ell = max(lam_max, 1.0 / lam_min)

    C_alpha = {0: float(np.max(np.abs(G)))}
    C_alpha[1] = float(np.max(np.abs(m.inverse_metric_grad(pts))))
    C_alpha[2] = float(np.max(np.abs(m.inverse_metric_hess(pts))))

    return AssumptionReport(
        C_ellipticity=C_ell,
        C_alpha=C_alpha,
        min_eigenvalue=lam_min,
        n_samples=pts.shape[0],
    )
