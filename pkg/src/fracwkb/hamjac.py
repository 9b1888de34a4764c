"""Hamilton-Jacobi phases built along Hamiltonian characteristics.

The generating phase of the evolution equation dS/dt - q0(x, grad_x S) = 0,
S(0) = x.xi, is assembled from the flow of H := -q0 through the inverse map Y
and the action integral

    S(t, x, xi) = Y(t, x, xi) . xi + int_0^t (Xi . grad_xi H - H) along the flow,

with every derivative table (grad_x S = Xi(t, Y, xi), the mixed and pure
Hessians) read off the variational Jacobian rather than by differencing S.
The sign convention is fixed here once: the flow module always receives -q0.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import simpson

from .metric import as_points
from .hamflow import DT_DEFAULT, flow_trajectory, inverse_map

__all__ = [
    "PhaseTable",
    "PhasePointData",
    "PhaseEstimateReport",
    "HorizonError",
    "build_phase",
    "phase_point_data",
    "certify_phase_estimates",
    "caustic_horizon",
    "hj_residual",
    "second_time_derivative",
]

HORIZON_THRESHOLD = 0.5
NEWTON_TOL = 1e-11


class HorizonError(RuntimeError):
    """The near-identity Hessian condition failed at the first resolved time."""


@dataclass
class PhasePointData:
    """Phase and derivative data at a batch of (x, xi) points for one time."""

    S: np.ndarray            # (n,)
    Y: np.ndarray            # (n, d)
    grad_x: np.ndarray       # (n, d)   = Xi(t, Y, xi)
    hess_xx: np.ndarray      # (n, d, d)
    hess_xxi: np.ndarray     # (n, d, d), [i, j] = d2 S / dx_i dxi_j
    dY_dxi: np.ndarray       # (n, d, d), [i, j] = dY_i / dxi_j
    hess_asymmetry: float
    trajectory: tuple = None  # (times, Xs, Xis, Zs) from the base (Y, xi)


def _even_steps(t, dt):
    n = max(2, int(np.ceil(abs(t) / dt - 1e-12)))
    return n + (n % 2)


def phase_point_data(q0, t, x, xi, dt=DT_DEFAULT, newton_tol=NEWTON_TOL,
                     y0=None, keep_trajectory=False):
    """Compute S and its derivative blocks at arbitrary (x, xi) batches.

    This is the single code path used both for gridded tables and for
    off-grid evaluation (oscillatory quadrature): inverse map by Newton, then
    one variational flow from (Y, xi) with composite Simpson for the action.
    """
    d = q0.dim
    x = as_points(x, d)
    xi = as_points(xi, d)
    if x.shape[0] == 1 and xi.shape[0] > 1:
        x = np.broadcast_to(x, xi.shape).copy()
    if xi.shape[0] == 1 and x.shape[0] > 1:
        xi = np.broadcast_to(xi, x.shape).copy()
    n = x.shape[0]

    if t == 0.0:
        eye = np.broadcast_to(np.eye(d), (n, d, d)).copy()
        return PhasePointData(
            S=np.sum(x * xi, axis=1),
            Y=x.copy(),
            grad_x=xi.copy(),
            hess_xx=np.zeros((n, d, d)),
            hess_xxi=eye,
            dY_dxi=np.zeros((n, d, d)),
            hess_asymmetry=0.0,
            trajectory=None,
        )

    # Flat metric: the covector is conserved and the flow field is constant
    # along each trajectory, so one RK4 step is already exact and the action
    # integrand is constant; two Simpson intervals close the quadrature.
    metric = getattr(q0, "metric", None)
    flat = metric is not None and metric.is_flat
    flow_dt = abs(t) if flat else dt
    n_steps = 2 if flat else _even_steps(t, dt)

    H = -q0
    Y = inverse_map(H, t, x, xi, tol=newton_tol, dt=flow_dt, y0=y0)
    times, Xs, Xis, Zs = flow_trajectory(H, t, Y, xi, n_steps)

    # action integrand (Xi . grad_xi H - H) at every node, batched in one call
    flatX = Xs.reshape(-1, d)
    flatXi = Xis.reshape(-1, d)
    gxi = H.grad_xi(flatX, flatXi).reshape(len(times), n, d)
    hval = H(flatX, flatXi).reshape(len(times), n)
    integrand = np.sum(Xis * gxi, axis=2) - hval
    action = simpson(integrand, x=times, axis=0)
    S = np.sum(Y * xi, axis=1) + action

    JX = Zs[-1][:, :d, :d]
    dXdxi = Zs[-1][:, :d, d:]
    JXi = Zs[-1][:, d:, :d]
    JX_inv = np.linalg.inv(JX)
    hess_xxi = np.swapaxes(JX_inv, 1, 2)
    B = np.einsum("nij,njk->nik", JXi, JX_inv)
    asym = float(np.max(np.abs(B - np.swapaxes(B, 1, 2)))) if n else 0.0
    hess_xx = 0.5 * (B + np.swapaxes(B, 1, 2))
    dY_dxi = -np.einsum("nij,njk->nik", JX_inv, dXdxi)

    return PhasePointData(
        S=S,
        Y=Y,
        grad_x=Xis[-1],
        hess_xx=hess_xx,
        hess_xxi=hess_xxi,
        dY_dxi=dY_dxi,
        hess_asymmetry=asym,
        trajectory=(times, Xs, Xis, Zs) if keep_trajectory else None,
    )


@dataclass
class PhaseTable:
    """Gridded phase S(t, x, xi) with derivative tables and a caustic horizon.

    Tables are indexed [t, x, xi] with trailing component axes; the xi grid is
    a list of covector points, not a tensor product, so anisotropic bands are
    possible.  `t0` is the certified horizon from the mixed-Hessian condition
    ||grad_x grad_xi S - Id|| <= 1/2.
    """

    t_grid: np.ndarray
    x_grid: np.ndarray       # (nx, d)
    xi_grid: np.ndarray      # (nxi, d)
    S: np.ndarray            # (nt, nx, nxi)
    Y: np.ndarray            # (nt, nx, nxi, d)
    grad_x: np.ndarray       # (nt, nx, nxi, d)
    hess_xx: np.ndarray      # (nt, nx, nxi, d, d)
    hess_xxi: np.ndarray     # (nt, nx, nxi, d, d)
    q0: object = field(repr=False)
    dt: float = DT_DEFAULT
    newton_tol: float = NEWTON_TOL
    t0: float = 0.0
    hess_asymmetry: float = 0.0
    hj_form: str = "dS/dt - q0(x, grad_x S) = 0 via H = -q0"

    @property
    def dim(self):
        return self.x_grid.shape[1]

    def t_index(self, t):
        k = int(np.argmin(np.abs(self.t_grid - t)))
        if abs(self.t_grid[k] - t) > 1e-12:
            raise ValueError(f"t={t} is not on the phase time grid")
        return k

    def evaluate(self, t, x, xi, keep_trajectory=False):
        """Fresh phase computation at arbitrary points (no interpolation)."""
        return phase_point_data(
            self.q0, t, x, xi, dt=self.dt, newton_tol=self.newton_tol,
            keep_trajectory=keep_trajectory,
        )


def build_phase(q0, t_grid, x_grid, xi_grid, dt=DT_DEFAULT, newton_tol=NEWTON_TOL):
    """Build a PhaseTable over the tensor grid t_grid x x_grid x xi_grid.

    The inverse maps are warm-started from the previous time of the same sign,
    so the Newton iteration stays in its quadratic regime along the sweep.
    """
    d = q0.dim
    t_grid = np.atleast_1d(np.asarray(t_grid, dtype=float))
    x_grid = as_points(x_grid, d)
    xi_grid = as_points(xi_grid, d)
    nt, nx, nxi = len(t_grid), x_grid.shape[0], xi_grid.shape[0]

    xp = np.repeat(x_grid, nxi, axis=0)
    xip = np.tile(xi_grid, (nx, 1))

    S = np.empty((nt, nx, nxi))
    Yt = np.empty((nt, nx, nxi, d))
    Gx = np.empty((nt, nx, nxi, d))
    Hxx = np.empty((nt, nx, nxi, d, d))
    Hxxi = np.empty((nt, nx, nxi, d, d))
    worst_asym = 0.0

    order = np.argsort(np.abs(t_grid), kind="stable")
    warm = {1: None, -1: None}
    for k in order:
        t = t_grid[k]
        sign = 1 if t >= 0.0 else -1
        data = phase_point_data(q0, t, xp, xip, dt=dt, newton_tol=newton_tol,
                                y0=warm[sign])
        if t != 0.0:
            warm[sign] = data.Y
        S[k] = data.S.reshape(nx, nxi)
        Yt[k] = data.Y.reshape(nx, nxi, d)
        Gx[k] = data.grad_x.reshape(nx, nxi, d)
        Hxx[k] = data.hess_xx.reshape(nx, nxi, d, d)
        Hxxi[k] = data.hess_xxi.reshape(nx, nxi, d, d)
        worst_asym = max(worst_asym, data.hess_asymmetry)

    table = PhaseTable(
        t_grid=t_grid, x_grid=x_grid, xi_grid=xi_grid,
        S=S, Y=Yt, grad_x=Gx, hess_xx=Hxx, hess_xxi=Hxxi,
        q0=q0, dt=dt, newton_tol=newton_tol, hess_asymmetry=worst_asym,
    )
    table.t0 = caustic_horizon(table, strict=False)
    return table


def caustic_horizon(pt, threshold=HORIZON_THRESHOLD, strict=True):
    """Largest grid time with ||grad_x grad_xi S - Id|| <= threshold everywhere.

    With `strict`, failure already at the smallest nonzero grid time raises
    :class:`HorizonError` (the grid cannot resolve any caustic-free window).
    A time grid containing only t=0 returns 0.
    """
    d = pt.dim
    eye = np.eye(d)
    mags = np.abs(pt.t_grid)
    ok = np.ones(len(pt.t_grid), dtype=bool)
    for k in range(len(pt.t_grid)):
        if pt.t_grid[k] == 0.0:
            continue
        dev = np.linalg.norm(pt.hess_xxi[k] - eye, ord=2, axis=(2, 3))
        ok[k] = not np.any(dev > threshold)
    t0 = 0.0
    for m in np.unique(mags):
        if m == 0.0:
            continue
        if np.all(ok[mags <= m]):
            t0 = float(m)
        else:
            break
    if strict and t0 == 0.0 and np.any(mags > 0.0):
        raise HorizonError(
            "mixed-Hessian condition fails at the first nonzero grid time; "
            "refine the time grid or shrink the window"
        )
    return t0


@dataclass
class PhaseEstimateReport:
    """Fitted constants for the linear-in-t and quadratic-in-t phase bounds."""

    C1: float
    C2: float
    by_order: dict

    def __str__(self):
        pieces = ", ".join(f"{k}: {v:.6g}" for k, v in self.by_order.items())
        return f"C1 = {self.C1:.6g}, C2 = {self.C2:.6g} ({pieces})"


def certify_phase_estimates(pt, q0=None):
    """Fit C1 = sup |d(S - x.xi)| / |t| and C2 = sup |S - x.xi - t q0| / t^2.

    First-order derivatives of S - x.xi come from the stored tables
    (grad_x S - xi and Y - x), not from differencing S.
    """
    q0 = q0 or pt.q0
    nx, nxi = pt.x_grid.shape[0], pt.xi_grid.shape[0]
    xp = np.repeat(pt.x_grid, nxi, axis=0)
    xip = np.tile(pt.xi_grid, (nx, 1))
    xxi = np.sum(xp * xip, axis=1).reshape(nx, nxi)
    q0_init = q0(xp, xip).reshape(nx, nxi)

    c0 = c1x = c1xi = c2 = 0.0
    for k, t in enumerate(pt.t_grid):
        if t == 0.0:
            continue
        at = abs(t)
        c0 = max(c0, float(np.max(np.abs(pt.S[k] - xxi))) / at)
        dgx = pt.grad_x[k] - xip.reshape(nx, nxi, -1)
        c1x = max(c1x, float(np.max(np.abs(dgx))) / at)
        dy = pt.Y[k] - xp.reshape(nx, nxi, -1)
        c1xi = max(c1xi, float(np.max(np.abs(dy))) / at)
        c2 = max(c2, float(np.max(np.abs(pt.S[k] - xxi - t * q0_init))) / at**2)

    by_order = {"value/|t|": c0, "grad_x/|t|": c1x, "grad_xi/|t|": c1xi}
    return PhaseEstimateReport(C1=max(c0, c1x, c1xi), C2=c2, by_order=by_order)


def hj_residual(pt, q0=None):
    """|dS/dt - q0(x, grad_x S)| on the grid, with dS/dt by time differencing.

    On a uniform time grid with >= 5 nodes a 4th-order central stencil is
    used, so the reported residual reflects the construction rather than the
    differencing; otherwise np.gradient (2nd order).  Returns the residual
    array (nt, nx, nxi) with NaN at times where no centered stencil fits, and
    the max over the valid interior.
    """
    q0 = q0 or pt.q0
    nt, nx, nxi = pt.S.shape
    if nt < 3:
        raise ValueError("need at least 3 time nodes for the residual check")
    tg = pt.t_grid
    spacings = np.diff(tg)
    uniform = np.allclose(spacings, spacings[0], rtol=1e-12, atol=0.0)

    qvals = np.empty_like(pt.S)
    xp = np.repeat(pt.x_grid, nxi, axis=0)
    for k in range(nt):
        eta = pt.grad_x[k].reshape(nx * nxi, -1)
        qvals[k] = q0(xp, eta).reshape(nx, nxi)

    res = np.full_like(pt.S, np.nan)
    if uniform and nt >= 5:
        dt = spacings[0]
        S = pt.S
        dSdt = (-S[4:] + 8.0 * S[3:-1] - 8.0 * S[1:-3] + S[:-4]) / (12.0 * dt)
        res[2:-2] = np.abs(dSdt - qvals[2:-2])
        valid = res[2:-2]
    else:
        dSdt = np.gradient(pt.S, tg, axis=0)
        res[1:-1] = np.abs(dSdt - qvals)[1:-1]
        valid = res[1:-1]
    return res, float(np.max(valid))


def second_time_derivative(pt, k=None):
    """d2S/dt2 from the derivative tables (no differencing of S).

    Differentiating dS/dt = q0(x, grad_x S) once more in t gives, with
    g = grad_eta q0 evaluated at (x, grad_x S),

        d2S/dt2 = g . grad_x q0(x, grad_x S) + g . (hess_xx S) g.

    Returns the (nt, nx, nxi) array, or one time slice when `k` is given.
    """
    q0 = pt.q0
    nt, nx, nxi = pt.S.shape
    ks = range(nt) if k is None else [k]
    out = np.empty((len(ks), nx, nxi))
    xp = np.repeat(pt.x_grid, nxi, axis=0)
    for i, kk in enumerate(ks):
        eta = pt.grad_x[kk].reshape(nx * nxi, -1)
        g = q0.grad_xi(xp, eta)
        gx = q0.grad_x(xp, eta)
        W = pt.hess_xx[kk].reshape(nx * nxi, g.shape[1], g.shape[1])
        val = np.sum(g * gx, axis=1) + np.einsum("ni,nij,nj->n", g, W, g)
        out[i] = val.reshape(nx, nxi)
    return out[0] if k is not None else out
