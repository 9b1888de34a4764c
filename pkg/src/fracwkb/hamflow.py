"""Hamiltonian flow, variational system and the inverse spatial map.

The flow solves Xdot = grad_xi H, Xidot = -grad_x H with a classical
fixed-step 4th order scheme.  The variational system propagates the full
2d x 2d Jacobian Z(t) of the flow map with Z(0) = Id alongside the
trajectory, which downstream modules use both for phase Hessians and for the
Newton iteration inverting x -> X(t, x, xi).

Everything is vectorized over batches of phase-space points: positions and
covectors are (n, d) arrays, Jacobians (n, 2d, 2d).
"""

from dataclasses import dataclass, field

import numpy as np

from .metric import as_points

__all__ = [
    "FlowTable",
    "GuardBandError",
    "CausticError",
    "integrate_flow",
    "variational_jacobian",
    "flow_trajectory",
    "inverse_map",
    "flow_horizon",
    "build_flow_table",
    "DT_DEFAULT",
]

DT_DEFAULT = 0.01
NEWTON_MAX_ITER = 50
NEWTON_DAMPING = 0.5


class GuardBandError(RuntimeError):
    """A trajectory left the compact xi-support guard band."""


class CausticError(RuntimeError):
    """The damped Newton iteration for the inverse map failed to converge."""


def _rhs(H, X, Xi):
    return H.grad_xi(X, Xi), -H.grad_x(X, Xi)


def _variational_rhs(H, X, Xi, Z):
    """A(t) Z with A the linearization of the flow field at (X, Xi)."""
    d = X.shape[1]
    Hxxi = H.hess_xxi(X, Xi)      # [n, i, j] = d2H/dx_i dxi_j
    Hxixi = H.hess_xixi(X, Xi)
    Hxx = H.hess_xx(X, Xi)
    n = X.shape[0]
    A = np.empty((n, 2 * d, 2 * d))
    A[:, :d, :d] = np.swapaxes(Hxxi, 1, 2)
    A[:, :d, d:] = Hxixi
    A[:, d:, :d] = -Hxx
    A[:, d:, d:] = -Hxxi
    return np.einsum("nij,njk->nik", A, Z)


def _step_count(t, dt):
    return max(1, int(np.ceil(abs(t) / dt - 1e-12)))


def _check_guard(H, X, Xi, where=""):
    band = getattr(H, "xi_band", None)
    if band is None:
        return
    from .metric import principal_symbol

    metric = getattr(H, "metric", None)
    if metric is None:
        return
    p = principal_symbol(metric, X, Xi)
    lo, hi = band
    if np.any(p < lo) or np.any(p > hi):
        raise GuardBandError(
            f"trajectory left the guard band p in [{lo}, {hi}] "
            f"(range [{p.min():.6g}, {p.max():.6g}]){where}"
        )


def integrate_flow(H, t, x, xi, dt=DT_DEFAULT, n_steps=None, with_variational=False):
    """Flow (x, xi) to time t; returns (X, Xi) or (X, Xi, Z).

    Parameters
    ----------
    H : SymbolFunction
        Hamiltonian with gradient and Hessian evaluators.
    t : float
        Target time, may be negative.
    x, xi : arrays
        Batches of initial positions / covectors, promoted to (n, d).
    dt : float
        Nominal step size; the actual count is ceil(|t| / dt).
    n_steps : int, optional
        Overrides the step count (used by quadrature callers that need a
        specific node layout).
    """
    d = H.dim
    X = as_points(x, d).copy()
    Xi = as_points(xi, d).copy()
    if X.shape[0] == 1 and Xi.shape[0] > 1:
        X = np.broadcast_to(X, Xi.shape).copy()
    if Xi.shape[0] == 1 and X.shape[0] > 1:
        Xi = np.broadcast_to(Xi, X.shape).copy()
    n = X.shape[0]
    Z = np.broadcast_to(np.eye(2 * d), (n, 2 * d, 2 * d)).copy() if with_variational else None
    if t == 0.0:
        return (X, Xi, Z) if with_variational else (X, Xi)

    steps = n_steps if n_steps is not None else _step_count(t, dt)
    hstep = t / steps
    for _ in range(steps):
        X, Xi, Z = _rk4_step(H, X, Xi, Z, hstep)
    _check_guard(H, X, Xi, f" at t={t}")
    return (X, Xi, Z) if with_variational else (X, Xi)


def _rk4_step(H, X, Xi, Z, h):
    k1x, k1p = _rhs(H, X, Xi)
    k2x, k2p = _rhs(H, X + 0.5 * h * k1x, Xi + 0.5 * h * k1p)
    k3x, k3p = _rhs(H, X + 0.5 * h * k2x, Xi + 0.5 * h * k2p)
    k4x, k4p = _rhs(H, X + h * k3x, Xi + h * k3p)
    Xn = X + (h / 6.0) * (k1x + 2.0 * k2x + 2.0 * k3x + k4x)
    Xin = Xi + (h / 6.0) * (k1p + 2.0 * k2p + 2.0 * k3p + k4p)
    Zn = None
    if Z is not None:
        k1z = _variational_rhs(H, X, Xi, Z)
        k2z = _variational_rhs(H, X + 0.5 * h * k1x, Xi + 0.5 * h * k1p, Z + 0.5 * h * k1z)
        k3z = _variational_rhs(H, X + 0.5 * h * k2x, Xi + 0.5 * h * k2p, Z + 0.5 * h * k2z)
        k4z = _variational_rhs(H, X + h * k3x, Xi + h * k3p, Z + h * k3z)
        Zn = Z + (h / 6.0) * (k1z + 2.0 * k2z + 2.0 * k3z + k4z)
    return Xn, Xin, Zn


def variational_jacobian(H, t, x, xi, dt=DT_DEFAULT):
    """Jacobian Z(t) of the flow map, solved alongside the flow; Z(0) = Id."""
    _, _, Z = integrate_flow(H, t, x, xi, dt=dt, with_variational=True)
    return Z


def flow_trajectory(H, t, x, xi, n_steps, with_variational=True):
    """Flow with all intermediate states retained, for quadrature along the path.

    Returns (times, X, Xi, Z) where times has n_steps + 1 uniformly spaced
    nodes from 0 to t and the state arrays carry a leading node axis.
    """
    d = H.dim
    X = as_points(x, d).copy()
    Xi = as_points(xi, d).copy()
    if X.shape[0] == 1 and Xi.shape[0] > 1:
        X = np.broadcast_to(X, Xi.shape).copy()
    if Xi.shape[0] == 1 and X.shape[0] > 1:
        Xi = np.broadcast_to(Xi, X.shape).copy()
    n = X.shape[0]
    Z = np.broadcast_to(np.eye(2 * d), (n, 2 * d, 2 * d)).copy() if with_variational else None

    times = np.linspace(0.0, t, n_steps + 1)
    Xs = np.empty((n_steps + 1, n, d))
    Xis = np.empty((n_steps + 1, n, d))
    Zs = np.empty((n_steps + 1, n, 2 * d, 2 * d)) if with_variational else None
    Xs[0], Xis[0] = X, Xi
    if with_variational:
        Zs[0] = Z
    h = t / n_steps if n_steps else 0.0
    for k in range(n_steps):
        X, Xi, Z = _rk4_step(H, X, Xi, Z, h)
        Xs[k + 1], Xis[k + 1] = X, Xi
        if with_variational:
            Zs[k + 1] = Z
    _check_guard(H, X, Xi, f" at t={t}")
    return times, Xs, Xis, Zs


def inverse_map(H, t, x, xi, tol=1e-11, dt=DT_DEFAULT, max_iter=NEWTON_MAX_ITER, y0=None):
    """Solve X(t, Y, xi) = x for Y by damped Newton started at x (or `y0`).

    The Jacobian grad_y X comes from the variational system.  Steps that do
    not reduce the residual are repeatedly scaled by the damping factor; a
    batch that still violates the tolerance after `max_iter` sweeps raises
    :class:`CausticError` with the worst offending point.
    """
    d = H.dim
    xt = as_points(x, d)
    cov = as_points(xi, d)
    if xt.shape[0] == 1 and cov.shape[0] > 1:
        xt = np.broadcast_to(xt, cov.shape).copy()
    if cov.shape[0] == 1 and xt.shape[0] > 1:
        cov = np.broadcast_to(cov, xt.shape).copy()
    Y = xt.copy() if y0 is None else as_points(y0, d).copy()
    if t == 0.0:
        return Y

    def forward(Yc):
        X, _, Z = integrate_flow(H, t, Yc, cov, dt=dt, with_variational=True)
        return X, Z[:, :d, :d]

    X, JX = forward(Y)
    R = X - xt
    res = np.max(np.abs(R), axis=1)
    for _ in range(max_iter):
        if np.all(res <= tol):
            return Y
        delta = np.linalg.solve(JX, R[..., None])[..., 0]
        lam = np.ones(Y.shape[0])
        active = res > tol
        for _ in range(10):
            Y_try = Y - lam[:, None] * delta
            X_try, JX_try = forward(Y_try)
            res_try = np.max(np.abs(X_try - xt), axis=1)
            improved = res_try < res
            take = active & improved
            Y[take] = Y_try[take]
            X[take] = X_try[take]
            JX[take] = JX_try[take]
            res[take] = res_try[take]
            active = active & ~improved
            if not active.any():
                break
            lam[active] *= NEWTON_DAMPING
        R = X - xt
        res = np.max(np.abs(R), axis=1)
    if np.any(res > tol):
        worst = int(np.argmax(res))
        raise CausticError(
            f"inverse map did not converge at t={t}: residual {res[worst]:.3e} "
            f"at x={xt[worst]}, xi={cov[worst]} (caustic proximity?)"
        )
    return Y


def flow_horizon(H, t_grid, x, xi, dt=DT_DEFAULT, threshold=0.5):
    """Largest grid time with ||grad_x X - Id|| <= threshold at every sample.

    Scans |t| in increasing order over the grid; the returned horizon is the
    largest magnitude for which all smaller grid times also satisfy the bound.
    """
    d = H.dim
    t_grid = np.asarray(t_grid, dtype=float)
    ok = np.ones(len(t_grid), dtype=bool)
    for k, t in enumerate(t_grid):
        if t == 0.0:
            continue
        Z = variational_jacobian(H, t, x, xi, dt=dt)
        JX = Z[:, :d, :d]
        dev = np.linalg.norm(JX - np.eye(d), ord=2, axis=(1, 2))
        ok[k] = not np.any(dev > threshold)
    mags = np.abs(t_grid)
    t0 = 0.0
    for m in np.unique(mags):
        if m == 0.0:
            continue
        if np.all(ok[mags <= m]):
            t0 = float(m)
        else:
            break
    return t0


@dataclass
class FlowTable:
    """Flow and variational samples over a time grid at fixed base points."""

    time_grid: np.ndarray
    x0: np.ndarray
    xi0: np.ndarray
    X: np.ndarray            # (nt, n, d)
    Xi: np.ndarray           # (nt, n, d)
    Z: np.ndarray            # (nt, n, 2d, 2d)
    hamiltonian: object = field(repr=False)

    def energy_drift(self):
        """Max |H(X, Xi) - H(x0, xi0)| over the table."""
        H = self.hamiltonian
        ref = H(self.x0, self.xi0)
        worst = 0.0
        for k in range(len(self.time_grid)):
            worst = max(worst, float(np.max(np.abs(H(self.X[k], self.Xi[k]) - ref))))
        return worst

    def variational_bound_constant(self):
        """Fitted C in ||Z(t) - Id|| <= C|t| over the nonzero grid times."""
        d = self.x0.shape[1]
        best = 0.0
        for k, t in enumerate(self.time_grid):
            if t == 0.0:
                continue
            dev = np.linalg.norm(self.Z[k] - np.eye(2 * d), ord=2, axis=(1, 2))
            best = max(best, float(np.max(dev)) / abs(t))
        return best


def build_flow_table(H, t_grid, x, xi, dt=DT_DEFAULT):
    """Integrate the flow and variational system over a whole time grid."""
    d = H.dim
    x = as_points(x, d)
    xi = as_points(xi, d)
    if x.shape[0] == 1 and xi.shape[0] > 1:
        x = np.broadcast_to(x, xi.shape).copy()
    if xi.shape[0] == 1 and x.shape[0] > 1:
        xi = np.broadcast_to(xi, x.shape).copy()
    t_grid = np.asarray(t_grid, dtype=float)
    nt, n = len(t_grid), x.shape[0]
    X = np.empty((nt, n, d))
    Xi = np.empty((nt, n, d))
    Z = np.empty((nt, n, 2 * d, 2 * d))
    for k, t in enumerate(t_grid):
        Xk, Xik, Zk = integrate_flow(H, t, x, xi, dt=dt, with_variational=True)
        X[k], Xi[k], Z[k] = Xk, Xik, Zk
    return FlowTable(time_grid=t_grid, x0=x, xi0=xi, X=X, Xi=Xi, Z=Z, hamiltonian=H)
