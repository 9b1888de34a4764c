"""Nonlinear solvers on the periodic box: split-step, Picard, wave, continuation.

The linear group is the same e^{i t Lambda^sigma} the rest of the package
uses, so the Schrodinger-type equation solved here is

    d_t u = i Lambda^sigma u + i mu |u|^{nu-1} u,

whose mass and energy (potential term +mu/(nu+1) |u|^{nu+1}) are conserved
and whose mu = +1 branch is defocusing.  The wave-type equation is

    d_t^2 v + Lambda^{2 sigma} v + mu |v|^{nu-1} v = 0,

solved through the first-order system with the exact cos/sin flow on the
spectral side and kick steps for the nonlinearity.
"""

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import cumulative_trapezoid

from .metric import check_sigma
from .spectral import propagate, state_from_values

__all__ = [
    "NlfsProblem",
    "ConservedQuantities",
    "Trajectory",
    "WaveTrajectory",
    "PicardReport",
    "ContinuationResult",
    "BlowUpError",
    "ContractionError",
    "solve_nlfs",
    "picard_iterate",
    "solve_nlfw",
    "conserved",
    "sobolev_bound",
    "global_continuation",
]

BLOWUP_FACTOR = 1e6
SINC_SMALL = 1e-8
PICARD_FLOOR = 1e-10


class BlowUpError(RuntimeError):
    """Trajectory left the finite range; carries the last valid time."""

    def __init__(self, t_last, message):
        super().__init__(message)
        self.t_last = float(t_last)


class ContractionError(RuntimeError):
    """The Duhamel map failed to contract on the requested window."""


@dataclass
class NlfsProblem:
    """One nonlinear evolution problem tied to a spectral operator.

    mu = +1 is defocusing, -1 focusing, 0 the linear limit.  nu is kept
    smooth (odd integer) by default; other values work numerically but the
    pointwise power is then only finitely differentiable at zeros of u, so
    they are flagged once.
    """

    sigma: float
    nu: float
    mu: float
    u0: object
    T: float
    dt: float
    op: object
    v1: object = None

    def __post_init__(self):
        check_sigma(self.sigma)
        if self.nu <= 1.0:
            raise ValueError(f"nu must exceed 1, got {self.nu}")
        if self.mu not in (-1.0, 0.0, 1.0, -1, 0, 1):
            raise ValueError(f"mu must be -1, 0 or +1, got {self.mu}")
        if self.dt <= 0.0:
            raise ValueError("dt must be positive")
        odd_int = float(self.nu).is_integer() and int(self.nu) % 2 == 1
        if not odd_int:
            warnings.warn(
                f"nu={self.nu} is not an odd integer; |u|^(nu-1)u is not smooth "
                "at zeros of u", stacklevel=2)


@dataclass(frozen=True)
class ConservedQuantities:
    mass: float
    energy: float


@dataclass
class Trajectory:
    times: np.ndarray
    states: list = field(repr=False)

    @property
    def final(self):
        return self.states[-1]


@dataclass
class WaveTrajectory:
    times: np.ndarray
    states: list = field(repr=False)
    velocities: list = field(repr=False)

    @property
    def final(self):
        return self.states[-1], self.velocities[-1]


def _steps(T, dt):
    n = max(1, int(round(abs(T) / dt)))
    return n, T / n


def _blowup_guard(values, t, sup0):
    if not np.all(np.isfinite(values)):
        raise BlowUpError(t, f"non-finite values at t={t:.6g}")
    if sup0 > 0.0 and np.max(np.abs(values)) > BLOWUP_FACTOR * sup0:
        raise BlowUpError(
            t, f"sup amplitude exceeded {BLOWUP_FACTOR:.0e} x initial at t={t:.6g}")


def _rotate(values, mu, nu, tau):
    """Exact flow of d_t u = i mu |u|^{nu-1} u over time tau (pointwise)."""
    if mu == 0:
        return values
    return values * np.exp(1j * mu * tau * np.abs(values) ** (nu - 1.0))


def solve_nlfs(prob, store_every=None):
    """Strang split-step trajectory for the Schrodinger-type equation.

    Half nonlinear rotation, full exact spectral step, half rotation; both
    substeps are L2 isometries, so mass is conserved to rounding and the
    energy drift is O(dt^2).  dt should resolve the phase of the fastest
    occupied mode (dt * lam_max^{sigma/2} below ~1/2) or the splitting error
    dominates.
    """
    n, dt = _steps(prob.T, prob.dt)
    if store_every is None:
        store_every = max(1, n // 256)
    sup0 = float(np.max(np.abs(prob.u0.values)))
    times = [0.0]
    states = [prob.u0]
    u = prob.u0
    for k in range(1, n + 1):
        vals = _rotate(u.values, prob.mu, prob.nu, 0.5 * dt)
        u = propagate(state_from_values(u.grid, vals), prob.op, prob.sigma, dt)
        vals = _rotate(u.values, prob.mu, prob.nu, 0.5 * dt)
        _blowup_guard(vals, (k - 1) * dt, sup0)
        u = state_from_values(u.grid, vals)
        if k % store_every == 0 or k == n:
            times.append(k * dt)
            states.append(u)
    return Trajectory(times=np.asarray(times), states=states)


@dataclass
class PicardReport:
    times: np.ndarray
    states: list = field(repr=False)
    diffs: np.ndarray = None
    ratios: np.ndarray = None

    @property
    def rate(self):
        """Representative contraction factor: median ratio after warm-up.

        Only ratios whose numerator still sits above the rounding floor count;
        once the iteration has converged to machine precision the successive
        differences are noise and their ratios mean nothing.
        """
        floor = PICARD_FLOOR * self.diffs[0]
        valid = [r for r, nxt in zip(self.ratios, self.diffs[1:]) if nxt > floor]
        if not valid:
            return 0.0
        tail = valid[1:] if len(valid) > 1 else valid
        return float(np.median(tail))

    @property
    def final(self):
        return self.states[-1]


def picard_iterate(prob, n_iter=8, T_small=None, n_t=65):
    """Iterate the Duhamel map on [0, T_small] and report contraction.

    Iterates u -> e^{itL}u0 + i mu int_0^t e^{i(t-s)L} |u|^{nu-1}u(s) ds with
    the integral pulled back along the group (interaction picture) and a
    cumulative trapezoid in s, starting from the free evolution.  Successive
    sup-in-time L2 differences must shrink; a ratio >= 1 after the first
    comparison raises :class:`ContractionError`.
    """
    T = prob.T if T_small is None else float(T_small)
    times = np.linspace(0.0, T, int(n_t))
    grid = prob.u0.grid
    free = [propagate(prob.u0, prob.op, prob.sigma, t) for t in times]
    cur = [s.values.copy() for s in free]
    sup0 = float(np.max(np.abs(prob.u0.values)))

    diffs = []
    for it in range(int(n_iter)):
        integrand = np.empty((len(times),) + cur[0].shape, dtype=complex)
        for i, t in enumerate(times):
            nl = 1j * prob.mu * np.abs(cur[i]) ** (prob.nu - 1.0) * cur[i]
            pulled = propagate(state_from_values(grid, nl), prob.op,
                               prob.sigma, -t)
            integrand[i] = pulled.values
        acc = cumulative_trapezoid(integrand, times, axis=0, initial=0.0)
        nxt = []
        delta = 0.0
        for i, t in enumerate(times):
            stage = propagate(
                state_from_values(grid, prob.u0.values + acc[i]),
                prob.op, prob.sigma, t)
            _blowup_guard(stage.values, t, sup0)
            delta = max(delta, float(np.linalg.norm(stage.values - cur[i]))
                        * math.sqrt(grid.cell_volume))
            nxt.append(stage.values)
        cur = nxt
        diffs.append(delta)
        if len(diffs) >= 2 and diffs[-2] > PICARD_FLOOR * diffs[0]:
            if diffs[-1] / diffs[-2] >= 1.0:
                raise ContractionError(
                    f"successive-difference ratio {diffs[-1] / diffs[-2]:.3f} "
                    f">= 1 on window T={T}; shrink the window")

    diffs = np.asarray(diffs)
    ratios = diffs[1:] / np.where(diffs[:-1] > 0.0, diffs[:-1], 1.0)
    states = [state_from_values(grid, v) for v in cur]
    return PicardReport(times=times, states=states, diffs=diffs, ratios=ratios)


def _sin_over(mu_vals, t):
    """sin(t mu)/mu with the kernel rule -> t as mu -> 0."""
    small = np.abs(t) * mu_vals < SINC_SMALL
    safe = np.where(small, 1.0, mu_vals)
    return np.where(small, t, np.sin(t * safe) / safe)


def _wave_step(op, sigma, t, v, w):
    """Exact flow of d_t(v, w) = (w, -Lambda^{2 sigma} v) in the spectral basis."""
    mu_vals = op.lam ** (0.5 * sigma)
    cv = op.coefficients(v)
    cw = op.coefficients(w)
    c = np.cos(t * mu_vals)
    s_over = _sin_over(mu_vals, t)
    new_v = c * cv + s_over * cw
    new_w = -(mu_vals**2) * s_over * cv + c * cw
    return op.synthesize(new_v), op.synthesize(new_w)


def solve_nlfw(prob, store_every=None):
    """Strang trajectory (v, d_t v) for the wave-type equation.

    The kick updates the velocity by -mu |v|^{nu-1} v; the drift applies the
    exact cos/sin propagator with sin(t lam^{sigma/2})/lam^{sigma/2} -> t on
    (near-)kernel modes, so constant data with G = 0 evolves as v0 + t v1.
    """
    if prob.v1 is None:
        raise ValueError("wave problems need the velocity initial v1")
    n, dt = _steps(prob.T, prob.dt)
    if store_every is None:
        store_every = max(1, n // 256)
    sup0 = float(np.max(np.abs(prob.u0.values)))
    v, w = prob.u0, prob.v1
    times = [0.0]
    states = [v]
    velocities = [w]
    for k in range(1, n + 1):
        w_vals = w.values - 0.5 * dt * prob.mu * np.abs(v.values) ** (prob.nu - 1.0) * v.values
        v, w = _wave_step(prob.op, prob.sigma, dt, v,
                          state_from_values(w.grid, w_vals))
        w_vals = w.values - 0.5 * dt * prob.mu * np.abs(v.values) ** (prob.nu - 1.0) * v.values
        _blowup_guard(v.values, (k - 1) * dt, sup0)
        w = state_from_values(w.grid, w_vals)
        if k % store_every == 0 or k == n:
            times.append(k * dt)
            states.append(v)
            velocities.append(w)
    return WaveTrajectory(times=np.asarray(times), states=states,
                          velocities=velocities)


def _volume_sum(op, density):
    """Integral of a pointwise density against the metric volume."""
    grid_vol = op.grid.cell_volume
    return float(np.sum(density * op.weight) * grid_vol)


def conserved(prob, state, velocity=None):
    """Mass and energy of a state (pair) under the problem's weights.

    Schrodinger energy is  int 1/2 |Lambda^{sigma/2} u|^2 + mu/(nu+1)|u|^{nu+1};
    with a velocity the wave energy 1/2(|d_t v|^2 + |Lambda^sigma v|^2) plus
    the same potential is returned instead.
    """
    op = prob.op
    coeffs = op.coefficients(state)
    base = op.grid.length**op.grid.dim if op.kind == "flat" else 1.0
    mass = float(base * np.sum(np.abs(coeffs) ** 2))
    potential = prob.mu / (prob.nu + 1.0) * _volume_sum(
        op, np.abs(state.values) ** (prob.nu + 1.0))
    if velocity is None:
        kinetic = 0.5 * float(base * np.sum(op.lam ** (0.5 * prob.sigma)
                                            * np.abs(coeffs) ** 2))
    else:
        cw = op.coefficients(velocity)
        kinetic = 0.5 * float(base * np.sum(np.abs(cw) ** 2))
        kinetic += 0.5 * float(base * np.sum(op.lam**prob.sigma
                                             * np.abs(coeffs) ** 2))
    return ConservedQuantities(mass=mass, energy=kinetic + potential)


def sobolev_bound(prob):
    """A priori H^{sigma/2} bound from mass + energy conservation (mu = +1).

    (1 + lam)^{sigma/2} <= factor * (1 + lam^{sigma/2}) with factor 1 for
    sigma <= 2 and 2^{sigma/2 - 1} beyond, so the norm stays below
    sqrt(factor * (M0 + 2 E0)).
    """
    if prob.mu != 1:
        raise ValueError("the conservation bound needs the defocusing sign")
    q0 = conserved(prob, prob.u0)
    factor = 1.0 if prob.sigma <= 2.0 else 2.0 ** (0.5 * prob.sigma - 1.0)
    return math.sqrt(factor * (q0.mass + 2.0 * q0.energy))


@dataclass
class ContinuationResult:
    times: np.ndarray
    states: list = field(repr=False)
    segments: list = None
    bound: float = 0.0

    @property
    def final(self):
        return self.states[-1]


def global_continuation(prob, T_total, probe_ratio=0.5, n_probe=3):
    """Defocusing solution on [0, T_total] glued from measured local windows.

    Each window length starts at min(1/2, remaining) and is halved until the
    Picard probe contracts with rate <= probe_ratio; the split-step solver
    then advances the window and the loop restarts from its endpoint.  The
    conserved-quantity bound on H^{sigma/2} is recorded for monitoring.
    """
    if prob.mu != 1:
        raise ValueError("global continuation requires mu = +1 (defocusing)")
    bound = sobolev_bound(prob)
    t_done = 0.0
    u = prob.u0
    all_times = [0.0]
    all_states = [u]
    segments = []
    while t_done < T_total - 1e-12:
        T_loc = min(0.5, T_total - t_done)
        local = NlfsProblem(sigma=prob.sigma, nu=prob.nu, mu=prob.mu, u0=u,
                            T=T_loc, dt=prob.dt, op=prob.op)
        for _ in range(8):
            try:
                probe = picard_iterate(local, n_iter=n_probe, T_small=T_loc,
                                       n_t=17)
            except ContractionError:
                probe = None
            if probe is not None and probe.rate <= probe_ratio:
                break
            T_loc *= 0.5
            local.T = T_loc
        else:
            raise ContractionError(
                f"no contracting window found at t={t_done:.6g}")
        try:
            leg = solve_nlfs(local)
        except BlowUpError as err:
            raise BlowUpError(t_done + err.t_last,
                              f"local solve failed at t={t_done + err.t_last:.6g}"
                              ) from err
        all_times.extend(t_done + leg.times[1:])
        all_states.extend(leg.states[1:])
        segments.append((t_done, T_loc))
        t_done += T_loc
        u = leg.final
    return ContinuationResult(times=np.asarray(all_times), states=all_states,
                              segments=segments, bound=bound)
