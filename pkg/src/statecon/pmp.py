"""Adjoint recovery, boundary multipliers, and maximum-principle residuals.

Given a certified minimizer, the co-state is read off from convex duality
p = -D_v f(t, gamma, gamma'), the constraint multiplier is extracted from the
adjoint equation residual on contact arcs, and the explicit feedback formula
for the multiplier is evaluated independently for cross-checking.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import Domain, OutsideTube
from .model import Hamiltonian, Problem
from .penalty import PenaltyParams, Trajectory


class NegativeMultiplier(RuntimeError):
    """The extracted constraint multiplier is significantly negative: the
    candidate is not a constrained minimizer."""


class LeftTube(RuntimeError):
    pass


MULTIPLIER_TOL_FACTOR = 1e-4


def contact_mask(dom: Domain, gamma: Trajectory,
                 tol: float | None = None) -> np.ndarray:
    """Knots lying on the boundary (within tolerance)."""
    tol = dom.boundary_tol if tol is None else tol
    return np.abs(dom.b_many(gamma.knots)) <= tol


def _runs(mask: np.ndarray):
    """Maximal runs of constant mask value, as (start, stop) inclusive."""
    out = []
    a = 0
    for i in range(1, len(mask) + 1):
        if i == len(mask) or mask[i] != mask[a]:
            out.append((a, i - 1))
            a = i
    return out


def junction_clear_mask(mask: np.ndarray) -> np.ndarray:
    """Knots at least two grid points away from a contact/interior switch.

    The multiplier measure may carry atoms where an arc lands on or leaves
    the boundary, and the discrete junction time is quantized to the grid, so
    pointwise ODE residuals are only meaningful in the interior of maximal
    runs.
    """
    m = np.asarray(mask, bool)
    keep = np.ones(m.size, bool)
    for j in np.flatnonzero(m[1:] != m[:-1]):
        keep[max(j - 1, 0):j + 3] = False
    return keep


def grid_derivative(Y: np.ndarray, dt: float,
                    mask: np.ndarray | None = None) -> np.ndarray:
    """Second-order time derivative on the knot grid.

    When a contact mask is supplied, differences never straddle a junction
    between contact and interior runs: second derivatives of the arc jump
    there, and one-sided second-order stencils keep the O(dt^2) accuracy.
    """
    Y = np.asarray(Y, dtype=float)
    N1 = Y.shape[0]
    D = np.zeros_like(Y)
    runs = [(0, N1 - 1)] if mask is None else _runs(np.asarray(mask, bool))
    for a, b in runs:
        ln = b - a
        if ln == 0:
            # isolated knot: centered across the junction, clamped at the ends
            lo, hi = max(a - 1, 0), min(a + 1, N1 - 1)
            D[a] = (Y[hi] - Y[lo]) / ((hi - lo) * dt)
        elif ln == 1:
            D[a] = D[b] = (Y[b] - Y[a]) / dt
        else:
            D[a + 1:b] = (Y[a + 2:b + 1] - Y[a:b - 1]) / (2 * dt)
            D[a] = (-3 * Y[a] + 4 * Y[a + 1] - Y[a + 2]) / (2 * dt)
            D[b] = (3 * Y[b] - 4 * Y[b - 1] + Y[b - 2]) / (2 * dt)
    return D


def knot_velocities(gamma: Trajectory, dom: Domain | None = None) -> np.ndarray:
    mask = None if dom is None else contact_mask(dom, gamma)
    return grid_derivative(gamma.knots, gamma.dt, mask)


def recover_adjoint(prob: Problem, gamma: Trajectory,
                    dom: Domain | None = None) -> np.ndarray:
    """Co-state from duality: p(t) = -D_v f(t, gamma(t), gamma'(t))."""
    v = knot_velocities(gamma, dom)
    t = gamma.times
    return -prob.fv(t, gamma.knots, v)


def multiplier_from_residual(prob: Problem, dom: Domain, gamma: Trajectory,
                             p: np.ndarray):
    """Constraint multiplier from the adjoint-equation defect.

    Returns (lam, nu, orth) where lam is the per-knot multiplier (zero off
    contact), nu the terminal multiplier, and orth the norm of the defect
    component orthogonal to Db at each contact knot.
    """
    ham = Hamiltonian(prob)
    mask = contact_mask(dom, gamma)
    t = gamma.times
    pdot = grid_derivative(p, gamma.dt, mask)
    DxH = ham.DxH_many(t, gamma.knots, p)
    defect = DxH - pdot
    lam = np.zeros(gamma.N + 1)
    orth = np.zeros(gamma.N + 1)
    if np.any(mask):
        Db = dom.grad_many(gamma.knots[mask])
        proj = np.einsum("mi,mi->m", defect[mask], Db)
        lam[mask] = proj
        orth[mask] = np.linalg.norm(defect[mask] - proj[:, None] * Db, axis=1)
    mx = float(np.max(lam, initial=0.0))
    # junction knots see the atomic part of the multiplier measure; the sign
    # condition is only checked in the interior of contact runs
    clear = lam[junction_clear_mask(mask)]
    if clear.size and float(np.min(clear)) < -MULTIPLIER_TOL_FACTOR * max(
            mx, 1e-12):
        raise NegativeMultiplier(
            f"multiplier reaches {np.min(clear):.3e}; candidate is not a "
            "constrained minimizer")
    if mask[-1]:
        Db_T = dom.grad_many(gamma.knots[-1:])[0]
        nu = float(np.dot(p[-1] - prob.Dg(gamma.knots[-1:])[0], Db_T))
    else:
        nu = 0.0
    return lam, nu, orth


def feedback_lambda_many(ham: Hamiltonian, dom: Domain, t, X, P) -> np.ndarray:
    """Explicit boundary feedback multiplier.

    Derived from d^2/dt^2 [b(gamma)] = 0 along sliding arcs; note the
    time-mixed term enters with a plus sign.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    P = np.atleast_2d(np.asarray(P, dtype=float))
    b = dom.b_many(X)
    if np.any(np.abs(b) >= dom.rho0):
        raise OutsideTube("feedback multiplier needs |b| < rho0")
    Db = dom.grad_many(X)
    D2b = dom.hess_many(X)
    d = ham.derivs_many(t, X, P)
    theta = np.einsum("mi,mij,mj->m", Db, d.DppH, Db)
    num = (-np.einsum("mij,mi,mj->m", D2b, d.DpH, d.DpH)
           + np.einsum("mi,mi->m", Db, d.DptH)
           - np.einsum("mi,mij,mj->m", Db, d.DpxH, d.DpH)
           + np.einsum("mi,mij,mj->m", Db, d.DppH, d.DxH))
    return num / theta


def feedback_lambda(ham: Hamiltonian, dom: Domain, t, x, p) -> float:
    return float(feedback_lambda_many(ham, dom, t, x, p)[0])


@dataclass
class Extremal:
    """Minimizer bundled with its co-state and multipliers.

    lam stores the observable product (multiplier over epsilon); params, when
    present, records the penalty run that produced gamma.
    """

    gamma: Trajectory
    p: np.ndarray
    lam: np.ndarray
    beta_over_delta: float
    r: np.ndarray
    Lstar: float
    params: PenaltyParams | None = None


def hamiltonian_drift(prob: Problem, dom: Domain, gamma: Trajectory,
                      p: np.ndarray, epsilon: float | None = None) -> np.ndarray:
    """r(t) = H(t, gamma, p), minus the penalty well d/eps while penalized."""
    ham = Hamiltonian(prob)
    r = ham.value_many(gamma.times, gamma.knots, p)
    if epsilon is not None:
        r = r - np.maximum(dom.b_many(gamma.knots), 0.0) / epsilon
    return r


def velocity_bound(prob: Problem, dom: Domain, delta: float, K: float,
                   rng: np.random.Generator | None = None) -> float:
    """L* = C(mu, M') (2 sqrt(mu C1)/delta + 1) with measured constants."""
    from .model import measure_hamiltonian_constants

    ham = Hamiltonian(prob)
    Mp, C = measure_hamiltonian_constants(ham, dom, rng=rng)
    rng2 = np.random.default_rng(4)
    Dg = prob.Dg(dom.sample_extended(rng2, 1024))
    ndg = float(np.max(np.linalg.norm(Dg, axis=1)))
    C1 = (8 * prob.mu + 8 * prob.mu * ndg ** 2 + 2 * C
          + prob.kappa * (prob.horizon + 4 * prob.mu * K))
    return C * (2.0 * np.sqrt(prob.mu * C1) / delta + 1.0)


def make_extremal(prob: Problem, dom: Domain, gamma: Trajectory,
                  params: PenaltyParams | None = None,
                  K: float | None = None) -> Extremal:
    """Assemble the full first-order bundle from a certified minimizer."""
    from .model import energy_bound

    p = recover_adjoint(prob, gamma, dom)
    lam, nu, _ = multiplier_from_residual(prob, dom, gamma, p)
    r = hamiltonian_drift(prob, dom, gamma, p,
                          params.epsilon if params is not None else None)
    if K is None:
        K = energy_bound(prob, dom)
    delta = params.delta if params is not None else 1.0
    Lstar = velocity_bound(prob, dom, delta, K)
    return Extremal(gamma=gamma, p=p, lam=lam, beta_over_delta=nu, r=r,
                    Lstar=Lstar, params=params)


@dataclass
class PMPReport:
    checks: dict = field(default_factory=dict)
    residuals: dict = field(default_factory=dict)

    @property
    def all_passed(self) -> bool:
        return all(self.checks.values())


def check_extremal(prob: Problem, dom: Domain, ex: Extremal,
                   C_res: float = 1.0, K: float | None = None) -> PMPReport:
    """Residual report for the full first-order system.

    Tolerances for the two ODE residuals scale as C_res / N; transversality is
    held to 1e-6.
    """
    from .model import energy_bound

    ham = Hamiltonian(prob)
    gamma, p = ex.gamma, ex.p
    t = gamma.times
    mask = contact_mask(dom, gamma)
    tol_ode = C_res / gamma.N

    rep = PMPReport()
    v = knot_velocities(gamma, dom)
    res_state = np.linalg.norm(v + ham.DpH_many(t, gamma.knots, p), axis=1)
    rep.residuals["state_ode"] = float(np.max(res_state))
    rep.checks["state_ode"] = rep.residuals["state_ode"] < tol_ode

    pdot = grid_derivative(p, gamma.dt, mask)
    rhs = ham.DxH_many(t, gamma.knots, p)
    if np.any(mask):
        rhs[mask] -= ex.lam[mask, None] * dom.grad_many(gamma.knots[mask])
    res_adj = np.linalg.norm(pdot - rhs, axis=1)
    keep = junction_clear_mask(mask)
    rep.residuals["adjoint_ode"] = float(np.max(res_adj[keep]))
    rep.checks["adjoint_ode"] = rep.residuals["adjoint_ode"] < tol_ode

    pT_target = prob.Dg(gamma.knots[-1:])[0]
    if mask[-1]:
        pT_target = pT_target + ex.beta_over_delta * dom.grad_many(
            gamma.knots[-1:])[0]
    rep.residuals["transversality"] = float(np.linalg.norm(p[-1] - pT_target))
    rep.checks["transversality"] = rep.residuals["transversality"] < 1e-6

    if K is None:
        K = energy_bound(prob, dom)
    rdot = grid_derivative(ex.r, gamma.dt, mask)
    drift = float(np.sum(np.abs(rdot[keep])) * gamma.dt)
    bound = prob.kappa * (prob.horizon + 4 * prob.mu * K)
    rep.residuals["hamiltonian_drift"] = drift
    rep.checks["hamiltonian_drift"] = drift <= bound + 1e-6 * (
        1.0 + abs(ex.r[0]))

    vmax = float(np.max(np.linalg.norm(v, axis=1)))
    rep.residuals["speed"] = vmax
    rep.checks["speed"] = vmax <= ex.Lstar * (1.0 + 1e-9)

    if ex.params is not None:
        from .model import measure_hamiltonian_constants

        _, C = measure_hamiltonian_constants(ham, dom)
        Dg = prob.Dg(gamma.knots)
        ndg = float(np.max(np.linalg.norm(Dg, axis=1)))
        C1 = (8 * prob.mu + 8 * prob.mu * ndg ** 2 + 2 * C
              + prob.kappa * (prob.horizon + 4 * prob.mu * K))
        d = np.maximum(dom.b_many(gamma.knots), 0.0)
        lhs = np.sum(p * p, axis=1)
        rhs_b = 4 * prob.mu * (d / ex.params.epsilon
                               + C1 / ex.params.delta ** 2)
        gap = float(np.max(lhs - rhs_b))
        rep.residuals["adjoint_bound"] = gap
        rep.checks["adjoint_bound"] = gap <= 1e-9

    return rep


def shoot(ham: Hamiltonian, dom: Domain, x0, p0, T: float | None = None,
          N: int = 1024, feedback_on: bool = True,
          contact_band: float | None = None):
    """RK4 integration of the coupled state/co-state system.

    The boundary feedback term is applied only when the state touches the
    boundary with outward-pointing drift; grazing interior passes are left
    alone.  The activation band scales with dt^2 because arcs that settle
    onto the boundary penetrate by the integrator's local error before the
    contact condition can fire.  Returns the trajectory and co-state samples.
    """
    T = ham.prob.horizon if T is None else T
    x0 = np.asarray(x0, dtype=float)
    p0 = np.asarray(p0, dtype=float)
    n = x0.size
    dt = T / N
    X = np.empty((N + 1, n))
    P = np.empty((N + 1, n))
    X[0], P[0] = x0, p0
    if contact_band is None:
        from .geometry import BOUNDARY_TOL_FACTOR
        contact_band = dom.diameter * max(BOUNDARY_TOL_FACTOR, dt * dt)
    tol = contact_band

    def rhs(t, x, p):
        b = float(dom.b_many(x[None])[0])
        if b >= dom.rho0:
            raise LeftTube(f"state at signed distance {b:g} left the tube")
        d = ham.derivs_many(np.array([t]), x[None], p[None])
        xdot = -d.DpH[0]
        pdot = d.DxH[0]
        active = False
        if feedback_on and b >= -tol:
            Db = dom.grad_many(x[None])[0]
            # the small negative allowance keeps sliding arcs engaged through
            # the integrator's inward jitter without catching real detachment
            if np.dot(Db, xdot) >= -np.linalg.norm(xdot) * dt:
                lam = feedback_lambda(ham, dom, t, x, p)
                pdot = pdot - lam * Db
                active = True
        return xdot, pdot, active

    for i in range(N):
        t = i * dt
        x, p = X[i], P[i]
        k1x, k1p, active = rhs(t, x, p)
        k2x, k2p, _ = rhs(t + dt / 2, x + dt / 2 * k1x, p + dt / 2 * k1p)
        k3x, k3p, _ = rhs(t + dt / 2, x + dt / 2 * k2x, p + dt / 2 * k2p)
        k4x, k4p, _ = rhs(t + dt, x + dt * k3x, p + dt * k3p)
        X[i + 1] = x + dt / 6 * (k1x + 2 * k2x + 2 * k3x + k4x)
        P[i + 1] = p + dt / 6 * (k1p + 2 * k2p + 2 * k3p + k4p)
        if active:
            # contact steps may not drift outward: retract onto the boundary
            b1 = float(dom.b_many(X[i + 1][None])[0])
            if 0.0 < b1 < 0.5 * dom.rho0:
                X[i + 1] = dom.project_many(X[i + 1][None])[0]
    return Trajectory(0.0, T, X), P


def solve_constrained(prob: Problem, dom: Domain, x0, N: int = 256,
                      init: Trajectory | None = None):
    """Penalty pipeline plus first-order bundle in one call."""
    from .penalty import delta_choice, epsilon_schedule

    delta, _ = delta_choice(prob, dom)
    gamma, params = epsilon_schedule(prob, dom, x0, delta, N=N, init=init)
    ex = make_extremal(prob, dom, gamma, params=params)
    return ex
