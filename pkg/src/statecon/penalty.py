"""Penalized transcription of the constrained problem and its schedules.

The hard constraint gamma(t) in the closure of Omega is replaced by the cost
terms (1/eps) d(gamma) along the arc and (1/delta) d(gamma(T)) at the end.
Trajectories are piecewise linear on a uniform grid; the integral is a
trapezoid rule using the per-interval velocity at both interval ends.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy import sparse
from scipy.optimize import minimize as _scipy_minimize
from scipy.sparse.linalg import spsolve

from .geometry import Domain
from .model import Problem

FEASIBILITY_TOL_FACTOR = 1e-6


class MaxIterations(RuntimeError):
    pass


class NonFiniteCost(RuntimeError):
    pass


class ScheduleExhausted(RuntimeError):
    pass


class Runaway(RuntimeError):
    """Iterates left the tube by a full diameter: the penalty is too weak to
    balance the running cost, so the current epsilon is unusable."""


@dataclass
class Trajectory:
    """Uniform-grid sampling of an arc on [t0, t1]; velocities are forward
    differences, so there are N intervals for N+1 knots."""

    t0: float
    t1: float
    knots: np.ndarray  # (N+1, n)

    def __post_init__(self):
        self.knots = np.asarray(self.knots, dtype=float)
        if self.knots.ndim != 2 or self.knots.shape[0] < 9:
            raise ValueError("need at least 9 knots (N >= 8)")
        if not np.all(np.isfinite(self.knots)):
            raise ValueError("knots must be finite")
        if not self.t1 > self.t0:
            raise ValueError("need t1 > t0")

    @property
    def N(self) -> int:
        return self.knots.shape[0] - 1

    @property
    def dim(self) -> int:
        return self.knots.shape[1]

    @property
    def dt(self) -> float:
        return (self.t1 - self.t0) / self.N

    @property
    def times(self) -> np.ndarray:
        return np.linspace(self.t0, self.t1, self.N + 1)

    @property
    def velocities(self) -> np.ndarray:
        return np.diff(self.knots, axis=0) / self.dt

    def at(self, t) -> np.ndarray:
        """Piecewise-linear interpolation, batched over t."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        s = np.clip((t - self.t0) / self.dt, 0.0, self.N)
        i = np.minimum(s.astype(int), self.N - 1)
        w = (s - i)[:, None]
        return (1.0 - w) * self.knots[i] + w * self.knots[i + 1]

    def energy(self) -> float:
        """Discrete kinetic integral of |gamma'|^2 (piecewise constant)."""
        v = self.velocities
        return float(np.sum(np.sum(v * v, axis=1)) * self.dt)

    def refine(self) -> "Trajectory":
        """Double N by inserting segment midpoints."""
        mids = 0.5 * (self.knots[:-1] + self.knots[1:])
        knots = np.empty((2 * self.N + 1, self.dim))
        knots[0::2] = self.knots
        knots[1::2] = mids
        return Trajectory(self.t0, self.t1, knots)

    @staticmethod
    def constant(t0: float, t1: float, x0, N: int) -> "Trajectory":
        x0 = np.asarray(x0, dtype=float)
        return Trajectory(t0, t1, np.tile(x0, (N + 1, 1)))


@dataclass
class PenaltyParams:
    epsilon: float
    delta: float
    rho: float
    N: int

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if not 0 < self.delta <= 1:
            raise ValueError("delta must lie in (0, 1]")
        if not self.rho > 0:
            raise ValueError("rho must be positive")
        if self.N < 8:
            raise ValueError("N must be >= 8")


def _trapezoid_weights(N: int, dt: float) -> np.ndarray:
    w = np.full(N + 1, dt)
    w[0] = w[-1] = dt / 2.0
    return w


def penalized_cost(prob: Problem, dom: Domain, params: PenaltyParams,
                   gamma: Trajectory) -> float:
    return _cost_and_grad(prob, dom, params, gamma, need_grad=False)[0]


def _cost_and_grad(prob: Problem, dom: Domain, params: PenaltyParams,
                   gamma: Trajectory, need_grad: bool = True):
    """Discrete cost and its gradient with respect to knots 1..N (knot 0 is
    the pinned initial state)."""
    X = gamma.knots
    N, n = gamma.N, gamma.dim
    dt = gamma.dt
    tk = gamma.times
    V = gamma.velocities

    tl, tr = tk[:-1], tk[1:]
    xl, xr = X[:-1], X[1:]
    fl = prob.f(tl, xl, V)
    fr = prob.f(tr, xr, V)
    b = dom.b_many(X)
    d = np.maximum(b, 0.0)
    w = _trapezoid_weights(N, dt)

    cost = (0.5 * dt * np.sum(fl + fr)
            + np.dot(w, d) / params.epsilon
            + d[-1] / params.delta
            + float(prob.g(X[-1:]).item()))
    if not need_grad:
        return cost, None

    fvl = prob.fv(tl, xl, V)
    fvr = prob.fv(tr, xr, V)
    fxl = prob.fx(tl, xl, V)
    fxr = prob.fx(tr, xr, V)

    G = np.zeros((N + 1, n))
    # state dependence of the running cost
    G[:-1] += 0.5 * dt * fxl
    G[1:] += 0.5 * dt * fxr
    # velocity dependence: v_i = (x_{i+1} - x_i)/dt couples both interval ends
    fvsum = 0.5 * (fvl + fvr)
    G[1:] += fvsum
    G[:-1] -= fvsum
    # penalty terms (subgradient selection on the boundary band)
    G += (w / params.epsilon)[:, None] * dom.distance_grad_many(X)
    G[-1] += dom.distance_grad_many(X[-1:])[0] / params.delta
    G[-1] += prob.Dg(X[-1:])[0]
    return cost, G


def _stationarity(dom: Domain, params: PenaltyParams, gamma: Trajectory,
                  G: np.ndarray) -> float:
    """Minimal-norm element of the discrete subdifferential.

    G carries the midpoint selection Db/2 at boundary-band knots; those rows
    admit any coefficient in [0, w/eps] on Db, so the best choice is projected
    out before taking the norm.
    """
    X = gamma.knots
    b = dom.b_many(X)
    band = np.abs(b) <= dom.boundary_tol
    R = G.copy()
    if np.any(band):
        w = _trapezoid_weights(gamma.N, gamma.dt)
        cmax = w / params.epsilon
        if band[-1]:
            cmax[-1] += 1.0 / params.delta
        Db = dom.grad_many(X[band])
        half = 0.5 * cmax[band]
        # G used coefficient c/2; admissible shifts are s in [-c/2, +c/2]
        proj = np.einsum("mi,mi->m", R[band], Db)
        shift = np.clip(-proj, -half, half)
        R[band] += shift[:, None] * Db
    R[0] = 0.0  # pinned knot
    return float(np.linalg.norm(R.ravel(), ord=np.inf))


def _snap_to_boundary(dom: Domain, params: PenaltyParams, gamma: Trajectory,
                      G: np.ndarray, band: float) -> Trajectory:
    """Move near-boundary knots onto the boundary when the gradient says the
    minimizer sits on the kink of the distance penalty there; the caller
    accepts the result only if the cost does not increase."""
    X = gamma.knots.copy()
    b = dom.b_many(X)
    cand = np.abs(b) < band
    cand[0] = False  # the initial knot is pinned
    if not np.any(cand):
        return gamma
    Db = dom.grad_many(X[cand])
    slope = np.einsum("mi,mi->m", G[cand], Db)
    w = _trapezoid_weights(gamma.N, gamma.dt) / params.epsilon
    w[-1] += 1.0 / params.delta
    # outside knots already carry the full penalty gradient in G; the kink
    # test asks whether the outward slope changes sign across b = 0
    outside = b[cand] > dom.boundary_tol
    lo = np.where(outside, slope - w[cand], slope)
    hi = np.where(outside, slope, slope + w[cand])
    sel = np.where(cand)[0][(lo < 0.0) & (hi > 0.0)]
    if sel.size == 0:
        return gamma
    X[sel] = dom.project_many(X[sel])
    return Trajectory(gamma.t0, gamma.t1, X)


def _manifold_polish(prob: Problem, dom: Domain, params: PenaltyParams,
                     gamma: Trajectory, max_iter: int):
    """Finish the minimization with boundary-contact knots constrained to the
    boundary through the smooth projection x = z - b(z) Db(z).

    On the contact manifold the distance penalty is constant, so the reduced
    objective is smooth and quasi-Newton convergence is restored.
    """
    active = np.abs(dom.b_many(gamma.knots)) <= dom.boundary_tol
    active[0] = False
    if not np.any(active):
        return gamma
    x0 = gamma.knots[0]
    n = gamma.dim
    act = active[1:]  # over free knots

    def unpack(z):
        Z = z.reshape(gamma.N, n)
        X = Z.copy()
        if np.any(act):
            za = Z[act]
            bz = dom.b_many(za)
            X[act] = za - bz[:, None] * dom.grad_many(za)
        return Z, X

    def objective(z):
        Z, X = unpack(z)
        traj = Trajectory(gamma.t0, gamma.t1, np.vstack([x0, X]))
        c, G = _cost_and_grad(prob, dom, params, traj)
        Gf = G[1:]
        if np.any(act):
            za = Z[act]
            bz = dom.b_many(za)
            Db = dom.grad_many(za)
            D2b = dom.hess_many(za)
            # exact Jacobian of the projection map (symmetric)
            J = (np.eye(n)[None]
                 - Db[:, :, None] * Db[:, None, :]
                 - bz[:, None, None] * D2b)
            Gf = Gf.copy()
            Gf[act] = np.einsum("mij,mj->mi", J, Gf[act])
        return c, Gf.ravel()

    res = _scipy_minimize(objective, gamma.knots[1:].ravel(), jac=True,
                          method="L-BFGS-B",
                          options={"maxiter": max_iter, "maxcor": 20,
                                   "ftol": 1e-18, "gtol": 1e-14})
    _, X = unpack(res.x)
    return Trajectory(gamma.t0, gamma.t1, np.vstack([x0, X]))


def _smooth_grad(prob: Problem, gamma: Trajectory) -> np.ndarray:
    """Gradient of the discrete action (running plus terminal cost, no
    distance penalties) with respect to all knots."""
    X = gamma.knots
    N, n = gamma.N, gamma.dim
    dt = gamma.dt
    tk = gamma.times
    V = gamma.velocities
    tl, tr = tk[:-1], tk[1:]
    xl, xr = X[:-1], X[1:]
    fvsum = 0.5 * (prob.fv(tl, xl, V) + prob.fv(tr, xr, V))
    G = np.zeros((N + 1, n))
    G[:-1] += 0.5 * dt * prob.fx(tl, xl, V)
    G[1:] += 0.5 * dt * prob.fx(tr, xr, V)
    G[1:] += fvsum
    G[:-1] -= fvsum
    G[-1] += prob.Dg(X[-1:])[0]
    return G


def _newton_kkt_polish(prob: Problem, dom: Domain, params: PenaltyParams,
                       gamma: Trajectory, max_newton: int = 8) -> Trajectory:
    """Sharpen the minimizer to machine-precision stationarity.

    For the quadratic family the discrete action has a constant
    block-tridiagonal Hessian and the only curvature left is the boundary
    constraint, so a few Newton steps on the KKT system of

        min action(x)  subject to  b(x_i) = 0 on the contact set

    land on the discrete optimality system exactly. Quasi-Newton output is
    accurate to ~1e-5 in the knots, which the 1/dt^2 differentiation of the
    adjoint recovery amplifies; this polish removes that floor. Knots with a
    multiplier outside the admissible penalty-slope range are released and
    the step recomputed; if the active set cannot be reconciled the input is
    returned unchanged.
    """
    if prob.family != "quadratic":
        return gamma
    X = gamma.knots
    b = dom.b_many(X)
    if np.max(b) > dom.boundary_tol:
        return gamma  # outside knots still carry penalty slope; not at a kink
    N, n = gamma.N, gamma.dim
    dt = gamma.dt
    A = np.asarray(prob.coefficients["A"], dtype=float)
    nf = N * n  # free knots 1..N

    # constant Hessian of the action over the free knots
    diag_scale = sparse.diags(np.r_[np.full(N - 1, 2.0), 1.0])
    off = sparse.eye(N, N, 1)
    H = (sparse.kron(diag_scale, A / dt)
         + sparse.kron(off + off.T, -A / dt)).tocsr()

    act_band = max(dom.boundary_tol, 1e-7 * dom.diameter)
    active = np.flatnonzero(np.abs(b[1:]) <= act_band) + 1
    w = _trapezoid_weights(N, dt)
    mmax = w / params.epsilon
    mmax[-1] += 1.0 / params.delta

    Xp = X.copy()
    for _ in range(4):  # active-set reconciliation loop
        mults = np.zeros(active.size)
        for _newton in range(max_newton):
            traj = Trajectory(gamma.t0, gamma.t1, Xp)
            g = _smooth_grad(prob, traj)[1:].ravel()
            if active.size:
                ba = dom.b_many(Xp[active])
                Db = dom.grad_many(Xp[active])
                D2b = dom.hess_many(Xp[active])
                rows = np.repeat(np.arange(active.size), n)
                cols = ((active[:, None] - 1) * n
                        + np.arange(n)[None, :]).ravel()
                C = sparse.csr_matrix((Db.ravel(), (rows, cols)),
                                      shape=(active.size, nf))
                blocks = cols.reshape(-1, n)
                curv = sparse.csr_matrix(
                    (np.einsum("m,mij->mij", mults, D2b).ravel(),
                     (np.repeat(blocks, n, axis=1).ravel(),
                      np.tile(blocks, (1, n)).ravel())),
                    shape=(nf, nf))
                KKT = sparse.bmat([[H + curv, C.T], [C, None]],
                                  format="csc")
                rhs = np.concatenate([-g, -ba])
            else:
                KKT = sparse.csc_matrix(H)
                rhs = -g
            sol = spsolve(KKT, rhs)
            step = sol[:nf].reshape(N, n)
            if active.size:
                mults = sol[nf:]
            Xp[1:] += step
            if np.max(np.abs(step)) < 1e-13 * (1.0 + dom.diameter):
                break
        bad = (np.flatnonzero((mults < -1e-9)
                              | (mults > mmax[active] + 1e-9))
               if active.size else np.array([], dtype=int))
        if bad.size == 0:
            if active.size:
                Xp[active] = dom.project_many(Xp[active])
            return Trajectory(gamma.t0, gamma.t1, Xp)
        if np.any(mults[bad] > 0):
            return gamma  # penalty slope cannot hold the boundary here
        active = np.delete(active, bad)
        Xp = X.copy()
    return gamma


def minimize_penalized(prob: Problem, dom: Domain, params: PenaltyParams,
                       x0, init: Trajectory | None = None,
                       max_iter: int = 100000) -> Trajectory:
    """Quasi-Newton minimization of the penalized cost over interior knots.

    The objective is smooth away from {b = 0}; near-boundary knots are snapped
    onto the boundary between solver rounds (accepted only when the cost does
    not increase), and stationarity is measured by the minimal-norm
    subgradient, which handles minimizers sitting exactly on the kink.
    """
    x0 = np.asarray(x0, dtype=float)
    if dom.signed_distance(x0) > dom.boundary_tol:
        raise ValueError("initial state must lie in the closed domain")
    gamma = init if init is not None else Trajectory.constant(
        0.0, prob.horizon, x0, params.N)
    if gamma.N != params.N:
        raise ValueError("init grid does not match params.N")
    gamma = Trajectory(gamma.t0, gamma.t1,
                       np.vstack([x0, gamma.knots[1:]]))

    n = gamma.dim
    shape = (params.N, n)

    leash = params.rho + dom.diameter

    def objective(z):
        traj = Trajectory(gamma.t0, gamma.t1,
                          np.vstack([x0, z.reshape(shape)]))
        if np.max(dom.b_many(traj.knots)) > leash:
            raise Runaway("iterates left the tube; epsilon is too large")
        c, G = _cost_and_grad(prob, dom, params, traj)
        if not np.isfinite(c):
            raise NonFiniteCost(f"penalized cost became {c}")
        return c, G[1:].ravel()

    z = gamma.knots[1:].ravel()
    snap_band = 1e-3 * dom.diameter
    used = 0
    # early rounds only need to localize the contact set; the boundary snap
    # and the Newton finish supply the precision
    gtols = (1e-6, 1e-8, 1e-10, 1e-12, 1e-12, 1e-12)
    for _round in range(6):
        res = _scipy_minimize(objective, z, jac=True, method="L-BFGS-B",
                              options={"maxiter": max_iter - used,
                                       "maxcor": 20,
                                       "ftol": 1e-18,
                                       "gtol": gtols[_round]})
        used += max(res.nit, 1)
        z = res.x
        traj = Trajectory(gamma.t0, gamma.t1, np.vstack([x0, z.reshape(shape)]))
        cost, G = _cost_and_grad(prob, dom, params, traj)
        snapped = _snap_to_boundary(dom, params, traj, G, snap_band)
        scost, sG = _cost_and_grad(prob, dom, params, snapped)
        if scost <= cost + 1e-12 * (1.0 + abs(cost)):
            traj, cost, G = snapped, scost, sG
        polished = _manifold_polish(prob, dom, params, traj,
                                    max_iter - used)
        pcost, pG = _cost_and_grad(prob, dom, params, polished)
        if pcost <= cost + 1e-12 * (1.0 + abs(cost)):
            traj, cost, G = polished, pcost, pG
        sharp = _newton_kkt_polish(prob, dom, params, traj)
        scost, sG = _cost_and_grad(prob, dom, params, sharp)
        if scost <= cost + 1e-10 * (1.0 + abs(cost)):
            traj, cost, G = sharp, scost, sG
        z = traj.knots[1:].ravel()
        stat = _stationarity(dom, params, traj, G)
        if stat < 1e-8 * (1.0 + abs(cost)):
            return traj
        if used >= max_iter:
            raise MaxIterations(f"descent budget {max_iter} exhausted "
                                f"(stationarity {stat:.3e})")
        snap_band *= 0.1
    # ran out of polish rounds; accept only if stationarity is reasonable
    if stat < 1e-6 * (1.0 + abs(cost)):
        return traj
    raise MaxIterations(f"stationarity stalled at {stat:.3e}")


def delta_choice(prob: Problem, dom: Domain, samples: int = 2048,
                 rng: np.random.Generator | None = None):
    """Terminal penalty weight delta = min(1 / (2 mu N), 1), where N is the
    largest terminal drift speed |DpH(T, x, Dg(x))| over the tube.

    Returns (delta, measured N).
    """
    from .model import Hamiltonian

    rng = rng or np.random.default_rng(3)
    ham = Hamiltonian(prob)
    x = dom.sample_extended(rng, samples)
    p = prob.Dg(x)
    speed = np.linalg.norm(ham.DpH_many(prob.horizon, x, p), axis=1)
    Nm = float(np.max(speed))
    if Nm == 0.0:
        return 1.0, 0.0
    return min(1.0 / (2.0 * prob.mu * Nm), 1.0), Nm


def feasibility_gap(dom: Domain, gamma: Trajectory) -> float:
    """max_t d(gamma(t)); for convex domains the segment maximum is attained
    at the knots."""
    return float(np.max(np.maximum(dom.b_many(gamma.knots), 0.0)))


def epsilon_schedule(prob: Problem, dom: Domain, x0, delta: float,
                     N: int = 256, rho: float | None = None,
                     max_halvings: int = 40,
                     init: Trajectory | None = None,
                     eps0: float = 1.0):
    """Halve epsilon from eps0 until the penalized minimizer is feasible to
    tau_feas = 1e-6 diam, warm-starting from the previous minimizer.

    The certified trajectory solves the constrained problem; returns it with
    the final parameters.  When refining a converged coarse solution, pass its
    epsilon as eps0 to skip the weak-penalty levels it already went through.
    """
    tau = FEASIBILITY_TOL_FACTOR * dom.diameter
    rho = rho if rho is not None else dom.rho0
    eps = float(eps0)
    gamma = init
    for _ in range(max_halvings + 1):
        params = PenaltyParams(epsilon=eps, delta=delta, rho=rho, N=N)
        try:
            gamma = minimize_penalized(prob, dom, params, x0, init=gamma)
        except (Runaway, MaxIterations):
            # penalty too weak at this epsilon; restart from scratch below it
            gamma = init
            eps *= 0.5
            continue
        if feasibility_gap(dom, gamma) <= tau:
            return gamma, params
        eps *= 0.5
    gap = feasibility_gap(dom, gamma) if gamma is not None else float("inf")
    raise ScheduleExhausted(
        f"feasibility {gap:.3e} > {tau:.3e} after {max_halvings} halvings; "
        "check assumptions or refine the grid")


def energy_certificate(prob: Problem, dom: Domain, params: PenaltyParams,
                       gamma: Trajectory, K: float) -> bool:
    """Discrete coercivity budget: int [ |gamma'|^2/(4 mu) + d/eps ] <= 1.05 K."""
    v = gamma.velocities
    kinetic = np.sum(v * v, axis=1) / (4.0 * prob.mu)
    d = np.maximum(dom.b_many(gamma.knots), 0.0)
    total = (float(np.sum(kinetic)) * gamma.dt
             + float(np.dot(_trapezoid_weights(gamma.N, gamma.dt), d))
             / params.epsilon)
    return total <= 1.05 * K + 1e-12


def holder_gap(prob: Problem, gamma: Trajectory, K: float) -> float:
    """Largest violation of |gamma(t) - gamma(s)| <= sqrt(4 mu K |t - s|)
    over knot pairs (negative means the bound holds with slack)."""
    X = gamma.knots
    t = gamma.times
    diff = np.linalg.norm(X[:, None, :] - X[None, :, :], axis=2)
    bound = np.sqrt(4.0 * prob.mu * K * np.abs(t[:, None] - t[None, :]))
    return float(np.max(diff - bound))
