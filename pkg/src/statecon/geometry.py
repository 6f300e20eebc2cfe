"""Constraint-set geometry: signed distances, their derivatives, projections,
and the distance subdifferential.

Supported shapes (ball, ellipse, smoothed box) are all convex with closed-form
or Newton-cheap signed distances, so the oriented distance ``b`` is smooth on
the whole exterior and inside the tube of radius ``rho0``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


class OutsideTube(ValueError):
    """Derivative information requested where b is not differentiable."""


BOUNDARY_TOL_FACTOR = 1e-9


@dataclass(frozen=True)
class SubdiffDescription:
    """One case of the three-case subdifferential table for the distance.

    ``case`` is one of "interior", "outside", "boundary".  The subdifferential
    is ``{t * direction : t in interval}``.
    """

    case: str
    direction: np.ndarray
    interval: tuple[float, float]


def _as_points(x):
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    return np.atleast_2d(x), single


class Domain:
    """Bounded convex domain with a C^2-in-the-tube oriented distance."""

    dim: int
    rho0: float
    diameter: float

    @property
    def boundary_tol(self) -> float:
        return BOUNDARY_TOL_FACTOR * self.diameter

    # shape-specific, batched over points X of shape (m, n)
    def b_many(self, X: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def grad_many(self, X: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def hess_many(self, X: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def project_many(self, X: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    # scalar API
    def signed_distance(self, x) -> float:
        X, _ = _as_points(x)
        return float(self.b_many(X)[0])

    def distance(self, x) -> float:
        return max(self.signed_distance(x), 0.0)

    def _check_tube(self, b: float) -> None:
        if b <= -self.rho0 or b >= self.rho0:
            raise OutsideTube(f"point at signed distance {b:g} is outside the "
                              f"tube of radius {self.rho0:g}")

    def grad_b(self, x) -> np.ndarray:
        X, _ = _as_points(x)
        b = float(self.b_many(X)[0])
        # b is smooth on the whole exterior for convex shapes; only the deep
        # interior (past the cut locus bound rho0) is off limits.
        if b <= -self.rho0:
            raise OutsideTube(f"b = {b:g} <= -rho0 = {-self.rho0:g}")
        return self.grad_many(X)[0]

    def hess_b(self, x) -> np.ndarray:
        X, _ = _as_points(x)
        b = float(self.b_many(X)[0])
        if b <= -self.rho0:
            raise OutsideTube(f"b = {b:g} <= -rho0 = {-self.rho0:g}")
        return self.hess_many(X)[0]

    def project(self, x) -> np.ndarray:
        X, _ = _as_points(x)
        b = float(self.b_many(X)[0])
        if b <= -self.rho0:
            raise OutsideTube(f"b = {b:g} <= -rho0 = {-self.rho0:g}")
        return self.project_many(X)[0]

    def subdiff_distance(self, x) -> SubdiffDescription:
        X, _ = _as_points(x)
        b = float(self.b_many(X)[0])
        tol = self.boundary_tol
        if b >= self.rho0:
            raise OutsideTube(f"b = {b:g} >= rho0 = {self.rho0:g}")
        if abs(b) <= tol:
            return SubdiffDescription("boundary", self.grad_many(X)[0], (0.0, 1.0))
        if b < 0.0:
            return SubdiffDescription("interior", np.zeros(self.dim), (0.0, 0.0))
        return SubdiffDescription("outside", self.grad_many(X)[0], (1.0, 1.0))

    def distance_grad_many(self, X: np.ndarray) -> np.ndarray:
        """Gradient selection of d = max(b, 0): 0 inside, Db outside, and the
        midpoint Db/2 on the boundary band (fixed tie-break)."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        b = self.b_many(X)
        tol = self.boundary_tol
        out = np.zeros_like(X)
        mask = b > -tol
        if np.any(mask):
            g = self.grad_many(X[mask])
            scale = np.where(b[mask] > tol, 1.0, 0.5)
            out[mask] = g * scale[:, None]
        return out

    def contains(self, x, tol: float = 0.0) -> bool:
        return self.signed_distance(x) <= tol

    def sample_tube(self, rng: np.random.Generator, size: int) -> np.ndarray:
        """Uniform rejection sample of points with |b| < rho0."""
        lo, hi = self.bounding_box()
        lo = lo - self.rho0
        hi = hi + self.rho0
        pts = []
        need = size
        while need > 0:
            cand = rng.uniform(lo, hi, size=(max(4 * need, 64), self.dim))
            b = self.b_many(cand)
            keep = cand[np.abs(b) < self.rho0 * (1.0 - 1e-12)]
            pts.append(keep[:need])
            need -= len(keep[:need])
        return np.vstack(pts)

    def sample_closure(self, rng: np.random.Generator, size: int) -> np.ndarray:
        lo, hi = self.bounding_box()
        pts = []
        need = size
        while need > 0:
            cand = rng.uniform(lo, hi, size=(max(4 * need, 64), self.dim))
            b = self.b_many(cand)
            keep = cand[b <= 0.0]
            pts.append(keep[:need])
            need -= len(keep[:need])
        return np.vstack(pts)

    def sample_extended(self, rng: np.random.Generator, size: int) -> np.ndarray:
        """Sample of the tube-extended set {b < rho0} (closure plus tube)."""
        lo, hi = self.bounding_box()
        lo = lo - self.rho0
        hi = hi + self.rho0
        pts = []
        need = size
        while need > 0:
            cand = rng.uniform(lo, hi, size=(max(4 * need, 64), self.dim))
            b = self.b_many(cand)
            keep = cand[b < self.rho0 * (1.0 - 1e-12)]
            pts.append(keep[:need])
            need -= len(keep[:need])
        return np.vstack(pts)

    def bounding_box(self) -> tuple[np.ndarray, np.ndarray]:
        raise NotImplementedError

    def to_config(self) -> dict:
        raise NotImplementedError

    @staticmethod
    def from_config(cfg: dict) -> "Domain":
        shape = cfg["shape"]
        if shape == "ball":
            return Ball(np.asarray(cfg["center"], dtype=float), float(cfg["radius"]))
        if shape == "ellipse":
            return Ellipse(np.asarray(cfg["center"], dtype=float),
                           np.asarray(cfg["semi_axes"], dtype=float))
        if shape == "smoothed-box":
            return SmoothedBox(np.asarray(cfg["center"], dtype=float),
                               np.asarray(cfg["half_widths"], dtype=float),
                               float(cfg["corner_radius"]))
        raise ValueError(f"unknown shape {shape!r}")


class Ball(Domain):
    def __init__(self, center, radius: float):
        center = np.asarray(center, dtype=float)
        if center.ndim != 1 or center.size not in (1, 2, 3):
            raise ValueError("center must be a vector of dimension 1, 2 or 3")
        if radius <= 0:
            raise ValueError("radius must be positive")
        self.center = center
        self.radius = float(radius)
        self.dim = center.size
        self.rho0 = self.radius
        self.diameter = 2.0 * self.radius

    def b_many(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return np.linalg.norm(X - self.center, axis=1) - self.radius

    def grad_many(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        q = X - self.center
        r = np.linalg.norm(q, axis=1)
        r = np.where(r == 0.0, 1.0, r)
        return q / r[:, None]

    def hess_many(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        q = X - self.center
        r = np.linalg.norm(q, axis=1)
        r = np.where(r == 0.0, 1.0, r)
        n = q / r[:, None]
        eye = np.eye(self.dim)
        return (eye[None, :, :] - n[:, :, None] * n[:, None, :]) / r[:, None, None]

    def project_many(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return self.center + self.radius * self.grad_many(X)

    def bounding_box(self):
        return self.center - self.radius, self.center + self.radius

    def to_config(self):
        return {"shape": "ball", "center": self.center.tolist(),
                "radius": self.radius}


class Ellipse(Domain):
    """Axis-aligned ellipse in the plane; signed distance by Newton/bisection
    projection onto the boundary."""

    def __init__(self, center, semi_axes):
        center = np.asarray(center, dtype=float)
        semi_axes = np.asarray(semi_axes, dtype=float)
        if center.size != 2 or semi_axes.size != 2:
            raise ValueError("ellipse is supported in dimension 2 only")
        if np.any(semi_axes <= 0):
            raise ValueError("semi-axes must be positive")
        self.center = center
        self.axes = semi_axes
        self.dim = 2
        a, b = float(np.max(semi_axes)), float(np.min(semi_axes))
        # smallest radius of curvature of the boundary
        self.rho0 = b * b / a
        self.diameter = 2.0 * a
        self._proj_cache = {}

    def _fold(self, X):
        q = X - self.center
        s = np.where(q >= 0.0, 1.0, -1.0)
        return np.abs(q), s

    def _project_folded(self, Q):
        """Nearest boundary point for folded (nonnegative-quadrant) queries.

        Distance, gradient and Hessian queries for the same batch all reduce
        to this projection, so the most recent batches are memoized."""
        key = Q.tobytes()
        hit = self._proj_cache.get(key)
        if hit is not None:
            return hit
        P = self._project_folded_impl(Q)
        if len(self._proj_cache) > 8:
            self._proj_cache.clear()
        self._proj_cache[key] = P
        return P

    def _project_folded_impl(self, Q):
        a0, a1 = self.axes
        m = Q.shape[0]
        P = np.empty_like(Q)

        tiny = 1e-14 * max(a0, a1)
        on_ax1 = Q[:, 1] <= tiny     # on the x0 axis
        on_ax0 = Q[:, 0] <= tiny     # on the x1 axis
        general = ~(on_ax0 | on_ax1)

        if np.any(general):
            q = Q[general]
            w = q * self.axes            # a_i * q_i
            # root of e(t) = sum (a_i q_i / (t + a_i^2))^2 - 1, decreasing and
            # convex in t, so Newton steps bracketed by bisection converge
            # monotonically once they land on the e >= 0 side
            t_lo = np.full(q.shape[0], -float(min(a0, a1) ** 2))
            t_hi = np.linalg.norm(w, axis=1) + 1e-12
            t = t_hi.copy()
            for _ in range(80):
                r0 = w[:, 0] / (t + a0 * a0)
                r1 = w[:, 1] / (t + a1 * a1)
                e = r0 * r0 + r1 * r1 - 1.0
                hi_side = e < 0.0
                t_hi = np.where(hi_side, t, t_hi)
                t_lo = np.where(hi_side, t_lo, t)
                de = -2.0 * (r0 * r0 / (t + a0 * a0)
                             + r1 * r1 / (t + a1 * a1))
                tn = t - e / np.where(de == 0.0, -1.0, de)
                inside = (tn > t_lo) & (tn < t_hi)
                t = np.where(inside, tn, 0.5 * (t_lo + t_hi))
                if np.max(t_hi - t_lo) < 1e-15 * (a0 * a0 + a1 * a1):
                    break
            P[general, 0] = a0 * a0 * q[:, 0] / (t + a0 * a0)
            P[general, 1] = a1 * a1 * q[:, 1] / (t + a1 * a1)

        if np.any(on_ax1):
            q0 = Q[on_ax1, 0]
            # along the x0 axis the nearest point leaves the vertex when the
            # query is inside the evolute cusp
            cusp = (a0 * a0 - a1 * a1) / a0 if a0 > a1 else 0.0
            inner = q0 < cusp
            x0 = np.where(inner, a0 * a0 * q0 / (a0 * a0 - a1 * a1 + 1e-300), a0)
            x0 = np.minimum(x0, a0)
            x1 = a1 * np.sqrt(np.maximum(1.0 - (x0 / a0) ** 2, 0.0))
            P[on_ax1, 0] = x0
            P[on_ax1, 1] = x1

        if np.any(on_ax0 & ~on_ax1):
            sel = on_ax0 & ~on_ax1
            q1 = Q[sel, 1]
            cusp = (a1 * a1 - a0 * a0) / a1 if a1 > a0 else 0.0
            inner = q1 < cusp
            x1 = np.where(inner, a1 * a1 * q1 / (a1 * a1 - a0 * a0 + 1e-300), a1)
            x1 = np.minimum(x1, a1)
            x0 = a0 * np.sqrt(np.maximum(1.0 - (x1 / a1) ** 2, 0.0))
            P[sel, 0] = x0
            P[sel, 1] = x1

        return P

    def _inside(self, X):
        q = X - self.center
        return (q[:, 0] / self.axes[0]) ** 2 + (q[:, 1] / self.axes[1]) ** 2 < 1.0

    def b_many(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        Q, _ = self._fold(X)
        P = self._project_folded(Q)
        dist = np.linalg.norm(Q - P, axis=1)
        return np.where(self._inside(X), -dist, dist)

    def project_many(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        Q, s = self._fold(X)
        P = self._project_folded(Q)
        return self.center + s * P

    def grad_many(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        P = self.project_many(X)
        # outward normal of the level set at the projection point
        n = (P - self.center) / self.axes ** 2
        norm = np.linalg.norm(n, axis=1)
        return n / norm[:, None]

    def _curvature_at(self, P):
        a0, a1 = self.axes
        c = (P[:, 0] - self.center[0]) / a0
        s = (P[:, 1] - self.center[1]) / a1
        return a0 * a1 / (a0 * a0 * s * s + a1 * a1 * c * c) ** 1.5

    def hess_many(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        P = self.project_many(X)
        b = self.b_many(X)
        n = self.grad_many(X)
        tau = np.stack([-n[:, 1], n[:, 0]], axis=1)
        kappa = self._curvature_at(P)
        coef = kappa / (1.0 + b * kappa)
        return coef[:, None, None] * tau[:, :, None] * tau[:, None, :]

    def bounding_box(self):
        return self.center - self.axes, self.center + self.axes

    def to_config(self):
        return {"shape": "ellipse", "center": self.center.tolist(),
                "semi_axes": self.axes.tolist()}


class SmoothedBox(Domain):
    """Box with rounded corners (Minkowski dilation of an inner box by a ball
    of the corner radius), so the boundary has no corners."""

    def __init__(self, center, half_widths, corner_radius: float):
        center = np.asarray(center, dtype=float)
        half_widths = np.asarray(half_widths, dtype=float)
        if center.size not in (2, 3) or half_widths.size != center.size:
            raise ValueError("smoothed box is supported in dimensions 2 and 3")
        if corner_radius <= 0 or corner_radius > np.min(half_widths):
            raise ValueError("corner radius must lie in (0, min(half_widths)]")
        self.center = center
        self.half = half_widths
        self.r = float(corner_radius)
        self.dim = center.size
        self.rho0 = self.r
        inner = half_widths - self.r
        self.diameter = 2.0 * (float(np.linalg.norm(inner)) + self.r)

    def _q(self, X):
        return np.abs(X - self.center) - (self.half - self.r)

    def b_many(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        q = self._q(X)
        pos = np.maximum(q, 0.0)
        return (np.linalg.norm(pos, axis=1)
                + np.minimum(np.max(q, axis=1), 0.0) - self.r)

    def grad_many(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        q = self._q(X)
        s = np.where(X - self.center >= 0.0, 1.0, -1.0)
        pos = np.maximum(q, 0.0)
        norm = np.linalg.norm(pos, axis=1)
        out = np.zeros_like(X)
        ext = norm > 0.0
        if np.any(ext):
            out[ext] = s[ext] * pos[ext] / norm[ext, None]
        if np.any(~ext):
            idx = np.argmax(q[~ext], axis=1)
            rows = np.where(~ext)[0]
            out[rows, idx] = s[rows, idx]
        return out

    def hess_many(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        q = self._q(X)
        s = np.where(X - self.center >= 0.0, 1.0, -1.0)
        pos = np.maximum(q, 0.0)
        norm = np.linalg.norm(pos, axis=1)
        H = np.zeros((X.shape[0], self.dim, self.dim))
        ext = norm > 0.0
        if np.any(ext):
            # distance to the inner box feature: spherical in the active coords
            u = s[ext] * pos[ext]
            nrm = norm[ext]
            n = u / nrm[:, None]
            active = (pos[ext] > 0.0).astype(float)
            eyeA = active[:, :, None] * active[:, None, :] * np.eye(self.dim)
            H[ext] = (eyeA - n[:, :, None] * n[:, None, :]) / nrm[:, None, None]
        return H

    def project_many(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        b = self.b_many(X)
        g = self.grad_many(X)
        return X - b[:, None] * g

    def bounding_box(self):
        return self.center - self.half, self.center + self.half

    def to_config(self):
        return {"shape": "smoothed-box", "center": self.center.tolist(),
                "half_widths": self.half.tolist(), "corner_radius": self.r}


def fd_grad(dom: Domain, x, h: float = 1e-5) -> np.ndarray:
    """Central finite-difference gradient of the signed distance."""
    x = np.asarray(x, dtype=float)
    g = np.zeros_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (dom.signed_distance(x + e) - dom.signed_distance(x - e)) / (2 * h)
    return g


def fd_hess(dom: Domain, x, h: float = 1e-5) -> np.ndarray:
    """Central finite-difference Hessian of the signed distance."""
    x = np.asarray(x, dtype=float)
    n = x.size
    H = np.zeros((n, n))
    f0 = dom.signed_distance(x)
    for i in range(n):
        ei = np.zeros(n)
        ei[i] = h
        H[i, i] = (dom.signed_distance(x + ei) - 2 * f0
                   + dom.signed_distance(x - ei)) / h ** 2
        for j in range(i + 1, n):
            ej = np.zeros(n)
            ej[j] = h
            H[i, j] = H[j, i] = (
                dom.signed_distance(x + ei + ej) - dom.signed_distance(x + ei - ej)
                - dom.signed_distance(x - ei + ej) + dom.signed_distance(x - ei - ej)
            ) / (4 * h ** 2)
    return H
