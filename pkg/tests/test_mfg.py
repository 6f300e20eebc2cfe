import numpy as np
import pytest
from scipy.optimize import linear_sum_assignment

from statecon import (Ball, DiscreteMeasure, GaussianKernelCoupling,
                      TrajectoryMeasure, Trajectory, UnbalancedMeasure,
                      best_response, constant_measure, evaluate_flow,
                      fixed_point, kantorovich_d1, lip_flow,
                      monotonicity_check, quadratic_problem)
from statecon.mfg import (_prune, coupled_problem, equilibrium_residual,
                          flow_speed_bound)


RNG = np.random.default_rng(17)


def d1_quantile_oracle(a, b):
    """1-D Wasserstein distance as the L1 gap of the quantile functions,
    computed exactly on the merged cumulative-weight breakpoints."""
    xa, wa = a.points[:, 0], a.weights / a.mass
    xb, wb = b.points[:, 0], b.weights / b.mass
    ia, ib = np.argsort(xa), np.argsort(xb)
    xa, wa = xa[ia], wa[ia]
    xb, wb = xb[ib], wb[ib]
    ca, cb = np.cumsum(wa), np.cumsum(wb)
    cuts = np.unique(np.concatenate([[0.0], ca, cb]))
    cuts[-1] = 1.0
    total = 0.0
    for lo, hi in zip(cuts[:-1], cuts[1:]):
        u = 0.5 * (lo + hi)
        qa = xa[min(np.searchsorted(ca, u), ca.size - 1)]
        qb = xb[min(np.searchsorted(cb, u), cb.size - 1)]
        total += (hi - lo) * abs(qa - qb)
    return total * a.mass


def d1_assignment_oracle(a, b, q=20):
    """Transport cost via integer-weight refinement to equal atoms and an
    exact assignment solve."""
    ra = np.repeat(a.points, np.round(a.weights * q).astype(int), axis=0)
    rb = np.repeat(b.points, np.round(b.weights * q).astype(int), axis=0)
    assert ra.shape == rb.shape
    cost = np.linalg.norm(ra[:, None, :] - rb[None, :, :], axis=2)
    rows, cols = linear_sum_assignment(cost)
    return float(cost[rows, cols].sum()) * a.mass / ra.shape[0]


def random_measure(k, rng, one_d=False):
    pts = rng.uniform(-1.0, 1.0, (k, 2))
    if one_d:
        pts[:, 1] = 0.0
    w = rng.uniform(0.2, 1.0, k)
    return DiscreteMeasure(pts, w / w.sum())


class TestKantorovich:
    def test_matches_quantile_formula_in_1d(self):
        for _ in range(8):
            a = random_measure(RNG.integers(2, 6), RNG, one_d=True)
            b = random_measure(RNG.integers(2, 6), RNG, one_d=True)
            got = kantorovich_d1(a, b)
            assert got == pytest.approx(d1_quantile_oracle(a, b), abs=1e-9)

    def test_matches_assignment_oracle_in_2d(self):
        for _ in range(6):
            wa = RNG.integers(1, 5, 4)
            wb = RNG.integers(1, 5, 4)
            a = DiscreteMeasure(RNG.uniform(-1, 1, (4, 2)), wa / wa.sum())
            b = DiscreteMeasure(RNG.uniform(-1, 1, (4, 2)), wb / wb.sum())
            got = kantorovich_d1(a, b)
            want = d1_assignment_oracle(a, b, q=int(wa.sum() * wb.sum()))
            assert got == pytest.approx(want, abs=1e-9)

    def test_metric_axioms(self):
        ms = [random_measure(3, RNG) for _ in range(3)]
        for m in ms:
            assert kantorovich_d1(m, m) == pytest.approx(0.0, abs=1e-10)
        for a in ms:
            for b in ms:
                assert kantorovich_d1(a, b) == pytest.approx(
                    kantorovich_d1(b, a), abs=1e-9)
        d01 = kantorovich_d1(ms[0], ms[1])
        d12 = kantorovich_d1(ms[1], ms[2])
        d02 = kantorovich_d1(ms[0], ms[2])
        assert d02 <= d01 + d12 + 1e-9

    def test_translation_costs_shift_length(self):
        m = random_measure(5, RNG)
        v = np.array([0.3, -0.4])
        shifted = DiscreteMeasure(m.points + v, m.weights)
        assert kantorovich_d1(m, shifted) == pytest.approx(0.5, abs=1e-9)

    def test_unbalanced_rejected(self):
        a = DiscreteMeasure([[0.0, 0.0]], [1.0])
        b = DiscreteMeasure([[0.0, 0.0]], [0.5])
        with pytest.raises(UnbalancedMeasure):
            kantorovich_d1(a, b)


class TestMeasures:
    def test_validation(self):
        with pytest.raises(ValueError):
            DiscreteMeasure([[0.0, 0.0]], [-0.5])
        with pytest.raises(ValueError):
            DiscreteMeasure([[0.0, 0.0]], [0.5, 0.5])
        tr = Trajectory.constant(0.0, 1.0, np.zeros(2), 16)
        with pytest.raises(ValueError):
            TrajectoryMeasure([tr], np.array([0.7]))

    def test_initial_measure_aggregates_duplicates(self):
        t1 = Trajectory.constant(0.0, 1.0, np.array([0.1, 0.2]), 16)
        t2 = Trajectory.constant(0.0, 1.0, np.array([0.1, 0.2]), 16)
        t3 = Trajectory.constant(0.0, 1.0, np.array([-0.3, 0.0]), 16)
        eta = TrajectoryMeasure([t1, t2, t3], np.array([0.25, 0.35, 0.4]))
        m0 = eta.initial_measure()
        assert m0.points.shape == (2, 2)
        assert m0.weights[0] == pytest.approx(0.6)

    def test_constant_measure_flow_is_static(self):
        pts = RNG.uniform(-0.5, 0.5, (4, 2))
        eta = constant_measure(pts, np.full(4, 0.25), T=1.0, N=16)
        flow = evaluate_flow(eta, np.linspace(0, 1, 5))
        for m in flow.measures:
            assert np.allclose(m.points, pts, atol=1e-14)
        assert lip_flow(flow) == pytest.approx(0.0, abs=1e-12)

    def test_flow_speed_bound_dominates_lip_flow(self):
        # straight-line particles with different velocities
        trajs = [Trajectory(0.0, 1.0,
                            np.linspace(0, 1, 17)[:, None] * v + [0.1, -0.2])
                 for v in (np.array([[0.5, 0.0]]), np.array([[-0.2, 0.4]]))]
        eta = TrajectoryMeasure(trajs, np.array([0.5, 0.5]))
        times = np.linspace(0.0, 1.0, 9)
        bound = flow_speed_bound(eta, times)
        lip = lip_flow(evaluate_flow(eta, times))
        assert bound >= lip - 1e-12
        # the bound is the weighted mean speed
        assert bound == pytest.approx(0.5 * 0.5 + 0.5 * np.hypot(0.2, 0.4),
                                      rel=1e-9)

    def test_prune_merges_identical_trajectories(self):
        t1 = Trajectory.constant(0.0, 1.0, np.array([0.1, 0.0]), 16)
        t2 = Trajectory.constant(0.0, 1.0, np.array([0.1, 0.0]), 16)
        eta = TrajectoryMeasure([t1, t2], np.array([0.4, 0.6]))
        pruned = _prune(eta)
        assert len(pruned.trajectories) == 1
        assert pruned.weights[0] == pytest.approx(1.0)


class TestCoupling:
    def test_value_matches_naive_sum(self):
        c = GaussianKernelCoupling(amp=0.7, scale=0.4)
        m = random_measure(5, RNG)
        X = RNG.uniform(-1, 1, (6, 2))
        want = np.zeros(6)
        for j in range(5):
            d2 = np.sum((X - m.points[j]) ** 2, axis=1)
            want += m.weights[j] * 0.7 * np.exp(-0.5 * d2 / 0.4 ** 2)
        assert np.allclose(c.F(X, m), want, atol=1e-12)

    def test_gradient_matches_finite_differences(self):
        c = GaussianKernelCoupling(amp=0.7, scale=0.4, terminal_amp=0.2)
        m = random_measure(4, RNG)
        x = np.array([[0.3, -0.1]])
        h = 1e-6
        for deriv, func in ((c.DxF, c.F), (c.DxG, c.G)):
            for k in range(2):
                e = np.zeros((1, 2))
                e[0, k] = h
                fd = (func(x + e, m) - func(x - e, m)) / (2 * h)
                assert deriv(x, m)[0, k] == pytest.approx(float(fd[0]),
                                                          abs=1e-6)

    def test_monotone_on_random_pairs(self):
        c = GaussianKernelCoupling(amp=1.0, scale=0.5)
        pairs = [(random_measure(4, RNG), random_measure(3, RNG))
                 for _ in range(10)]
        vals = monotonicity_check(c, pairs)
        assert all(v >= -1e-12 for v in vals)

    def test_config_round_trip(self):
        c = GaussianKernelCoupling(amp=0.5, scale=0.3, terminal_amp=0.1)
        c2 = GaussianKernelCoupling.from_config(c.to_config())
        assert (c2.amp, c2.scale, c2.terminal_amp) == (0.5, 0.3, 0.1)

    def test_validation(self):
        with pytest.raises(ValueError):
            GaussianKernelCoupling(amp=-1.0)
        with pytest.raises(ValueError):
            GaussianKernelCoupling(scale=0.0)


class TestCoupledProblem:
    def test_adds_kernel_to_running_cost(self):
        disk = Ball([0.0, 0.0], 1.0)
        prob = quadratic_problem(2, M=1.0, kappa=0.0)
        c = GaussianKernelCoupling(amp=0.6, scale=0.5)
        pts = np.array([[0.2, 0.1], [-0.3, 0.0]])
        eta = constant_measure(pts, np.array([0.5, 0.5]), T=1.0, N=16)
        single = coupled_problem(prob, disk, c, eta)
        t = np.array([0.3, 0.8])
        x = RNG.uniform(-0.5, 0.5, (2, 2))
        v = RNG.uniform(-1, 1, (2, 2))
        m = DiscreteMeasure(pts, np.array([0.5, 0.5]))
        want = prob.f(t, x, v) + c.F(x, m)
        assert np.allclose(single.f(t, x, v), want, atol=1e-12)

    def test_zero_coupling_recovers_base(self):
        disk = Ball([0.0, 0.0], 1.0)
        prob = quadratic_problem(2, M=1.0, kappa=0.0)
        c = GaussianKernelCoupling(amp=0.0, scale=0.5)
        eta = constant_measure([[0.1, 0.1]], [1.0], T=1.0, N=16)
        single = coupled_problem(prob, disk, c, eta)
        t = np.zeros(3)
        x = RNG.uniform(-0.5, 0.5, (3, 2))
        v = RNG.uniform(-1, 1, (3, 2))
        assert np.allclose(single.f(t, x, v), prob.f(t, x, v), atol=1e-14)
        assert single.kappa == 0.0


class TestFixedPoint:
    def test_zero_coupling_is_immediate_equilibrium(self):
        # with no coupling and no potential every particle rests, so the
        # stay-put measure is the equilibrium
        disk = Ball([0.0, 0.0], 1.0)
        prob = quadratic_problem(2, M=1.0, kappa=0.0)
        c = GaussianKernelCoupling(amp=0.0, scale=0.5)
        pts = np.array([[0.2, 0.0], [-0.1, 0.3]])
        eta0 = constant_measure(pts, np.array([0.5, 0.5]), T=1.0, N=32)
        eta, history = fixed_point(prob, disk, c, eta0, tol=1e-6, N=32,
                                   n_times=5)
        assert history[-1] <= 1e-6
        pos = eta.positions_at(np.linspace(0, 1, 5))
        assert np.max(np.abs(pos - pos[0])) < 1e-8

    def test_crowd_aversion_small_case(self):
        disk = Ball([0.0, 0.0], 1.0)
        prob = quadratic_problem(2, M=2.0, kappa=1.0)
        c = GaussianKernelCoupling(amp=0.4, scale=0.5)
        pts = np.array([[0.05, 0.0], [-0.05, 0.05], [0.0, -0.08]])
        eta0 = constant_measure(pts, np.full(3, 1.0 / 3.0), T=1.0, N=32)
        eta, history = fixed_point(prob, disk, c, eta0, alpha=0.5, tol=1e-3,
                                   N=32, n_times=5)
        assert history[-1] <= 1e-3
        # initial marginal is preserved exactly
        m0 = eta.initial_measure()
        order = np.lexsort(m0.points.T)
        want = np.lexsort(pts.T)
        assert np.allclose(m0.points[order], pts[want], atol=1e-12)
        assert np.allclose(m0.weights, 1.0 / 3.0, atol=1e-12)
        # crowd aversion pushes the particles apart
        spread0 = np.mean(np.linalg.norm(pts - pts.mean(0), axis=1))
        posT = eta.positions_at(np.array([1.0]))[0]
        avgT = np.einsum("kn,k->n", posT, eta.weights)
        spreadT = float(np.linalg.norm(posT - avgT, axis=1) @ eta.weights)
        assert spreadT > spread0

    def test_residual_of_equilibrium_is_zero(self):
        eta = constant_measure([[0.1, 0.0]], [1.0], T=1.0, N=16)
        times = np.linspace(0, 1, 5)
        assert equilibrium_residual(eta, eta, times) == pytest.approx(0.0)

    def test_alpha_validation(self):
        disk = Ball([0.0, 0.0], 1.0)
        prob = quadratic_problem(2, M=1.0, kappa=0.0)
        c = GaussianKernelCoupling(amp=0.1)
        eta0 = constant_measure([[0.0, 0.0]], [1.0], T=1.0, N=16)
        with pytest.raises(ValueError):
            fixed_point(prob, disk, c, eta0, alpha=0.0)


class TestBestResponse:
    def test_free_particles_stay_put(self):
        disk = Ball([0.0, 0.0], 1.0)
        prob = quadratic_problem(2, M=1.0, kappa=0.0)
        c = GaussianKernelCoupling(amp=0.0, scale=0.5)
        eta = constant_measure([[0.3, -0.2]], [1.0], T=1.0, N=32)
        br = best_response(prob, disk, c, eta, N=32)
        assert np.max(np.abs(br.trajectories[0].knots - [0.3, -0.2])) < 1e-8
