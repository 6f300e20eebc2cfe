import numpy as np
import pytest

from statecon import (Ball, LinearPotential, LinearTerminal, PenaltyParams,
                      Trajectory, delta_choice, energy_bound,
                      energy_certificate, epsilon_schedule, feasibility_gap,
                      holder_gap, minimize_penalized, penalized_cost,
                      quadratic_problem)

from conftest import s1_exact


def naive_cost(prob, dom, params, gamma):
    """Independent trapezoid evaluation of the penalized functional."""
    t = gamma.times
    x = gamma.knots
    v = gamma.velocities
    dt = gamma.dt
    total = 0.0
    for i in range(gamma.N):
        vi = v[i][None]
        fl = float(prob.f(np.array([t[i]]), x[i][None], vi)[0])
        fr = float(prob.f(np.array([t[i + 1]]), x[i + 1][None], vi)[0])
        total += 0.5 * dt * (fl + fr)
    for i in range(gamma.N + 1):
        w = dt if 0 < i < gamma.N else dt / 2.0
        d = max(float(dom.b_many(x[i][None])[0]), 0.0)
        total += w * d / params.epsilon
    total += float(prob.g(x[-1][None])[0])
    total += max(float(dom.b_many(x[-1][None])[0]), 0.0) / params.delta
    return total


class TestTrajectory:
    def test_velocities_are_forward_differences(self):
        knots = np.cumsum(np.ones((17, 2)), axis=0)
        gamma = Trajectory(0.0, 2.0, knots)
        assert gamma.dt == pytest.approx(0.125)
        assert np.allclose(gamma.velocities, 8.0)

    def test_refine_preserves_knots(self):
        rng = np.random.default_rng(0)
        gamma = Trajectory(0.0, 1.0, rng.normal(size=(9, 2)))
        fine = gamma.refine()
        assert fine.N == 2 * gamma.N
        assert np.allclose(fine.knots[0::2], gamma.knots)
        assert np.allclose(fine.at(gamma.times), gamma.knots)

    def test_linear_interpolation(self):
        knots = np.linspace(0.0, 1.0, 11)[:, None] * np.array([[2.0, -1.0]])
        gamma = Trajectory(0.0, 1.0, knots)
        q = np.array([0.0, 0.137, 0.5, 0.93, 1.0])
        assert np.allclose(gamma.at(q), q[:, None] * [2.0, -1.0], atol=1e-14)

    def test_energy_of_straight_line(self):
        knots = np.linspace(0.0, 3.0, 25)[:, None] * np.array([[1.0, 0.0]])
        gamma = Trajectory(0.0, 2.0, knots)
        # constant speed 1.5 over horizon 2
        assert gamma.energy() == pytest.approx(4.5, abs=1e-12)

    def test_validation(self):
        with pytest.raises(ValueError):
            Trajectory(0.0, 1.0, np.zeros((5, 2)))
        with pytest.raises(ValueError):
            Trajectory(1.0, 1.0, np.zeros((9, 2)))
        bad = np.zeros((9, 2))
        bad[3, 0] = np.nan
        with pytest.raises(ValueError):
            Trajectory(0.0, 1.0, bad)

    def test_params_validation(self):
        with pytest.raises(ValueError):
            PenaltyParams(epsilon=0.0, delta=0.5, rho=1.0, N=16)
        with pytest.raises(ValueError):
            PenaltyParams(epsilon=0.5, delta=2.0, rho=1.0, N=16)
        with pytest.raises(ValueError):
            PenaltyParams(epsilon=0.5, delta=0.5, rho=1.0, N=4)


class TestPenalizedCost:
    def test_matches_naive_oracle(self, disk, pull_problem):
        rng = np.random.default_rng(11)
        params = PenaltyParams(epsilon=0.25, delta=0.5, rho=disk.rho0, N=16)
        # wandering arc that leaves the disk so both penalties activate
        knots = np.cumsum(rng.normal(scale=0.12, size=(17, 2)), axis=0)
        gamma = Trajectory(0.0, 1.0, knots)
        got = penalized_cost(pull_problem, disk, params, gamma)
        want = naive_cost(pull_problem, disk, params, gamma)
        assert got == pytest.approx(want, rel=1e-12)

    def test_penalties_vanish_inside(self, disk):
        prob = quadratic_problem(2, M=1.0, kappa=0.0)
        params = PenaltyParams(epsilon=1e-6, delta=1e-6, rho=disk.rho0, N=16)
        knots = 0.3 * np.ones((17, 2)) * np.linspace(0, 1, 17)[:, None]
        gamma = Trajectory(0.0, 1.0, knots)
        # tiny epsilon would blow up any violation; cost stays the kinetic
        # integral because the arc never leaves the disk
        assert penalized_cost(prob, disk, params, gamma) == pytest.approx(
            0.5 * gamma.energy(), rel=1e-12)


class TestMinimize:
    def test_interior_problem_linear_solution(self):
        # without an active constraint the minimizer of
        # int 1/2 |v|^2 + <c, x(T)> is the straight line x0 - c t
        dom = Ball([0.0, 0.0], 3.0)
        c = np.array([0.3, -0.2])
        prob = quadratic_problem(2, terminal=LinearTerminal(c), T=1.0,
                                 M=2.0, kappa=0.0)
        params = PenaltyParams(epsilon=0.5, delta=0.5, rho=dom.rho0, N=32)
        gamma = minimize_penalized(prob, dom, params, np.zeros(2))
        exact = -np.outer(gamma.times, c)
        assert np.max(np.abs(gamma.knots - exact)) < 1e-6

    def test_x0_outside_rejected(self, disk, pull_problem):
        params = PenaltyParams(epsilon=0.5, delta=0.5, rho=disk.rho0, N=16)
        with pytest.raises(ValueError):
            minimize_penalized(pull_problem, disk, params, np.array([2.0, 0.0]))

    def test_init_grid_mismatch_rejected(self, disk, pull_problem):
        params = PenaltyParams(epsilon=0.5, delta=0.5, rho=disk.rho0, N=16)
        init = Trajectory.constant(0.0, 1.0, np.zeros(2), 32)
        with pytest.raises(ValueError):
            minimize_penalized(pull_problem, disk, params, np.zeros(2),
                               init=init)


@pytest.fixture(scope="module")
def solved():
    disk = Ball([0.0, 0.0], 1.0)
    prob = quadratic_problem(2, potential=LinearPotential([-3.0, 0.0]),
                             T=1.0, M=9.0, kappa=0.0)
    delta, _ = delta_choice(prob, disk)
    gamma, params = epsilon_schedule(prob, disk, np.zeros(2), delta, N=64)
    return prob, disk, gamma, params


class TestSchedule:
    def test_matches_closed_form(self, solved):
        prob, disk, gamma, params = solved
        # landing time falls between grid points, so the discrete minimizer
        # carries an O(dt^2) junction error
        tol = 10.0 * gamma.dt ** 2
        assert np.max(np.abs(gamma.knots - s1_exact(gamma.times))) < tol

    def test_feasible(self, solved):
        prob, disk, gamma, params = solved
        assert feasibility_gap(disk, gamma) <= 1e-6 * disk.diameter

    def test_rest_phase_sits_on_boundary(self, solved):
        prob, disk, gamma, params = solved
        late = gamma.times > np.sqrt(2.0 / 3.0) + 2 * gamma.dt
        b = disk.b_many(gamma.knots[late])
        assert np.max(np.abs(b)) < 1e-9

    def test_energy_certificate(self, solved):
        prob, disk, gamma, params = solved
        K = energy_bound(prob, disk)
        assert energy_certificate(prob, disk, params, gamma, K)

    def test_holder_bound_holds(self, solved):
        prob, disk, gamma, params = solved
        K = energy_bound(prob, disk)
        assert holder_gap(prob, gamma, K) <= 0.0
        # an understated budget must be flagged as a violation
        assert holder_gap(prob, gamma, 1e-6) > 0.0


class TestDeltaChoice:
    def test_formula_for_linear_terminal(self):
        dom = Ball([0.0, 0.0], 1.0)
        c = np.array([0.6, 0.0])
        prob = quadratic_problem(2, terminal=LinearTerminal(c), T=1.0,
                                 M=1.0, kappa=0.0)
        # terminal drift speed is |A^{-1} c| = 0.6 everywhere, so
        # delta = 1 / (2 mu 0.6)
        delta, speed = delta_choice(prob, dom)
        assert speed == pytest.approx(0.6, rel=1e-12)
        assert delta == pytest.approx(1.0 / 1.2, rel=1e-12)

    def test_zero_terminal_gives_unit_delta(self, disk):
        prob = quadratic_problem(2, M=1.0, kappa=0.0)
        delta, speed = delta_choice(prob, disk)
        assert delta == 1.0
        assert speed == 0.0
