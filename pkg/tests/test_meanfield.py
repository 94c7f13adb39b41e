import numpy as np
import pytest

from mfsb.chance import ChanceSpec, HalfSpace, Obstacle, Route
from mfsb.dynamics import LTVSystem, TimeGrid
from mfsb.errors import ConfigurationError, InfeasibleProblemError
from mfsb.gaussmix import Gaussian, GaussianMixture
from mfsb.meanfield import (Scenario, alternate_optimize, problem1_system,
                            problem2_system, solve_constrained_fixed_plan,
                            solve_scenario, solve_unconstrained)
from mfsb.mixture import flow_mean
from mfsb.ocs import OcsProblem, solve_ocs
from mfsb.transport import independent_plan, solve_plan


def test_problem1_system_dimensions():
    sys = problem1_system()
    assert (sys.n, sys.m, sys.q) == (2, 2, 2)
    np.testing.assert_array_equal(sys.A[0], np.eye(2))
    np.testing.assert_array_equal(sys.Abar[0], np.eye(2))


def test_problem2_system_dimensions():
    sys = problem2_system()
    assert (sys.n, sys.m, sys.q) == (4, 2, 4)
    np.testing.assert_array_equal(sys.Abar[0][2:, :2], -np.eye(2))
    np.testing.assert_array_equal(sys.A[0][2:, :2], np.eye(2))
    np.testing.assert_array_equal(sys.B[0][2:, :], np.eye(2))


@pytest.fixture(scope="module")
def mild_meanfield_scenario():
    grid = TimeGrid.uniform(51)
    sys = LTVSystem.constant(A=np.zeros((2, 2)), B=np.eye(2),
                             D=0.4 * np.eye(2), grid=grid, Abar=0.4 * np.eye(2))
    rho0 = GaussianMixture([0.5, 0.5], (
        Gaussian([-1.0, -0.8], 0.09 * np.eye(2)),
        Gaussian([-1.0, 0.8], 0.09 * np.eye(2))))
    rho1 = GaussianMixture([0.4, 0.6], (
        Gaussian([1.0, -0.7], 0.09 * np.eye(2)),
        Gaussian([1.1, 0.9], 0.09 * np.eye(2))))
    return Scenario(sys=sys, rho0=rho0, rho1=rho1, name="mild")


@pytest.fixture(scope="module")
def mild_result(mild_meanfield_scenario):
    return solve_unconstrained(mild_meanfield_scenario)


def test_unconstrained_boundary_means(mild_meanfield_scenario, mild_result):
    scn, res = mild_meanfield_scenario, mild_result
    np.testing.assert_allclose(res.mean_trajectory[0], scn.rho0.mean(), atol=1e-6)
    np.testing.assert_allclose(res.mean_trajectory[-1], scn.rho1.mean(), atol=1e-6)


def test_unconstrained_prop1(mild_result):
    assert mild_result.prop1_residual < 1e-6


def test_unconstrained_flow_mean_tracks_xbar(mild_meanfield_scenario, mild_result):
    T = mild_meanfield_scenario.grid.count
    for k in range(0, T, 5):
        np.testing.assert_allclose(flow_mean(mild_result.solution, k),
                                   mild_result.mean_trajectory[k], atol=1e-6)


def test_prop1_for_arbitrary_feasible_plans(mild_meanfield_scenario, mild_result):
    """The zero-mean reassembly residual vanishes for random feasible plans,
    not just the transport optimum."""
    scn, res = mild_meanfield_scenario, mild_result
    rng = np.random.default_rng(0)
    # recover the zero-mean policies by un-shifting
    xbar, ubar = res.mean_trajectory, res.mean_control
    for _ in range(3):
        lam = rng.random((2, 2)) + 0.1
        for _ in range(200):
            lam *= (scn.rho0.weights / lam.sum(axis=1))[:, None]
            lam *= (scn.rho1.weights / lam.sum(axis=0))[None, :]
        mu_sum = sum(lam[i, j] * (res.solution.policies[i, j].mu - xbar)
                     for i in range(2) for j in range(2))
        v_sum = sum(lam[i, j] * (res.solution.policies[i, j].v - ubar)
                    for i in range(2) for j in range(2))
        assert max(np.abs(mu_sum).max(), np.abs(v_sum).max()) < 1e-6


def test_problem1_fixture_boundary_means():
    from mfsb.cli import bundled_scenario_path
    from mfsb.scenario_io import parse_scenario
    scn = parse_scenario(bundled_scenario_path("problem1_like"))
    res = solve_unconstrained(scn)
    np.testing.assert_allclose(res.mean_trajectory[0], scn.rho0.mean(),
                               atol=1e-6)
    np.testing.assert_allclose(res.mean_trajectory[-1], scn.rho1.mean(),
                               atol=1e-6)


def test_zero_meanfield_reduces_to_plain_bridge():
    grid = TimeGrid.uniform(31)
    sys = LTVSystem.constant(A=np.zeros((1, 1)), B=np.eye(1),
                             D=0.2 * np.eye(1), grid=grid)
    rho0 = GaussianMixture([1.0], (Gaussian([-1.0], [[0.3]]),))
    rho1 = GaussianMixture([1.0], (Gaussian([1.0], [[0.3]]),))
    res = solve_unconstrained(Scenario(sys=sys, rho0=rho0, rho1=rho1))
    direct = solve_ocs(OcsProblem(sys=sys, initial=rho0.components[0],
                                  terminal=rho1.components[0]))
    assert res.solution.bound == pytest.approx(direct.cost, rel=1e-5)
    # xbar equals the mean steering of the mixture means under (A, B)
    np.testing.assert_allclose(res.mean_trajectory[:, 0],
                               np.linspace(-1, 1, 31), atol=1e-6)


def test_unconstrained_rejects_obstacles():
    grid = TimeGrid.uniform(11)
    sys = LTVSystem.constant(A=np.zeros((2, 2)), B=np.eye(2), D=np.eye(2),
                             grid=grid)
    mix = GaussianMixture([1.0], (Gaussian([0.0, 0.0], np.eye(2)),))
    obs = Obstacle((HalfSpace([1.0, 0.0], -5.0),))
    scn = Scenario(sys=sys, rho0=mix, rho1=mix, obstacles=(obs,),
                   routes=(Route("r", (0,)),),
                   chance=ChanceSpec(total_budget=0.01))
    with pytest.raises(ConfigurationError):
        solve_unconstrained(scn)


def test_scenario_requires_budget_with_obstacles():
    grid = TimeGrid.uniform(11)
    sys = LTVSystem.constant(A=np.zeros((2, 2)), B=np.eye(2), D=np.eye(2),
                             grid=grid)
    mix = GaussianMixture([1.0], (Gaussian([0.0, 0.0], np.eye(2)),))
    with pytest.raises(ConfigurationError):
        Scenario(sys=sys, rho0=mix, rho1=mix,
                 obstacles=(Obstacle((HalfSpace([1.0, 0.0], -5.0),)),),
                 routes=(Route("r", (0,)),))


def test_coupled_solve_degenerate_singleton_matches_ocs():
    grid = TimeGrid.uniform(31)
    sys = LTVSystem.constant(A=np.zeros((2, 2)), B=np.eye(2),
                             D=0.3 * np.eye(2), grid=grid)
    g0 = Gaussian([0.0, 0.0], 0.2 * np.eye(2))
    g1 = Gaussian([1.0, 0.0], 0.2 * np.eye(2))
    scn = Scenario(sys=sys, rho0=GaussianMixture([1.0], (g0,)),
                   rho1=GaussianMixture([1.0], (g1,)))
    plan = solve_plan(np.array([[1.0]]), [1.0], [1.0])
    coupled = solve_constrained_fixed_plan(scn, plan)
    direct = solve_ocs(OcsProblem(sys=sys, initial=g0, terminal=g1))
    assert coupled.objective == pytest.approx(direct.cost, abs=1e-5)


def test_coupled_solve_xbar_is_plan_weighted_mean(mild_meanfield_scenario):
    scn = mild_meanfield_scenario
    costs = np.ones((2, 2))
    plan = independent_plan(costs, scn.rho0.weights, scn.rho1.weights)
    coupled = solve_constrained_fixed_plan(scn, plan)
    recomputed = sum(plan.lam[i, j] * coupled.policies[i, j].mu
                     for i in range(2) for j in range(2))
    np.testing.assert_allclose(coupled.xbar, recomputed, atol=1e-6)


def test_alternation_without_obstacles_matches_decomposition(
        mild_meanfield_scenario, mild_result):
    res2 = alternate_optimize(mild_meanfield_scenario)
    assert res2.status == "converged"
    diff = abs(res2.solution.bound - mild_result.solution.bound)
    assert diff / mild_result.solution.bound < 5e-3


def test_solve_scenario_dispatch(mild_meanfield_scenario):
    res = solve_scenario(mild_meanfield_scenario)
    assert res.mean_control is not None  # decomposition path was used


@pytest.fixture(scope="module")
def narrow_wall_scenario():
    T = 31
    sys = problem2_system(TimeGrid.uniform(T))
    cov0 = np.diag([0.09, 0.09, 0.04, 0.04])
    rho0 = GaussianMixture([0.5, 0.5], (
        Gaussian([-3, 0.8, 0, 0], cov0), Gaussian([-3, -0.8, 0, 0], cov0)))
    rho1 = GaussianMixture([0.5, 0.5], (
        Gaussian([3, 0.8, 0, 0], cov0), Gaussian([3, -0.8, 0, 0], cov0)))
    win = (T // 3, 2 * T // 3)
    def face(a, beta):
        return HalfSpace(np.array(a, float), beta, win)
    upper = Obstacle((face([1, 0, 0, 0], -0.3), face([-1, 0, 0, 0], -0.3),
                      face([0, 1, 0, 0], 1.0), face([0, -1, 0, 0], -2.2)))
    lower = Obstacle((face([1, 0, 0, 0], -0.3), face([-1, 0, 0, 0], -0.3),
                      face([0, -1, 0, 0], 1.0), face([0, 1, 0, 0], -2.2)))
    return Scenario(
        sys=sys, rho0=rho0, rho1=rho1, obstacles=(upper, lower),
        routes=(Route("gap", (2, 2)), Route("around_top", (3, 2))),
        chance=ChanceSpec(total_budget=0.009, per_face_budget=0.003, window=win),
        name="wall31")


def test_alternation_constrained_converges(narrow_wall_scenario):
    res = alternate_optimize(narrow_wall_scenario)
    assert res.status == "converged"
    assert len(res.iterations) <= 22
    # linearized rows hold at the returned trajectories
    for idx, rows in res.chance_rows.items():
        pol = res.solution.policies[idx]
        for k, lc in rows:
            assert lc.value(pol.mu[k], pol.Sigma[k]) <= 1e-6


def test_constrained_costs_at_least_unconstrained(narrow_wall_scenario):
    scn = narrow_wall_scenario
    free = solve_unconstrained(Scenario(sys=scn.sys, rho0=scn.rho0,
                                        rho1=scn.rho1, name="free"))
    tight = alternate_optimize(scn)
    assert tight.solution.bound >= free.solution.bound - 1e-6


def test_violation_consistency_with_flow_prediction(narrow_wall_scenario):
    """Per-knot empirical violation is bounded by the plan-weighted Gaussian
    tail beyond each enforced face, within 3 binomial standard errors."""
    from mfsb.sim import predicted_violation, simulate_swarm
    scn = narrow_wall_scenario
    res = alternate_optimize(scn)
    N = 4000
    run = simulate_swarm(scn, res.solution, N, seed=13)
    pred = predicted_violation(res.solution, scn)
    for k in range(scn.grid.count):
        inside = np.zeros(N, dtype=bool)
        for obs in scn.obstacles:
            inside |= obs.contains(run.trajectories[k])
        emp = float(np.mean(inside))
        se = np.sqrt(max(pred[k] * (1 - pred[k]), 1e-12) / N)
        assert emp <= pred[k] + 3 * se


def test_impossible_budget_is_infeasible(narrow_wall_scenario):
    scn = narrow_wall_scenario
    # pin the state into an empty band: y <= -1 and y >= +1 simultaneously
    win = scn.chance.window
    def face(a, beta):
        return HalfSpace(np.array(a, float), beta, win)
    upper = Obstacle((face([0, 1, 0, 0], -1.0),))
    lower = Obstacle((face([0, -1, 0, 0], -1.0),))
    bad = Scenario(sys=scn.sys, rho0=scn.rho0, rho1=scn.rho1,
                   obstacles=(upper, lower),
                   routes=(Route("only", (0, 0)),),
                   chance=scn.chance, name="impossible")
    with pytest.raises(InfeasibleProblemError):
        alternate_optimize(bad)
