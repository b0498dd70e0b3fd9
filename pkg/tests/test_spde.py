import math

import numpy as np
import pytest
import scipy.integrate

from movingframe.rde_solver import SolverConfig, SolverError, euler_solve
from movingframe.rough_path import PathError, brownian_lift, lift_piecewise_linear
from movingframe.semigroup import (
    FlowDomainError,
    flow_from_field,
    flow_from_group,
    identity_group,
    matrix_exp_group,
    spectral_diagonal_group,
)
from movingframe.spde import (
    hjm_simulate,
    hjm_volatility,
    mild_identity_check,
    solve_rpde_flow,
    solve_rpde_group,
)
from movingframe.vector_fields import constant_field, linear_drift, logistic_drift, sine_field


def test_zero_generator_reduces_to_rde():
    f = sine_field([[1.0, 0.5], [-0.4, 0.8]])
    X = brownian_lift(2, 0.5, 2.0**-8, 1)
    mild = solve_rpde_group(identity_group(2), f, X, [0.1, 0.2], SolverConfig(steps=32))
    direct = euler_solve(f, X, [0.1, 0.2], SolverConfig(steps=32))
    np.testing.assert_allclose(mild.Y, direct.states, atol=1e-12)
    np.testing.assert_allclose(mild.U, mild.Y, atol=0)


def test_zero_noise_follows_group_orbit(rng):
    A = rng.standard_normal((3, 3))
    P = matrix_exp_group(A)
    X = brownian_lift(1, 1.0, 1 / 64, 2)
    xi = rng.standard_normal(3)
    sol = solve_rpde_group(P, constant_field(np.zeros((3, 1))), X, xi, SolverConfig(steps=16))
    assert np.all(sol.U == xi)
    for t, y in zip(sol.times, sol.Y):
        np.testing.assert_allclose(y, P.matrix(t) @ xi, atol=1e-12)
    assert sol.frame_defect() <= 1e-12


def test_ou_moments_small_sample():
    a, s, n = -0.5, 1.0, 2000
    X = brownian_lift(1, 1.0, 2.0**-8, 0, replicates=range(n))
    sol = solve_rpde_group(matrix_exp_group([[a]]), constant_field([[s]]), X, [1.0], SolverConfig(steps=32))
    Y = sol.terminal[:, 0]
    mean_t = math.exp(a)
    var_t = s**2 * math.expm1(2 * a) / (2 * a)
    assert abs(Y.mean() - mean_t) <= 3 * math.sqrt(var_t / n)
    assert abs(Y.var(ddof=1) - var_t) <= 0.1 * var_t
    assert sol.frame_defect() <= 1e-12


def test_flow_frame_reduces_to_group_frame():
    A = np.array([[-0.5, 1.0], [-1.0, -0.5]])
    f = sine_field([[0.4, 0.0], [0.1, 0.3]])
    X = brownian_lift(2, 0.5, 2.0**-7, 9)
    cfg = SolverConfig(steps=16)
    g = solve_rpde_group(matrix_exp_group(A), f, X, [0.2, 0.1], cfg)
    fl = solve_rpde_flow(flow_from_group(matrix_exp_group(A)), f, X, [0.2, 0.1], cfg)
    np.testing.assert_allclose(fl.Y, g.Y, atol=1e-12)
    num = solve_rpde_flow(flow_from_field(linear_drift(A)), f, X, [0.2, 0.1], cfg)
    np.testing.assert_allclose(num.Y, g.Y, atol=1e-8)


def test_logistic_flow_with_smooth_noise_matches_ode():
    sig = 0.1
    T = 1.0
    grid = np.linspace(0, T, 257)
    X = lift_piecewise_linear(grid[:, None], grid, 2, 1.0)
    sol = solve_rpde_flow(flow_from_field(logistic_drift(1.0, 1)), sine_field([[sig]]), X, [0.2],
                          SolverConfig(steps=128))
    ref = scipy.integrate.solve_ivp(lambda t, y: y * (1 - y) + sig * np.sin(y), (0, T), [0.2],
                                    rtol=1e-12, atol=1e-14, dense_output=True)
    np.testing.assert_allclose(sol.Y[:, 0], ref.sol(sol.times)[0], atol=1e-5)


def test_flow_interval_is_enforced():
    Fl = flow_from_field(logistic_drift(1.0, 1), interval=(0.0, 0.5))
    X = brownian_lift(1, 1.0, 1 / 16, 0)
    with pytest.raises(FlowDomainError):
        solve_rpde_flow(Fl, sine_field([[0.1]]), X, [0.2])


def test_mild_identity_converges():
    P = matrix_exp_group([[-0.5]])
    f = constant_field([[1.0]])
    devs = []
    for k in range(3):
        mesh = 2.0**-8 / 2**k
        X = brownian_lift(1, 1.0, mesh, 0)
        sol = solve_rpde_group(P, f, X, [1.0], SolverConfig(steps=16 * 2**k))
        devs.append(mild_identity_check(sol, [1.0], mesh, f).deviation)
    assert devs[1] < devs[0] and devs[2] < devs[1]


def test_mild_identity_trivial_cases(rng):
    P = spectral_diagonal_group([-1.0, -2.0])
    f = constant_field(np.zeros((2, 1)))
    X = brownian_lift(1, 1.0, 1 / 64, 4)
    sol = solve_rpde_group(P, f, X, [1.0, -1.0], SolverConfig(steps=16))
    assert mild_identity_check(sol, [0.3, 0.7], 1 / 64, f).deviation <= 1e-10
    g = constant_field(rng.standard_normal((2, 1)))
    sol = solve_rpde_group(P, g, X, [1.0, -1.0], SolverConfig(steps=16))
    assert mild_identity_check(sol, [0.0, 0.0], 1 / 64, g).deviation == 0.0


def test_mild_identity_requires_brownian_provenance():
    P = matrix_exp_group([[-0.5]])
    f = constant_field([[1.0]])
    grid = np.linspace(0, 1, 17)
    X = lift_piecewise_linear(grid[:, None] ** 2, grid, 2, 1.0)
    sol = solve_rpde_group(P, f, X, [1.0])
    with pytest.raises(PathError):
        mild_identity_check(sol, [1.0], 1 / 16, f)
    Xb = brownian_lift(1, 1.0, 1 / 16, 0)
    solb = solve_rpde_group(P, f, Xb, [1.0])
    with pytest.raises(PathError):
        mild_identity_check(solb, [1.0], 1 / 8, f)


def test_scheme_independence_in_frame():
    P = matrix_exp_group([[-0.5, 0.3], [0.0, -1.0]])
    f = sine_field([[0.5, 0.2], [-0.3, 0.4]])
    X = brownian_lift(2, 0.5, 2.0**-8, 3)
    cfg = SolverConfig(steps=32)
    e = solve_rpde_group(P, f, X, [0.4, -0.1], cfg)
    p = solve_rpde_group(P, f, X, [0.4, -0.1], SolverConfig(scheme="picard", steps=32))
    assert np.max(np.abs(e.Y - p.Y)) <= 10 * (cfg.tol + cfg.tol)


MATS = np.linspace(0.0, 2.0, 65)


def test_hjm_zero_volatility_is_transport():
    r0 = 0.02 + 0.005 * MATS + 0.01 * np.sin(MATS)
    X = brownian_lift(1, 1.0, 2.0**-8, 0)
    res = hjm_simulate(hjm_volatility("constant", MATS, 0.0), r0, MATS, X, SolverConfig(steps=32),
                       snapshot_times=[0.5])
    for l, t in enumerate(res.solution.times):
        k = int(round(t * 32))
        np.testing.assert_allclose(res.solution.Y[l, : MATS.size - k], r0[k:], atol=1e-12)
    np.testing.assert_allclose(res.snapshots[0, :-16], r0[16:], atol=1e-12)


def test_hjm_exponential_volatility_moments():
    c, beta, n = 0.1, 1.0, 2000
    r0 = np.full(MATS.size, 0.03)
    X = brownian_lift(1, 1.0, 2.0**-8, 0, replicates=range(n))
    res = hjm_simulate(hjm_volatility("exponential", MATS, c, beta), r0, MATS, X, SolverConfig(steps=32))
    t = res.solution.times
    mean_t = 0.03 + c**2 / (2 * beta**2) * (1 - np.exp(-beta * t)) ** 2
    var_t = c**2 * (1 - np.exp(-2 * beta * t)) / (2 * beta)
    R = res.short_rate
    se = np.sqrt(var_t[-1] / n)
    assert abs(R[:, -1].mean() - mean_t[-1]) <= 3 * se
    assert abs(R[:, -1].var(ddof=1) - var_t[-1]) <= 0.1 * var_t[-1]


def test_hjm_input_contract():
    X = brownian_lift(1, 1.0, 2.0**-8, 0)
    with pytest.raises(SolverError):
        hjm_volatility("cir", MATS, 0.1)
    with pytest.raises(SolverError):
        hjm_simulate(hjm_volatility("constant", MATS, 0.1), np.zeros(3), MATS, X, SolverConfig(steps=32))
    with pytest.raises(SolverError):
        hjm_simulate(hjm_volatility("constant", MATS, 0.1), np.zeros(MATS.size), MATS, X, SolverConfig(steps=32),
                     snapshot_times=[0.3])
