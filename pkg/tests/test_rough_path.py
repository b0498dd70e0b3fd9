import numpy as np
import pytest

from movingframe.rough_path import (
    Control,
    PathError,
    brownian_lift,
    brownian_samples,
    control_from_path,
    controlled_convergence_check,
    identity_path,
    lift_piecewise_linear,
    p_variation_distance,
    time_extend,
)
from movingframe.tensor_algebra import geometricity_defect, tensor_mul


def random_walk(rng, n, d):
    return np.concatenate([np.zeros((1, d)), np.cumsum(rng.standard_normal((n, d)), axis=0)])


def interpolate_onto(values_coarse, grid_coarse, grid_fine):
    return np.stack([np.interp(grid_fine, grid_coarse, values_coarse[:, c]) for c in range(values_coarse.shape[1])], -1)


def test_constant_path_has_identity_increments():
    grid = np.linspace(0, 1, 6)
    X = lift_piecewise_linear(np.ones((6, 2)) * 3.0, grid, 3)
    for x in X.increments:
        assert np.all(x == 0)


def test_single_segment_level2():
    delta = np.array([0.7, -1.3])
    X = lift_piecewise_linear(np.stack([np.zeros(2), delta]), [0.0, 1.0], 2)
    np.testing.assert_allclose(X.increments[1][0], 0.5 * np.outer(delta, delta), atol=1e-15)


def test_two_segment_area():
    d1, d2 = np.array([1.0, 0.0]), np.array([0.0, 2.0])
    vals = np.stack([np.zeros(2), d1, d1 + d2])
    X = lift_piecewise_linear(vals, [0, 1, 2], 2)
    full = X.increment(0, 2)
    anti = 0.5 * (full.blocks[2] - full.blocks[2].T)
    np.testing.assert_allclose(anti, 0.5 * (np.outer(d1, d2) - np.outer(d2, d1)), atol=1e-15)
    np.testing.assert_allclose(full.blocks[1], d1 + d2)


def test_non_monotone_grid_rejected():
    with pytest.raises(PathError):
        lift_piecewise_linear(np.zeros((3, 1)), [0.0, 0.5, 0.4])


def test_chen_identity_on_all_triples(rng):
    vals = random_walk(rng, 12, 2) * 0.3
    X = lift_piecewise_linear(vals, np.linspace(0, 1, 13), 3)
    pairs = X.pair_increments()
    worst = 0.0
    for s in range(13):
        for t in range(s, 13):
            for u in range(t, 13):
                left = tensor_mul(X.increment(s, t), X.increment(t, u))
                direct = [pairs[j][s, u] for j in range(3)]
                worst = max(worst, max(np.max(np.abs(left.blocks[j + 1] - direct[j])) for j in range(3)))
    assert worst <= 1e-12


def test_lift_is_geometric(rng):
    X = lift_piecewise_linear(random_walk(rng, 20, 3), np.linspace(0, 2, 21), 2)
    for s in range(0, 20, 3):
        for t in range(s + 1, 21, 4):
            assert geometricity_defect(X.increment(s, t)) <= 1e-12


def test_coarsen_matches_chen_products(rng):
    X = lift_piecewise_linear(random_walk(rng, 16, 2), np.linspace(0, 1, 17), 3)
    C = X.coarsen([0, 4, 8, 12, 16])
    for k in range(4):
        ref = X.increment_levels(4 * k, 4 * k + 4)
        for j in range(3):
            np.testing.assert_allclose(C.increments[j][k], ref[j], atol=1e-13)
    irregular = X.coarsen([0, 3, 10, 16])
    np.testing.assert_allclose(irregular.increments[1][1], X.increment_levels(3, 10)[1], atol=1e-13)


def test_brownian_determinism_and_nesting():
    a = brownian_lift(2, 1.0, 2**-6, seed=5)
    b = brownian_lift(2, 1.0, 2**-6, seed=5)
    for x, y in zip(a.increments, b.increments):
        assert np.array_equal(x, y)
    g_coarse, v_coarse = brownian_samples(2, 1.0, 2**-4, seed=5)
    g_fine, v_fine = brownian_samples(2, 1.0, 2**-7, seed=5)
    np.testing.assert_array_equal(v_fine[::8], v_coarse)


def test_brownian_replicates_are_chunk_invariant():
    _, whole = brownian_samples(1, 1.0, 2**-4, 3, range(10))
    _, part = brownian_samples(1, 1.0, 2**-4, 3, range(6, 10))
    np.testing.assert_array_equal(whole[6:], part)


def test_brownian_input_contract():
    with pytest.raises(PathError):
        brownian_lift(0, 1.0, 0.1, 0)
    with pytest.raises(PathError):
        brownian_lift(1, -1.0, 0.1, 0)


def test_brownian_law_moderate_sample():
    X = brownian_lift(2, 1.0, 2**-5, seed=1, replicates=range(4000), out_steps=1)
    x1 = X.increments[0][:, 0, :]
    assert np.all(np.abs(x1.mean(axis=0)) < 4 / np.sqrt(4000))
    assert np.all(np.abs(x1.var(axis=0, ddof=1) - 1.0) < 0.08)
    x2 = X.increments[1][:, 0]
    area = 0.5 * (x2[:, 0, 1] - x2[:, 1, 0])
    assert abs(area.mean()) < 3 * area.std(ddof=1) / np.sqrt(area.size)


def test_pvar_self_distance_zero(rng):
    X = lift_piecewise_linear(random_walk(rng, 8, 2), np.linspace(0, 1, 9), 2, p=2.5)
    for m in ("dyadic", "dyadic+greedy", "dp"):
        assert p_variation_distance(X, X, 2.5, m) == 0.0


def test_pvar_single_segment():
    a = np.array([3.0, 4.0])
    X = lift_piecewise_linear(np.stack([np.zeros(2), a]), [0.0, 1.0], 1)
    assert p_variation_distance(X, identity_path(X), 1.0) == pytest.approx(5.0)


def test_pvar_estimators_ordered_and_symmetric(rng):
    grid = np.linspace(0, 1, 33)
    X = lift_piecewise_linear(random_walk(rng, 32, 2), grid, 2, p=2.5)
    Y = lift_piecewise_linear(random_walk(rng, 32, 2), grid, 2, p=2.5)
    vals = [p_variation_distance(X, Y, 2.5, m) for m in ("dyadic", "dyadic+greedy", "dp")]
    assert vals[0] <= vals[1] + 1e-12 <= vals[2] + 2e-12
    assert p_variation_distance(Y, X, 2.5, "dp") == pytest.approx(vals[2], rel=1e-12)


def test_pvar_grid_mismatch():
    X = lift_piecewise_linear(np.zeros((3, 1)), [0, 1, 2])
    Y = lift_piecewise_linear(np.zeros((3, 1)), [0, 1, 3])
    with pytest.raises(PathError):
        p_variation_distance(X, Y, 1.0)


def test_control_constant_path_zero():
    X = lift_piecewise_linear(np.ones((5, 2)), np.linspace(0, 1, 5), 2)
    assert np.all(control_from_path(X, 2.0).values == 0)


def test_control_superadditive(rng):
    X = lift_piecewise_linear(random_walk(rng, 24, 2), np.linspace(0, 1, 25), 2, p=2.2)
    w = control_from_path(X, 2.2)
    assert w.superadditivity_defect() <= 1e-12 * np.max(w.values)
    assert np.all(np.diag(w.values) == 0)


def test_control_straight_line_proportional():
    grid = np.linspace(0, 1, 11)
    X = lift_piecewise_linear(np.outer(grid, [2.0, 1.0]), grid, 1)
    w = control_from_path(X, 1.0)
    for s in range(11):
        for t in range(s, 11):
            assert w(s, t) == pytest.approx(np.sqrt(5.0) * (grid[t] - grid[s]), abs=1e-13)
    assert w.at(0.2, 0.7) == pytest.approx(np.sqrt(5.0) * 0.5)


def test_certificate_identical_sequence():
    rng = np.random.default_rng(0)
    X = lift_piecewise_linear(random_walk(rng, 8, 2), np.linspace(0, 1, 9), 2, p=2.5)
    cert = controlled_convergence_check([X, X], X, control_from_path(X, 2.5), 2.5)
    assert cert.passed and np.all(cert.rates == 0)


def test_certificate_dyadic_interpolations_decrease():
    grid = np.linspace(0, 1, 65)
    path = lambda t: np.stack([np.sin(2 * np.pi * t), np.cos(3 * t)], -1)
    X = lift_piecewise_linear(path(grid), grid, 2, p=2.0)
    seq = []
    for k in (4, 8, 16, 32):
        g = np.linspace(0, 1, k + 1)
        seq.append(lift_piecewise_linear(interpolate_onto(path(g), g, grid), grid, 2, p=2.0))
    cert = controlled_convergence_check(seq, X, control_from_path(X, 2.0), 2.0)
    assert cert.passed
    assert cert.nonincreasing and np.all(np.diff(cert.rates) < 0)
    assert np.all(np.diff(cert.dp_estimates) < 0)
    assert np.all(np.diff(cert.envelope) <= 0)


def test_certificate_envelope_is_nonincreasing_bound():
    grid = np.linspace(0, 1, 33)
    path = lambda t: np.stack([np.sin(2 * np.pi * t), t], -1)
    X = lift_piecewise_linear(path(grid), grid, 2, p=2.0)
    seq = []
    for k in (2, 4, 8):
        g = np.linspace(0, 1, k + 1)
        seq.append(lift_piecewise_linear(interpolate_onto(path(g), g, grid), grid, 2, p=2.0))
    cert = controlled_convergence_check(seq, X, control_from_path(X, 2.0), 2.0)
    assert np.all(np.diff(cert.envelope) <= 0)
    assert np.all(cert.envelope >= cert.rates)


def test_certificate_v_shape_by_hand():
    grid = np.array([0.0, 1.0, 2.0])
    X = lift_piecewise_linear(np.array([[0.0], [1.0], [0.0]]), grid, 1)
    X0 = lift_piecewise_linear(np.zeros((3, 1)), grid, 1)
    w = control_from_path(X, 1.0)
    np.testing.assert_allclose(w.values[[0, 1, 0], [1, 2, 2]], [1.0, 1.0, 2.0])
    cert = controlled_convergence_check([X0], X, w, 1.0)
    assert cert.omega_scale == 1.0
    assert cert.rates[0] == pytest.approx(1.0)


def test_certificate_flags_zero_control():
    grid = np.linspace(0, 1, 3)
    X = lift_piecewise_linear(np.zeros((3, 1)), grid, 1)
    Y = lift_piecewise_linear(np.array([[0.0], [1.0], [0.0]]), grid, 1)
    cert = controlled_convergence_check([Y], X, control_from_path(X, 1.0), 1.0)
    assert not cert.passed and cert.failures


def test_time_extend_projection_and_segment(rng):
    X = lift_piecewise_linear(random_walk(rng, 10, 2), np.linspace(0, 1, 11), 2, p=2.5)
    Xt = time_extend(X)
    P = Xt.project([1, 2])
    for a, b in zip(P.increments, X.increments):
        assert np.array_equal(a, b)
    a = np.array([0.5, -2.0])
    S = time_extend(lift_piecewise_linear(np.stack([np.zeros(2), a]), [0.0, 1.0], 2))
    lvl2 = S.increments[1][0]
    assert lvl2[0, 0] == pytest.approx(0.5)
    np.testing.assert_allclose(lvl2[0, 1:], 0.5 * a)
    np.testing.assert_allclose(lvl2[1:, 0], 0.5 * a)


def test_time_extend_chen_and_time_coordinate(rng):
    X = lift_piecewise_linear(random_walk(rng, 9, 1), np.sort(rng.uniform(0, 1, 10)), 2)
    Xt = time_extend(X)
    pairs = Xt.pair_increments()
    for s in range(10):
        for t in range(s, 10):
            assert pairs[0][s, t, 0] == pytest.approx(X.grid[t] - X.grid[s], abs=1e-14)
            for u in range(t, 10):
                lhs = tensor_mul(Xt.increment(s, t), Xt.increment(t, u))
                np.testing.assert_allclose(lhs.blocks[2], pairs[1][s, u], atol=1e-12)
    with pytest.raises(PathError):
        time_extend(lift_piecewise_linear(np.zeros((3, 1)), [0, 1, 2], 3))


def test_control_tabulated_only_on_grid():
    w = Control(np.array([0.0, 1.0]), np.zeros((2, 2)), 1.0)
    with pytest.raises(PathError):
        w.at(0.0, 0.5)
