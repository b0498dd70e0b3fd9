import numpy as np
import pytest
import scipy.integrate
import scipy.linalg

from movingframe.semigroup import (
    FlowAction,
    flow_from_field,
    flow_from_group,
    identity_group,
    matrix_exp_group,
)
from movingframe.vector_fields import (
    FD_STEP,
    CapabilityError,
    FieldError,
    FieldFamily,
    TransformedField,
    constant_field,
    cumulative_trapezoid_matrix,
    flow_frame_transform,
    hjm_drift,
    hjm_exponential_vol,
    linear_drift,
    linear_field,
    lip_gamma_estimate,
    logistic_drift,
    logistic_field,
    moving_frame_transform,
    sine_field,
)


def catalog_fields(rng):
    return [
        constant_field(rng.standard_normal((3, 2))),
        linear_field(rng.standard_normal((3, 2, 3))),
        sine_field(rng.standard_normal((3, 2))),
        logistic_field(rng.standard_normal((3, 2))),
    ]


def test_lip_constant_field():
    C = np.array([[1.0, 2.0], [0.0, -2.0]])
    est = lip_gamma_estimate(constant_field(C, gamma=2.5), np.random.default_rng(0).normal(size=(30, 2)), 1.0)
    assert est.remainder_ratio == 0.0
    assert est.bound == pytest.approx(3.0)


def test_lip_linear_field_exact_taylor(rng):
    f = linear_field(rng.standard_normal((2, 1, 2)), gamma=2.0)
    est = lip_gamma_estimate(f, rng.standard_normal((40, 2)), 2.0)
    assert est.remainder_ratio < 1e-12


def test_lip_sine_second_derivative_bound():
    f = sine_field([[1.0]], gamma=2.0)
    pts = np.linspace(-4, 4, 801)
    est = lip_gamma_estimate(f, pts, 0.5)
    # level-0 remainder is controlled by sup |sin''| / 2, level 1 by sup |sin''|
    assert est.level_ratios[0] <= 0.5
    assert est.level_ratios[0] > 0.45
    assert est.level_ratios[1] <= 1.0
    assert est.bound == pytest.approx(1.0, abs=1e-4)


def test_lip_input_contract():
    f = constant_field([[1.0]])
    with pytest.raises(FieldError):
        lip_gamma_estimate(f, np.empty((0, 1)), 1.0)
    with pytest.raises(FieldError):
        lip_gamma_estimate(f, [0.0, 1.0], 0.0)


def test_supplied_levels_match_finite_differences(rng):
    h = 1e-4
    for f in catalog_fields(rng):
        y = rng.standard_normal((5, 3)) * 0.7
        d0, d1, d2 = f.derivatives(y, 2)
        for c in range(3):
            e = np.zeros(3)
            e[c] = h
            fd1 = (f.derivatives(y + e, 0)[0] - f.derivatives(y - e, 0)[0]) / (2 * h)
            fd2 = (f.derivatives(y + e, 1)[1] - f.derivatives(y - e, 1)[1]) / (2 * h)
            assert np.max(np.abs(fd1 - d1[..., c])) <= 10 * h**2
            assert np.max(np.abs(fd2 - d2[..., c])) <= 10 * h**2


def test_missing_levels_filled_by_finite_differences():
    f = FieldFamily(1, 1, [lambda y: np.sin(y)[..., None]], gamma=3.0)
    d = f.derivatives(np.array([[0.4]]), 2)
    assert d[1][0, 0, 0, 0] == pytest.approx(np.cos(0.4), abs=1e-8)
    assert d[2][0, 0, 0, 0, 0] == pytest.approx(-np.sin(0.4), abs=1e-4)
    assert f.analytic_levels == 1 and FD_STEP == 1e-5


def test_identity_frame_is_identity(rng):
    f = sine_field(rng.standard_normal((2, 2)))
    g = moving_frame_transform(identity_group(2), f)
    u = rng.standard_normal((4, 2))
    for t in (0.0, 0.7, -1.3):
        np.testing.assert_array_equal(g(t, u), f(u))


def test_scalar_conjugation():
    a, s = 0.8, 1.7
    g = moving_frame_transform(matrix_exp_group([[a]]), constant_field([[s]]))
    for t in (0.0, 0.5, 2.0):
        assert g(t, np.array([0.3]))[0, 0] == pytest.approx(np.exp(-a * t) * s, rel=1e-13)
        assert g.time_derivative(t, np.array([0.3]))[0, 1] == pytest.approx(-a * np.exp(-a * t) * s, rel=1e-12)


def test_linear_field_matrix_oracle(rng):
    A = rng.standard_normal((3, 3))
    B = rng.standard_normal((3, 2, 3))
    g = moving_frame_transform(matrix_exp_group(A), linear_field(B))
    u = rng.standard_normal(3)
    for t in (0.3, -0.6):
        E, Ei = scipy.linalg.expm(t * A), scipy.linalg.expm(-t * A)
        for i in range(2):
            np.testing.assert_allclose(g(t, u)[:, i], Ei @ B[:, i, :] @ E @ u, atol=1e-12)
            np.testing.assert_allclose(g.space_derivative(t, u)[:, i + 1, :], Ei @ B[:, i, :] @ E, atol=1e-12)


def test_transform_at_zero_is_exact(rng):
    A = rng.standard_normal((3, 3))
    for f in catalog_fields(rng):
        g = moving_frame_transform(matrix_exp_group(A), f)
        u = rng.standard_normal((2, 3))
        np.testing.assert_array_equal(g(0.0, u), f(u))


def test_conjugation_composition(rng):
    A = rng.standard_normal((3, 3)) * 0.5
    P = matrix_exp_group(A)
    g = moving_frame_transform(P, sine_field(rng.standard_normal((3, 2))))
    u = rng.standard_normal(3)
    s, r = 0.4, 0.9
    lhs = g(s + r, u)
    rhs = P.matrix(-s) @ g(r, P.apply(s, u))
    np.testing.assert_allclose(lhs, rhs, atol=1e-12)


def test_time_and_space_derivatives_match_differences(rng):
    A = rng.standard_normal((3, 3)) * 0.5
    g = moving_frame_transform(matrix_exp_group(A), sine_field(rng.standard_normal((3, 2))),
                               drift=logistic_drift(0.5, 3))
    u = rng.standard_normal(3)
    h = 1e-5
    fd_t = (g.columns(0.3 + h, u) - g.columns(0.3 - h, u)) / (2 * h)
    np.testing.assert_allclose(g.time_derivative(0.3, u), fd_t, atol=1e-8)
    for c in range(3):
        e = np.zeros(3)
        e[c] = h
        fd = (g.columns(0.3, u + e) - g.columns(0.3, u - e)) / (2 * h)
        np.testing.assert_allclose(g.space_derivative(0.3, u)[..., c], fd, atol=1e-8)


def test_dimension_mismatch():
    with pytest.raises(FieldError):
        moving_frame_transform(identity_group(2), constant_field(np.ones((3, 1))))


def test_flow_transform_reduces_to_group(rng):
    A = rng.standard_normal((2, 2))
    f = sine_field(rng.standard_normal((2, 2)))
    u = rng.standard_normal((3, 2))
    exact = flow_frame_transform(flow_from_group(matrix_exp_group(A)), f)
    numeric = flow_frame_transform(flow_from_field(linear_drift(A)), f)
    ref = moving_frame_transform(matrix_exp_group(A), f)
    for name in ("columns", "space_derivative", "time_derivative"):
        np.testing.assert_allclose(getattr(exact, name)(0.6, u), getattr(ref, name)(0.6, u), atol=1e-12)
        np.testing.assert_allclose(getattr(numeric, name)(0.6, u), getattr(ref, name)(0.6, u), atol=1e-9)


def test_identity_flow_is_identity(rng):
    f = logistic_field(rng.standard_normal((2, 1)))
    g = flow_frame_transform(flow_from_field(constant_field(np.zeros((2, 1)))), f)
    u = rng.standard_normal((3, 2))
    np.testing.assert_allclose(g(0.8, u), f(u), atol=1e-14)


def test_logistic_flow_against_variational_ode():
    Fl = flow_from_field(logistic_drift(1.0, 1))
    g = flow_frame_transform(Fl, constant_field([[1.0]]))
    y0, t = 0.3, 0.9

    def rhs(_t, z):
        x, m = z
        return [x * (1 - x), (1 - 2 * x) * m]

    sol = scipy.integrate.solve_ivp(rhs, (0, t), [y0, 1.0], method="Radau", rtol=1e-12, atol=1e-14)
    M = sol.y[1, -1]
    assert g(t, np.array([y0]))[0, 0] == pytest.approx(1.0 / M, rel=1e-8)
    closed = (1 - y0 + y0 * np.exp(t)) ** 2 / np.exp(t)
    assert g(t, np.array([y0]))[0, 0] == pytest.approx(closed, rel=1e-9)


def test_flow_without_variation_is_rejected():
    f = constant_field([[1.0]])
    no_var = FlowAction(1, lambda t, y, order: (y,), drift=logistic_drift(), max_order=0)
    with pytest.raises(CapabilityError):
        flow_frame_transform(no_var, f)
    no_drift = FlowAction(1, lambda t, y, order: (y, np.ones(y.shape + (1,))), drift=None, max_order=1)
    with pytest.raises(CapabilityError):
        flow_frame_transform(no_drift, f)


def test_hjm_drift_closed_forms():
    x = np.linspace(0, 3, 301)
    zero = hjm_drift(hjm_exponential_vol(x, [0.0], [0.0]), x)
    assert np.all(zero(np.zeros(x.size)) == 0)
    c = 0.02
    ho_lee = hjm_drift(hjm_exponential_vol(x, [c], [0.0]), x)
    np.testing.assert_allclose(ho_lee(np.zeros(x.size))[:, 0], c**2 * x, atol=1e-16)
    beta = 0.7
    vas = hjm_drift(hjm_exponential_vol(x, [c], [beta]), x)
    ref = c**2 * np.exp(-beta * x) * (1 - np.exp(-beta * x)) / beta
    # trapezoid error is O(h^2)
    np.testing.assert_allclose(vas(np.zeros(x.size))[:, 0], ref, atol=c**2 * (x[1] - x[0]) ** 2)


def test_hjm_drift_quadratic_and_product_rule(rng):
    x = np.linspace(0, 1, 11)
    base = sine_field(rng.standard_normal((11, 2)) * 0.1)
    alpha = hjm_drift(base, x)
    y = rng.standard_normal(11)
    scaled = hjm_drift(sine_field(2.0 * np.asarray(base(np.full(11, np.pi / 2)))), x)
    np.testing.assert_allclose(scaled(y), 4.0 * alpha(y), atol=1e-15)
    h = 1e-5
    for c in (0, 5):
        e = np.zeros(11)
        e[c] = h
        fd = (alpha(y + e) - alpha(y - e)) / (2 * h)
        np.testing.assert_allclose(alpha.derivatives(y, 1)[1][..., c], fd, atol=1e-9)
        fd2 = (alpha.derivatives(y + e, 1)[1] - alpha.derivatives(y - e, 1)[1]) / (2 * h)
        np.testing.assert_allclose(alpha.derivatives(y, 2)[2][..., c], fd2, atol=1e-8)
    Q = cumulative_trapezoid_matrix(x)
    assert Q @ np.ones(11) == pytest.approx(x)


def test_extended_field_structure(rng):
    A = rng.standard_normal((2, 2)) * 0.3
    g = moving_frame_transform(matrix_exp_group(A), sine_field(rng.standard_normal((2, 1))))
    F = g.extended()
    assert (F.state_dim, F.noise_dim) == (3, 2)
    y = np.array([[0.4, 0.1, -0.3], [0.9, 0.5, 0.2]])
    vals = F(y)
    np.testing.assert_array_equal(vals[:, 0], [[1.0, 0.0], [1.0, 0.0]])
    h = 1e-5
    for c in range(3):
        e = np.zeros(3)
        e[c] = h
        fd = (F(y + e) - F(y - e)) / (2 * h)
        np.testing.assert_allclose(F.derivatives(y, 1)[1][..., c], fd, atol=1e-8)


def test_from_field_wraps_autonomous(rng):
    f = sine_field(rng.standard_normal((2, 2)))
    g = TransformedField.from_field(f, drift=logistic_drift(1.0, 2))
    u = rng.standard_normal(2)
    np.testing.assert_array_equal(g(1.0, u), f(u))
    assert np.all(g.time_derivative(1.0, u) == 0)
