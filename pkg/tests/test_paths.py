import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from stablesde.errors import EmptyChannel, TooFewKnots
from stablesde.paths import (IrregularSeries, build_path, deriv_path,
                             eval_grid, eval_path, fill_missing,
                             natural_cubic_second_derivs, SCHEMES)


def full_series(times, values):
    values = np.asarray(values, dtype=np.float64)
    if values.ndim == 1:
        values = values[:, None]
    return IrregularSeries(np.asarray(times, dtype=np.float64), values,
                           np.ones_like(values, dtype=bool))


def test_series_validation():
    with pytest.raises(ValueError):
        full_series([0.0, 0.0, 1.0], [1.0, 2.0, 3.0])
    with pytest.raises(ValueError):
        IrregularSeries(np.array([0.0, 1.0]), np.zeros((2, 1)),
                        np.ones((3, 1), dtype=bool))


def test_natural_cubic_oracle():
    # [DERIVED] knots (0,0),(1,1),(2,0): interior second derivative -3,
    # X(0.5) = 0.6875, X'(0) = 1.5 (clock channel mirrors t/2)
    s = full_series([0.0, 1.0, 2.0], [0.0, 1.0, 0.0])
    m2 = natural_cubic_second_derivs(s.times, s.values)
    np.testing.assert_allclose(m2[:, 0], [0.0, -3.0, 0.0])
    p = build_path(s, "natural-cubic")
    x = eval_path(p, 0.5)
    assert abs(x[1] - 0.6875) < 1e-12
    d = deriv_path(p, 0.0)
    assert abs(d[1] - 1.5) < 1e-12


def test_natural_cubic_matches_dense_solve():
    # [DERIVED] oracle: solve the full tridiagonal system with numpy.linalg
    rng = np.random.default_rng(3)
    t = np.sort(rng.uniform(0, 1, 9))
    t[0], t[-1] = 0.0, 1.0
    y = rng.standard_normal((9, 2))
    h = np.diff(t)
    n = len(t)
    A = np.zeros((n - 2, n - 2))
    for i in range(n - 2):
        A[i, i] = 2.0 * (h[i] + h[i + 1])
        if i > 0:
            A[i, i - 1] = h[i]
        if i < n - 3:
            A[i, i + 1] = h[i + 1]
    rhs = 6.0 * ((y[2:] - y[1:-1]) / h[1:, None] - (y[1:-1] - y[:-2]) / h[:-1, None])
    dense = np.linalg.solve(A, rhs)
    m2 = natural_cubic_second_derivs(t, y)
    np.testing.assert_allclose(m2[1:-1], dense, atol=1e-10)


@pytest.mark.parametrize("scheme", SCHEMES)
def test_interpolates_knots(scheme):
    rng = np.random.default_rng(1)
    t = np.array([0.0, 0.3, 0.55, 0.8, 1.0])
    y = rng.standard_normal((5, 2))
    p = build_path(full_series(t, y), scheme)
    for k, tk in enumerate(t):
        x = eval_path(p, tk)
        np.testing.assert_allclose(x[1:], y[k], atol=1e-10,
                                   err_msg=f"{scheme} knot {k}")


@pytest.mark.parametrize("scheme", ["linear", "natural-cubic",
                                    "hermite-cubic-backward"])
def test_clock_channel_exactly_linear(scheme):
    t = np.array([0.0, 0.2, 0.7, 1.0])
    y = np.random.default_rng(2).standard_normal((4, 1))
    p = build_path(full_series(t, y), scheme)
    for tq in np.linspace(0, 1, 23):
        assert abs(eval_path(p, tq)[0] - tq) < 1e-12


def test_rectilinear_staircase():
    # between knots: first half-interval advances only the clock,
    # second half-interval advances only the data channels
    t = np.array([0.0, 1.0])
    y = np.array([[0.0], [4.0]])
    p = build_path(full_series(t, y), "rectilinear")
    x_quarter = eval_path(p, 0.25)
    assert abs(x_quarter[0] - 0.5) < 1e-12   # clock moving
    assert abs(x_quarter[1] - 0.0) < 1e-12   # data held
    x_three_quarter = eval_path(p, 0.75)
    assert abs(x_three_quarter[0] - 1.0) < 1e-12  # clock arrived
    assert abs(x_three_quarter[1] - 2.0) < 1e-12  # data moving


def test_hermite_backward_first_slope_zero():
    t = np.array([0.0, 0.5, 1.0])
    y = np.array([[0.0], [1.0], [1.0]])
    p = build_path(full_series(t, y), "hermite-cubic-backward")
    d = deriv_path(p, 0.0)
    assert abs(d[1]) < 1e-12         # data slope pinned at first knot
    assert abs(d[0] - 1.0) < 1e-12   # clock slope 1/(t_n - t_0)


def test_linear_midpoint():
    p = build_path(full_series([0.0, 1.0], [2.0, 4.0]), "linear")
    assert abs(eval_path(p, 0.5)[1] - 3.0) < 1e-12


def test_clamped_extrapolation():
    p = build_path(full_series([0.0, 1.0], [2.0, 4.0]), "natural-cubic")
    np.testing.assert_allclose(eval_path(p, 5.0), eval_path(p, 1.0))
    np.testing.assert_allclose(eval_path(p, -3.0), eval_path(p, 0.0))


def test_fill_missing_interior_and_edges():
    t = np.array([0.0, 1.0, 2.0, 3.0])
    vals = np.array([[np.nan], [2.0], [np.nan], [4.0]])
    mask = np.array([[False], [True], [False], [True]])
    s = IrregularSeries(t, np.nan_to_num(vals), mask)
    filled = fill_missing(s)
    np.testing.assert_allclose(filled[:, 0], [2.0, 2.0, 3.0, 4.0])


def test_empty_channel_and_too_few_knots():
    s = IrregularSeries(np.array([0.0, 1.0]), np.zeros((2, 1)),
                        np.zeros((2, 1), dtype=bool))
    with pytest.raises(EmptyChannel):
        build_path(s, "linear")
    s1 = IrregularSeries(np.array([0.0]), np.zeros((1, 1)),
                         np.ones((1, 1), dtype=bool))
    with pytest.raises(TooFewKnots):
        build_path(s1, "linear")
    with pytest.raises(ValueError):
        build_path(full_series([0, 1], [0, 1]), "quintic")


def test_deriv_is_derivative_of_eval():
    rng = np.random.default_rng(7)
    t = np.sort(rng.uniform(0, 1, 6))
    t[0], t[-1] = 0.0, 1.0
    y = rng.standard_normal((6, 2))
    for scheme in SCHEMES:
        p = build_path(full_series(t, y), scheme)
        for tq in [0.11, 0.43, 0.77]:
            h = 1e-6
            num = (eval_path(p, tq + h) - eval_path(p, tq - h)) / (2 * h)
            np.testing.assert_allclose(deriv_path(p, tq), num, atol=1e-5,
                                       err_msg=scheme)


@settings(max_examples=25, deadline=None)
@given(st.integers(3, 10), st.integers(0, 1000))
def test_natural_cubic_passes_through_any_knots(n, seed):
    rng = np.random.default_rng(seed)
    t = np.sort(rng.uniform(0, 1, n))
    while len(np.unique(t)) < n:
        t = np.sort(rng.uniform(0, 1, n))
    y = rng.standard_normal((n, 1))
    p = build_path(full_series(t, y), "natural-cubic")
    g = eval_grid(p, t)
    np.testing.assert_allclose(g[:, 1], y[:, 0], atol=1e-8)
