import io

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from roughflow.pathspace import StoppedPath
from roughflow.roughpath import (
    FBM_MAX_POINTS,
    GridRoughPath,
    check_weak_geometric,
    dilate,
    fbm_covariance,
    holder_norm,
    lift_piecewise_linear,
    read_rough_path,
    sample_brownian,
    sample_fbm,
    write_rough_path,
)
from roughflow.tensor_lie import LyndonBasis, TensorElement, TensorShape, lyndon_coords, tensor_exp


def random_lift(rng, ell=2, depth=3, m=10):
    t = np.concatenate([[0.0], np.cumsum(rng.uniform(0.05, 0.3, m))])
    return lift_piecewise_linear(StoppedPath(t, rng.standard_normal((m + 1, ell))), depth)


def test_linear_path_lift():
    X = lift_piecewise_linear(StoppedPath([0.0, 1.0], [[0.0, 0.0], [1.0, 2.0]]), 2)
    g = X.query(0.0, 1.0)
    assert np.allclose(g.level_tensor(1), [1.0, 2.0])
    assert np.allclose(g.level_tensor(2), 0.5 * np.outer([1, 2], [1, 2]), atol=1e-15)


def test_l_shaped_lift():
    X = lift_piecewise_linear(StoppedPath([0.0, 1.0, 2.0], [[0, 0], [1, 0], [1, 1]]), 2)
    g = X.query(0.0, 2.0)
    assert g.coefficient((1, 2)) == pytest.approx(1.0, abs=1e-15)
    assert g.coefficient((2, 1)) == pytest.approx(0.0, abs=1e-15)
    lam = X.log_increment(0.0, 2.0)
    coords = lyndon_coords(lam, LyndonBasis(TensorShape(2, 2)))
    assert dict(zip(LyndonBasis(TensorShape(2, 2)).words, coords.coefficients))[(1, 2)] == pytest.approx(0.5, abs=1e-15)


def test_linear_lift_log_has_no_higher_levels():
    X = lift_piecewise_linear(StoppedPath([0.0, 1.0], [[0.0, 0.0, 0.0], [0.3, -1.0, 2.0]]), 4)
    lam = X.log_increment(0.2, 0.7)
    assert np.allclose(lam.level_tensor(1), 0.5 * np.array([0.3, -1.0, 2.0]))
    for n in (2, 3, 4):
        assert np.max(np.abs(lam.level_tensor(n))) <= 1e-15


def test_lift_needs_two_samples():
    with pytest.raises(ValueError):
        lift_piecewise_linear(StoppedPath.point([0.0]), 2)


def test_query_edge_cases():
    X = random_lift(np.random.default_rng(0))
    assert X.query(0.4, 0.4).allclose(TensorElement.unit(X.shape), atol=0.0)
    with pytest.raises(ValueError):
        X.query(0.6, 0.4)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_chen_identity_on_grid_and_off_grid(seed):
    rng = np.random.default_rng(seed)
    X = random_lift(rng, ell=int(rng.integers(1, 4)), depth=int(rng.integers(2, 5)))
    i, j, k = np.sort(rng.choice(X.grid.size, 3))
    s, u, t = X.grid[[i, j, k]]
    assert (X.query(s, u) @ X.query(u, t) - X.query(s, t)).max_abs() <= 1e-10
    s, u, t = np.sort(rng.uniform(X.start_time, X.end_time, 3))
    assert (X.query(s, u) @ X.query(u, t) - X.query(s, t)).max_abs() <= 1e-10


def test_off_grid_query_on_a_segment():
    v = np.array([0.7, -0.4])
    X = lift_piecewise_linear(StoppedPath([0.0, 0.5, 1.0], [[0, 0], 0.5 * v, v]), 3)
    shape = TensorShape(2, 3)
    exact = tensor_exp(TensorElement.from_vector(shape, 0.4 * v))
    assert (X.query(0.1, 0.5) - exact).max_abs() <= 1e-12
    assert (X.query(0.3, 0.7) - exact).max_abs() <= 1e-12


def test_log_increment_is_continuous_in_the_driver():
    rng = np.random.default_rng(4)
    t = np.linspace(0, 1, 9)
    base = rng.standard_normal((9, 2))
    lam = lift_piecewise_linear(StoppedPath(t, base), 3).log_increment(0.1, 0.9)
    gaps = []
    for delta in (1e-3, 1e-4):
        moved = lift_piecewise_linear(StoppedPath(t, base + delta * rng.standard_normal((9, 2))), 3)
        gaps.append((moved.log_increment(0.1, 0.9) - lam).max_abs() / delta)
    assert max(gaps) < 50.0


def test_geometricity():
    rng = np.random.default_rng(5)
    X = random_lift(rng, ell=3, depth=3, m=20)
    assert check_weak_geometric(X).residual <= 1e-10
    shape = TensorShape(2, 2)
    bad = TensorElement.unit(shape) + TensorElement.from_vector(shape, [1.0, 2.0])
    rep = check_weak_geometric(bad)
    assert rep.level2 == pytest.approx(0.5 * np.linalg.norm(np.outer([1, 2], [1, 2])), abs=1e-15)


def test_products_of_group_like_elements_stay_group_like():
    rng = np.random.default_rng(6)
    X = random_lift(rng, ell=2, depth=4, m=30)
    g = X.query(0.13, X.end_time - 0.05)
    assert check_weak_geometric(g).residual <= 1e-10


def test_non_unit_scalar_part_is_rejected():
    lv = [np.full((1, 1), 2.0), np.zeros((1, 2)), np.zeros((1, 4))]
    with pytest.raises(ValueError):
        GridRoughPath([0.0, 1.0], lv, 2.5)


def test_holder_norm_examples():
    t = np.linspace(0, 2, 17)
    zero = lift_piecewise_linear(StoppedPath(t, np.zeros((17, 1))), 2)
    assert holder_norm(zero) == 0.0
    X = lift_piecewise_linear(StoppedPath(t, 3 * t[:, None]), 2, p=2.5)
    # level 2 gives (9/2 dt^2)^(1/2) / dt^(0.4), below the level-1 value
    assert holder_norm(X) == pytest.approx(3 * 2 ** 0.6, rel=1e-12)


def test_dilate():
    rng = np.random.default_rng(7)
    X = random_lift(rng)
    assert (dilate(X, 1.0).query(0.0, X.end_time) - X.query(0.0, X.end_time)).max_abs() == 0.0
    triv = dilate(X, 0.0).query(0.0, X.end_time)
    assert triv.allclose(TensorElement.unit(X.shape), atol=0.0)
    a = dilate(dilate(X, 0.5), -1.5).query(0.1, 1.0)
    b = dilate(X, -0.75).query(0.1, 1.0)
    assert (a - b).max_abs() <= 1e-14
    assert holder_norm(dilate(X, 0.3)) == pytest.approx(0.3 * holder_norm(X), rel=1e-12)


def test_brownian_is_reproducible():
    grid = np.linspace(0, 1, 33)
    p1, X1 = sample_brownian(42, grid, 2)
    p2, X2 = sample_brownian(42, grid, 2)
    assert np.array_equal(p1.values, p2.values)
    assert np.array_equal(X1.increment_levels()[2], X2.increment_levels()[2])
    g = X1.query(0.0, 1.0)
    w = p1.end - p1.start
    sym = 0.5 * (g.level_tensor(2) + g.level_tensor(2).T)
    assert np.allclose(sym, 0.5 * np.outer(w, w), atol=1e-14)


def test_brownian_variance_monte_carlo():
    grid = np.linspace(0, 0.7, 5)
    ends = np.array([sample_brownian(s, grid, 1)[0].end[0] for s in range(10_000)])
    assert abs(ends.var() / 0.7 - 1.0) < 0.05


def test_fbm_covariance_and_variance():
    t = np.linspace(0.1, 1.0, 10)
    assert np.allclose(fbm_covariance(0.5, t), np.minimum.outer(t, t), atol=1e-12)
    grid = np.linspace(0, 1, 9)
    ends = np.array([sample_fbm(0.6, s, grid, 1)[0].values[4, 0] for s in range(10_000)])
    assert abs(ends.var() / 0.5 ** 1.2 - 1.0) < 0.05


def test_fbm_depth_rule_and_errors():
    grid = np.linspace(0, 1, 17)
    assert sample_fbm(0.4, 1, grid, 2)[1].depth == 2
    assert sample_fbm(0.3, 1, grid, 2)[1].depth == 3
    with pytest.raises(ValueError):
        sample_fbm(0.3, 1, grid, 2, depth=2)
    with pytest.raises(ValueError):
        sample_fbm(1.2, 1, grid, 1)
    with pytest.raises(ValueError):
        sample_fbm(0.6, 1, np.linspace(0, 1, FBM_MAX_POINTS + 2), 1)


def test_rough_path_file_round_trip():
    X = random_lift(np.random.default_rng(8), ell=2, depth=3, m=6)
    buf = io.StringIO()
    write_rough_path(buf, X)
    buf.seek(0)
    Y = read_rough_path(buf)
    assert np.array_equal(X.grid, Y.grid) and Y.p == X.p
    for a, b in zip(X.increment_levels(), Y.increment_levels()):
        assert np.array_equal(a, b)
