import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from roughflow.approxflow import (
    DrivingPath,
    FlowScheme,
    build_step_field,
    compose_over_partition,
    dyadic_partition,
    euler_defect,
    euler_expansion,
    fit_rate,
    level2_step_field,
    mu,
    mu_c1_defect,
    solve_flow,
)
from roughflow.errors import (
    ConfigError,
    FlowDivergenceError,
    NonConvergenceError,
    NonGeometricDriverError,
)
from roughflow.pathspace import StoppedPath
from roughflow.pdvf import (
    ConstantField,
    DelayField,
    LinearMarkovianField,
    MarkovianField,
    MovingAverageField,
    ZeroField,
)
from roughflow.roughpath import GridRoughPath, lift_piecewise_linear, sample_brownian


def scalar_linear(seed=3, steps=64, **kw):
    path, X = sample_brownian(seed, np.linspace(0, 1, steps + 1), 1, depth=2)
    return path, FlowScheme([LinearMarkovianField([[1.0]])], X, **kw)


def two_dim_driver(steps=64):
    t = np.linspace(0, 1, steps + 1)
    return lift_piecewise_linear(StoppedPath(t, np.stack([np.sin(2 * np.pi * t), t * t], axis=1)), 2, p=2.5)


def nonlinear_fields():
    F1 = MarkovianField.from_map("tanh", 2, [[0.8, 0.2], [-0.3, 0.6]], [0.2, -0.1])
    F2 = MarkovianField.from_map("sin", 2, [[0.1, 0.7], [0.5, -0.4]], [0.0, 0.3])
    return [F1, F2]


def test_scheme_validation():
    _, X = sample_brownian(0, np.linspace(0, 1, 9), 2, depth=2)
    F = nonlinear_fields()
    with pytest.raises(ConfigError):
        FlowScheme(F[:1], X)
    with pytest.raises(ConfigError):
        FlowScheme(F, X, V=ZeroField(2), h=DrivingPath.linear(), alpha=0.5, p=2.5)
    with pytest.raises(ConfigError):
        FlowScheme(F, X, p=3.5)
    with pytest.raises(ConfigError):
        FlowScheme(F, X, history_mode="sideways")
    with pytest.raises(ConfigError):
        FlowScheme([F[0], LinearMarkovianField(np.eye(3))], X)


def test_step_field_trivial_and_abelian():
    path, sch = scalar_linear()
    assert build_step_field(sch, 0.3, 0.3).is_zero
    W = build_step_field(sch, 0.25, 0.75)
    inc = path.eval_at(0.75)[0] - path.eval_at(0.25)[0]
    y = StoppedPath.point([2.0])
    assert W(y)[0] == pytest.approx(2.0 * inc, abs=1e-14)


def test_step_field_area_coefficient():
    X = two_dim_driver()
    sch = FlowScheme(nonlinear_fields(), X)
    s, t = 0.1, 0.65
    W = build_step_field(sch, s, t)
    g = X.query(s, t)
    area = g.coefficient((1, 2)) - 0.5 * g.coefficient((1,)) * g.coefficient((2,))
    assert W.coefficients[(1, 2)] == pytest.approx(area, abs=1e-14)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_step_field_matches_level_two_formula(seed):
    rng = np.random.default_rng(seed)
    _, X = sample_brownian(int(rng.integers(0, 1000)), np.linspace(0, 1, 17), 2, depth=2)
    F = [DelayField.from_map("tanh", 2, [0.2], rng.standard_normal((2, 2))),
         MovingAverageField.from_map("sin", 2, rng.standard_normal((2, 2)))]
    sch = FlowScheme(F, X, V=MarkovianField.from_map("tanh", 2), h=DrivingPath.linear())
    s, t = np.sort(rng.uniform(0, 1, 2))
    n = int(rng.integers(1, 5))
    tt = np.concatenate([[0.0], np.cumsum(rng.uniform(0.05, 0.5, n))])
    y = StoppedPath(tt, rng.standard_normal((n + 1, 2)))
    assert np.allclose(build_step_field(sch, s, t)(y), level2_step_field(sch, s, t)(y), rtol=0, atol=1e-10)


def test_non_geometric_driver_is_rejected():
    lv = [np.ones((1, 1)), np.array([[1.0, 2.0]]), np.zeros((1, 4))]
    X = GridRoughPath([0.0, 1.0], lv, 2.5)
    sch = FlowScheme(nonlinear_fields(), X)
    with pytest.raises(NonGeometricDriverError) as info:
        build_step_field(sch, 0.0, 1.0)
    assert "non-geometric" in str(info.value)


def test_trivial_scheme_is_identity():
    _, X = sample_brownian(0, np.linspace(0, 1, 9), 1, depth=2)
    sch = FlowScheme([ZeroField(2)], X)
    x = np.array([0.3, -1.0])
    assert np.array_equal(mu(sch, 0.0, 1.0, x), x)
    res = solve_flow(sch, 0.0, 1.0, x)
    assert res.depth == 0 and np.array_equal(res.value, x)


def test_constant_fields_translate():
    _, X = sample_brownian(1, np.linspace(0, 1, 33), 2, depth=2)
    sch = FlowScheme([ConstantField([1.0, 0.5]), ConstantField([-0.3, 2.0])], X)
    x = np.array([0.1, 0.2])
    inc = X.query(0.2, 0.9).level_tensor(1)
    expected = x + inc[0] * np.array([1.0, 0.5]) + inc[1] * np.array([-0.3, 2.0])
    assert np.allclose(mu(sch, 0.2, 0.9, x), expected, atol=1e-14)
    assert np.max(euler_defect(sch, 0.2, 0.9, x[None])) <= 1e-13


@pytest.mark.parametrize("partition", [[0.0, 1.0], np.linspace(0, 1, 9), [0.0, 0.013, 0.2, 0.21, 0.5, 0.77, 1.0]])
def test_abelian_linear_flow(partition):
    path, sch = scalar_linear(substeps=64)
    x = np.array([[1.0], [-0.5], [2.0]])
    got = compose_over_partition(sch, partition, x).value
    exact = x * np.exp(path.end[0] - path.start[0])
    assert np.allclose(got, exact, rtol=0, atol=1e-8)


def test_mu_matches_single_interval_composition():
    X = two_dim_driver()
    sch = FlowScheme(nonlinear_fields(), X)
    x = np.array([0.4, -0.2])
    assert np.array_equal(compose_over_partition(sch, [0.2, 0.6], x).value, mu(sch, 0.2, 0.6, x))


def test_batched_probes_match_single_runs():
    X = two_dim_driver()
    sch = FlowScheme(nonlinear_fields(), X, V=DelayField.from_map("tanh", 2, [0.25]), h=DrivingPath.linear())
    probes = np.array([[0.1, 0.2], [-1.0, 0.5], [0.7, -0.7]])
    batch = mu(sch, 0.0, 0.5, probes)
    for k in range(3):
        assert np.allclose(batch[k], mu(sch, 0.0, 0.5, probes[k]), atol=1e-15)


def test_c1_defect():
    _, sch = scalar_linear(substeps=64)
    probes = np.array([[1.0], [-2.0]])
    assert mu_c1_defect(sch, 0.2, 0.45, 0.7, probes).total <= 1e-10
    sch2 = FlowScheme(nonlinear_fields(), two_dim_driver())
    x = np.array([[0.3, 0.1], [-1.0, 1.0]])
    assert mu_c1_defect(sch2, 0.25, 0.25, 0.5, x).sup <= 1e-12
    assert mu_c1_defect(sch2, 0.25, 0.5, 0.5, x).sup <= 1e-12


def test_abelian_euler_defect_closed_form():
    path, sch = scalar_linear()
    x = np.array([[1.5], [-0.5]])
    for s, t in [(0.0, 0.5), (0.25, 0.375)]:
        X1 = path.eval_at(t)[0] - path.eval_at(s)[0]
        expected = np.abs(x[:, 0]) * abs(np.exp(X1) - 1 - X1 - 0.5 * X1 * X1)
        assert np.allclose(euler_defect(sch, s, t, x), expected, rtol=1e-6, atol=1e-12)


def test_abelian_euler_defect_slope():
    t = np.linspace(0, 1, 1025)
    X = lift_piecewise_linear(StoppedPath(t, 2 * t[:, None]), 2, p=2.5)
    sch = FlowScheme([LinearMarkovianField([[1.0]])], X)
    levels = range(3, 10)
    d = [float(np.max(euler_defect(sch, 0.0, 2.0**-k, np.array([[1.0]])))) for k in levels]
    slope = np.polyfit(np.log([2.0**-k for k in levels]), np.log(d), 1)[0]
    assert slope >= 3 / 2.5 - 0.1


def test_euler_expansion_first_order_terms():
    X = two_dim_driver()
    F = nonlinear_fields()
    sch = FlowScheme(F, X, V=ConstantField([0.5, 0.0]), h=DrivingPath.linear(2.0))
    x = np.array([0.2, 0.1])
    s, t = 0.3, 0.3 + 2.0**-12
    g = X.query(s, t)
    first = x + 2.0 * (t - s) * np.array([0.5, 0.0])
    y = StoppedPath.point(x)
    first = first + g.coefficient((1,)) * F[0](y) + g.coefficient((2,)) * F[1](y)
    assert np.allclose(euler_expansion(sch, s, t, x), first, atol=1e-6)


def test_divergence_is_reported():
    t = np.linspace(0, 1, 3)
    X = lift_piecewise_linear(StoppedPath(t, 400 * t[:, None]), 2, p=2.5)
    blow = MarkovianField.from_map("poly", 1, coeffs=[0.0, 0.0, 1.0])
    sch = FlowScheme([blow], X, substeps=8)
    with pytest.raises(FlowDivergenceError) as info:
        compose_over_partition(sch, [0.0, 0.5, 1.0], np.array([1.0]))
    assert info.value.step_index == 0


def test_non_convergence_carries_diagnostics():
    sch = FlowScheme(nonlinear_fields(), two_dim_driver())
    with pytest.raises(NonConvergenceError) as info:
        solve_flow(sch, 0.0, 1.0, np.array([0.1, 0.1]), tol=1e-14, max_depth=2)
    assert len(info.value.diagnostics["differences"]) == 2


def test_markovian_flow_against_classical_integration():
    from roughflow.experiments import reference_flow

    t = np.linspace(0, 1, 65)
    drv = StoppedPath(t, np.stack([np.sin(2 * np.pi * t), t * t], axis=1))
    X = lift_piecewise_linear(drv, 2, p=2.5)
    F = nonlinear_fields()
    V = MarkovianField.from_map("tanh", 2, [[0.3, 0.0], [0.0, -0.3]])
    sch = FlowScheme(F, X, V=V, h=DrivingPath.linear())
    x0 = np.array([0.3, -0.5])
    res = solve_flow(sch, 0.0, 1.0, x0, tol=1e-9, max_depth=10)
    ref = reference_flow(V, F, drv, x0, h=lambda r: r, refine=16).end
    # once the partition is aligned with the driver cells, (h, X) is linear
    # on every step, so the step maps are exact flows of the classical ODE
    assert np.linalg.norm(res.value - ref) / np.linalg.norm(ref) <= 1e-6


def test_carried_history_threads_through_steps():
    path, sch = scalar_linear(history_mode="carried")
    comp = compose_over_partition(sch, np.linspace(0, 1, 5), np.array([1.0]))
    assert comp.history.end_time == pytest.approx(1.0)
    assert comp.history.n_samples == 4 * sch.substeps + 1
    assert comp.value[0] == pytest.approx(np.exp(path.end[0]), abs=1e-7)


def test_carried_and_fresh_agree_for_point_fields():
    X = two_dim_driver()
    fresh = FlowScheme(nonlinear_fields(), X)
    carried = fresh.with_options(history_mode="carried")
    pi = np.linspace(0, 1, 17)
    x = np.array([0.5, 0.5])
    a = compose_over_partition(fresh, pi, x).value
    b = compose_over_partition(carried, pi, x).value
    assert np.allclose(a, b, atol=1e-12)


def test_fit_rate():
    meshes = [2.0**-k for k in range(1, 8)]
    fit = fit_rate(meshes, [3 * m**0.7 for m in meshes])
    assert fit.slope == pytest.approx(0.7, abs=1e-12) and fit.monotone
    flagged = fit_rate(meshes, [1e-16, 3e-16, 1e-16, 2e-16, 1e-16, 3e-16, 2e-16])
    assert flagged.slope is None
    with pytest.raises(ValueError):
        dyadic_partition(1.0, 0.0, 2)
