import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from smallball import FunctionSpec, GridFunction, HurstIndex, TimeGrid, l2_inner, l2_norm, make_grid, sample
from smallball.errors import EvaluationError, InvalidArgumentError
from smallball.grid import cumulative_integral, sample_derivative


@pytest.mark.parametrize("H", [0.0, 0.5, -0.1, 0.7, float("nan")])
def test_hurst_index_outside_open_interval_rejected(H):
    with pytest.raises(InvalidArgumentError, match="Hurst index"):
        HurstIndex(H)


def test_hurst_index_is_a_float():
    assert HurstIndex(0.25) == 0.25
    assert isinstance(HurstIndex(0.3), float)


@pytest.mark.parametrize("T,n", [(0.0, 8), (-1.0, 8), (math.inf, 8), (1.0, 1), (1.0, 2.5)])
def test_time_grid_validation(T, n):
    with pytest.raises(InvalidArgumentError):
        TimeGrid(T, n)


def test_nodes_and_weights():
    g = make_grid(2.0, 4)
    np.testing.assert_allclose(g.nodes, [0, 0.5, 1, 1.5, 2])
    assert g.nodes[-1] == 2.0
    assert g.weights.sum() == pytest.approx(2.0)
    assert len(g) == 5
    with pytest.raises(ValueError):
        g.nodes[0] = 1.0


def test_grid_function_shape_and_finiteness():
    g = make_grid(1.0, 4)
    with pytest.raises(InvalidArgumentError, match="expected 5 values"):
        GridFunction(g, np.zeros(4))
    with pytest.raises(InvalidArgumentError, match="node 2"):
        GridFunction(g, [0, 0, np.nan, 0, 0])


def test_grid_function_arithmetic_requires_same_grid():
    a = make_grid(1.0, 4).zeros()
    b = make_grid(1.0, 8).zeros()
    with pytest.raises(InvalidArgumentError):
        a + b
    c = 2.0 * (a + 1.0) - 0.5
    np.testing.assert_allclose(c.values, 1.5)


def test_function_spec_rejects_unknown_and_missing_parameters():
    with pytest.raises(InvalidArgumentError, match="unknown function kind"):
        FunctionSpec("cubic", {})
    with pytest.raises(InvalidArgumentError, match="needs parameter"):
        FunctionSpec("sine", {"a": 1.0})
    with pytest.raises(InvalidArgumentError, match="does not take"):
        FunctionSpec("constant", {"c": 1.0, "a": 2.0})
    with pytest.raises(InvalidArgumentError, match="-1/2"):
        FunctionSpec.power(1.0, -0.5)
    with pytest.raises(InvalidArgumentError, match="kind"):
        FunctionSpec.from_dict({"c": 1.0})


def test_linear_intercept():
    g = make_grid(1.0, 4)
    np.testing.assert_allclose(sample(FunctionSpec.linear(2.0, 1.0), g).values, 2 * g.nodes + 1)
    np.testing.assert_allclose(sample_derivative(FunctionSpec.linear(2.0, 1.0), g).values, 2.0)


specs = st.one_of(
    st.floats(-5, 5).map(FunctionSpec.constant),
    st.tuples(st.floats(-5, 5), st.floats(-5, 5)).map(lambda p: FunctionSpec.linear(*p)),
    st.tuples(st.floats(-5, 5), st.floats(-0.45, 3)).map(lambda p: FunctionSpec.power(*p)),
    st.tuples(st.floats(-5, 5), st.floats(0, 20)).map(lambda p: FunctionSpec.sine(*p)),
)


@given(specs)
def test_function_spec_dict_round_trip(spec):
    back = FunctionSpec.from_dict(spec.to_dict())
    assert back == spec
    t = np.linspace(0.01, 1, 7)
    np.testing.assert_array_equal(back.evaluate(t), spec.evaluate(t))


@given(st.floats(-3, 3), st.floats(0.1, 8))
@settings(max_examples=30)
def test_sampled_derivative_matches_finite_differences(a, omega):
    spec = FunctionSpec.sine(a, omega)
    g = make_grid(1.0, 2000)
    v = sample(spec, g).values
    d = sample_derivative(spec, g).values
    np.testing.assert_allclose(np.gradient(v, g.nodes)[1:-1], d[1:-1], atol=1e-4 * (1 + abs(a) * omega ** 3))


def test_negative_power_sample_is_finite_half_cell_mean():
    g = make_grid(1.0, 10)
    v = sample(FunctionSpec.power(1.0, -0.3), g).values
    assert np.all(np.isfinite(v))
    assert v[0] == pytest.approx(0.05 ** -0.3 / 0.7)


def test_negative_power_derivative_is_not_finite_at_zero():
    with pytest.raises(EvaluationError, match="node 0"):
        sample_derivative(FunctionSpec.power(1.0, 0.5), make_grid(1.0, 4))


def test_tabulated_interpolation_and_smoothness_flag():
    spec = FunctionSpec.tabulated([0.0, 1.0, 0.0])
    g = make_grid(2.0, 4)
    np.testing.assert_allclose(sample(spec, g).values, [0, 0.5, 1, 0.5, 0])
    assert not spec.is_smooth
    assert FunctionSpec.power(1.0, 1.5).is_smooth and not FunctionSpec.power(1.0, 0.5).is_smooth


def test_l2_and_cumulative_integral_exact_for_linear():
    g = make_grid(1.0, 16)
    one = sample(FunctionSpec.constant(1.0), g)
    t = sample(FunctionSpec.linear(1.0), g)
    assert l2_norm(one) == pytest.approx(1.0)
    assert l2_inner(one, t) == pytest.approx(0.5)
    np.testing.assert_allclose(cumulative_integral(t).values, g.nodes ** 2 / 2, atol=1e-15)
