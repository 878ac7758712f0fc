import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from smallball import FunctionSpec, GridFunction, make_grid, sample, solve_split
from smallball.errors import GeneratorRequirementError, InvalidArgumentError, SmoothnessError
from smallball.rng import block_normals, normals
from smallball.simulate import (
    MCEstimate,
    PathBatch,
    covariance_estimate,
    fbm_covariance,
    gen_fbm,
    gen_mixed,
    gen_wiener,
    girsanov_consistency,
    integration_by_parts_check,
    mc_small_ball,
    novikov_identity_check,
    sup_statistic,
    volterra_matrix,
    wiener_small_ball_exact,
)


@given(st.integers(0, 2 ** 64 - 1), st.integers(0, 5000), st.integers(1, 3000))
@settings(max_examples=25, deadline=None)
def test_rows_do_not_depend_on_the_window(seed, start, rows):
    full = normals(seed, 2, 0, start + rows, 3, block_rows=512)
    np.testing.assert_array_equal(normals(seed, 2, start, rows, 3, block_rows=512), full[start:])


def test_streams_and_seeds_are_distinct():
    a = block_normals(1, 1, 0, 4, 4)
    assert not np.array_equal(a, block_normals(1, 2, 0, 4, 4))
    assert not np.array_equal(a, block_normals(2, 1, 0, 4, 4))
    assert not np.array_equal(a, block_normals(1, 1, 1, 4, 4))
    np.testing.assert_array_equal(a, block_normals(1, 1, 0, 4, 4))


def test_normals_are_standard():
    z = block_normals(7, 1, 0, 2000, 100).ravel()
    assert abs(z.mean()) < 4 / math.sqrt(z.size)
    assert abs(z.var() - 1) < 4 * math.sqrt(2 / z.size)


def test_bad_seed_rejected():
    with pytest.raises(InvalidArgumentError):
        block_normals(-1, 1, 0, 2, 2)


@pytest.mark.parametrize("gen", ["cholesky", "circulant", "volterra"])
def test_batch_prefix_and_determinism(gen):
    g = make_grid(1.0, 16)
    a = gen_fbm(g, 0.3, 3000, 11, gen).paths_BH
    b = gen_fbm(g, 0.3, 1000, 11, gen).paths_BH
    np.testing.assert_array_equal(a[:1000], b)
    assert a.shape == (3000, 17) and not np.any(a[:, 0])


@pytest.mark.parametrize("gen", ["cholesky", "circulant", "volterra"])
def test_covariance_at_a_few_pairs(gen):
    g = make_grid(1.0, 16)
    batch = gen_fbm(g, 0.2, 40_000, 5, gen)
    for i, j in ((4, 4), (4, 16), (16, 16)):
        c, se = covariance_estimate(batch, i, j)
        assert abs(c - fbm_covariance(g.nodes[i], g.nodes[j], 0.2)) <= 4.5 * se


def test_mixed_paths_are_the_sum():
    g = make_grid(1.0, 16)
    batch = gen_mixed(g, 0.25, 100, 2)
    np.testing.assert_allclose(batch.paths, batch.paths_W + batch.paths_BH)
    assert batch.has_B and batch.paths_B.shape == (100, 17)


def test_volterra_projection_variance_deficit_is_small_and_positive():
    g = make_grid(1.0, 64)
    M = volterra_matrix(1.0, 64, 0.25)
    proj_var = g.dt * np.sum(M ** 2, axis=1)
    deficit = fbm_covariance(g.nodes[1:], g.nodes[1:], 0.25) - proj_var
    assert np.all(deficit > 0)
    assert deficit.max() < 0.03


def test_unknown_generator_and_bad_sizes():
    g = make_grid(1.0, 8)
    with pytest.raises(InvalidArgumentError, match="generator"):
        gen_fbm(g, 0.25, 10, 0, "hosking")
    with pytest.raises(InvalidArgumentError):
        gen_fbm(g, 0.25, 0, 0)


def test_circulant_embedding_factor_nonnegative():
    from smallball.simulate import _circulant_sqrt
    for H in (0.05, 0.25, 0.45):
        assert np.all(_circulant_sqrt(1.0, 64, H) >= 0)


def test_small_ball_probability_shrinks_with_trend():
    g = make_grid(1.0, 64)
    batch = gen_mixed(g, 0.25, 20_000, 9)
    f = sample(FunctionSpec.constant(1.0), g)
    ps = [mc_small_ball(batch, GridFunction(g, c * g.nodes), f, 1.2) for c in (0.0, 1.0, 2.0)]
    assert ps[0].p_hat > ps[1].p_hat + 3 * ps[1].stderr
    assert ps[1].p_hat > ps[2].p_hat + 3 * ps[2].stderr


def test_estimate_reuses_statistic_and_validates():
    g = make_grid(1.0, 32)
    batch = gen_wiener(g, 5000, 1)
    f = sample(FunctionSpec.constant(1.0), g)
    s = sup_statistic(batch, g.zeros(), f)
    a = mc_small_ball(batch, g.zeros(), f, 1.0)
    b = mc_small_ball(batch, g.zeros(), f, 1.0, stat=s)
    assert a == b and isinstance(a, MCEstimate)
    assert a.definition["event"] == "grid-restricted"
    with pytest.raises(InvalidArgumentError):
        mc_small_ball(batch, g.zeros(), f, 0.0)
    with pytest.raises(InvalidArgumentError, match="positive"):
        mc_small_ball(batch, g.zeros(), g.zeros(), 1.0)


def test_zero_trend_girsanov_weights_are_one():
    g = make_grid(1.0, 32)
    split = solve_split(g.zeros(), 0.25)
    d, r = girsanov_consistency(gen_mixed(g, 0.25, 3000, 4), split, sample(FunctionSpec.constant(1.0), g), 1.0)
    assert d.p_hat == r.p_hat
    assert r.diagnostics["weight_mean"] == 1.0


def test_girsanov_reweighting_small_run():
    g = make_grid(1.0, 64)
    split = solve_split(sample(FunctionSpec.constant(0.5), g), 0.25)
    d, r = girsanov_consistency(gen_mixed(g, 0.25, 20_000, 8), split, sample(FunctionSpec.constant(1.0), g), 1.2)
    assert abs(d.p_hat - r.p_hat) <= 3 * math.hypot(d.stderr, r.stderr)
    assert r.diagnostics["trend_mismatch"] < 5e-3


@pytest.mark.parametrize("gen", ["cholesky", "circulant"])
def test_girsanov_needs_underlying_wiener_process(gen):
    g = make_grid(1.0, 16)
    split = solve_split(g.zeros(), 0.25)
    with pytest.raises(GeneratorRequirementError, match="volterra"):
        girsanov_consistency(gen_mixed(g, 0.25, 10, 0, gen), split, sample(FunctionSpec.constant(1.0), g), 1.0)
    with pytest.raises(GeneratorRequirementError):
        integration_by_parts_check(gen_mixed(g, 0.25, 10, 0, gen), FunctionSpec.constant(1.0))


def test_integration_by_parts_exact_for_constant():
    batch = gen_mixed(make_grid(1.0, 64), 0.25, 2000, 3)
    assert integration_by_parts_check(batch, FunctionSpec.constant(1.0)) < 1e-5


def test_integration_by_parts_refines():
    vals = [integration_by_parts_check(gen_mixed(make_grid(1.0, n), 0.25, 2000, 3), FunctionSpec.linear(1.0))
            for n in (32, 64, 128)]
    assert vals[0] > vals[1] > vals[2]


def test_integration_by_parts_needs_smooth_function():
    batch = gen_mixed(make_grid(1.0, 16), 0.25, 10, 3)
    with pytest.raises(SmoothnessError):
        integration_by_parts_check(batch, FunctionSpec.power(1.0, 0.5))


def test_reflection_series_against_eigenfunction_series():
    for a in (0.5, 1.0, 2.0):
        eig = 4 / math.pi * sum((-1) ** k / (2 * k + 1) * math.exp(-(2 * k + 1) ** 2 * math.pi ** 2 / (8 * a * a))
                                for k in range(200))
        assert wiener_small_ball_exact(a) == pytest.approx(eig, rel=1e-12)
    assert wiener_small_ball_exact(1.0) == pytest.approx(0.3707774297995, rel=1e-12)
    assert wiener_small_ball_exact(0.0) == 0.0


def test_time_change_identity_constant_boundary():
    lhs, rhs = novikov_identity_check(FunctionSpec.constant(1.0), 1.0, 20_000, 5, n=128)
    assert rhs.diagnostics["prefactor"] == 1.0
    assert rhs.diagnostics["horizon"] == pytest.approx(4.0)
    assert abs(lhs.p_hat - rhs.p_hat) <= 3 * math.hypot(lhs.stderr, rhs.stderr)


def test_time_change_identity_with_density_factor():
    lhs, rhs = novikov_identity_check(FunctionSpec.linear(1.0, 1.0), 1.0, 20_000, 5, n=128)
    assert rhs.diagnostics["horizon"] == pytest.approx(2.0)
    assert abs(lhs.p_hat - rhs.diagnostics["corrected"]) <= 3 * math.hypot(lhs.stderr, rhs.diagnostics["corrected_stderr"])


def test_time_change_identity_validation():
    with pytest.raises(InvalidArgumentError):
        novikov_identity_check(FunctionSpec.linear(-2.0, 1.0), 1.0, 10, 0)
    with pytest.raises(SmoothnessError):
        novikov_identity_check(FunctionSpec.tabulated([1.0, 2.0, 1.0]), 1.0, 10, 0)
    with pytest.raises(InvalidArgumentError):
        novikov_identity_check(FunctionSpec.constant(1.0), -1.0, 10, 0)


def test_batch_csv_export(tmp_path):
    batch = gen_fbm(make_grid(1.0, 4), 0.25, 5, 0, "cholesky")
    p = tmp_path / "paths.csv"
    batch.to_csv(p, component="BH", max_paths=3)
    lines = p.read_bytes().split(b"\r\n")
    assert lines[0] == b"t_0,t_1,t_2,t_3,t_4" and len(lines) == 5
