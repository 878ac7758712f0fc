import math

import numpy as np
import pytest

from smallball import FunctionSpec, make_grid, sample
from smallball.asymptotics import (
    MCConfig,
    fit_from_estimates,
    fit_scaling,
    reference_slope,
    sandwich_scaling_report,
)
from smallball.errors import InsufficientDataError, InvalidArgumentError
from smallball.simulate import MCEstimate


def _est(p):
    return MCEstimate(p, 0.0, 1, 1, 0)


def test_fit_recovers_exact_power_law():
    eps = [1.4, 1.1, 0.9, 0.75, 0.6]
    theta, c = 2.5, 0.4
    ests = [_est(math.exp(-c * e ** -theta)) for e in eps]
    fit = fit_from_estimates("mixed", 0.4, eps, ests, band=(1e-9, 0.99))
    assert fit.slope == pytest.approx(-theta, rel=1e-10)
    assert fit.intercept == pytest.approx(math.log(c), rel=1e-10)
    assert fit.r_squared == pytest.approx(1.0)
    assert fit.reference_slope == -2.5


def test_points_outside_band_are_dropped_and_reported():
    eps = [2.0, 1.5, 1.0, 0.8, 0.5]
    ests = [_est(p) for p in (0.9, 0.5, 0.1, 0.01, 0.0)]
    with pytest.raises(InsufficientDataError, match=r"only 3 of 5.*eps=0\.5: p_hat=0"):
        fit_from_estimates("wiener", None, eps, ests)


def test_reference_slopes():
    assert reference_slope("wiener", None) == -2.0
    assert reference_slope("fbm", 0.25) == -4.0


def test_fit_scaling_validates_inputs():
    one = sample(FunctionSpec.constant(1.0), make_grid(1.0, 32))
    with pytest.raises(InvalidArgumentError):
        fit_scaling("brownian", None, one, [1, 2, 3, 4], MCConfig(100, grid_n=32))
    with pytest.raises(InsufficientDataError):
        fit_scaling("wiener", None, one, [1, 2, 3], MCConfig(100, grid_n=32))
    with pytest.raises(InvalidArgumentError, match="simulation grid"):
        fit_scaling("wiener", None, sample(FunctionSpec.constant(1.0), make_grid(1.0, 16)), [1, 2, 3, 4],
                    MCConfig(100, grid_n=32))


def test_wiener_fit_on_small_run():
    g = make_grid(1.0, 128)
    fit = fit_scaling("wiener", None, sample(FunctionSpec.constant(1.0), g),
                      [1.4, 1.1, 0.9, 0.75, 0.6, 0.5], {"n_paths": 20_000, "grid_n": 128, "seed": 2})
    assert sum(fit.used) >= 4
    assert -3.0 < fit.slope < -1.5
    d = fit.to_dict()
    assert len(d["points"]) == 6 and d["reference_slope"] == -2.0


def test_sandwich_without_trend_has_unit_ratio():
    rep = sandwich_scaling_report(0.25, FunctionSpec.constant(1.0), FunctionSpec.constant(0.0),
                                  [0.9, 1.2], MCConfig(4000, 1, 64), (1, 2))
    for r in rep.rows:
        assert r["lower"] == r["upper"] == r["P0"] == r["p_hat"]
        assert r["ratio"] == 1.0
    assert rep.to_csv().startswith("epsilon,p_hat,stderr,neglog,lower,upper,ratio\r\n")


def test_sandwich_brackets_estimate():
    rep = sandwich_scaling_report(0.25, FunctionSpec.constant(1.0), FunctionSpec.constant(0.5),
                                  [1.2, 1.5], MCConfig(20_000, 3, 64), (1, 2, 4, 8))
    for r in rep.rows:
        assert r["lower"] <= r["p_hat"] + 3 * r["stderr"]
        assert r["p_hat"] <= r["upper"] + 3 * r["stderr"]
        assert r["ratio"] >= 1.0
