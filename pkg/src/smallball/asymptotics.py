"""Empirical small-deviation exponents.

``-log P(sup |X| <= eps) ~ eps^(-theta)`` with ``theta = 2`` for the Wiener
process and ``theta = 1/H`` for fBm and for ``W + B^H`` (``H < 1/2``).  The
slope of ``log(-log p_hat)`` against ``log eps`` estimates ``-theta``.  Only
the exponent is fitted; the constants are unknown, and desk-scale levels are
pre-asymptotic, so acceptance bands are wide.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .bounds import DEFAULT_LADDER, certificate_ladder, lower_bound
from .errors import InsufficientDataError, InvalidArgumentError
from .grid import FunctionSpec, GridFunction, make_grid, sample
from .kernel import solve_split
from .simulate import MCEstimate, PathBatch, gen_fbm, gen_mixed, gen_wiener, mc_small_ball, sup_statistic

__all__ = ["BAND", "MCConfig", "PROCESSES", "ScalingFit", "fit_scaling", "reference_slope",
           "sandwich_scaling_report"]

BAND = (0.005, 0.6)
MIN_POINTS = 4
PROCESSES = ("wiener", "fbm", "mixed")


@dataclass(frozen=True)
class MCConfig:
    n_paths: int = 100_000
    seed: int = 0
    grid_n: int = 512
    T: float = 1.0
    generator: str | None = None

    @classmethod
    def from_dict(cls, d: Mapping) -> "MCConfig":
        return cls(**{k: d[k] for k in ("n_paths", "seed", "grid_n", "T", "generator") if k in d})


def reference_slope(process: str, H: float | None) -> float:
    return -2.0 if process == "wiener" else -1.0 / float(H)


@dataclass
class ScalingFit:
    """Least-squares fit of ``log(-log p_hat)`` on ``log eps`` over the band."""

    process: str
    H: float | None
    epsilons: list[float]
    p_hats: list[MCEstimate]
    slope: float
    intercept: float
    r_squared: float
    used: list[bool]
    band: tuple = BAND

    @property
    def reference_slope(self) -> float:
        return reference_slope(self.process, self.H)

    def to_dict(self) -> dict:
        return {
            "process": self.process,
            "H": self.H,
            "slope": self.slope,
            "intercept": self.intercept,
            "r_squared": self.r_squared,
            "reference_slope": self.reference_slope,
            "band": list(self.band),
            "points": [
                {"epsilon": e, "p_hat": p.p_hat, "stderr": p.stderr, "used": u}
                for e, p, u in zip(self.epsilons, self.p_hats, self.used)
            ],
        }


def _batch(process, H, mc: MCConfig) -> PathBatch:
    grid = make_grid(mc.T, mc.grid_n)
    if process == "wiener":
        return gen_wiener(grid, mc.n_paths, mc.seed)
    if process == "fbm":
        return gen_fbm(grid, H, mc.n_paths, mc.seed, mc.generator or "circulant")
    return gen_mixed(grid, H, mc.n_paths, mc.seed, mc.generator or "circulant")


def _as_f(f, grid):
    if isinstance(f, FunctionSpec):
        return sample(f, grid)
    if isinstance(f, GridFunction) and f.grid == grid:
        return f
    raise InvalidArgumentError("boundary must be a FunctionSpec or a GridFunction on the simulation grid")


def fit_from_estimates(process: str, H, epsilons: Sequence[float], estimates: Sequence[MCEstimate],
                       band=BAND) -> ScalingFit:
    lo, hi = band
    used = [lo <= p.p_hat <= hi for p in estimates]
    k = sum(used)
    if k < MIN_POINTS:
        listing = ", ".join(f"eps={e:g}: p_hat={p.p_hat:.4g}" for e, p in zip(epsilons, estimates))
        raise InsufficientDataError(
            f"only {k} of {len(epsilons)} levels have p_hat in [{lo}, {hi}] (need {MIN_POINTS}); {listing}"
        )
    x = np.log([e for e, u in zip(epsilons, used) if u])
    y = np.log([-math.log(p.p_hat) for p, u in zip(estimates, used) if u])
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    ss = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - float(resid @ resid) / ss if ss > 0 else 1.0
    return ScalingFit(process, None if H is None else float(H), [float(e) for e in epsilons],
                      list(estimates), float(slope), float(intercept), r2, used, tuple(band))


def fit_scaling(process: str, H, f, epsilons: Sequence[float], mc_config: MCConfig | Mapping,
                band=BAND) -> ScalingFit:
    """Estimate the small-deviation exponent by Monte Carlo.

    One batch is simulated and reused for every level.  Levels whose
    estimate falls outside ``band`` are dropped; fewer than four survivors
    raise :class:`InsufficientDataError` listing all points.
    """
    if process not in PROCESSES:
        raise InvalidArgumentError(f"process must be one of {PROCESSES}, got {process!r}")
    mc = mc_config if isinstance(mc_config, MCConfig) else MCConfig.from_dict(mc_config)
    eps = [float(e) for e in epsilons]
    if len(eps) < MIN_POINTS:
        raise InsufficientDataError(f"need at least {MIN_POINTS} levels, got {len(eps)}")
    batch = _batch(process, H, mc)
    fv = _as_f(f, batch.grid)
    zero = batch.grid.zeros()
    stat = sup_statistic(batch, zero, fv)
    ests = [mc_small_ball(batch, zero, fv, e, stat=stat) for e in eps]
    return fit_from_estimates(process, None if process == "wiener" else H, eps, ests, band)


@dataclass
class SandwichReport:
    rows: list[dict] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"rows": [dict(r) for r in self.rows]}

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\r\n")
        cols = ["epsilon", "p_hat", "stderr", "neglog", "lower", "upper", "ratio"]
        w.writerow(cols)
        for r in self.rows:
            w.writerow([repr(float(r[c])) for c in cols])
        return buf.getvalue()


def sandwich_scaling_report(H, f, g, epsilons: Sequence[float], mc_config: MCConfig | Mapping,
                            ladder: Sequence[int] = DEFAULT_LADDER) -> SandwichReport:
    """Per-level lower bound, trended MC estimate and best certificate upper bound.

    ``g`` is the FunctionSpec of the trend derivative.  The reference
    probability ``P0`` and the trended estimate come from one mixed batch.
    """
    mc = mc_config if isinstance(mc_config, MCConfig) else MCConfig.from_dict(mc_config)
    grid = make_grid(mc.T, mc.grid_n)
    gprime = sample(g, grid)
    split = solve_split(gprime, H)
    fv = _as_f(f, grid)
    trend = GridFunction(grid, np.concatenate([[0.0], np.cumsum(grid.dt * 0.5 * (gprime.values[1:] + gprime.values[:-1]))]))
    batch = gen_mixed(grid, H, mc.n_paths, mc.seed, mc.generator or "volterra")
    zero = grid.zeros()
    s0 = sup_statistic(batch, zero, fv)
    sg = sup_statistic(batch, trend, fv)
    eps = [float(e) for e in epsilons]
    P0 = {e: mc_small_ball(batch, zero, fv, e, stat=s0) for e in eps}
    certs = certificate_ladder(split, fv, eps, {e: P0[e].p_hat for e in eps}, ladder)
    rows = []
    for e in eps:
        est = mc_small_ball(batch, trend, fv, e, stat=sg)
        lo = lower_bound(split, P0[e].p_hat)
        up = min(c.upper for c in certs if c.epsilon == e)
        rows.append({
            "epsilon": e, "p_hat": est.p_hat, "stderr": est.stderr,
            "neglog": -math.log(est.p_hat) if est.p_hat > 0 else math.inf,
            "lower": lo, "upper": up, "asymptotic_upper": lo,
            "ratio": up / lo if lo > 0 else math.inf,
            "P0": P0[e].p_hat, "P0_stderr": P0[e].stderr,
        })
    return SandwichReport(rows)
