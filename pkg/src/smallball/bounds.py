"""Lower bound, smoothing certificates and the bounds report.

Given the optimal split with exponent ``E`` and a reference probability
``P0 = P(|W + B^H| <= eps f)``, the lower bound is ``exp(-E) P0``.  The upper
bound replaces ``h`` by a smooth ``h_n`` vanishing on ``[0, beta_n]``; with
``gW'_n = K*_T h_n`` it reads::

    upper = exp(-E) P0 + P0 (exp(eps C_n + c_n) - 1),
    C_n   = int f d|gW'_n| + f(T) |gW'_n(T)|,
    c_n   = ||gW' - gW'_n||^2 / 2 + ||h - h_n||^2 / 2.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from typing import Any, Mapping, Sequence

import numpy as np

from .errors import InvalidArgumentError
from .fractional import K_star_T
from .grid import FunctionSpec, GridFunction, TimeGrid, l2_norm, make_grid, sample
from .kernel import TrendSplit, solve_split

__all__ = [
    "BoundsReport",
    "DEFAULT_LADDER",
    "UpperBoundCertificate",
    "bounds_report",
    "certificate",
    "certificate_ladder",
    "lower_bound",
    "smooth_h",
]

DEFAULT_LADDER = (1, 2, 4, 8, 16)
SCHEMA_VERSION = 1


def _check_probability(P0) -> float:
    P0 = float(P0)
    if not (0.0 <= P0 <= 1.0):
        raise InvalidArgumentError(f"reference probability P0 must lie in [0, 1], got {P0!r}")
    return P0


def lower_bound(split: TrendSplit | float, P0: float) -> float:
    """``exp(-E) * P0``; ``split`` may also be the exponent itself."""
    P0 = _check_probability(P0)
    E = float(split.E if isinstance(split, TrendSplit) else split)
    if not E >= 0.0:
        raise InvalidArgumentError(f"exponent must be nonnegative, got {E!r}")
    return math.exp(-E) * P0


def _ramp(t: np.ndarray, beta: float) -> np.ndarray:
    # C^1 cubic: 0 up to beta, 1 from 2*beta on
    u = np.clip((t - beta) / beta, 0.0, 1.0)
    return u * u * (3.0 - 2.0 * u)


def _mollify(values: np.ndarray, grid: TimeGrid, width: float) -> np.ndarray:
    """Convolve node values with a normalized C^infinity bump of total width ``width``.

    Near the ends the kernel is renormalized over the part inside ``[0, T]``.
    A bump narrower than one cell leaves the values unchanged.
    """
    r = 0.5 * width
    k = int(math.floor(r / grid.dt))
    if k < 1:
        return values.copy()
    s = np.arange(-k, k + 1) * grid.dt / r
    inside = np.abs(s) < 1.0
    bump = np.zeros_like(s)
    bump[inside] = np.exp(-1.0 / (1.0 - s[inside] ** 2))
    num = np.convolve(values, bump, mode="same")
    den = np.convolve(np.ones_like(values), bump, mode="same")
    return num / den


def smooth_h(h: GridFunction, n: int) -> tuple[float, GridFunction]:
    """Smooth approximation ``h_n`` of ``h`` that vanishes on ``[0, beta_n]``.

    ``beta_n = T/(4n)``.  ``h`` is mollified with a bump of width ``T/(8n)``
    and then multiplied by a C^1 cubic ramp that is 0 on ``[0, beta_n]`` and 1
    on ``[2 beta_n, T]``.  Applying the ramp last keeps the support condition
    exact on the grid.
    """
    n = int(n)
    if n < 1:
        raise InvalidArgumentError(f"smoothing index must be >= 1, got {n}")
    grid = h.grid
    beta = grid.T / (4.0 * n)
    ramp = _ramp(grid.nodes, beta)
    values = ramp * _mollify(h.values, grid, grid.T / (8.0 * n))
    values[grid.nodes <= beta] = 0.0
    return beta, GridFunction(grid, values)


@dataclass(frozen=True)
class UpperBoundCertificate:
    """Finite-smoothing upper bound at one ``(n, epsilon)``."""

    n: int
    beta_n: float
    C_n: float
    c_n: float
    epsilon: float
    P0: float
    lower: float
    upper: float
    h_n: GridFunction | None = field(default=None, repr=False, compare=False)
    gW_prime_n: GridFunction | None = field(default=None, repr=False, compare=False)

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "beta_n": self.beta_n,
            "C_n": self.C_n,
            "c_n": self.c_n,
            "epsilon": self.epsilon,
            "upper": self.upper,
        }


def _as_boundary(f, grid: TimeGrid) -> GridFunction:
    if isinstance(f, FunctionSpec):
        f = sample(f, grid)
    if not isinstance(f, GridFunction):
        raise InvalidArgumentError(f"boundary must be a GridFunction or FunctionSpec, got {type(f).__name__}")
    if f.grid != grid:
        raise InvalidArgumentError("boundary and trend split live on different grids")
    if np.any(f.values <= 0.0):
        i = int(np.flatnonzero(f.values <= 0.0)[0])
        raise InvalidArgumentError(f"boundary f must be positive; f(t_{i}) = {f.values[i]!r}")
    return f


def _smoothing_constants(split: TrendSplit, f: GridFunction, n: int):
    """``(beta_n, h_n, gW'_n, C_n, c_n)``; independent of epsilon."""
    beta, h_n = smooth_h(split.h, n)
    gw_n = K_star_T(h_n, split.H)
    v = gw_n.values
    fm = 0.5 * (f.values[1:] + f.values[:-1])
    C_n = float(np.sum(fm * np.abs(np.diff(v))) + f.values[-1] * abs(v[-1]))
    c_n = 0.5 * l2_norm(split.gW_prime - gw_n) ** 2 + 0.5 * l2_norm(split.h - h_n) ** 2
    return beta, h_n, gw_n, C_n, c_n


def _upper(E, P0, epsilon, C_n, c_n):
    return math.exp(-E) * P0 + P0 * math.expm1(epsilon * C_n + c_n)


def certificate(split: TrendSplit, f, epsilon: float, n: int, P0: float) -> UpperBoundCertificate:
    """Upper-bound certificate for smoothing index ``n`` at level ``epsilon``."""
    epsilon = float(epsilon)
    if not epsilon > 0.0:
        raise InvalidArgumentError(f"epsilon must be positive, got {epsilon!r}")
    P0 = _check_probability(P0)
    f = _as_boundary(f, split.grid)
    beta, h_n, gw_n, C_n, c_n = _smoothing_constants(split, f, n)
    return UpperBoundCertificate(
        n=int(n), beta_n=beta, C_n=C_n, c_n=c_n, epsilon=epsilon, P0=P0,
        lower=lower_bound(split, P0), upper=_upper(split.E, P0, epsilon, C_n, c_n),
        h_n=h_n, gW_prime_n=gw_n,
    )


def certificate_ladder(split: TrendSplit, f, epsilons: Sequence[float], P0: Mapping[float, float],
                       ladder: Sequence[int] = DEFAULT_LADDER) -> list[UpperBoundCertificate]:
    """Certificates for every ``(epsilon, n)``; smoothing is done once per ``n``."""
    f = _as_boundary(f, split.grid)
    consts = {n: _smoothing_constants(split, f, n) for n in ladder}
    out = []
    for eps in epsilons:
        eps = float(eps)
        if not eps > 0.0:
            raise InvalidArgumentError(f"epsilon must be positive, got {eps!r}")
        p0 = _check_probability(P0[eps])
        lo = lower_bound(split, p0)
        for n in ladder:
            beta, h_n, gw_n, C_n, c_n = consts[n]
            out.append(UpperBoundCertificate(
                n=int(n), beta_n=beta, C_n=C_n, c_n=c_n, epsilon=eps, P0=p0, lower=lo,
                upper=_upper(split.E, p0, eps, C_n, c_n), h_n=h_n, gW_prime_n=gw_n,
            ))
    return out


def _key(eps: float) -> str:
    return repr(float(eps))


@dataclass
class BoundsReport:
    """Lower bounds and certificate ladders for a list of levels.

    ``P0`` maps each epsilon to ``(estimate, stderr)``; ``lower`` and
    ``asymptotic_upper`` map each epsilon to ``exp(-E) P0``.
    """

    H: float
    T: float
    grid_n: int
    exponent: float
    epsilons: list[float]
    P0: dict[float, tuple[float, float]]
    P0_source: str
    lower: dict[float, float]
    asymptotic_upper: dict[float, float]
    certificates: list[UpperBoundCertificate]
    split: TrendSplit | None = field(default=None, repr=False)

    def best_upper(self, epsilon: float) -> UpperBoundCertificate:
        eps = float(epsilon)
        return min((c for c in self.certificates if c.epsilon == eps), key=lambda c: c.upper)

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "H": self.H,
            "T": self.T,
            "grid_n": self.grid_n,
            "exponent": self.exponent,
            "epsilons": list(self.epsilons),
            "lower": {_key(e): self.lower[e] for e in self.epsilons},
            "asymptotic_upper": {_key(e): self.asymptotic_upper[e] for e in self.epsilons},
            "certificates": [c.to_dict() for c in self.certificates],
            "P0": {
                "estimate": {_key(e): self.P0[e][0] for e in self.epsilons},
                "stderr": {_key(e): self.P0[e][1] for e in self.epsilons},
                "source": self.P0_source,
            },
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "BoundsReport":
        eps = [float(e) for e in d["epsilons"]]
        p0 = {e: (float(d["P0"]["estimate"][_key(e)]), float(d["P0"]["stderr"][_key(e)])) for e in eps}
        lower = {e: float(d["lower"][_key(e)]) for e in eps}
        certs = [
            UpperBoundCertificate(
                n=int(c["n"]), beta_n=float(c["beta_n"]), C_n=float(c["C_n"]), c_n=float(c["c_n"]),
                epsilon=float(c["epsilon"]), P0=p0[float(c["epsilon"])][0],
                lower=lower[float(c["epsilon"])], upper=float(c["upper"]),
            )
            for c in d["certificates"]
        ]
        return cls(
            H=float(d["H"]), T=float(d["T"]), grid_n=int(d["grid_n"]), exponent=float(d["exponent"]),
            epsilons=eps, P0=p0, P0_source=str(d["P0"]["source"]), lower=lower,
            asymptotic_upper={e: float(d["asymptotic_upper"][_key(e)]) for e in eps},
            certificates=certs,
        )

    @classmethod
    def from_json(cls, text: str) -> "BoundsReport":
        return cls.from_dict(json.loads(text))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\r\n")
        w.writerow(["epsilon", "n", "beta_n", "C_n", "c_n", "P0", "P0_stderr", "lower", "upper"])
        for c in self.certificates:
            w.writerow([repr(c.epsilon), c.n, repr(c.beta_n), repr(c.C_n), repr(c.c_n),
                        repr(c.P0), repr(self.P0[c.epsilon][1]), repr(c.lower), repr(c.upper)])
        return buf.getvalue()


def _resolve_P0(P0_source, grid, H, fvals, epsilons):
    """Return ``({eps: (estimate, stderr)}, source_label)``.

    ``P0_source`` is a number (same for all levels), a mapping from epsilon to
    a number or an estimate, or an :class:`~smallball.simulate.MCRequest`.
    """
    from .simulate import MCEstimate, MCRequest, gen_mixed, mc_small_ball

    if isinstance(P0_source, MCRequest):
        batch = gen_mixed(grid, H, P0_source.n_paths, P0_source.seed, P0_source.generator)
        zero = grid.zeros()
        out = {}
        for e in epsilons:
            est = mc_small_ball(batch, zero, fvals, e)
            out[e] = (est.p_hat, est.stderr)
        return out, "mc"
    if isinstance(P0_source, (int, float)):
        return {e: (_check_probability(P0_source), 0.0) for e in epsilons}, "user"
    if isinstance(P0_source, Mapping):
        out = {}
        for e in epsilons:
            if e not in P0_source:
                raise InvalidArgumentError(f"no reference probability supplied for epsilon={e!r}")
            v = P0_source[e]
            if isinstance(v, MCEstimate):
                out[e] = (v.p_hat, v.stderr)
            else:
                out[e] = (_check_probability(v), 0.0)
        return out, "user"
    raise InvalidArgumentError(f"unsupported P0 source {type(P0_source).__name__}")


def bounds_report(gspec: FunctionSpec, fspec: FunctionSpec, H, T: float, n_grid: int,
                  epsilons: Sequence[float], P0_source, ladder: Sequence[int] = DEFAULT_LADDER,
                  split: TrendSplit | None = None) -> BoundsReport:
    """Solve the split for trend derivative ``gspec`` and bound every level.

    ``gspec`` describes ``g'``; the trend itself is ``g(t) = int_0^t g'``.
    """
    grid = make_grid(T, n_grid)
    H = float(H)
    if split is None:
        split = solve_split(sample(gspec, grid), H)
    fvals = _as_boundary(fspec, grid)
    eps = [float(e) for e in epsilons]
    if not eps:
        raise InvalidArgumentError("at least one epsilon is required")
    P0, source = _resolve_P0(P0_source, grid, H, fvals, eps)
    certs = certificate_ladder(split, fvals, eps, {e: P0[e][0] for e in eps}, ladder)
    lower = {e: lower_bound(split, P0[e][0]) for e in eps}
    return BoundsReport(
        H=H, T=grid.T, grid_n=grid.n, exponent=split.E, epsilons=eps, P0=P0, P0_source=source,
        lower=lower, asymptotic_upper=dict(lower), certificates=certs, split=split,
    )
