"""Uniform time grids, sampled functions and elementary quadrature.

Every operator in the package consumes and produces :class:`GridFunction`
objects living on a :class:`TimeGrid`.  Singular integrands never go through
the trapezoidal helpers defined here; they are handled by product integration
in :mod:`smallball.fractional` and :mod:`smallball.kernel`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Any, Mapping

import numpy as np

from .errors import EvaluationError, InvalidArgumentError

__all__ = [
    "FunctionSpec",
    "GridFunction",
    "HurstIndex",
    "TimeGrid",
    "cumulative_integral",
    "l2_inner",
    "l2_norm",
    "make_grid",
    "sample",
    "sample_derivative",
]


class HurstIndex(float):
    """A Hurst index restricted to the open interval (0, 1/2)."""

    def __new__(cls, value):
        value = float(value)
        if not (0.0 < value < 0.5):
            raise InvalidArgumentError(
                f"Hurst index must lie strictly inside (0, 1/2), got {value!r}"
            )
        return super().__new__(cls, value)


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid ``t_i = i*T/n`` on ``[0, T]``."""

    T: float
    n: int

    def __post_init__(self):
        if not (isinstance(self.T, (int, float)) and math.isfinite(self.T) and self.T > 0):
            raise InvalidArgumentError(f"horizon T must be positive and finite, got {self.T!r}")
        if int(self.n) != self.n or self.n < 2:
            raise InvalidArgumentError(f"node-interval count n must be an integer >= 2, got {self.n!r}")
        object.__setattr__(self, "T", float(self.T))
        object.__setattr__(self, "n", int(self.n))

    @property
    def dt(self) -> float:
        return self.T / self.n

    @cached_property
    def nodes(self) -> np.ndarray:
        t = np.arange(self.n + 1) * (self.T / self.n)
        t[-1] = self.T
        t.setflags(write=False)
        return t

    @cached_property
    def weights(self) -> np.ndarray:
        """Trapezoidal weights for ``int_0^T u(t) dt``."""
        w = np.full(self.n + 1, self.dt)
        w[0] = w[-1] = 0.5 * self.dt
        w.setflags(write=False)
        return w

    def zeros(self) -> "GridFunction":
        return GridFunction(self, np.zeros(self.n + 1))

    def __len__(self):
        return self.n + 1


def make_grid(T: float, n: int) -> TimeGrid:
    return TimeGrid(T, n)


@dataclass(frozen=True, eq=False)
class GridFunction:
    """Real values sampled at every node of a grid (immutable)."""

    grid: TimeGrid
    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.shape != (self.grid.n + 1,):
            raise InvalidArgumentError(
                f"expected {self.grid.n + 1} values for this grid, got shape {v.shape}"
            )
        if not np.all(np.isfinite(v)):
            bad = int(np.flatnonzero(~np.isfinite(v))[0])
            raise InvalidArgumentError(f"grid function value at node {bad} is not finite")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def t(self) -> np.ndarray:
        return self.grid.nodes

    def _other(self, other):
        if isinstance(other, GridFunction):
            if other.grid != self.grid:
                raise InvalidArgumentError("grid functions live on different grids")
            return other.values
        return other

    def __add__(self, other):
        return GridFunction(self.grid, self.values + self._other(other))

    __radd__ = __add__

    def __sub__(self, other):
        return GridFunction(self.grid, self.values - self._other(other))

    def __rsub__(self, other):
        return GridFunction(self.grid, self._other(other) - self.values)

    def __mul__(self, other):
        return GridFunction(self.grid, self.values * self._other(other))

    __rmul__ = __mul__

    def __neg__(self):
        return GridFunction(self.grid, -self.values)

    def __repr__(self):
        return f"GridFunction(T={self.grid.T}, n={self.grid.n}, max|v|={np.max(np.abs(self.values)):.4g})"


_KINDS = {
    "constant": ("c",),
    "linear": ("a",),
    "power": ("a", "p"),
    "sine": ("a", "omega"),
    "tabulated": ("values",),
}
_OPTIONAL = {"linear": ("b",), "tabulated": ("times",)}


@dataclass(frozen=True)
class FunctionSpec:
    """A function from a closed family, or tabulated values.

    ``kind`` is one of ``constant`` (c), ``linear`` (a*t + b, ``b`` optional
    and 0 by default), ``power`` (a*t**p,
    p > -1/2), ``sine`` (a*sin(omega*t)) or ``tabulated`` (``values`` on a
    uniform grid over the target horizon, optionally with explicit ``times``).
    """

    kind: str
    params: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise InvalidArgumentError(f"unknown function kind {self.kind!r}; expected one of {sorted(_KINDS)}")
        missing = [k for k in _KINDS[self.kind] if k not in self.params]
        if missing:
            raise InvalidArgumentError(f"{self.kind} function needs parameter(s) {missing}")
        extra = sorted(set(self.params) - set(_KINDS[self.kind]) - set(_OPTIONAL.get(self.kind, ())))
        if extra:
            raise InvalidArgumentError(f"{self.kind} function does not take parameter(s) {extra}")
        if self.kind == "power" and not float(self.params["p"]) > -0.5:
            raise InvalidArgumentError(
                f"power exponent p must exceed -1/2 for square integrability, got {self.params['p']}"
            )
        if self.kind == "tabulated" and len(self.params["values"]) < 2:
            raise InvalidArgumentError("tabulated function needs at least two values")

    @classmethod
    def constant(cls, c):
        return cls("constant", {"c": float(c)})

    @classmethod
    def linear(cls, a, b=None):
        params = {"a": float(a)}
        if b is not None:
            params["b"] = float(b)
        return cls("linear", params)

    @classmethod
    def power(cls, a, p):
        return cls("power", {"a": float(a), "p": float(p)})

    @classmethod
    def sine(cls, a, omega):
        return cls("sine", {"a": float(a), "omega": float(omega)})

    @classmethod
    def tabulated(cls, values, times=None):
        params = {"values": [float(v) for v in values]}
        if times is not None:
            params["times"] = [float(t) for t in times]
        return cls("tabulated", params)

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "FunctionSpec":
        d = dict(d)
        kind = d.pop("kind", None)
        if kind is None:
            raise InvalidArgumentError("function description needs a 'kind' field")
        return cls(kind, d)

    def to_dict(self) -> dict:
        return {"kind": self.kind, **{k: v for k, v in self.params.items()}}

    @property
    def is_smooth(self) -> bool:
        """True when the family member is C^1 on [0, T]."""
        if self.kind == "power":
            p = float(self.params["p"])
            return p == 0 or p >= 1
        return self.kind != "tabulated"

    def _tab_times(self, T):
        vals = self.params["values"]
        times = self.params.get("times")
        if times is None:
            return np.linspace(0.0, T, len(vals))
        return np.asarray(times, dtype=float)

    def evaluate(self, t: np.ndarray, T: float | None = None) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        p = self.params
        if self.kind == "constant":
            return np.full_like(t, float(p["c"]))
        if self.kind == "linear":
            return float(p["a"]) * t + float(p.get("b", 0.0))
        if self.kind == "power":
            a, e = float(p["a"]), float(p["p"])
            with np.errstate(divide="ignore"):
                return a * np.power(t, e) if e != 0 else np.full_like(t, a)
        if self.kind == "sine":
            return float(p["a"]) * np.sin(float(p["omega"]) * t)
        T = float(t.max()) if T is None else T
        return np.interp(t, self._tab_times(T), np.asarray(p["values"], dtype=float))

    def derivative(self, t: np.ndarray, T: float | None = None) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        p = self.params
        if self.kind == "constant":
            return np.zeros_like(t)
        if self.kind == "linear":
            return np.full_like(t, float(p["a"]))
        if self.kind == "power":
            a, e = float(p["a"]), float(p["p"])
            if e == 0:
                return np.zeros_like(t)
            with np.errstate(divide="ignore"):
                return a * e * np.power(t, e - 1.0)
        if self.kind == "sine":
            a, w = float(p["a"]), float(p["omega"])
            return a * w * np.cos(w * t)
        T = float(t.max()) if T is None else T
        times = self._tab_times(T)
        slopes = np.gradient(np.asarray(p["values"], dtype=float), times)
        return np.interp(t, times, slopes)


def _check_finite(values, grid, what):
    bad = np.flatnonzero(~np.isfinite(values))
    if bad.size:
        i = int(bad[0])
        raise EvaluationError(f"{what} is not finite at node {i} (t={grid.nodes[i]:.6g})")


def sample(spec: FunctionSpec, grid: TimeGrid) -> GridFunction:
    """Evaluate ``spec`` at every node.

    A power function with negative exponent is infinite at ``t = 0``; the node
    then carries the mean of the function over the half cell ``[0, dt/2]``,
    which is finite whenever ``p > -1/2``.
    """
    values = spec.evaluate(grid.nodes, grid.T)
    if spec.kind == "power" and float(spec.params["p"]) < 0:
        a, e = float(spec.params["a"]), float(spec.params["p"])
        values[0] = a * (0.5 * grid.dt) ** e / (e + 1.0)
    _check_finite(values, grid, f"{spec.kind} function")
    return GridFunction(grid, values)


def sample_derivative(spec: FunctionSpec, grid: TimeGrid) -> GridFunction:
    values = spec.derivative(grid.nodes, grid.T)
    _check_finite(values, grid, f"derivative of {spec.kind} function")
    return GridFunction(grid, values)


def _same_grid(u: GridFunction, v: GridFunction):
    if u.grid != v.grid:
        raise InvalidArgumentError("l2_inner needs both functions on the same grid")


def l2_inner(u: GridFunction, v: GridFunction) -> float:
    """Trapezoidal approximation of ``int_0^T u v dt``."""
    _same_grid(u, v)
    return float(np.dot(u.grid.weights, u.values * v.values))


def l2_norm(u: GridFunction) -> float:
    return math.sqrt(max(l2_inner(u, u), 0.0))


def cumulative_integral(u: GridFunction) -> GridFunction:
    """``t -> int_0^t u`` by the cumulative trapezoidal rule."""
    v = u.values
    out = np.concatenate([[0.0], np.cumsum(0.5 * u.grid.dt * (v[1:] + v[:-1]))])
    return GridFunction(u.grid, out)
