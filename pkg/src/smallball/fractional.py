"""Riemann-Liouville integrals and the weighted operators K, K*.

With ``a = 1/2 - H`` the four weighted operators on ``[0, T]`` are::

    K*_0 f (t) = C1^-1 t^-a  I^a_0   (u^a  f)(t)
    K*_T f (t) = C1^-1 t^a   I^a_T-  (u^-a f)(t)
    K_T  f (t) = C1    t^a   D^a_T-  (u^-a f)(t)
    K_0  h (t) = C1    t^-a  D^a_0   (u^a  h)(t)

All integrals are discretized by first-order product integration: the
regular part of the integrand is interpolated piecewise linearly and the
singular factors ``|t - z|^(order-1)`` and ``z^gamma`` are integrated exactly
cell by cell (see :func:`smallball.quadrature.cell_moments`).  Because the
schemes are linear, every operator is a dense matrix, cached per grid.

``K_T`` is evaluated through its integrated-by-parts form::

    D^a_T- phi (t) = [ (T-t)^-a phi(T) - int_t^T (z-t)^-a phi'(z) dz ] / Gamma(1-a)

so no singular integral is ever differentiated numerically.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import gamma as gamma_fn

from .errors import InvalidArgumentError, SmoothnessError
from .grid import FunctionSpec, GridFunction, HurstIndex, TimeGrid, sample, sample_derivative
from .quadrature import cell_moments, jacobi_rule

__all__ = [
    "OperatorConstants",
    "K_0",
    "K_T",
    "K_T_cell_average",
    "K_star_0",
    "K_star_T",
    "constants",
    "K_star_0_matrix_at",
    "operator_matrix",
    "product_matrix_at",
    "rl_left",
    "rl_right",
]


@dataclass(frozen=True)
class OperatorConstants:
    H: float
    C1: float
    C2: float


def constants(H) -> OperatorConstants:
    """``C1 = sqrt(2H G(H+1/2) G(3/2-H) / G(2-2H))`` and ``C2 = C1^-2 / G(1/2-H)^2``."""
    H = HurstIndex(H)
    c1_sq = 2.0 * H * gamma_fn(H + 0.5) * gamma_fn(1.5 - H) / gamma_fn(2.0 - 2.0 * H)
    c1 = math.sqrt(c1_sq)
    c2 = 1.0 / (c1_sq * gamma_fn(0.5 - H) ** 2)
    return OperatorConstants(float(H), c1, float(c2))


def _order(alpha):
    alpha = float(alpha)
    if not (0.0 < alpha < 1.0):
        raise InvalidArgumentError(f"fractional order must lie in (0, 1), got {alpha}")
    return alpha


@lru_cache(maxsize=32)
def _product_matrix(T, n, order, gamma, side):
    """Matrix of ``f -> int |t_i - z|^(order-1) z^gamma f(z) dz`` for piecewise-linear f.

    Row 0 of right-sided matrices with ``order - 1 + gamma <= -1`` (divergent
    at t=0) is left zero; callers multiply it by a vanishing weight anyway.
    """
    grid = TimeGrid(T, n)
    t = grid.nodes
    rows = np.arange(n + 1)
    if side == "right" and order - 1.0 + gamma <= -1.0:
        rows = rows[1:]
    m0, m1 = cell_moments(t[rows], t, order, gamma, side)
    mat = np.zeros((n + 1, n + 1))
    mat[rows, :-1] += m0 - m1
    mat[rows, 1:] += m1
    mat.setflags(write=False)
    return mat


def product_matrix_at(points, grid: TimeGrid, order: float, gamma: float, side: str) -> np.ndarray:
    """Rows of :func:`_product_matrix` at arbitrary points in ``[0, T]``."""
    t = grid.nodes
    m0, m1 = cell_moments(np.asarray(points, float), t, order, gamma, side)
    mat = np.zeros((m0.shape[0], grid.n + 1))
    mat[:, :-1] += m0 - m1
    mat[:, 1:] += m1
    return mat


def K_star_0_matrix_at(points, grid: TimeGrid, H) -> np.ndarray:
    """Matrix mapping node values of x to ``(K*_0 x)(u)`` at points ``u > 0``."""
    H = float(HurstIndex(H))
    a = 0.5 - H
    u = np.asarray(points, float)
    P = product_matrix_at(u, grid, a, a, "left")
    return (u ** -a / (constants(H).C1 * gamma_fn(a)))[:, None] * P


@lru_cache(maxsize=32)
def _cell_matrix(T, n, order, gamma, side):
    """Like :func:`_product_matrix` but for piecewise-constant data (one column per cell)."""
    grid = TimeGrid(T, n)
    t = grid.nodes
    rows = np.arange(n + 1)
    if side == "right" and order - 1.0 + gamma <= -1.0:
        rows = rows[1:]
    m0, _ = cell_moments(t[rows], t, order, gamma, side)
    mat = np.zeros((n + 1, n))
    mat[rows] = m0
    mat.setflags(write=False)
    return mat


@lru_cache(maxsize=32)
def operator_matrix(name: str, T: float, n: int, H: float) -> np.ndarray:
    """Dense matrix of one of ``rl`` operators or ``K_star_0``, ``K_star_T``, ``K_T``, ``K_0``.

    Endpoint rows follow the analytic limits: ``K*_0`` and ``K*_T`` vanish at
    0, ``K*_T`` at T.  ``K_T f`` and ``K_0 h`` are generally unbounded at the
    endpoints (like ``t^(H-1/2)``); those rows are zero by convention.
    """
    H = float(HurstIndex(H))
    a = 0.5 - H
    c = constants(H)
    grid = TimeGrid(T, n)
    t = grid.nodes
    mat = np.zeros((n + 1, n + 1))
    inner = slice(1, n + 1)
    if name == "K_star_0":
        P = _product_matrix(T, n, a, a, "left")
        mat[inner] = (t[inner] ** -a / (c.C1 * gamma_fn(a)))[:, None] * P[inner]
    elif name == "K_star_T":
        P = _product_matrix(T, n, a, -a, "right")
        mat[1:n] = (t[1:n] ** a / (c.C1 * gamma_fn(a)))[:, None] * P[1:n]
    elif name == "K_T":
        b = 1.0 - a
        # -int (z-t)^-a z^-a f'(z) dz with f' the exact cell slopes of the interpolant
        S = _cell_matrix(T, n, b, -a, "right") / grid.dt
        D = np.zeros((n + 1, n + 1))
        D[:, 1:] += S
        D[:, :-1] -= S
        Q = _product_matrix(T, n, b, -a - 1.0, "right")
        body = -D + a * Q
        rows = slice(1, n)
        bnd = np.zeros((n + 1, n + 1))
        bnd[rows, n] = (T - t[rows]) ** -a * T ** -a
        mat[rows] = (c.C1 * t[rows] ** a / gamma_fn(b))[:, None] * (bnd[rows] + body[rows])
    elif name == "K_0":
        # D^a_0 psi (t) = [ t^-a psi(0) + int_0^t (t-z)^-a psi'(z) dz ] / Gamma(1-a)
        # with psi = z^a h(z): psi(0) = 0 and psi' = a z^(a-1) h + z^a h'
        b = 1.0 - a
        S = _cell_matrix(T, n, b, a, "left") / grid.dt
        D = np.zeros((n + 1, n + 1))
        D[:, 1:] += S
        D[:, :-1] -= S
        Q = _product_matrix(T, n, b, a - 1.0, "left")
        rows = slice(1, n + 1)
        mat[rows] = (c.C1 * t[rows] ** -a / gamma_fn(b))[:, None] * (D[rows] + a * Q[rows])
    else:
        raise InvalidArgumentError(f"unknown operator {name!r}")
    mat.setflags(write=False)
    return mat


def _as_function(f, grid=None) -> GridFunction:
    if isinstance(f, GridFunction):
        return f
    if isinstance(f, FunctionSpec):
        if grid is None:
            raise InvalidArgumentError("sampling a FunctionSpec needs a grid")
        return sample(f, grid)
    raise InvalidArgumentError(f"expected a GridFunction, got {type(f).__name__}")


def rl_left(f: GridFunction, alpha: float) -> GridFunction:
    """``(I^alpha_0 f)(t_i)`` by product integration; zero at ``t_0``."""
    alpha = _order(alpha)
    g = f.grid
    P = _product_matrix(g.T, g.n, alpha, 0.0, "left")
    return GridFunction(g, (P @ f.values) / gamma_fn(alpha))


def rl_right(f: GridFunction, alpha: float) -> GridFunction:
    """``(I^alpha_T- f)(t_i)``; zero at ``t_n``."""
    alpha = _order(alpha)
    g = f.grid
    P = _product_matrix(g.T, g.n, alpha, 0.0, "right")
    return GridFunction(g, (P @ f.values) / gamma_fn(alpha))


def K_star_0(f: GridFunction, H) -> GridFunction:
    g = f.grid
    return GridFunction(g, operator_matrix("K_star_0", g.T, g.n, float(H)) @ f.values)


def K_star_T(f: GridFunction, H) -> GridFunction:
    g = f.grid
    return GridFunction(g, operator_matrix("K_star_T", g.T, g.n, float(H)) @ f.values)


def _check_smooth(f: GridFunction, factor: float = 8.0):
    # a jump shows up as one cell slope far above both neighbours and the mean slope
    s = np.abs(np.diff(f.values)) / f.grid.dt
    if s.size < 3:
        return
    ref = np.maximum(np.maximum(np.r_[s[1], s[:-1]], np.r_[s[1:], s[-2]]), s.mean())
    flagged = s > factor * ref + 1e-12
    # end cells may carry integrable power-type behaviour such as t^a
    flagged[[0, -1]] = False
    bad = np.flatnonzero(flagged)
    if bad.size:
        i = int(bad[0])
        raise SmoothnessError(
            f"K_T needs a continuously differentiable input; the tabulated function "
            f"jumps in cell [{f.grid.nodes[i]:.6g}, {f.grid.nodes[i + 1]:.6g}]"
        )


def K_T(f, H, fprime: GridFunction | None = None, grid: TimeGrid | None = None) -> GridFunction:
    """``K_T f`` for a C^1 function ``f`` given as a FunctionSpec or grid samples.

    By default the derivative is the exact cell slope of the piecewise-linear
    interpolant, which makes the result exact for that interpolant.  An
    explicit ``fprime`` (node values, e.g. a finite-difference derivative) is
    used instead when given.  Tabulated inputs are screened for jumps.
    """
    if isinstance(f, FunctionSpec):
        if not f.is_smooth:
            raise SmoothnessError(f"K_T needs a C^1 function; {f.kind} with {f.params} is not")
        if f.kind == "tabulated":
            pass
        elif grid is not None and fprime is None:
            fprime = sample_derivative(f, grid)
        f = _as_function(f, grid)
    else:
        _check_smooth(f)
    g = f.grid
    if fprime is None:
        return GridFunction(g, operator_matrix("K_T", g.T, g.n, float(H)) @ f.values)
    H = float(HurstIndex(H))
    a = 0.5 - H
    b = 1.0 - a
    c = constants(H)
    t = g.nodes
    Pd = _product_matrix(g.T, g.n, b, -a, "right")
    Q = _product_matrix(g.T, g.n, b, -a - 1.0, "right")
    out = np.zeros(g.n + 1)
    rows = slice(1, g.n)
    body = -(Pd @ fprime.values) + a * (Q @ f.values)
    bnd = (g.T - t[rows]) ** -a * g.T ** -a * f.values[-1]
    out[rows] = c.C1 * t[rows] ** a / gamma_fn(b) * (bnd + body[rows])
    return GridFunction(g, out)


def K_0(h: GridFunction, H) -> GridFunction:
    """``K_0 h``; the left inverse of ``K*_0`` (used for diagnostics)."""
    g = h.grid
    return GridFunction(g, operator_matrix("K_0", g.T, g.n, float(H)) @ h.values)


_FIRST_CELL_NODES = 24
_CELL_NODES = 8


@lru_cache(maxsize=16)
def _cell_average_matrix(T, n, H):
    a = 0.5 - H
    b = 1.0 - a
    c = constants(H)
    grid = TimeGrid(T, n)
    t, D = grid.nodes, grid.dt
    # Psi(s) = int_s^T (z-s)^-a z^-a f(z) dz at the nodes
    Psi = _product_matrix(T, n, b, -a, "right")
    A = (t[:-1] ** a)[:, None] * Psi[:-1] - (t[1:] ** a)[:, None] * Psi[1:]
    # a int_cell s^(a-1) Psi(s) ds with Psi evaluated exactly inside the cells,
    # since Psi - Psi(0) ~ s^(2H) is far from linear near 0; on the first cell
    # s = dt u^4 with a Gauss-Jacobi rule in u for the weight u^(4a-1)
    x, w = jacobi_rule(_FIRST_CELL_NODES, 0.0, 4.0 * a - 1.0)
    u = 0.5 * (1.0 + x)
    Psi_u = product_matrix_at(D * u ** 4, grid, b, -a, "right")
    A[0] += a * 4.0 * D ** a * 0.5 ** (4.0 * a) * (w @ Psi_u)
    xg, wg = jacobi_rule(_CELL_NODES, 0.0, 0.0)
    pts = (t[1:-1, None] + 0.5 * D * (1.0 + xg)).ravel()
    wts = (0.5 * D * wg * pts.reshape(n - 1, -1) ** (a - 1.0))
    Psi_p = product_matrix_at(pts, grid, b, -a, "right").reshape(n - 1, xg.size, n + 1)
    A[1:] += a * np.einsum("ck,ckj->cj", wts, Psi_p)
    A *= c.C1 / (gamma_fn(b) * D)
    A.setflags(write=False)
    return A


def K_T_cell_average(f: GridFunction, H) -> np.ndarray:
    """Cell averages ``dt^-1 int_{t_j}^{t_{j+1}} (K_T f)(s) ds``, shape ``(n,)``.

    Uses ``s^a D^a_T- phi = -s^a d/ds I^(1-a)_T- phi`` and integrates by parts
    over each cell, so only node values of ``I^(1-a)_T- (u^-a f)`` are needed
    and the ``(T-s)^-a`` and ``s^-a`` endpoint singularities of ``K_T f`` are
    integrated exactly.  These averages are the integrands that multiply
    Wiener increments in ``int f dB^H = int (K_T f) dB``.
    """
    g = f.grid
    return _cell_average_matrix(g.T, g.n, float(HurstIndex(H))) @ f.values
