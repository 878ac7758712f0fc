"""Quadrature primitives for weakly singular integrands.

Two tools live here:

* :func:`cell_moments` computes, for many evaluation points at once, the
  zeroth and first moments of ``|t - z|**(order - 1) * z**gamma`` over every
  cell of a uniform partition, restricted to ``z < t`` (left) or ``z > t``
  (right).  Cells touching an algebraic singularity are integrated with a
  Gauss-Jacobi rule carrying that singularity as its weight, all other cells
  with Gauss-Legendre, so every moment is accurate to rounding.  These moments
  are the building blocks of first-order product integration.
* :func:`adaptive_gauss_legendre` is a plain panel-bisection integrator for
  smooth scalar integrands.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np
from scipy.special import roots_jacobi, roots_legendre

__all__ = ["adaptive_gauss_legendre", "cell_moments", "gauss_rule", "jacobi_rule"]

_NODES = 16
# rows processed per block; bounds peak memory at about rows*cells*_NODES doubles
_BLOCK_ENTRIES = 400_000


@lru_cache(maxsize=None)
def jacobi_rule(n: int, p: float, q: float):
    """Nodes/weights on [-1, 1] for the weight ``(1-x)**p * (1+x)**q``."""
    if p == 0.0 and q == 0.0:
        x, w = roots_legendre(n)
    else:
        # p + q == -1 hits a harmless 0/0 in scipy's recurrence setup
        with np.errstate(invalid="ignore", divide="ignore"):
            x, w = roots_jacobi(n, p, q)
    x.setflags(write=False)
    w.setflags(write=False)
    return x, w


def gauss_rule(n: int):
    return jacobi_rule(n, 0.0, 0.0)


def _is_int(x: float) -> bool:
    return float(x).is_integer() and x >= 0


def cell_moments(t, edges, order: float, gamma: float, side: str, n_nodes: int = _NODES):
    """Moments of ``|t-z|^(order-1) z^gamma`` over partition cells.

    Parameters
    ----------
    t : array_like, shape (P,)
        Evaluation points in ``[edges[0], edges[-1]]``; they need not be edges.
    edges : array_like, shape (C+1,)
        Increasing cell boundaries with ``edges[0] == 0``.
    order : float
        Fractional order in (0, 1]; the distance factor is
        ``|t - z|**(order - 1)``.
    gamma : float
        Power weight exponent; ``z**gamma`` must be integrable at 0 together
        with the distance factor.
    side : {"left", "right"}
        Integrate over ``z < t`` or ``z > t``.

    Returns
    -------
    m0, m1 : ndarray, shape (P, C)
        ``m0[p, c] = int w`` and ``m1[p, c] = int w * (z - a_c)/(b_c - a_c)``
        over ``[a_c, b_c]`` intersected with the requested side of ``t_p``.

    Notes
    -----
    A cell whose near end lies closer to ``t`` than half its length is split;
    the near half is integrated in the variable ``v = log|t - z|``, in which
    the integrand is analytic, so off-grid evaluation points lose no accuracy.
    """
    t = np.atleast_1d(np.asarray(t, dtype=float))
    edges = np.asarray(edges, dtype=float)
    if side not in ("left", "right"):
        raise ValueError(f"side must be 'left' or 'right', got {side!r}")
    a, b = edges[:-1], edges[1:]
    width = b - a
    P, C = t.size, a.size
    m0 = np.zeros((P, C))
    m1 = np.zeros((P, C))
    s = float(order) - 1.0
    gamma = float(gamma)
    zero_singular = not _is_int(gamma)
    rows = max(1, _BLOCK_ENTRIES // max(C * n_nodes // 8, 1))
    for r0 in range(0, P, rows):
        tb = t[r0:r0 + rows, None]
        shape = (tb.shape[0], C)
        if side == "left":
            lo = np.broadcast_to(a, shape).copy()
            hi = np.minimum(b, tb)
            at_t = hi == tb
            gap = tb - hi
        else:
            lo = np.maximum(a, tb)
            hi = np.broadcast_to(b, shape).copy()
            at_t = lo == tb
            gap = lo - tb
        valid = hi > lo
        near = valid & ~at_t & (s != 0.0) & (gap < 0.5 * (hi - lo))
        # the near half of a near-singular cell is handled separately below
        if near.any():
            mid = 0.5 * (lo + hi)
            if side == "left":
                hi = np.where(near, mid, hi)
            else:
                lo = np.where(near, mid, lo)
        absorb_dist = valid & at_t & (s != 0.0)
        absorb_zero = valid & (lo == 0.0) & zero_singular
        tt = np.broadcast_to(tb, shape)
        aa = np.broadcast_to(a, shape)
        ww = np.broadcast_to(width, shape)
        out0 = m0[r0:r0 + rows]
        out1 = m1[r0:r0 + rows]
        for fd in (False, True):
            for fz in (False, True):
                sel = valid & (absorb_dist == fd) & (absorb_zero == fz)
                if not sel.any():
                    continue
                dist_exp = s if fd else 0.0
                zero_exp = gamma if fz else 0.0
                if side == "left":
                    pe, qe = dist_exp, zero_exp
                else:
                    pe, qe = 0.0, dist_exp + zero_exp
                x, w = jacobi_rule(n_nodes, pe, qe)
                L, Hh = lo[sel][:, None], hi[sel][:, None]
                half = 0.5 * (Hh - L)
                z = L + half * (1.0 + x)
                g = np.ones_like(z)
                if not fd and s != 0.0:
                    g = g * np.abs(tt[sel][:, None] - z) ** s
                if not fz and gamma != 0.0:
                    g = g * z ** gamma
                scale = half[:, 0] ** (pe + qe + 1.0)
                frac = (z - aa[sel][:, None]) / ww[sel][:, None]
                out0[sel] = scale * (g @ w)
                out1[sel] = scale * ((g * frac) @ w)
        if near.any():
            _near_halves(out0, out1, near, tt, aa, ww, lo, hi, gap, s, gamma, side, n_nodes)
    if side == "right" and zero_singular and gamma != 0.0:
        # z^gamma blows up at distance t from the absorbed end of the first cell
        for p in np.flatnonzero((t > 0.0) & (t < 0.5 * b[0])):
            m0[p, 0], m1[p, 0] = _graded_first_cell(t[p], b[0], s, gamma, n_nodes)
    return m0, m1


def _graded_first_cell(t, b0, s, gamma, n_nodes):
    """``int_t^b0 (z-t)^s z^gamma [1, z/b0] dz`` on panels ``[t 2^k, t 2^(k+1)]``."""
    x, w = jacobi_rule(n_nodes, 0.0, s)
    z = t + 0.5 * t * (1.0 + x)
    g = (0.5 * t) ** (s + 1.0) * w * z ** gamma
    r0, r1 = g.sum(), (g * z).sum() / b0
    xl, wl = gauss_rule(n_nodes)
    lo = 2.0 * t
    while lo < b0:
        hi = min(2.0 * lo, b0)
        z = lo + 0.5 * (hi - lo) * (1.0 + xl)
        g = 0.5 * (hi - lo) * wl * (z - t) ** s * z ** gamma
        r0 += g.sum()
        r1 += (g * z).sum() / b0
        lo = hi
    return r0, r1


def _near_halves(out0, out1, near, tt, aa, ww, lo, hi, gap, s, gamma, side, n_nodes):
    """Add the near-half contributions using ``|t - z| = gap * exp(v)``."""
    d = gap[near]
    # after the split, [lo, hi] holds the far half; the near half has the same length
    length = hi[near] - lo[near]
    V = np.log((d + length) / d)
    panels = np.maximum(1, np.ceil(V)).astype(int)
    x, w = gauss_rule(n_nodes)
    t_n, a_n, w_n = tt[near], aa[near], ww[near]
    sgn = -1.0 if side == "left" else 1.0
    r0 = np.zeros(d.size)
    r1 = np.zeros(d.size)
    for k in np.unique(panels):
        sel = panels == k
        h = V[sel] / k
        starts = h[:, None] * np.arange(k)
        v = (starts[:, :, None] + (0.5 * h)[:, None, None] * (1.0 + x)).reshape(sel.sum(), -1)
        wv = np.broadcast_to((0.5 * h)[:, None, None] * w, (sel.sum(), k, x.size)).reshape(sel.sum(), -1)
        r = d[sel][:, None] * np.exp(v)
        z = t_n[sel][:, None] + sgn * r
        g = r ** (s + 1.0) * wv
        if gamma != 0.0:
            g = g * z ** gamma
        r0[sel] = g.sum(axis=1)
        r1[sel] = (g * (z - a_n[sel][:, None]) / w_n[sel][:, None]).sum(axis=1)
    out0[near] += r0
    out1[near] += r1


def adaptive_gauss_legendre(f, a: float, b: float, tol: float = 1e-13, order: int = 20,
                            max_depth: int = 40) -> float:
    """Integrate a smooth vectorized ``f`` over ``[a, b]`` by panel bisection.

    Each panel is accepted when an ``order``-point rule and the sum of the
    rules on its two halves agree to ``tol`` relative to the running total.
    """
    x, w = gauss_rule(order)

    def rule(lo, hi):
        h = 0.5 * (hi - lo)
        return h * float(np.dot(w, f(lo + h * (1.0 + x))))

    total_guess = abs(rule(a, b)) or 1.0
    stack = [(a, b, rule(a, b), 0)]
    result = 0.0
    while stack:
        lo, hi, whole, depth = stack.pop()
        mid = 0.5 * (lo + hi)
        left, right = rule(lo, mid), rule(mid, hi)
        if abs(left + right - whole) <= tol * total_guess or depth >= max_depth:
            result += left + right
        else:
            stack.append((lo, mid, left, depth + 1))
            stack.append((mid, hi, right, depth + 1))
    return result
