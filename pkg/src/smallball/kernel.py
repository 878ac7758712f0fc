"""Polar kernel, its discretization and the optimal trend split.

The kernel is::

    kappa(z, t) = (t z)^a  int_{max(z,t)}^T (u-t)^(-1/2-H) u^(2H-1) (u-z)^(-1/2-H) du

with ``a = 1/2 - H``.  It is symmetric, nonnegative and behaves like
``|t - z|^(-2H)`` on the diagonal.  For ``z < t`` the substitution
``u - t = (t - z) x`` gives::

    kappa = t^(2H-1) (t z)^a (t-z)^(-2H) J,
    J = int_0^L x^(-1/2-H) (x+1)^(-1/2-H) ((1 - z/t) x + 1)^(2H-1) dx,  L = (T-t)/(t-z).

:func:`kappa` evaluates ``J`` by quadrature: on ``[0, 1]`` the map
``x = w^(1/a)`` turns the ``x^(-1/2-H) dx`` measure into ``dw/a``, and on
``[1, L]`` the map ``x = exp(-v)`` leaves an analytic integrand.

A further substitution ``y = x/(1+x)`` reduces ``J`` to an incomplete beta
function, so the smooth factor ``kappa0 = kappa |t - z|^(2H)`` depends on the
two points only through a cross ratio::

    kappa0(z, t) = B(a, 2H) I_w(a, 2H),   w = z (T - t) / (t (T - z))   (z <= t).

The batch evaluator uses this closed form; tests check it against
:func:`kappa` and against direct quadrature of the u-integral.  The closed
form also shows that ``kappa`` is invariant under ``(z, t) -> (T-z, T-t)``,
a symmetry the Galerkin assembly exploits.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy import integrate, linalg
from scipy.special import beta as beta_fn, betainc

from .errors import AssemblyError, InvalidArgumentError, NumericalError, SingularDiagonalError
from .fractional import K_star_0, K_star_0_matrix_at, K_star_T, _product_matrix, constants
from .grid import GridFunction, HurstIndex, TimeGrid, l2_norm
from .quadrature import adaptive_gauss_legendre, jacobi_rule

__all__ = [
    "KernelMatrix",
    "TrendSplit",
    "assemble",
    "kappa",
    "kappa0_batch",
    "kappa_oracle",
    "objective",
    "objective_gradient",
    "oracle_minimize",
    "solve_split",
]

SOLVER_TOL = 1e-10
SCHEMES = ("galerkin", "nystrom")


def _check_point(x, T, name):
    if not (0.0 < x < T):
        raise InvalidArgumentError(f"{name}={x!r} must lie strictly inside (0, T={T})")


def _J_scalar(a_lin, L, H, tol):
    al = 0.5 - H
    q = 1.0 / al
    head_end = min(1.0, L) ** al

    def head(w):
        x = w ** q
        return q * (x + 1.0) ** (-0.5 - H) * (a_lin * x + 1.0) ** (2 * H - 1)

    total = adaptive_gauss_legendre(head, 0.0, head_end, tol=tol)
    if L > 1.0:
        def tail(v):
            s = np.exp(v)
            return s * (1.0 + s) ** (-0.5 - H) * (a_lin + s) ** (2 * H - 1)

        total += adaptive_gauss_legendre(tail, -math.log(L), 0.0, tol=tol)
    return total


def kappa(z: float, t: float, H, T: float = 1.0, tol: float = 1e-13) -> float:
    """Kernel value off the diagonal, by adaptive Gauss-Legendre panels."""
    H = float(HurstIndex(H))
    z, t, T = float(z), float(t), float(T)
    _check_point(z, T, "z")
    _check_point(t, T, "t")
    if z == t:
        raise SingularDiagonalError(
            "kappa is singular on the diagonal; use the assembled matrix instead"
        )
    if z > t:
        z, t = t, z
    a = 0.5 - H
    d = t - z
    J = _J_scalar(1.0 - z / t, (T - t) / d, H, tol)
    return t ** (2 * H - 1) * (t * z) ** a * d ** (-2 * H) * J


def kappa_oracle(z: float, t: float, H, T: float = 1.0) -> float:
    """Direct adaptive quadrature of the defining u-integral (validation only).

    The ``(u - max(z,t))^(-1/2-H)`` endpoint singularity is handled by QUADPACK's
    algebraic weight on ``[t, t + (t - z)]``; the rest is integrated plainly.
    """
    H = float(HurstIndex(H))
    if z > t:
        z, t = t, z
    a = 0.5 - H
    d = t - z
    mid = min(t + d, T)

    def g(u):
        return u ** (2 * H - 1) * (u - z) ** (-0.5 - H)

    # weight='alg' multiplies by (u - t)^p (mid - u)^0
    v1, _ = integrate.quad(g, t, mid, weight="alg", wvar=(-0.5 - H, 0.0),
                           epsabs=0.0, epsrel=1e-12, limit=200)
    v2 = 0.0
    if mid < T:
        v2, _ = integrate.quad(lambda u: (u - t) ** (-0.5 - H) * g(u), mid, T,
                               epsabs=0.0, epsrel=1e-12, limit=200)
    return (t * z) ** a * (v1 + v2)


def kappa0_batch(z, t, H, T: float = 1.0) -> np.ndarray:
    """``kappa(z,t) |t-z|^(2H)`` for arrays of points in ``[0, T]``.

    Zero when either point is 0 or T, ``B(1/2-H, 2H)`` on the open diagonal.
    """
    H = float(HurstIndex(H))
    z, t = np.broadcast_arrays(np.asarray(z, float), np.asarray(t, float))
    lo, hi = np.minimum(z, t), np.maximum(z, t)
    num = lo * (T - hi)
    den = hi * (T - lo)
    w = np.divide(num, den, out=np.zeros(lo.shape), where=den > 0)
    a = 0.5 - H
    return beta_fn(a, 2 * H) * betainc(a, 2 * H, np.clip(w, 0.0, 1.0))


# ---------------------------------------------------------------- assembly


def _rule01(n, p=0.0, q=0.0):
    """Gauss rule on [0, 1] for the weight ``(1-u)^p u^q``."""
    x, w = jacobi_rule(n, p, q)
    return 0.5 * (1.0 + x), w / 2.0 ** (1.0 + p + q)


@dataclass(frozen=True)
class _BlockRule:
    s: np.ndarray  # local coordinate in the t-cell
    r: np.ndarray  # local coordinate in the z-cell
    w: np.ndarray  # weights, singular factors included


def _tensor(ns, nr, ps=(0.0, 0.0), pr=(0.0, 0.0)):
    s, ws = _rule01(ns, *ps)
    r, wr = _rule01(nr, *pr)
    S, R = np.meshgrid(s, r, indexing="ij")
    return S.ravel(), R.ravel(), np.outer(ws, wr).ravel()


@lru_cache(maxsize=None)
def _same_cell_rule(N, H, corner):
    # |s - r|^(-2H) on the unit square: r = s (1 - y) below the diagonal and
    # its mirror above; the Jacobian s and the distance (s y)^(-2H) go into
    # the weights.  Near t = z = 0 kappa0 ~ (1-y)^a, also put into the weights.
    a = 0.5 - H
    s, ws = _rule01(N, 0.0, 1.0 - 2 * H)
    y, wy = _rule01(N, a if corner else 0.0, -2 * H)
    S, Y = np.meshgrid(s, y, indexing="ij")
    W = np.outer(ws, wy)
    if corner:
        W = W / (1.0 - Y) ** a
    S, Y, W = S.ravel(), Y.ravel(), W.ravel()
    R = S * (1.0 - Y)
    return _BlockRule(np.r_[S, R], np.r_[R, S], np.r_[W, W])


@lru_cache(maxsize=None)
def _adjacent_rule(N, H, corner):
    # t-cell to the left of the z-cell: distance = (1 - s) + r.  With p = 1 - s
    # the two triangles p > r (r = p y) and r > p (p = r y) each carry
    # distance u (1 + y), Jacobian u and weight u^(1-2H).
    a = 0.5 - H
    y, wy = _rule01(N)
    parts = []
    for first in (True, False):
        # in the first triangle t = 1 - u, so kappa0 ~ (1-u)^a near t = 0
        absorb = corner and first
        u, wu = _rule01(N, a if absorb else 0.0, 1.0 - 2 * H)
        U, Y = np.meshgrid(u, y, indexing="ij")
        W = np.outer(wu, wy) * (1.0 + Y) ** (-2 * H)
        if absorb:
            W = W / (1.0 - U) ** a
        U, Y, W = U.ravel(), Y.ravel(), W.ravel()
        s, r = (1.0 - U, U * Y) if first else (1.0 - U * Y, U)
        parts.append((s, r, W))
    return _BlockRule(*(np.concatenate(v) for v in zip(*parts)))


@lru_cache(maxsize=None)
def _far_rule(m, H, t_corner, z_corner):
    # kappa0 ~ t^a near t = 0 and ~ (T-z)^a near z = T
    a = 0.5 - H
    s, r, w = _tensor(m, m, (0.0, a) if t_corner else (0.0, 0.0), (a, 0.0) if z_corner else (0.0, 0.0))
    if t_corner:
        w = w / s ** a
    if z_corner:
        w = w / (1.0 - r) ** a
    return _BlockRule(s, r, w)


def _block_moments(c, d, rule, H, T, n, dist_power=True):
    """2x2 moments ``int int l_p(s) l_q(r) kappa`` for blocks (t-cell c, z-cell d)."""
    D = T / n
    t = (c[:, None] + rule.s) * D
    z = (d[:, None] + rule.r) * D
    k = kappa0_batch(z, t, H, T) * rule.w
    if dist_power:
        k = k * np.abs((d - c)[:, None] + rule.r - rule.s) ** (-2 * H)
    ls = (1.0 - rule.s, rule.s)
    lr = (1.0 - rule.r, rule.r)
    scale = D ** (2.0 - 2.0 * H)
    return {(p, q): scale * (k * (ls[p] * lr[q])).sum(axis=1) for p in (0, 1) for q in (0, 1)}


def _scatter(G, c, d, M, n):
    """Add block moments and their images under transposition and reflection."""
    refl_c, refl_d = n - 1 - d, n - 1 - c
    self_image = (refl_c == c) & (refl_d == d)
    for (p, q), v in M.items():
        for rows, cols, vals in (
            (c + p, d + q, v),
            # reflected block: (t-cell n-1-d, z-cell n-1-c), local indices swap and flip
            (refl_c + 1 - q, refl_d + 1 - p, np.where(self_image, 0.0, v)),
        ):
            np.add.at(G, (rows, cols), vals)
            # the mirrored cell pair (t-cell and z-cell swapped) is always distinct
            np.add.at(G, (cols, rows), vals)


def _fix_same_cell_scatter(G, c, M, n):
    # same-cell blocks already contain both triangles, so no transposed copy
    refl = n - 1 - c
    self_image = refl == c
    for (p, q), v in M.items():
        np.add.at(G, (c + p, c + q), v)
        np.add.at(G, (refl + 1 - q, refl + 1 - p), np.where(self_image, 0.0, v))


@lru_cache(maxsize=8)
def _galerkin_cached(T, n, H, nodes=16, near_nodes=8, far_nodes=4):
    c2 = constants(H).C2
    G = np.zeros((n + 1, n + 1))
    cells = np.arange(n)
    # canonical blocks: t-cell c <= z-cell d and c + d <= n - 1; the rest by symmetry
    same = cells[2 * cells <= n - 1]
    for corner, sel in ((True, same == 0), (False, same > 0)):
        if sel.any():
            rule = _same_cell_rule(2 * nodes if corner else nodes, H, corner)
            M = _block_moments(same[sel], same[sel], rule, H, T, n, dist_power=False)
            _fix_same_cell_scatter(G, same[sel], M, n)
    adj = cells[(2 * cells + 1 <= n - 1)]
    for corner, sel in ((True, adj == 0), (False, adj > 0)):
        if sel.any():
            rule = _adjacent_rule(2 * nodes if corner else nodes, H, corner)
            M = _block_moments(adj[sel], adj[sel] + 1, rule, H, T, n, dist_power=False)
            _scatter(G, adj[sel], adj[sel] + 1, M, n)
    cc, dd = np.triu_indices(n, k=2)
    keep = cc + dd <= n - 1
    cc, dd = cc[keep], dd[keep]
    gap = dd - cc
    for lo_gap, hi_gap, m in ((2, 6, near_nodes), (6, n + 1, far_nodes)):
        band = (gap >= lo_gap) & (gap < hi_gap)
        for tc in (True, False):
            for zc in (True, False):
                sel = band & ((cc == 0) == tc) & ((dd == n - 1) == zc)
                if not sel.any():
                    continue
                rule = _far_rule(m, H, tc, zc)
                idx = np.flatnonzero(sel)
                for chunk in np.array_split(idx, max(1, idx.size * rule.s.size // 2_000_000)):
                    M = _block_moments(cc[chunk], dd[chunk], rule, H, T, n)
                    _scatter(G, cc[chunk], dd[chunk], M, n)
    G *= c2
    G = 0.5 * (G + G.T)
    G.setflags(write=False)
    return G


@lru_cache(maxsize=8)
def _nystrom_cached(T, n, H):
    grid = TimeGrid(T, n)
    t = grid.nodes
    c = constants(H)
    order = 1.0 - 2.0 * H
    # hat-function integrals of |t_i - z|^(-2H), both sides of t_i
    Wt = _product_matrix(T, n, order, 0.0, "left") + _product_matrix(T, n, order, 0.0, "right")
    A = c.C2 * kappa0_batch(t[None, :], t[:, None], H, T) * Wt
    asym = float(np.max(np.abs(A - A.T)))
    A = 0.5 * (A + A.T)
    A.setflags(write=False)
    return A, asym


@dataclass(frozen=True, eq=False)
class KernelMatrix:
    """Discretization of ``x -> C2 int kappa(., z) x(z) dz`` on the grid nodes.

    ``scheme="galerkin"``: ``entries[j, k] = C2 int int phi_j(t) kappa(z, t) phi_k(z)``
    for the hat functions ``phi``, so the map acts as ``mass^-1 @ entries``
    with the lumped (trapezoidal) mass.  ``scheme="nystrom"``: ``entries``
    holds the collocation matrix itself and ``mass`` is the identity.
    """

    grid: TimeGrid
    H: float
    entries: np.ndarray
    scheme: str = "galerkin"
    diagnostics: dict = field(default_factory=dict)

    @property
    def mass(self) -> np.ndarray:
        if self.scheme == "galerkin":
            return self.grid.weights
        return np.ones(self.grid.n + 1)

    def apply(self, x: GridFunction) -> GridFunction:
        return GridFunction(self.grid, (self.entries @ x.values) / self.mass)

    def check_invariants(self) -> dict:
        A = self.entries
        scale = float(np.max(np.abs(A))) or 1.0
        asym = float(np.max(np.abs(A - A.T)))
        eig = np.linalg.eigvalsh(A)
        return {
            "asymmetry": asym / scale,
            "min_eigenvalue": float(eig[0]),
            "max_eigenvalue": float(eig[-1]),
            "min_entry": float(A.min()),
            "symmetric": bool(asym <= 1e-12 * scale),
            "psd": bool(eig[0] >= -1e-8 * eig[-1]),
            "nonnegative": bool(A.min() >= -1e-12),
        }

    def row_sums(self) -> np.ndarray:
        """Discrete ``C2 int kappa(t_i, z) dz`` at every node."""
        return self.entries.sum(axis=1) / self.mass

    def to_dict(self) -> dict:
        return {"T": self.grid.T, "n": self.grid.n, "H": self.H, "scheme": self.scheme,
                "diagnostics": dict(self.diagnostics)}

    def to_csv(self, path) -> None:
        np.savetxt(path, self.entries, delimiter=",", fmt="%.17g")


def assemble(grid: TimeGrid, H, scheme: str = "galerkin") -> KernelMatrix:
    """Product-integration matrix of ``C2 * kappa`` on the grid.

    ``galerkin`` (default) integrates the kernel against pairs of hat
    functions.  Cell pairs touching the diagonal use Duffy-type coordinates in
    which ``|t - z|^(-2H)`` becomes a Gauss-Jacobi weight; the ``t^a``-type
    edge behaviour of ``kappa0`` is treated the same way, and all other pairs
    use tensor Gauss rules.  Only pairs in one half of the square are
    integrated, the others follow from symmetry and time reversal.

    ``nystrom`` collocates at the nodes: row i integrates ``kappa0(z, t_i) x(z)``
    interpolated piecewise linearly against ``|t_i - z|^(-2H)`` in closed form,
    then the matrix is averaged with its transpose.
    """
    H = float(HurstIndex(H))
    if scheme not in SCHEMES:
        raise InvalidArgumentError(f"unknown assembly scheme {scheme!r}; expected one of {SCHEMES}")
    if scheme == "galerkin":
        A = _galerkin_cached(grid.T, grid.n, H)
        asym = 0.0
    else:
        A, asym = _nystrom_cached(grid.T, grid.n, H)
    if not np.all(np.isfinite(A)):
        i, j = np.argwhere(~np.isfinite(A))[0]
        raise AssemblyError(f"kernel matrix entry ({i}, {j}) is not finite")
    scale = float(np.max(np.abs(A))) or 1.0
    K = KernelMatrix(grid, H, A, scheme)
    K.diagnostics.update({
        "pre_symmetrization_asymmetry": asym / scale,
        "max_row_sum": float(np.max(K.row_sums())),
        "min_entry": float(A.min()),
    })
    return K


# ---------------------------------------------------------------- trend split


@dataclass(frozen=True, eq=False)
class TrendSplit:
    """Optimal decomposition ``g' = gW' + gB'`` and its exponent ``E``."""

    gB_prime: GridFunction
    gW_prime: GridFunction
    h: GridFunction
    E: float
    residual: float
    H: float
    euler_lagrange_residual: float = float("nan")
    diagnostics: dict = field(default_factory=dict)

    @property
    def grid(self) -> TimeGrid:
        return self.gB_prime.grid

    def to_dict(self, include_functions: bool = True) -> dict:
        g = self.grid
        out = {
            "T": g.T,
            "n": g.n,
            "H": self.H,
            "E": self.E,
            "residual": self.residual,
            "euler_lagrange_residual": self.euler_lagrange_residual,
            "diagnostics": dict(self.diagnostics),
        }
        if include_functions:
            out.update({
                "t": g.nodes.tolist(),
                "gB_prime": self.gB_prime.values.tolist(),
                "gW_prime": self.gW_prime.values.tolist(),
                "h": self.h.values.tolist(),
            })
        return out


@lru_cache(maxsize=16)
def _outer_rule(T, n, H, m=6):
    """Composite Gauss points/weights for ``int_0^T (K*_0 x)(u)^2 du``.

    On the first cell ``K*_0 x = u^a * (linear in u)``, so that cell uses the
    Jacobi weight ``u^(2a)`` and the returned matrix rows are divided by ``u^a``.
    """
    a = 0.5 - H
    grid = TimeGrid(T, n)
    D = grid.dt
    x, w = _rule01(m)
    x0, w0 = _rule01(m, 0.0, 2 * a)
    pts = np.concatenate([x0 * D, ((np.arange(1, n)[:, None] + x) * D).ravel()])
    wts = np.concatenate([w0 * D ** (1 + 2 * a), np.tile(w * D, n - 1)])
    B = K_star_0_matrix_at(pts, grid, H)
    B[:m] /= pts[:m, None] ** a
    B.setflags(write=False)
    wts.setflags(write=False)
    return B, wts


def _operator_gram(grid: TimeGrid, H: float) -> np.ndarray:
    """``B^T D B``: the quadratic form ``||K*_0 x||^2`` through fractional operators."""
    B, w = _outer_rule(grid.T, grid.n, H)
    return B.T @ (w[:, None] * B)


def objective(x: GridFunction, gprime: GridFunction, H) -> float:
    """Discrete ``J(x) = ||g' - x||^2 + ||K*_0 x||^2`` (twice the exponent).

    The first norm uses the trapezoidal rule; ``K*_0 x`` is evaluated by
    product integration at composite Gauss points inside the cells.
    """
    H = float(HurstIndex(H))
    B, w = _outer_rule(x.grid.T, x.grid.n, H)
    return l2_norm(gprime - x) ** 2 + float(w @ (B @ x.values) ** 2)


def objective_gradient(x: GridFunction, gprime: GridFunction, H) -> np.ndarray:
    """Gradient of :func:`objective` with respect to the node values of x."""
    grid = x.grid
    w = grid.weights
    Q = _operator_gram(grid, float(HurstIndex(H)))
    return 2.0 * (w * (x.values - gprime.values) + Q @ x.values)


def _cholesky_solve(M, rhs, what, extra=None):
    try:
        cf = linalg.cho_factor(M, lower=True, check_finite=True)
    except (linalg.LinAlgError, ValueError) as exc:
        diag = dict(extra or {})
        try:
            diag["min_eigenvalue"] = float(np.linalg.eigvalsh(M)[0])
        except np.linalg.LinAlgError:
            pass
        raise NumericalError(f"{what}: Cholesky factorization failed ({exc})", diag) from exc
    return linalg.cho_solve(cf, rhs)


def solve_split(gprime: GridFunction, H, kernel: KernelMatrix | None = None) -> TrendSplit:
    """Solve the discrete Fredholm equation ``x + C2 K x = g'`` and split ``g'``.

    With the Galerkin matrix ``G`` and lumped mass ``W`` the system is
    ``(W + G) x = W g'``; the exponent is ``(||g' - x||_W^2 + x^T G x)/2``,
    i.e. ``||K*_0 x||^2`` is taken from the kernel.  ``h = K*_0 x`` is
    returned at the nodes.  The Euler-Lagrange form
    ``K*_T K*_0 x + x - g' = 0`` is re-evaluated through the fractional
    operators and its norm recorded as a second residual.
    """
    H = float(HurstIndex(H))
    grid = gprime.grid
    K = kernel if kernel is not None else assemble(grid, H)
    if K.grid != grid or K.H != H:
        raise InvalidArgumentError("kernel matrix was assembled for a different grid or Hurst index")
    m = K.mass
    M = np.diag(m) + K.entries
    x_vals = _cholesky_solve(M, m * gprime.values, "trend split", K.diagnostics)
    x = GridFunction(grid, x_vals)
    gW = GridFunction(grid, gprime.values - x_vals)
    h = K_star_0(x, H)
    res = l2_norm(GridFunction(grid, (M @ x_vals) / m - gprime.values))
    el = l2_norm(K_star_T(h, H) + x - gprime)
    if not res <= SOLVER_TOL * max(1.0, l2_norm(gprime)):
        raise NumericalError(f"trend split residual {res:.3g} exceeds tolerance", K.diagnostics)
    if K.scheme == "galerkin":
        hh = float(x_vals @ (K.entries @ x_vals))
    else:
        hh = l2_norm(h) ** 2
    E = max(0.5 * (l2_norm(gW) ** 2 + hh), 0.0)
    diag = {
        "scheme": K.scheme,
        "x_at_0": float(x_vals[0]),
        "x_at_T": float(x_vals[-1]),
        "h_norm_sq_trapezoid": l2_norm(h) ** 2,
        "h_norm_sq": hh,
    }
    return TrendSplit(x, gW, h, E, res, H, el, diag)


def oracle_minimize(gprime: GridFunction, H) -> GridFunction:
    """Minimize :func:`objective` directly through the ``K*_0`` discretization.

    Solves ``(W + B^T D B) x = W g'`` where ``W`` holds trapezoidal weights and
    ``B``, ``D`` evaluate ``K*_0`` at composite Gauss points.  The kernel is
    never used, which is what makes this a check on :func:`solve_split`.
    """
    H = float(HurstIndex(H))
    grid = gprime.grid
    w = grid.weights
    M = np.diag(w) + _operator_gram(grid, H)
    x = _cholesky_solve(M, w * gprime.values, "oracle minimization")
    return GridFunction(grid, x)
