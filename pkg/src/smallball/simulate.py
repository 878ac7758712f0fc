"""Exact simulation of W, B^H and W + B^H, and Monte Carlo checks.

Three fBm generators are available on a uniform grid:

* ``cholesky`` factors the covariance ``R_H`` over the nonzero nodes;
* ``circulant`` is the Davies-Harte embedding of fractional Gaussian noise;
* ``volterra`` builds ``B^H`` from an underlying Wiener process ``B``.

For ``volterra``, ``B^H(t_i) = sum_j M_ij dB_j + R_i`` where ``M_ij`` is the
average of the kernel ``k(t_i, .)`` over cell ``j``.  ``M dB`` is the
conditional mean of ``B^H`` given the grid increments of ``B``; the residual
``R`` is the part driven by the Brownian bridges inside the cells, which are
independent of the increments, so it is drawn independently with covariance
``R_H - dt M M^T``.  The joint law of ``(B^H(t_i), B(t_i))`` is then exact.

Paths are produced lazily in fixed blocks (see :mod:`smallball.rng`), which
bounds memory and makes every statistic independent of how blocks are
scheduled.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Iterator

import numpy as np
from scipy.special import beta as beta_fn
from scipy.special import betainc, gamma as gamma_fn, ndtr

from .errors import (
    EmbeddingError,
    GeneratorRequirementError,
    InvalidArgumentError,
    NumericalError,
    SmoothnessError,
)
from .fractional import K_T_cell_average, constants
from .grid import FunctionSpec, GridFunction, HurstIndex, TimeGrid, make_grid, sample
from .kernel import TrendSplit
from .quadrature import adaptive_gauss_legendre, cell_moments, gauss_rule, jacobi_rule
from .rng import BLOCK_ROWS, STREAMS, normals

__all__ = [
    "GENERATORS",
    "MCEstimate",
    "MCRequest",
    "PathBatch",
    "PathBlock",
    "covariance_estimate",
    "fbm_covariance",
    "gen_fbm",
    "gen_mixed",
    "gen_wiener",
    "girsanov_consistency",
    "integration_by_parts_check",
    "mc_small_ball",
    "novikov_identity_check",
    "sup_statistic",
    "volterra_matrix",
    "wiener_small_ball_exact",
]

GENERATORS = ("cholesky", "circulant", "volterra")
EMBED_WARN = 1e-9
EMBED_FAIL = 1e-6


def fbm_covariance(s, t, H) -> np.ndarray:
    s, t = np.asarray(s, float), np.asarray(t, float)
    h2 = 2.0 * float(H)
    return 0.5 * (np.abs(s) ** h2 + np.abs(t) ** h2 - np.abs(t - s) ** h2)


@lru_cache(maxsize=8)
def _cholesky_factor(T, n, H):
    t = TimeGrid(T, n).nodes[1:]
    L = np.linalg.cholesky(fbm_covariance(t[:, None], t[None, :], H))
    L.setflags(write=False)
    return L


@lru_cache(maxsize=8)
def _circulant_sqrt(T, n, H):
    """``sqrt(lambda / m)`` for the circulant embedding of fGn, ``m = 2n``."""
    dt = T / n
    k = np.arange(n + 1, dtype=float)
    h2 = 2.0 * H
    acov = 0.5 * dt ** h2 * (np.abs(k + 1) ** h2 - 2.0 * k ** h2 + np.abs(k - 1) ** h2)
    row = np.concatenate([acov, acov[-2:0:-1]])
    lam = np.fft.fft(row).real
    top = lam.max()
    if lam.min() < -EMBED_FAIL * top:
        raise EmbeddingError(
            f"circulant embedding has eigenvalue {lam.min():.3g} below -{EMBED_FAIL:g} x max"
        )
    lam = np.clip(lam, 0.0, None)
    out = np.sqrt(lam / row.size)
    out.setflags(write=False)
    return out


@lru_cache(maxsize=8)
def volterra_matrix(T: float, n: int, H: float, m: int = 12) -> np.ndarray:
    """``M[i-1, j]`` = average over cell ``j`` of ``k(t_i, s)``, ``i = 1..n``.

    ``k(t, s) = C1/Gamma(1-a) [s^a t^-a (t-s)^-a + a s^-a B(2a,1-a)(1 - I_{s/t}(2a,1-a))]``
    with ``a = 1/2 - H``.  The first term uses exact product-integration
    moments.  In the second, ``1 - I_x ~ (1-x)^(1-a)`` near ``s = t`` and
    ``I_x = x^(2a) * analytic`` near 0, so the last cell carries a Jacobi
    weight ``(t-s)^(1-a)`` and the first cell weights ``s^-a`` and ``s^a``.
    """
    a = 0.5 - H
    grid = TimeGrid(T, n)
    t, D = grid.nodes, grid.dt
    Bc = beta_fn(2 * a, 1 - a)
    M = np.zeros((n, n))
    m0, _ = cell_moments(t[1:], t, 1.0 - a, a, "left")
    M += t[1:, None] ** -a * m0

    def upper_tail(s, ti):
        # 1 - I_{s/t}(2a, 1-a), evaluated without cancellation near s = t
        return betainc(1 - a, 2 * a, 1.0 - s / ti)

    ti = t[1:]
    # interior cells 1 <= j <= i-2 (row r holds t_{r+1})
    x, w = gauss_rule(m)
    xs = 0.5 * (1.0 + x)
    I, J = np.nonzero(np.tri(n, n, -1, dtype=bool) & (np.arange(n)[None, :] >= 1))
    if I.size:
        s = t[J][:, None] + D * xs[None, :]
        vals = s ** -a * upper_tail(s, ti[I][:, None])
        M[I, J] += a * Bc * 0.5 * D * (vals @ w)
    # first cell for i >= 2: s^-a part exact, s^-a I_{s/t} = s^a t^-2a phi(s/t)
    x1, w1 = jacobi_rule(m, 0.0, a)
    s1 = 0.5 * D * (1.0 + x1)
    r = np.arange(1, n)
    xx = s1[None, :] / ti[r][:, None]
    phi = betainc(2 * a, 1 - a, xx) * Bc / xx ** (2 * a)
    head = (0.5 * D) ** (1 + a) * (phi @ w1) * ti[r] ** (-2 * a)
    M[r, 0] += a * (Bc * D ** (1 - a) / (1 - a) - head)

    # last cell for i >= 2 with weight (t-s)^(1-a)
    def last_cell(lo, length, tv):
        xl, wl = jacobi_rule(m, 1.0 - a, 0.0)
        sl = lo[:, None] + 0.5 * length * (1.0 + xl[None, :])
        u = tv[:, None] - sl
        g = sl ** -a * upper_tail(sl, tv[:, None]) / u ** (1.0 - a)
        return (0.5 * length) ** (2.0 - a) * (g @ wl)

    M[r, r] += a * Bc * last_cell(t[r], D, ti[r])
    # i = 1: both singular ends in one cell, split at the midpoint
    half = 0.5 * D
    s1h = 0.5 * half * (1.0 + x1)
    xx = s1h / ti[0]
    phi = betainc(2 * a, 1 - a, xx) * Bc / xx ** (2 * a)
    head = (0.5 * half) ** (1 + a) * (phi @ w1) * ti[0] ** (-2 * a)
    left = Bc * half ** (1 - a) / (1 - a) - head
    right = Bc * last_cell(np.array([half]), half, np.array([ti[0]]))[0]
    M[0, 0] += a * (left + right)
    M *= constants(H).C1 / gamma_fn(1.0 - a) / D
    M.setflags(write=False)
    return M


@lru_cache(maxsize=8)
def _volterra_residual_factor(T, n, H):
    grid = TimeGrid(T, n)
    t = grid.nodes[1:]
    M = volterra_matrix(T, n, H)
    S = fbm_covariance(t[:, None], t[None, :], H) - grid.dt * (M @ M.T)
    S = 0.5 * (S + S.T)
    lam, V = np.linalg.eigh(S)
    if lam[0] < -EMBED_FAIL * max(lam[-1], 1e-300):
        raise NumericalError(
            "volterra residual covariance is not positive semidefinite",
            {"min_eigenvalue": float(lam[0]), "max_eigenvalue": float(lam[-1])},
        )
    F = V * np.sqrt(np.clip(lam, 0.0, None))
    F.setflags(write=False)
    return F


@dataclass(frozen=True)
class PathBlock:
    """Rows ``start .. start + rows`` of a batch; arrays have ``n + 1`` columns."""

    start: int
    paths_W: np.ndarray | None
    paths_BH: np.ndarray | None
    paths_B: np.ndarray | None
    paths_BH_projection: np.ndarray | None

    @property
    def rows(self) -> int:
        for a in (self.paths_W, self.paths_BH):
            if a is not None:
                return a.shape[0]
        return 0

    @property
    def mixed(self) -> np.ndarray:
        out = np.zeros((self.rows, (self.paths_W if self.paths_W is not None else self.paths_BH).shape[1]))
        if self.paths_W is not None:
            out += self.paths_W
        if self.paths_BH is not None:
            out += self.paths_BH
        return out


def _with_zero(x):
    return np.concatenate([np.zeros((x.shape[0], 1)), x], axis=1)


@dataclass(frozen=True)
class PathBatch:
    """A reproducible batch of paths, generated block by block on demand.

    ``components`` says which of ``W`` (independent Wiener) and ``BH``
    (fBm) are present.  Accessing ``paths_W``, ``paths_BH`` or ``paths_B``
    materializes the whole matrix; large runs should iterate :meth:`blocks`.
    """

    grid: TimeGrid
    H: float
    n_paths: int
    seed: int
    generator: str
    components: tuple = ("BH",)
    block_rows: int = BLOCK_ROWS

    def __post_init__(self):
        if self.generator not in GENERATORS:
            raise InvalidArgumentError(f"unknown generator {self.generator!r}; expected one of {GENERATORS}")
        if int(self.n_paths) < 1:
            raise InvalidArgumentError(f"n_paths must be >= 1, got {self.n_paths}")
        if "BH" in self.components:
            HurstIndex(self.H)
        # fail early on an unusable embedding
        if "BH" in self.components and self.generator == "circulant":
            _circulant_sqrt(self.grid.T, self.grid.n, float(self.H))

    @property
    def has_B(self) -> bool:
        return "BH" in self.components and self.generator == "volterra"

    def _block(self, start: int, rows: int) -> PathBlock:
        g = self.grid
        n, T, H = g.n, g.T, float(self.H)
        sq = math.sqrt(g.dt)
        W = BH = B = P = None
        if "W" in self.components:
            dW = normals(self.seed, STREAMS["wiener"], start, rows, n, self.block_rows) * sq
            W = _with_zero(np.cumsum(dW, axis=1))
        if "BH" in self.components:
            if self.generator == "cholesky":
                Z = normals(self.seed, STREAMS["fbm"], start, rows, n, self.block_rows)
                BH = _with_zero(Z @ _cholesky_factor(T, n, H).T)
            elif self.generator == "circulant":
                root = _circulant_sqrt(T, n, H)
                m = root.size
                Z = normals(self.seed, STREAMS["fbm"], start, rows, 2 * m, self.block_rows)
                spec = np.fft.fft(root * (Z[:, :m] + 1j * Z[:, m:]), axis=1)
                BH = _with_zero(np.cumsum(spec.real[:, :n], axis=1))
            else:
                dB = normals(self.seed, STREAMS["fbm"], start, rows, n, self.block_rows) * sq
                proj = dB @ volterra_matrix(T, n, H).T
                Zr = normals(self.seed, STREAMS["residual"], start, rows, n, self.block_rows)
                resid = Zr @ _volterra_residual_factor(T, n, H).T
                P = _with_zero(proj)
                BH = _with_zero(proj + resid)
                B = _with_zero(np.cumsum(dB, axis=1))
        return PathBlock(start, W, BH, B, P)

    def blocks(self) -> Iterator[PathBlock]:
        for start in range(0, self.n_paths, self.block_rows):
            yield self._block(start, min(self.block_rows, self.n_paths - start))

    def _collect(self, name):
        parts = [getattr(b, name) for b in self.blocks()]
        if parts[0] is None:
            return None
        return np.concatenate(parts, axis=0)

    @property
    def paths_W(self):
        return self._collect("paths_W")

    @property
    def paths_BH(self):
        return self._collect("paths_BH")

    @property
    def paths_B(self):
        return self._collect("paths_B")

    @property
    def paths_BH_projection(self):
        return self._collect("paths_BH_projection")

    @property
    def paths(self) -> np.ndarray:
        return np.concatenate([b.mixed for b in self.blocks()], axis=0)

    def to_csv(self, path, component: str = "mixed", max_paths: int | None = None) -> None:
        """One path per row, header ``t_0..t_n`` (debugging aid)."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\r\n")
            w.writerow([f"t_{i}" for i in range(self.grid.n + 1)])
            written = 0
            for b in self.blocks():
                arr = b.mixed if component == "mixed" else getattr(b, f"paths_{component}")
                if arr is None:
                    raise InvalidArgumentError(f"batch has no {component} component")
                for row in arr:
                    if max_paths is not None and written >= max_paths:
                        return
                    w.writerow([repr(float(v)) for v in row])
                    written += 1


def gen_fbm(grid: TimeGrid, H, n_paths: int, seed: int, generator: str = "circulant") -> PathBatch:
    return PathBatch(grid, float(HurstIndex(H)), int(n_paths), int(seed), generator, ("BH",))


def gen_mixed(grid: TimeGrid, H, n_paths: int, seed: int, generator: str = "volterra") -> PathBatch:
    """Independent Wiener paths plus fBm paths; volterra keeps the underlying ``B``."""
    return PathBatch(grid, float(HurstIndex(H)), int(n_paths), int(seed), generator, ("W", "BH"))


def gen_wiener(grid: TimeGrid, n_paths: int, seed: int) -> PathBatch:
    return PathBatch(grid, 0.25, int(n_paths), int(seed), "cholesky", ("W",))


@dataclass(frozen=True)
class MCRequest:
    """Ask a consumer to estimate a reference probability by simulation."""

    n_paths: int
    seed: int = 0
    generator: str = "volterra"


@dataclass(frozen=True)
class MCEstimate:
    """A Monte Carlo probability with its standard error."""

    p_hat: float
    stderr: float
    n_paths: int
    grid_n: int
    seed: int
    definition: dict = field(default_factory=dict)
    diagnostics: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "p_hat": self.p_hat,
            "stderr": self.stderr,
            "n_paths": self.n_paths,
            "grid_n": self.grid_n,
            "seed": self.seed,
            "definition": dict(self.definition),
            "diagnostics": dict(self.diagnostics),
        }


def _binomial(hits: int, N: int) -> tuple[float, float]:
    p = hits / N
    return p, math.sqrt(max(p * (1.0 - p), 0.0) / N)


def _check_common(batch, g, f, epsilon=None):
    for name, u in (("trend", g), ("boundary", f)):
        if not isinstance(u, GridFunction):
            raise InvalidArgumentError(f"{name} must be a GridFunction")
        if u.grid != batch.grid:
            raise InvalidArgumentError(f"{name} lives on a different grid than the path batch")
    if np.any(f.values <= 0.0):
        raise InvalidArgumentError("boundary f must be positive on the grid")
    if epsilon is not None and not float(epsilon) > 0.0:
        raise InvalidArgumentError(f"epsilon must be positive, got {epsilon!r}")


def sup_statistic(batch: PathBatch, g: GridFunction, f: GridFunction) -> np.ndarray:
    """Per-path ``max_i |X(t_i) + g(t_i)| / f(t_i)`` with ``X`` the batch process."""
    _check_common(batch, g, f)
    inv = 1.0 / f.values
    return np.concatenate([np.max(np.abs(b.mixed + g.values) * inv, axis=1) for b in batch.blocks()])


def _definition(batch, epsilon, **extra):
    d = {"H": float(batch.H), "T": batch.grid.T, "epsilon": float(epsilon),
         "generator": batch.generator, "components": list(batch.components),
         "event": "grid-restricted"}
    d.update(extra)
    return d


def mc_small_ball(batch: PathBatch, g: GridFunction, f: GridFunction, epsilon: float,
                  stat: np.ndarray | None = None) -> MCEstimate:
    """Fraction of paths with ``|X(t_i) + g(t_i)| <= eps f(t_i)`` at every node.

    This is the grid-restricted event; it contains the continuum event, so
    the estimate is biased upward.  ``stat`` may pass a precomputed
    :func:`sup_statistic` to reuse one batch for many levels.
    """
    _check_common(batch, g, f, epsilon)
    if stat is None:
        stat = sup_statistic(batch, g, f)
    p, se = _binomial(int(np.count_nonzero(stat <= epsilon)), stat.size)
    return MCEstimate(p, se, batch.n_paths, batch.grid.n, batch.seed, _definition(batch, epsilon))


def covariance_estimate(batch: PathBatch, i: int, j: int, component: str = "BH") -> tuple[float, float]:
    """Sample ``E[X(t_i) X(t_j)]`` (the mean is known to be 0) and its standard error."""
    prods = []
    for b in batch.blocks():
        arr = b.mixed if component == "mixed" else getattr(b, f"paths_{component}")
        if arr is None:
            raise InvalidArgumentError(f"batch has no {component} component")
        prods.append(arr[:, i] * arr[:, j])
    p = np.concatenate(prods)
    return float(p.mean()), float(p.std(ddof=1) / math.sqrt(p.size))


def _cell_average(u: np.ndarray) -> np.ndarray:
    return 0.5 * (u[1:] + u[:-1])


def girsanov_consistency(batch: PathBatch, split: TrendSplit, f: GridFunction, epsilon: float):
    """Direct and Girsanov-reweighted estimates of the trended small-ball probability.

    The direct estimate shifts every path by ``g = int g'``.  The reweighted
    one evaluates the trendless event with weight
    ``exp(sum a dW + sum b dB - dt (|a|^2 + |b|^2)/2)`` where ``a`` and ``b``
    are the cell averages of ``gW'`` and ``h``.  Both drifts are
    deterministic, so this density is exact for the simulated increments.
    """
    if not batch.has_B or "W" not in batch.components:
        raise GeneratorRequirementError(
            f"Girsanov reweighting needs a mixed volterra batch with the underlying Wiener "
            f"process; got generator={batch.generator!r}, components={batch.components}"
        )
    grid = batch.grid
    if split.grid != grid:
        raise InvalidArgumentError("trend split and path batch live on different grids")
    gprime = split.gB_prime + split.gW_prime
    g = GridFunction(grid, np.concatenate([[0.0], np.cumsum(grid.dt * _cell_average(gprime.values))]))
    _check_common(batch, g, f, epsilon)
    a = _cell_average(split.gW_prime.values)
    b = _cell_average(split.h.values)
    half_norm = 0.5 * grid.dt * (a @ a + b @ b)
    # trend the weights move the paths by, against the trend applied directly
    implied = np.concatenate([[0.0], np.cumsum(grid.dt * a)]) + np.concatenate(
        [[0.0], grid.dt * volterra_matrix(grid.T, grid.n, float(batch.H)) @ b])
    inv = 1.0 / f.values
    hits, vals, weights = [], [], []
    for blk in batch.blocks():
        X = blk.mixed
        hits.append(np.max(np.abs(X + g.values) * inv, axis=1) <= epsilon)
        inside = np.max(np.abs(X) * inv, axis=1) <= epsilon
        logw = np.diff(blk.paths_W, axis=1) @ a + np.diff(blk.paths_B, axis=1) @ b - half_norm
        wgt = np.exp(logw)
        weights.append(wgt)
        vals.append(inside * wgt)
    hits = np.concatenate(hits)
    vals = np.concatenate(vals)
    weights = np.concatenate(weights)
    N = vals.size
    p_d, se_d = _binomial(int(hits.sum()), N)
    diag = {
        "weight_mean": float(weights.mean()),
        "weight_stderr": float(weights.std(ddof=1) / math.sqrt(N)) if N > 1 else 0.0,
        "trend_mismatch": float(np.max(np.abs(implied - g.values))),
        "exponent": split.E,
    }
    direct = MCEstimate(p_d, se_d, N, grid.n, batch.seed, _definition(batch, epsilon, estimator="direct"))
    rew = MCEstimate(
        float(vals.mean()), float(vals.std(ddof=1) / math.sqrt(N)) if N > 1 else 0.0, N, grid.n,
        batch.seed, _definition(batch, epsilon, estimator="reweighted"), diag,
    )
    return direct, rew


def _tau(fspec: FunctionSpec, times: np.ndarray) -> np.ndarray:
    """``int_0^t f^-2`` at each of the increasing ``times``."""
    out = np.zeros(times.size)
    inv2 = lambda u: fspec.evaluate(u) ** -2.0
    for i in range(1, times.size):
        out[i] = out[i - 1] + adaptive_gauss_legendre(inv2, times[i - 1], times[i], tol=1e-14)
    return out


def novikov_identity_check(fspec: FunctionSpec, epsilon: float, n_paths: int, seed: int,
                           T: float = 1.0, n: int = 512):
    """Both sides of ``P(|W| <= eps f/2 on [0,T]) = (f(T)/f(0))^(1/2) P(|W| <= eps on [0, 4 int f^-2])``.

    The left side is simulated on the uniform grid of ``[0, T]``; the right
    side on the image of that grid under ``t -> 4 int_0^t f^-2``, so both
    grid-restricted events correspond node by node.  The right side's
    diagnostics also carry ``corrected``, the same paths averaged with the
    exact time-change density factor
    ``exp(-f(T) f'(T) Y_T^2 / 2 + (1/2) int f f'' Y^2 dt)``, ``Y = W_rhs / 2``,
    which the identity omits and which tends to 1 as ``eps -> 0``.

    Returns
    -------
    lhs, rhs : MCEstimate
    """
    epsilon = float(epsilon)
    if not epsilon > 0.0:
        raise InvalidArgumentError(f"epsilon must be positive, got {epsilon!r}")
    grid = make_grid(T, n)
    fv = fspec.evaluate(grid.nodes, grid.T)
    if not np.all(np.isfinite(fv)) or np.any(fv <= 0.0):
        raise InvalidArgumentError("the boundary f must stay strictly positive on [0, T]")
    if not fspec.is_smooth:
        raise SmoothnessError("the identity needs an absolutely continuous f with f' of bounded variation")
    fp = fspec.derivative(grid.nodes, grid.T)
    fpp = np.gradient(fp, grid.nodes)
    times = 4.0 * _tau(fspec, grid.nodes)
    dtau = np.diff(times)
    prefactor = math.sqrt(fv[-1] / fv[0])
    inv = 2.0 / (epsilon * fv)
    hits_l, hits_r, corr = [], [], []
    for start in range(0, int(n_paths), BLOCK_ROWS):
        rows = min(BLOCK_ROWS, int(n_paths) - start)
        W = _with_zero(np.cumsum(normals(seed, STREAMS["novikov_lhs"], start, rows, n) * math.sqrt(grid.dt), axis=1))
        hits_l.append(np.max(np.abs(W) * inv, axis=1) <= 1.0)
        V = _with_zero(np.cumsum(normals(seed, STREAMS["novikov_rhs"], start, rows, n) * np.sqrt(dtau), axis=1))
        inside = np.max(np.abs(V), axis=1) <= epsilon
        hits_r.append(inside)
        Y = 0.5 * V
        logc = -0.5 * fv[-1] * fp[-1] * Y[:, -1] ** 2 + 0.5 * (Y ** 2 * (fv * fpp)) @ grid.weights
        corr.append(inside * np.exp(logc))
    hl = np.concatenate(hits_l)
    hr = np.concatenate(hits_r)
    cr = np.concatenate(corr) * prefactor
    N = hl.size
    pl, sl = _binomial(int(hl.sum()), N)
    pr, sr = _binomial(int(hr.sum()), N)
    defin = {"f": fspec.to_dict(), "epsilon": epsilon, "T": grid.T, "event": "grid-restricted"}
    lhs = MCEstimate(pl, sl, N, n, int(seed), dict(defin, side="lhs"))
    rhs = MCEstimate(
        prefactor * pr, prefactor * sr, N, n, int(seed), dict(defin, side="rhs"),
        {"prefactor": prefactor, "horizon": float(times[-1]),
         "corrected": float(cr.mean()), "corrected_stderr": float(cr.std(ddof=1) / math.sqrt(N))},
    )
    return lhs, rhs


def integration_by_parts_check(batch: PathBatch, fspec: FunctionSpec, include_residual: bool = False) -> float:
    """``max_r |lhs_r - rhs_r| / rms(rhs)`` for ``int f dB^H = f(T) B^H(T) - int B^H df``.

    ``lhs = sum_j (K_T f)_j dB_j`` with cell averages of ``K_T f``; ``rhs``
    uses the left-endpoint sum ``sum_j B^H(t_j) f'(t_j) dt``.  By default
    ``B^H`` on the right is its conditional mean ``M dB`` given the grid
    increments: ``lhs`` is exactly that conditional mean of the stochastic
    integral, so both sides are then functions of the same increments.
    ``include_residual=True`` uses the full simulated ``B^H`` instead.
    """
    if not batch.has_B:
        raise GeneratorRequirementError(
            f"integration by parts needs the underlying Wiener process (volterra generator), "
            f"got {batch.generator!r}"
        )
    if not isinstance(fspec, FunctionSpec) or not fspec.is_smooth:
        raise SmoothnessError(f"integration by parts needs a C^1 function, got {fspec!r}")
    grid = batch.grid
    fvals = sample(fspec, grid)
    fp = fspec.derivative(grid.nodes, grid.T)
    a = K_T_cell_average(fvals, float(batch.H))
    diffs, rhs_all = [], []
    for blk in batch.blocks():
        BH = blk.paths_BH if include_residual else blk.paths_BH_projection
        lhs = np.diff(blk.paths_B, axis=1) @ a
        rhs = fvals.values[-1] * BH[:, -1] - BH[:, :-1] @ (fp[:-1] * grid.dt)
        diffs.append(np.abs(lhs - rhs))
        rhs_all.append(rhs)
    d = np.concatenate(diffs)
    r = np.concatenate(rhs_all)
    scale = math.sqrt(float(np.mean(r ** 2)))
    if scale == 0.0:
        return float(d.max())
    return float(d.max() / scale)


def wiener_small_ball_exact(a: float, T: float = 1.0, terms: int = 50) -> float:
    """``P(sup_{[0,T]} |W| <= a)`` by the reflection series."""
    if not a > 0:
        return 0.0
    x = a / math.sqrt(T)
    k = np.arange(-terms, terms + 1)
    return float(np.sum((-1.0) ** k * (ndtr((2 * k + 1) * x) - ndtr((2 * k - 1) * x))))
