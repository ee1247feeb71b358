"""The scaled Peierls operator, its spectral radius, and the limiting eigenproblem.

In two dimensions the operator is

    P f(x) = 1/(2 pi) int E(x, y) / |x - y| sigma_t(y) f(y) dy,

mapping a scalar flux to the once-collided scalar flux. It is assembled as
a dense matrix over the active cells: pairs closer than ``near_cells`` cell
widths are integrated in polar coordinates around the target centre, where
``sigma_t E / r`` in the area element ``r dr dtheta`` is an exact radial
derivative, so each entry reduces to an angular integral of
``E(r_in) - E(r_out)`` across the source cell. Farther pairs use the
midpoint rule. The singular diagonal is the same polar integral with
``r_in = 0``.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse.linalg as sla

from . import kernels
from .errors import IterationError, ModelError, NumericalIntegrityError
from .fd import dirichlet_operator

log = logging.getLogger(__name__)

TAU_CAP = kernels.TAU_CAP


@dataclass(frozen=True, eq=False)
class ScaledCoefficients:
    """Base coefficients and their diffusive scaling by the Knudsen number eps."""

    eps: float
    sigma_a: np.ndarray
    sigma_s: np.ndarray

    def __post_init__(self):
        if not self.eps > 0:
            raise ModelError("the Knudsen number must be positive")
        sa = np.asarray(self.sigma_a, dtype=float)
        ss = np.asarray(self.sigma_s, dtype=float)
        if sa.shape != ss.shape or sa.ndim != 1:
            raise ModelError("sigma_a and sigma_s must be active-cell fields of one grid")
        if np.any(sa < 0):
            raise ModelError("absorption must be nonnegative")
        if not np.all(ss > 0):
            raise ModelError("invariant violated: sigma_s > 0 strictly")
        object.__setattr__(self, "sigma_a", sa)
        object.__setattr__(self, "sigma_s", ss)

    @property
    def sigma_a_eps(self):
        return self.eps * self.sigma_a

    @property
    def sigma_s_eps(self):
        return self.sigma_s / self.eps

    @property
    def sigma_t_eps(self):
        return self.sigma_a_eps + self.sigma_s_eps

    def to_dict(self):
        return {"eps": self.eps, "sigma_a_range": [float(self.sigma_a.min()), float(self.sigma_a.max())],
                "sigma_s_range": [float(self.sigma_s.min()), float(self.sigma_s.max())]}


@dataclass(frozen=True, eq=False)
class PeierlsMatrix:
    """Dense Peierls matrix P[i, j] with the cross section it was built from."""

    matrix: np.ndarray
    sigma_t: np.ndarray
    eps: float | None = None
    meta: dict = field(default_factory=dict)

    @property
    def n(self):
        return self.matrix.shape[0]

    @cached_property
    def symmetrized(self):
        """sigma_t^1/2 P sigma_t^-1/2, symmetric by construction."""
        r = np.sqrt(self.sigma_t)
        with np.errstate(divide="ignore", invalid="ignore"):
            inv = np.where(r > 0, 1.0 / r, 0.0)
        S = r[:, None] * self.matrix * inv[None, :]
        return 0.5 * (S + S.T)

    def __matmul__(self, f):
        return self.matrix @ f

    def to_triplets(self, path, threshold=0.0):
        """Write ``i j value`` lines for every entry above ``threshold``."""
        i, j = np.nonzero(np.abs(self.matrix) > threshold)
        with open(path, "w") as fh:
            for a, b in zip(i, j):
                fh.write(f"{a} {b} {self.matrix[a, b]:.17g}\n")

    @classmethod
    def from_triplets(cls, path, sigma_t):
        data = np.loadtxt(path, ndmin=2)
        n = len(sigma_t)
        M = np.zeros((n, n))
        if data.size:
            M[data[:, 0].astype(int), data[:, 1].astype(int)] = data[:, 2]
        return cls(M, np.asarray(sigma_t, dtype=float))


def _gauss(n):
    x, w = np.polynomial.legendre.leggauss(n)
    return x, w


def _offset_rules(radius_cells, n_gauss):
    """Angular nodes and radial limits for every cell offset within the near radius.

    Geometry is in units of h with the target centre at the origin. Returns
    a list of ``(ox, oy, theta, weight, r_in, r_out)``.
    """
    x, w = _gauss(n_gauss)
    rules = []
    R = int(radius_cells)
    for oy in range(-R, R + 1):
        for ox in range(-R, R + 1):
            if ox * ox + oy * oy > R * R:
                continue
            if ox == 0 and oy == 0:
                breaks = np.array([-0.25, 0.25, 0.75, 1.25, 1.75]) * math.pi
            else:
                corners = np.array([[ox - 0.5, oy - 0.5], [ox + 0.5, oy - 0.5],
                                    [ox - 0.5, oy + 0.5], [ox + 0.5, oy + 0.5]])
                phi0 = math.atan2(oy, ox)
                rel = np.angle(np.exp(1j * (np.arctan2(corners[:, 1], corners[:, 0]) - phi0)))
                breaks = phi0 + np.unique(np.round(rel, 15))
            th, wt = [], []
            for a, b in zip(breaks[:-1], breaks[1:]):
                if b - a < 1e-14:
                    continue
                th.append(0.5 * (a + b) + 0.5 * (b - a) * x)
                wt.append(0.5 * (b - a) * w)
            th = np.concatenate(th)
            wt = np.concatenate(wt)
            r_in, r_out = _slab(np.cos(th), np.sin(th), ox - 0.5, ox + 0.5, oy - 0.5, oy + 0.5)
            rules.append((ox, oy, th, wt, r_in, r_out))
    return rules


def _slab(c, s, xl, xr, yl, yr):
    with np.errstate(divide="ignore", invalid="ignore"):
        tx1 = np.where(c != 0, xl / c, -np.inf)
        tx2 = np.where(c != 0, xr / c, np.inf)
        ty1 = np.where(s != 0, yl / s, -np.inf)
        ty2 = np.where(s != 0, yr / s, np.inf)
    lo = np.maximum(np.minimum(tx1, tx2), np.minimum(ty1, ty2))
    hi = np.minimum(np.maximum(tx1, tx2), np.maximum(ty1, ty2))
    # rays along a slab face through the origin: the cell is still entered
    lo = np.where(c == 0, np.where((xl <= 0) & (xr >= 0), np.minimum(ty1, ty2), np.inf), lo)
    hi = np.where(c == 0, np.where((xl <= 0) & (xr >= 0), np.maximum(ty1, ty2), -np.inf), hi)
    lo = np.where(s == 0, np.where((yl <= 0) & (yr >= 0), np.minimum(tx1, tx2), np.inf), lo)
    hi = np.where(s == 0, np.where((yl <= 0) & (yr >= 0), np.maximum(tx1, tx2), -np.inf), hi)
    return np.maximum(lo, 0.0), np.maximum(hi, 0.0)


def peierls_matrix(grid, sigma_t, h_ray=None, near_cells=8, n_gauss=6, eps=None):
    """Assemble P for an active-cell total cross section ``sigma_t``."""
    sigma_t = np.asarray(sigma_t, dtype=float)
    n = grid.n
    if n < 2:
        raise ModelError("need at least two active cells")
    if np.any(sigma_t < 0):
        raise ModelError("total cross section must be nonnegative")
    h = grid.h
    h_ray = 0.5 * h if h_ray is None else float(h_ray)
    sig_full = grid.full(sigma_t)
    c = grid.centers
    cx = np.ascontiguousarray(c[:, 0])
    cy = np.ascontiguousarray(c[:, 1])
    kg = grid.kernel_grid

    # far field: midpoint rule with the pairwise attenuation
    tau = kernels.pair_optical_depth(cx, cy, sig_full, *kg, h_ray, TAU_CAP)
    r = np.hypot(cx[:, None] - cx[None, :], cy[:, None] - cy[None, :])
    np.fill_diagonal(r, 1.0)
    P = (h * h / (2.0 * math.pi)) * np.exp(-tau) / r * sigma_t[None, :]
    del tau, r

    # near field and diagonal: polar integration around each target centre
    lookup = grid.active_lookup
    iy, ix = np.divmod(grid.flat_active, grid.nx)
    for ox, oy, th, wt, r_in, r_out in _offset_rules(near_cells, n_gauss):
        jx, jy = ix + ox, iy + oy
        ok = (jx >= 0) & (jx < grid.nx) & (jy >= 0) & (jy < grid.ny)
        rows = np.flatnonzero(ok)
        cols = lookup[jy[ok], jx[ok]]
        keep = cols >= 0
        rows, cols = rows[keep], cols[keep]
        if rows.size == 0:
            continue
        m = th.size
        px = np.repeat(cx[rows], m)
        py = np.repeat(cy[rows], m)
        dx = np.tile(np.cos(th), rows.size)
        dy = np.tile(np.sin(th), rows.size)
        t_in = kernels.segment_optical_depth(px, py, dx, dy, np.tile(r_in * h, rows.size),
                                             sig_full, *kg, h_ray, TAU_CAP)
        t_out = kernels.segment_optical_depth(px, py, dx, dy, np.tile(r_out * h, rows.size),
                                              sig_full, *kg, h_ray, TAU_CAP)
        vals = ((np.exp(-t_in) - np.exp(-t_out)).reshape(rows.size, m) @ wt) / (2.0 * math.pi)
        P[rows, cols] = vals

    # symmetrise the geometric part P / sigma_t(col), then restore the column factor
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = np.where(sigma_t > 0, 1.0 / sigma_t, 0.0)
    K = P * inv[None, :]
    K = 0.5 * (K + K.T)
    P = K * sigma_t[None, :]
    P[:, sigma_t == 0] = 0.0
    if np.any(P < 0):
        raise NumericalIntegrityError("negative Peierls entry")
    return PeierlsMatrix(P, sigma_t, eps, {"h": h, "h_ray": h_ray, "near_cells": near_cells,
                                           "n_gauss": n_gauss})


def assemble_peierls(coeffs, grid, h_ray=None, near_cells=8, n_gauss=6):
    """P_eps for scaled coefficients; checks sub-stochasticity of the result."""
    P = peierls_matrix(grid, coeffs.sigma_t_eps, h_ray, near_cells, n_gauss, coeffs.eps)
    rows = P.matrix.sum(1)
    # deep cells escape with probability below machine epsilon, so allow roundoff
    if rows.max() > 1.0 + 1e-12:
        raise NumericalIntegrityError(f"Peierls row sum {rows.max():.6g} is not below 1")
    return P


def spectral_radius(P, tol=1e-12, max_iter=100000, return_vector=False):
    """Principal eigenvalue by power iteration from the all-ones vector.

    For a :class:`PeierlsMatrix` the symmetrised form is iterated and the
    Rayleigh quotient monitored; a plain symmetric array is used as is.
    The returned vector is the right eigenvector of P, positive, unit 2-norm.
    """
    if isinstance(P, PeierlsMatrix):
        S = P.symmetrized
        back = np.sqrt(P.sigma_t)
        with np.errstate(divide="ignore", invalid="ignore"):
            back = np.where(back > 0, 1.0 / back, 0.0)
    else:
        S = np.atleast_2d(np.asarray(P, dtype=float))
        if not np.allclose(S, S.T, rtol=1e-12, atol=1e-14):
            raise ModelError("plain matrices must be symmetric; wrap Peierls matrices")
        back = np.ones(S.shape[0])
    x = np.ones(S.shape[0])
    if np.any(S < 0):
        # without Perron-Frobenius the ones vector may miss the dominant mode
        x += 0.25 * np.linspace(-1.0, 1.0, S.shape[0])
    x /= np.linalg.norm(x)
    lam = float(x @ S @ x)
    for it in range(1, max_iter + 1):
        y = S @ x
        ny = np.linalg.norm(y)
        if ny == 0.0:
            lam = 0.0
            break
        x = y / ny
        new = float(x @ (S @ x))
        if abs(new - lam) <= tol:
            lam = new
            break
        lam = new
    else:
        raise IterationError(f"power iteration did not settle in {max_iter} steps "
                             "(nearly degenerate principal eigenvalue)", [lam])
    lam = abs(lam)
    log.debug("power iteration: rho=%.15g after %d steps", lam, it)
    if not return_vector:
        return lam
    v = back * x
    v = np.abs(v) / np.linalg.norm(v)
    return lam, v


@dataclass(frozen=True, eq=False)
class EigenPair:
    value: float
    vector: np.ndarray
    residual: float
    iterations: int = 0


def dirichlet_eigenpair(coeffs, grid, limit=False, tol=1e-8, max_iter=500):
    """First Dirichlet eigenpair of -div(a grad) by inverse power iteration.

    ``a = 1/sigma_t_eps``, or ``a = 1/sigma_s`` for the limit operator when
    ``limit`` is set. The vector is positive with unit discrete L2 norm.
    """
    coeff = 1.0 / (coeffs.sigma_s if limit else coeffs.sigma_t_eps)
    A = dirichlet_operator(grid, coeff).A.tocsc()
    try:
        lu = sla.splu(A)
    except RuntimeError as exc:
        raise NumericalIntegrityError(f"factorisation failed: {exc}") from exc
    x = np.ones(grid.n)
    lam = 0.0
    res = np.inf
    for it in range(1, max_iter + 1):
        x = lu.solve(x)
        x /= np.linalg.norm(x)
        Ax = A @ x
        lam = float(x @ Ax)
        res = float(np.linalg.norm(Ax - lam * x) / abs(lam))
        if res <= tol:
            break
    else:
        raise IterationError("inverse power iteration did not converge", [res])
    x = x * np.sign(x.sum())
    if np.any(x <= 0):
        raise NumericalIntegrityError("principal eigenvector is not positive")
    x /= grid.lp_norm(x, 2)
    return EigenPair(lam, x, res, it)


def mu_constant(coeffs, disc, h_ray=None):
    """sup over (cell, direction) of 1 - E along the full backward ray to the boundary."""
    from .transport import AttenuationCache

    sigma_t = coeffs if isinstance(coeffs, np.ndarray) else coeffs.sigma_t_eps
    cache = AttenuationCache(disc, sigma_t, h_ray)
    return float(1.0 - cache.exit_attenuation.min())


def uncollided_mean(disc, sigma_t, source, n_angles=512, h_ray=None):
    """<E f_-> at every cell with a fine uniform angular rule (independent of disc.quad)."""
    grid = disc.grid
    h_ray = 0.5 * grid.h if h_ray is None else h_ray
    theta = 2.0 * math.pi * (np.arange(n_angles) + 0.5) / n_angles
    v = np.column_stack([np.cos(theta), np.sin(theta)])
    c = grid.centers
    n = grid.n
    px = np.repeat(c[:, 0], n_angles)
    py = np.repeat(c[:, 1], n_angles)
    vv = np.tile(v, (n, 1))
    reach = grid.domain.exit_distance(np.column_stack([px, py]), -vv)
    tau = kernels.segment_optical_depth(px, py, np.ascontiguousarray(-vv[:, 0]),
                                        np.ascontiguousarray(-vv[:, 1]), reach,
                                        grid.full(sigma_t), *grid.kernel_grid, h_ray)
    exit_pts = np.column_stack([px, py]) - reach[:, None] * vv
    f = source(exit_pts, vv)
    return (np.exp(-tau) * f).reshape(n, n_angles).mean(1)


def nystrom_scalar_flux(disc, sigma_a, sigma_s, source, n_angles=512, P=None, **kw):
    """Isotropic transport via the integral equation m = P (sigma_s/sigma_t m) + <E f_->."""
    sigma_a = np.asarray(sigma_a, dtype=float)
    sigma_s = np.asarray(sigma_s, dtype=float)
    sigma_t = sigma_a + sigma_s
    if P is None:
        P = peierls_matrix(disc.grid, sigma_t, **kw)
    b = uncollided_mean(disc, sigma_t, source, n_angles, kw.get("h_ray"))
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(sigma_t > 0, sigma_s / sigma_t, 0.0)
    A = np.eye(disc.n) - P.matrix * ratio[None, :]
    return np.linalg.solve(A, b)


def boundary_layer_radius(coeffs, kappa=4.0):
    """kappa |log eps| / inf sigma_t_eps."""
    return kappa * abs(math.log(coeffs.eps)) / float(coeffs.sigma_t_eps.min())


def eigen_diagnostics(P, pair, coeffs, grid, kappa=4.0, d=2):
    """Interior eigen-relation residual, boundary smallness and boundary-layer linearity.

    ``pair`` is the eigenpair of the eps operator. Returns a dict with
    ``inner_residual`` (max |P phi - phi + lam phi / (d sigma_t)| over
    interior cells), ``boundary_ratio`` (max |P phi| over the layer divided
    by eps |log eps|) and ``layer_correlation`` (Pearson correlation of phi
    with the boundary distance over the layer).
    """
    eps = coeffs.eps
    phi = pair.vector / pair.vector.max()
    Pphi = P.matrix @ phi
    dist = grid.boundary_distance
    r = boundary_layer_radius(coeffs, kappa)
    inner = dist >= r
    layer = ~inner
    res = np.abs(Pphi - phi + pair.value * phi / (d * coeffs.sigma_t_eps))
    out = {"eps": eps, "layer_radius": r,
           "inner_cells": int(inner.sum()), "layer_cells": int(layer.sum()),
           "inner_residual": float(res[inner].max()) if inner.any() else float("nan"),
           "boundary_ratio": float(np.abs(Pphi[layer]).max() / (eps * abs(math.log(eps))))
           if layer.any() else float("nan")}
    if layer.sum() > 2:
        out["layer_correlation"] = float(np.corrcoef(phi[layer], dist[layer])[0, 1])
    else:
        out["layer_correlation"] = float("nan")
    return out


def loglog_slope(eps, values):
    """Least-squares slope of log(values) against log(eps)."""
    x = np.log(np.asarray(eps, dtype=float))
    y = np.log(np.asarray(values, dtype=float))
    if x.size < 2:
        return float("nan")
    return float(np.polyfit(x, y, 1)[0])


def epsilon_scan(sigma_a, sigma_s, eps_list, disc, beta=None, seed=0, h_ray=None,
                 near_cells=8, diagnostics=False):
    """Spectral quantities of P_eps along a strictly decreasing list of eps.

    With ``beta`` set, a rough field of amplitude eps**beta (cellwise uniform
    on [0, 1), fixed seed) is added to sigma_a before scaling.
    """
    eps_list = [float(e) for e in eps_list]
    if any(e <= 0 for e in eps_list):
        raise ModelError("every eps must be positive")
    if any(b >= a for a, b in zip(eps_list, eps_list[1:])):
        raise ModelError("eps list must be strictly decreasing")
    grid = disc.grid
    sigma_a = np.asarray(sigma_a, dtype=float)
    rough = np.random.default_rng(seed).random(grid.n) if beta is not None else None
    rows, diag = [], []
    gaps = []
    for eps in eps_list:
        sa = sigma_a if rough is None else sigma_a + eps ** beta * rough
        c = ScaledCoefficients(eps, sa, sigma_s)
        P = assemble_peierls(c, grid, h_ray, near_cells)
        rho = spectral_radius(P)
        pair = dirichlet_eigenpair(c, grid)
        gaps.append(1.0 - rho)
        row = {"epsilon": eps, "one_minus_rho": 1.0 - rho,
               "lambda_eps_over_eps": pair.value / eps,
               "mu": mu_constant(c, disc, h_ray),
               "slope_cum": loglog_slope(eps_list[:len(gaps)], gaps)}
        rows.append(row)
        if diagnostics:
            diag.append(eigen_diagnostics(P, pair, c, grid))
        log.info("eps=%g: 1-rho=%.6e lambda/eps=%.6f", eps, 1.0 - rho, pair.value / eps)
    slope = loglog_slope(eps_list, gaps) if len(gaps) >= 2 else float("nan")
    return {"rows": rows, "slope": slope, "diagnostics": diag}


SCAN_COLUMNS = ("epsilon", "one_minus_rho", "lambda_eps_over_eps", "mu", "slope_cum")
