"""Linear transport solves for a frozen absorption field.

Characteristics are traced backwards from every active cell centre along
every quadrature direction (long characteristics). Along a ray the optical
depth is a composite trapezoid rule with step ``h_ray`` on bilinearly
interpolated cross sections; the volume source is written as
``sigma_t * g`` with ``g`` linear per step, and integrated exactly against
the attenuation, which keeps the discrete maximum principle exact.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy.sparse.linalg import LinearOperator, gmres

from . import kernels
from .errors import DomainError, IterationError, ModelError, NumericalIntegrityError
from .geometry import angular_average

log = logging.getLogger(__name__)

BOUND_SLACK = 1e-6


@dataclass(frozen=True)
class TransportConfig:
    """Ray step, source-iteration tolerance and iteration cap.

    ``h_ray=None`` means half the cell size. ``method`` selects how the
    scattering fixed point is reached: ``"source"`` (plain source
    iteration), ``"gmres"`` (Krylov solve of the same fixed-point equation,
    each operator application being one sweep) or ``"direct"`` (isotropic
    only: dense solve with the assembled scalar-flux matrix).
    """

    h_ray: float | None = None
    tol_si: float = 1e-10
    max_iter: int = 2000
    method: str = "source"
    check_bounds: bool = True

    def __post_init__(self):
        if self.h_ray is not None and not self.h_ray > 0:
            raise ValueError("h_ray must be positive")
        if not self.tol_si > 0:
            raise ValueError("tol_si must be positive")
        if self.method not in ("source", "gmres", "direct"):
            raise ValueError(f"unknown transport method {self.method!r}")

    @classmethod
    def for_epsilon(cls, eps, **kw):
        """Iteration cap 50 / eps**2 for the diffusive scaling."""
        return cls(max_iter=int(math.ceil(50.0 / eps ** 2)), **kw)

    def ray_step(self, grid):
        return self.h_ray if self.h_ray is not None else 0.5 * grid.h

    def to_dict(self):
        return {"h_ray": self.h_ray, "tol_si": self.tol_si, "max_iter": self.max_iter,
                "method": self.method}


def attenuation(x, v, s, sigma_t, grid, h_ray=None):
    """E(x, x - s v) = exp(-int_0^s sigma_t(x - t v) dt) for one point or a batch.

    ``sigma_t`` is an active-cell field on ``grid``.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    v = np.atleast_2d(np.asarray(v, dtype=float))
    s = np.atleast_1d(np.asarray(s, dtype=float))
    # broadcast views are read-only; the kernels need writable buffers
    x, v = (np.array(a) for a in np.broadcast_arrays(x, v))
    s = np.array(np.broadcast_to(s, x.shape[:1]))
    if np.any(s < 0):
        raise DomainError("path length must be nonnegative")
    reach = grid.domain.exit_distance(x, -v)
    if np.any(s > reach * (1 + 1e-12) + 1e-14):
        raise DomainError("path leaves the domain (s > tau_-)")
    if np.any(np.asarray(sigma_t) < 0):
        raise ModelError("total cross section must be nonnegative")
    h_ray = 0.5 * grid.h if h_ray is None else h_ray
    tau = kernels.segment_optical_depth(
        np.ascontiguousarray(x[:, 0]), np.ascontiguousarray(x[:, 1]),
        np.ascontiguousarray(-v[:, 0]), np.ascontiguousarray(-v[:, 1]),
        np.ascontiguousarray(s), grid.full(sigma_t), *grid.kernel_grid, h_ray)
    out = np.exp(-tau)
    return out if out.size > 1 else float(out[0])


class AttenuationCache:
    """Ray geometry and attenuation for one total cross section on one discretisation.

    Holds the box-filled cross section, the exit attenuation of every
    (cell, direction) ray and, on demand, the dense scalar-flux matrix.
    """

    def __init__(self, disc, sigma_t, h_ray=None):
        sigma_t = np.asarray(sigma_t, dtype=float)
        if sigma_t.shape != (disc.n,):
            raise ValueError("sigma_t must be an active-cell field")
        if np.any(sigma_t < 0) or not np.all(np.isfinite(sigma_t)):
            raise ModelError("total cross section must be finite and nonnegative")
        self.disc = disc
        self.sigma_t = sigma_t
        self.h_ray = 0.5 * disc.grid.h if h_ray is None else float(h_ray)
        self.sig_full = disc.grid.full(sigma_t)
        self._exit = None
        self._matrix = None
        self.sweeps = 0

    def _args(self):
        g = self.disc.grid
        c = g.centers
        return (np.ascontiguousarray(c[:, 0]), np.ascontiguousarray(c[:, 1]),
                self.disc.quad.directions, self.disc.tau_minus)

    def source_ratio(self, q):
        """g = q / sigma_t; zero where both vanish."""
        q = np.asarray(q, dtype=float)
        st = self.sigma_t if q.ndim == 1 else self.sigma_t[:, None]
        with np.errstate(divide="ignore", invalid="ignore"):
            g = np.where(st > 0, q / st, 0.0)
        if np.any((st == 0) & (q != 0)):
            raise ModelError("a volume source needs a positive total cross section")
        return g

    def sweep_volume(self, q):
        """Volume part of the characteristic solution for source ``q``.

        ``q`` is (N,) for an angle-independent source or (N, Nv).
        """
        g = self.source_ratio(q)
        g_full = self.disc.grid.full(g.T if g.ndim == 2 else g[None, :])
        cx, cy, dirs, tau_len = self._args()
        u, e = kernels.sweep(cx, cy, dirs, tau_len, np.atleast_2d(g_full),
                             self.sig_full, *self.disc.grid.kernel_grid, self.h_ray,
                             kernels.TAU_CAP)
        if self._exit is None:
            self._exit = e
        self.sweeps += 1
        return u

    @property
    def exit_attenuation(self):
        if self._exit is None:
            cx, cy, dirs, tau_len = self._args()
            zero = np.zeros((1, self.disc.grid.nx * self.disc.grid.ny))
            _, self._exit = kernels.sweep(cx, cy, dirs, tau_len, zero, self.sig_full,
                                          *self.disc.grid.kernel_grid, self.h_ray,
                                          kernels.TAU_CAP)
        return self._exit

    def uncollided(self, source):
        """E(x, x - tau_- v) f_-(x - tau_- v, v) for every ray."""
        return self.exit_attenuation * self.disc.boundary_values(source)

    @property
    def scalar_flux_matrix(self):
        """Dense M with <sweep_volume(sigma_t * g)> = M @ g."""
        if self._matrix is None:
            cx, cy, dirs, tau_len = self._args()
            m, e = kernels.scalar_flux_matrix(cx, cy, dirs, self.disc.quad.weights, tau_len,
                                              self.sig_full, self.disc.grid.fill_index,
                                              *self.disc.grid.kernel_grid, self.h_ray,
                                              kernels.TAU_CAP)
            self._matrix = m
            if self._exit is None:
                self._exit = e
        return self._matrix


def sweep(disc, q, sigma_t, source, h_ray=None, cache=None):
    """u(x, v) = E f_-(exit) + int_0^tau_- E(x, x - s v) q(x - s v, v) ds."""
    cache = cache or AttenuationCache(disc, sigma_t, h_ray)
    q = np.asarray(q, dtype=float)
    if q.ndim == 0:
        q = np.full(disc.n, float(q))
    return cache.uncollided(source) + cache.sweep_volume(q)


class TransportSolution:
    """Angular flux, scalar flux and iteration record of one linear solve.

    ``u`` may be given as a zero-argument callable; it is then evaluated (one
    extra sweep) on first access, so callers that only need the scalar flux
    never pay for it.
    """

    def __init__(self, u, mean, iterations, residuals=None, method="source"):
        self._u = u
        self.mean = mean
        self.iterations = iterations
        self.residuals = list(residuals or [])
        self.method = method

    @property
    def u(self):
        if callable(self._u):
            self._u = self._u()
        return self._u

    @property
    def residual(self):
        return self.residuals[-1] if self.residuals else 0.0


def _rel_sup(a, b):
    return float(np.max(np.abs(a - b)) / max(np.max(np.abs(a)), 1e-300))


def check_bounds(u, source, lower, where="transport solution"):
    """Enforce lower - slack <= u <= f_upper + slack."""
    hi = source.f_upper + BOUND_SLACK
    lo = lower - BOUND_SLACK
    umax, umin = float(u.max()), float(u.min())
    if umax > hi or umin < lo:
        raise NumericalIntegrityError(
            f"{where}: values in [{umin:.6g}, {umax:.6g}] leave [{lo:.6g}, {hi:.6g}]")


def uncollided_lower_bound(disc, source, sigma_a, sigma_s):
    """f_lower * exp(-diam (sup sigma_a + sup sigma_s)): what the uncollided flux alone guarantees."""
    return source.f_lower * math.exp(-disc.domain.diameter
                                     * (float(np.max(sigma_a)) + float(np.max(sigma_s))))


def solve_linear_rte(disc, sigma_a, sigma_s, scattering, source, cfg=None, m0=None,
                     cache=None):
    """Solve v.grad u + (sigma_a + sigma_s) u = sigma_s K u with u = f_- on the inflow boundary.

    ``sigma_a`` is the absorption already evaluated at the frozen state.
    ``m0`` warm-starts the isotropic iteration with a scalar flux guess.
    """
    cfg = cfg or TransportConfig()
    sigma_a = np.asarray(sigma_a, dtype=float)
    sigma_s = np.asarray(sigma_s, dtype=float)
    if np.any(sigma_a <= 0):
        raise ModelError("absorption must be strictly positive")
    if np.any(sigma_s < 0):
        raise ModelError("scattering coefficient must be nonnegative")
    sigma_t = sigma_a + sigma_s
    if cache is None or cache.disc is not disc or not np.array_equal(cache.sigma_t, sigma_t):
        cache = AttenuationCache(disc, sigma_t, cfg.ray_step(disc.grid))
    quad = disc.quad
    first = None
    if (m0 is not None and scattering.is_isotropic and cfg.method != "direct"
            and np.any(sigma_s > 0)):
        # the first sweep also yields the exit attenuation
        m0 = np.asarray(m0, dtype=float)
        first = cache.sweep_volume(sigma_s * m0)
    b_ang = cache.uncollided(source)

    if not np.any(sigma_s > 0):
        u = b_ang
        sol = TransportSolution(u, angular_average(u, quad), 1, [0.0], "none")
    elif scattering.is_isotropic:
        sol = _solve_isotropic(disc, cache, sigma_s, b_ang, cfg, m0, first)
    else:
        sol = _solve_anisotropic(disc, cache, sigma_s, scattering, b_ang, cfg)

    if cfg.check_bounds:
        check_bounds(sol.u, source, uncollided_lower_bound(disc, source, sigma_a, sigma_s))
    return sol


def source_iteration_mean(disc, sigma_a, sigma_s, source, m, h_ray=None):
    """<u> after one sweep with the isotropic scattering source sigma_s * m frozen.

    Its fixed points in m are exactly the scalar fluxes of the linear problem.
    """
    sigma_a = np.asarray(sigma_a, dtype=float)
    if np.any(sigma_a <= 0):
        raise ModelError("absorption must be strictly positive")
    cache = AttenuationCache(disc, sigma_a + sigma_s, h_ray)
    vol = cache.sweep_volume(np.asarray(sigma_s, dtype=float) * m)
    return angular_average(cache.uncollided(source) + vol, disc.quad)


def _solve_isotropic(disc, cache, sigma_s, b_ang, cfg, m0, first):
    quad = disc.quad
    b = angular_average(b_ang, quad)
    ratio = sigma_s / cache.sigma_t

    if cfg.method == "direct":
        M = cache.scalar_flux_matrix
        A = np.eye(disc.n) - M * ratio[None, :]
        m = np.linalg.solve(A, b)
        u = b_ang + cache.sweep_volume(sigma_s * m)
        mean = angular_average(u, quad)
        return TransportSolution(u, mean, 1, [_rel_sup(mean, m)], "direct")

    if cfg.method == "gmres":
        # Krylov solve for the correction to a starting scalar flux
        start = b if m0 is None else m0
        if first is None:
            first = cache.sweep_volume(sigma_s * start)
        r0 = b + angular_average(first, quad) - start

        def apply(x):
            return x - angular_average(cache.sweep_volume(sigma_s * x), quad)
        op = LinearOperator((disc.n, disc.n), matvec=apply, dtype=float)

        def cb(pr):
            count[0] += 1
            trace.append(float(pr))
        count, trace = [0], []
        atol = cfg.tol_si * np.linalg.norm(b)
        if np.linalg.norm(r0) <= atol:
            # keep the source-iteration update already paid for; returning
            # the start itself would hide the change from outer iterations
            delta = r0
        else:
            delta, info = gmres(op, r0, rtol=0.0, atol=atol, restart=200,
                                maxiter=cfg.max_iter, callback=cb, callback_type="pr_norm")
            if info != 0:
                raise IterationError("GMRES transport solve did not converge", trace)
        m = start + delta
        res = trace[-1] / max(np.linalg.norm(b), 1e-300) if trace else 0.0
        # the angular flux costs one more sweep; build it only when asked
        return TransportSolution(lambda: b_ang + cache.sweep_volume(sigma_s * m), m,
                                 count[0], [res], "gmres")

    # plain source iteration on the angular flux
    u = b_ang if first is None else b_ang + first
    residuals = []
    for it in range(1, cfg.max_iter + 1):
        m = angular_average(u, quad)
        u_new = b_ang + cache.sweep_volume(sigma_s * m)
        res = _rel_sup(u_new, u)
        residuals.append(res)
        u = u_new
        if res <= cfg.tol_si:
            return TransportSolution(u, angular_average(u, quad), it, residuals, "source")
    raise IterationError(f"source iteration did not converge in {cfg.max_iter} sweeps",
                         residuals)


def _solve_anisotropic(disc, cache, sigma_s, scattering, b_ang, cfg):
    quad = disc.quad
    if cfg.method == "gmres":
        shape = (disc.n, quad.nv)

        def apply(x):
            u = x.reshape(shape)
            return (u - cache.sweep_volume(sigma_s[:, None] * scattering.apply(u))).ravel()
        op = LinearOperator((disc.n * quad.nv,) * 2, matvec=apply, dtype=float)
        count = [0]

        def cb(_):
            count[0] += 1
        u, info = gmres(op, b_ang.ravel(), x0=b_ang.ravel(), rtol=0.1 * cfg.tol_si,
                        atol=0.0, restart=200, maxiter=cfg.max_iter, callback=cb,
                        callback_type="pr_norm")
        if info != 0:
            raise IterationError("GMRES transport solve did not converge")
        u = u.reshape(shape)
        u_chk = b_ang + cache.sweep_volume(sigma_s[:, None] * scattering.apply(u))
        return TransportSolution(u_chk, angular_average(u_chk, quad), count[0],
                                 [_rel_sup(u_chk, u)], "gmres")
    if cfg.method == "direct":
        raise ValueError("direct solves need isotropic scattering")
    u = b_ang
    residuals = []
    for it in range(1, cfg.max_iter + 1):
        u_new = b_ang + cache.sweep_volume(sigma_s[:, None] * scattering.apply(u))
        res = _rel_sup(u_new, u)
        residuals.append(res)
        u = u_new
        if res <= cfg.tol_si:
            return TransportSolution(u, angular_average(u, quad), it, residuals, "source")
    raise IterationError(f"source iteration did not converge in {cfg.max_iter} sweeps",
                         residuals)


def trace_norm(disc, source, p=2.0):
    """||f_-||_{L^p(Gamma_-)} with the measure |n.v| dS dv (diagnostic only)."""
    dom = disc.domain
    quad = disc.quad
    if dom.kind == "disk":
        nb = max(256, 8 * quad.nv)
        phi = 2 * np.pi * (np.arange(nb) + 0.5) / nb
        pts = np.column_stack([np.cos(phi), np.sin(phi)]) * dom.radius + np.asarray(dom.center)
        ds = 2 * np.pi * dom.radius / nb
    else:
        nb = max(64, 2 * quad.nv)
        t = (np.arange(nb) + 0.5) / nb
        W, H = dom.width, dom.height
        pts = np.concatenate([np.column_stack([t * W, np.zeros(nb)]),
                              np.column_stack([np.full(nb, W), t * H]),
                              np.column_stack([t * W, np.full(nb, H)]),
                              np.column_stack([np.zeros(nb), t * H])])
        ds = np.concatenate([np.full(nb, W / nb), np.full(nb, H / nb)] * 2)
    n = dom.outward_normal(pts)
    ndotv = n @ quad.directions.T
    inflow = ndotv < 0
    vals = source(pts[:, None, :], quad.directions[None, :, :])
    w = np.abs(ndotv) * quad.weights[None, :] * np.broadcast_to(np.asarray(ds)[..., None] if np.ndim(ds) else ds, ndotv.shape)
    return float(np.sum(np.where(inflow, np.abs(vals) ** p * w, 0.0)) ** (1.0 / p))
