"""Multi-photon absorption law and the semilinear forward solver.

The absorption is a polynomial in the local mean intensity,
``sigma_a(x, m) = sum_k sigma_k(x) |T_k m|^k``, and the forward problem is
solved by damped Picard iteration on ``m -> S(m) = <u[sigma_a(m)]>``.
"""
from __future__ import annotations

import dataclasses
import json
import logging
import math
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, IterationError, ModelError, UnsupportedParameterError
from .geometry import ScalarField
from .transport import (BOUND_SLACK, TransportConfig, check_bounds, solve_linear_rte,
                        uncollided_lower_bound)

log = logging.getLogger(__name__)


class MPAModel:
    """Polynomial absorption law with optional symmetric smoothing kernels.

    Parameters
    ----------
    coefficients : sequence of arrays, one active-cell field per power k = 0..K.
    smoothing : optional sequence of (N, N) symmetric PSD matrices, one per power;
        ``None`` entries (or no sequence at all) mean the identity.
    q : data exponent, H = sigma_a^q * m.
    """

    def __init__(self, coefficients, smoothing=None, q=1.0):
        coeffs = [np.asarray(c, dtype=float) for c in coefficients]
        if not coeffs:
            raise ModelError("need at least sigma_{a,0}")
        n = coeffs[0].shape
        if any(c.shape != n or c.ndim != 1 for c in coeffs):
            raise ModelError("coefficient fields must be 1-D and share one grid")
        if not np.all(coeffs[0] > 0):
            raise ModelError("invariant violated: sigma_{a,0} > 0 everywhere")
        if any(np.any(c < 0) for c in coeffs[1:]):
            raise ModelError("invariant violated: sigma_{a,k} >= 0 for k >= 1")
        if q < 1:
            raise UnsupportedParameterError("data exponent q < 1 is not supported")
        self.coefficients = coeffs
        self.q = float(q)
        if smoothing is None:
            smoothing = [None] * len(coeffs)
        if len(smoothing) != len(coeffs):
            raise ModelError("one smoothing kernel (or None) per coefficient")
        for T in smoothing:
            if T is None:
                continue
            T = np.asarray(T)
            if T.shape != (n[0], n[0]) or not np.allclose(T, T.T, atol=1e-12):
                raise ModelError("smoothing kernels must be symmetric N x N matrices")
            if np.linalg.eigvalsh(T).min() < -1e-10 * max(1.0, np.abs(T).max()):
                raise ModelError("smoothing kernels must be positive semidefinite")
        self.smoothing = [None if T is None else np.asarray(T, dtype=float) for T in smoothing]

    @classmethod
    def constant(cls, n, values, q=1.0):
        return cls([np.full(n, float(v)) for v in values], q=q)

    @property
    def degree(self):
        return len(self.coefficients) - 1

    @property
    def n(self):
        return self.coefficients[0].size

    @property
    def lower_bound(self):
        """inf sigma_{a,0}."""
        return float(self.coefficients[0].min())

    def growth(self, t):
        """g(t) = sum_k sup(sigma_k) t^k, an upper envelope for the absorption."""
        return float(sum(c.max() * t ** k for k, c in enumerate(self.coefficients)))

    def scaled(self, factor):
        """Same law with every coefficient multiplied by ``factor``."""
        return MPAModel([factor * c for c in self.coefficients], self.smoothing, self.q)

    def perturbed(self, k, delta):
        coeffs = [c.copy() for c in self.coefficients]
        coeffs[k] = coeffs[k] + np.asarray(delta, dtype=float)
        return MPAModel(coeffs, self.smoothing, self.q)

    def _smoothed(self, k, m):
        T = self.smoothing[k]
        return m if T is None else T @ m

    def __call__(self, m):
        return eval_sigma_a(self, m)

    def derivative(self, m, f):
        """Frechet derivative sigma_a'(m)[f] (chain rule through T_k)."""
        m = np.asarray(m, dtype=float)
        f = np.asarray(f, dtype=float)
        out = np.zeros_like(m)
        for k, c in enumerate(self.coefficients[1:], start=1):
            tm = self._smoothed(k, m)
            tf = self._smoothed(k, f)
            out += k * c * np.abs(tm) ** (k - 1) * np.sign(tm) * tf
        return out

    def to_dict(self, field_dir=None, grid=None, prefix="sigma_a"):
        """Structured description; non-constant fields are written as CSV next to it."""
        coeffs = []
        for k, c in enumerate(self.coefficients):
            if np.all(c == c[0]):
                coeffs.append({"constant": float(c[0])})
            else:
                if field_dir is None or grid is None:
                    raise ValueError("spatially varying coefficients need field_dir and grid")
                path = os.path.join(field_dir, f"{prefix}_{k}.csv")
                ScalarField(grid, c).to_csv(path)
                coeffs.append({"csv": os.path.basename(path)})
        return {"degree": self.degree, "coefficients": coeffs, "q": self.q,
                "smoothing": None if all(T is None for T in self.smoothing) else "tabulated"}

    @classmethod
    def from_dict(cls, doc, grid, base_dir="."):
        coeffs = []
        for entry in doc["coefficients"]:
            if "constant" in entry:
                coeffs.append(np.full(grid.n, float(entry["constant"])))
            elif "csv" in entry:
                coeffs.append(ScalarField.from_csv(os.path.join(base_dir, entry["csv"]), grid).values)
            else:
                raise ModelError(f"coefficient entry {entry!r} is neither constant nor csv")
        if "degree" in doc and doc["degree"] != len(coeffs) - 1:
            raise ModelError("degree does not match the number of coefficients")
        return cls(coeffs, q=doc.get("q", 1.0))

    def save(self, path, grid):
        with open(path, "w") as fh:
            json.dump(self.to_dict(os.path.dirname(os.path.abspath(path)), grid), fh, indent=2)

    @classmethod
    def load(cls, path, grid):
        with open(path) as fh:
            doc = json.load(fh)
        return cls.from_dict(doc, grid, os.path.dirname(os.path.abspath(path)))


def eval_sigma_a(model, m):
    """Pointwise sum_k sigma_k |T_k m|^k."""
    m = np.asarray(m, dtype=float)
    out = model.coefficients[0].copy()
    for k, c in enumerate(model.coefficients[1:], start=1):
        out += c * np.abs(model._smoothed(k, m)) ** k
    return out


def gaussian_smoothing(grid, width):
    """Symmetric PSD smoothing matrix from a Gaussian kernel on the active cells.

    Normalised as D^-1/2 G D^-1/2 with D the row sums, which keeps symmetry
    and positive semidefiniteness and maps constants close to themselves.
    """
    c = grid.centers
    d2 = ((c[:, None, :] - c[None, :, :]) ** 2).sum(-1)
    G = np.exp(-0.5 * d2 / width ** 2)
    s = 1.0 / np.sqrt(G.sum(1))
    return s[:, None] * G * s[None, :]


@dataclass(frozen=True)
class FixedPointConfig:
    """Outer tolerance, iteration cap and relaxation.

    ``inner_eta`` makes each inner transport solve only as accurate as
    ``inner_eta`` times the previous outer residual (never looser than
    needed, never tighter than the transport tolerance); ``None`` solves
    every inner problem to the transport tolerance.
    """

    tol_fp: float = 1e-8
    max_iter: int = 200
    theta: float = 1.0
    inner_eta: float | None = 1e-3

    def __post_init__(self):
        if not self.tol_fp > 0:
            raise ValueError("tol_fp must be positive")
        if not 0 < self.theta <= 1:
            raise ValueError("relaxation theta must lie in (0, 1]")

    def to_dict(self):
        return {"tol_fp": self.tol_fp, "max_iter": self.max_iter, "theta": self.theta,
                "inner_eta": self.inner_eta}


@dataclass
class ForwardSolution:
    u: np.ndarray
    m: np.ndarray
    sigma_a: np.ndarray
    residuals: list = field(default_factory=list)
    l2_residuals: list = field(default_factory=list)
    iterations: int = 0
    a_priori_lower: float = 0.0
    f_upper: float = 1.0
    theta_history: list = field(default_factory=list)

    @property
    def residual(self):
        return self.residuals[-1]

    @property
    def satisfies_a_priori_bound(self):
        """a_priori_lower - slack <= u <= f_upper + slack."""
        return bool(self.u.min() >= self.a_priori_lower - BOUND_SLACK
                    and self.u.max() <= self.f_upper + BOUND_SLACK)


def a_priori_lower_bound(disc, model, source):
    """f_lower * exp(-diam(Omega) * g(f_upper))."""
    return source.f_lower * math.exp(-disc.domain.diameter * model.growth(source.f_upper))


def inner_config(transport, eta, outer_residual):
    """Transport settings for an inner solve: tolerance tied to the outer residual.

    Bounds are left to the caller, which checks the converged state only.
    """
    if eta is None:
        return dataclasses.replace(transport, check_bounds=False)
    tol = max(transport.tol_si, min(1e-3, eta * outer_residual))
    return dataclasses.replace(transport, tol_si=tol, check_bounds=False)


def fixed_point_solve(disc, model, sigma_s, scattering, source, cfg=None,
                      transport=None, m0=None):
    """Damped Picard iteration m <- (1 - theta) m + theta S(m), kept inside [0, f_upper].

    Stops at the first iterate with ||S(m_n) - m_n||_inf <= tol_fp and returns
    the transport solution frozen at that iterate.
    """
    cfg = cfg or FixedPointConfig()
    transport = transport or TransportConfig()
    sigma_s = np.asarray(sigma_s, dtype=float)
    fbar = source.f_upper
    m = np.zeros(disc.n) if m0 is None else np.clip(np.asarray(m0, dtype=float), 0.0, fbar)
    theta = cfg.theta
    residuals, l2_res, thetas = [], [], []
    increases = 0
    warm = None
    # S is constant for a linear model, so loose inner solves only cost steps
    eta = None if model.degree == 0 else cfg.inner_eta
    for it in range(cfg.max_iter + 1):
        sig_a = eval_sigma_a(model, m)
        inner = inner_config(transport, eta, residuals[-1] if residuals else fbar)
        lin = solve_linear_rte(disc, sig_a, sigma_s, scattering, source, inner, m0=warm)
        s_m = lin.mean
        warm = s_m
        diff = s_m - m
        res = float(np.max(np.abs(diff)))
        residuals.append(res)
        l2_res.append(disc.grid.lp_norm(diff, 2))
        thetas.append(theta)
        log.debug("fixed point iteration %d: residual %.3e (theta %.3g)", it, res, theta)
        if res <= cfg.tol_fp:
            sol = ForwardSolution(lin.u, m, sig_a, residuals, l2_res, it,
                                  a_priori_lower_bound(disc, model, source), fbar, thetas)
            check_bounds(sol.u, source, uncollided_lower_bound(disc, source, sig_a, sigma_s),
                         where="forward solution")
            return sol
        if len(residuals) >= 2 and residuals[-1] > residuals[-2]:
            increases += 1
            if increases >= 3:
                theta *= 0.5
                increases = 0
                log.info("fixed point residual rose three times in a row; theta -> %.4g", theta)
        else:
            increases = 0
        m = np.clip((1.0 - theta) * m + theta * s_m, 0.0, fbar)
    raise IterationError(f"fixed point iteration did not converge in {cfg.max_iter} steps",
                         residuals)


def internal_data(model, sol, q=None):
    """H = sigma_a(m*)^q * m*; ``sol`` is a ForwardSolution or a mean-intensity field."""
    q = model.q if q is None else float(q)
    if q < 1:
        raise UnsupportedParameterError("data exponent q < 1 is not supported")
    m = sol.m if isinstance(sol, ForwardSolution) else np.asarray(sol, dtype=float)
    return eval_sigma_a(model, m) ** q * m


def frechet_positivity_check(model, m, f, grid):
    """Quadrature value of int sigma_a'(m)[f] f dx."""
    m = np.asarray(m, dtype=float)
    if np.any(m < 0):
        raise DataError("the linearisation point must be nonnegative")
    return grid.integrate(model.derivative(m, f) * np.asarray(f, dtype=float))
