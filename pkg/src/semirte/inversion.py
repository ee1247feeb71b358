"""Recovery of the absorption from internal data and the stability metrics.

Two levels are kept apart: the composed field sigma_a(<u>) from one datum,
and the coefficient fields sigma_{a,k} from K + 1 ordered illuminations.
"""
from __future__ import annotations

import json
import logging
import math
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, IterationError, UnsupportedParameterError
from .forward import inner_config
from .geometry import ScalarField
from .transport import TransportConfig, solve_linear_rte, source_iteration_mean

log = logging.getLogger(__name__)

COND_LIMIT = 1e12


@dataclass(frozen=True)
class InversionConfig:
    """Tolerances for the data-division iteration.

    ``delta_floor=None`` means 1e-8 times the source supremum. ``noise`` is
    the standard deviation of optional multiplicative Gaussian noise put on
    the data before inversion (seeded by ``seed``). ``anderson`` is the
    history depth of Anderson mixing on the averages (0 gives the plain
    alternating iteration). ``coupled`` (isotropic scattering only) replaces
    each inner transport solve by one sweep whose scattering source is the
    current average, so data division and scattering converge together to
    the same fixed point.
    """

    tol_inv: float = 1e-9
    max_iter: int = 200
    delta_floor: float | None = None
    q: float = 1.0
    inner_eta: float | None = 1e-3
    noise: float = 0.0
    seed: int = 0
    anderson: int = 5
    coupled: bool = True

    def __post_init__(self):
        if self.delta_floor is not None and not self.delta_floor > 0:
            raise ValueError("delta_floor must be positive")
        if self.q < 1:
            raise UnsupportedParameterError("data exponent q < 1 is not supported")
        if not self.tol_inv > 0:
            raise ValueError("tol_inv must be positive")
        if self.noise < 0:
            raise ValueError("noise level must be nonnegative")

    def to_dict(self):
        return {"tol_inv": self.tol_inv, "max_iter": self.max_iter,
                "delta_floor": self.delta_floor, "q": self.q, "inner_eta": self.inner_eta,
                "noise": self.noise, "seed": self.seed, "anderson": self.anderson,
                "coupled": self.coupled}


@dataclass
class ReconstructionResult:
    absorption: np.ndarray
    mean: np.ndarray
    residual: float
    iterations: int
    residuals: list = field(default_factory=list)
    floored: list = field(default_factory=list)
    coefficients: list | None = None
    condition: np.ndarray | None = None
    unrecoverable: list = field(default_factory=list)
    per_source: list = field(default_factory=list)

    def summary(self):
        out = {"residual": self.residual, "iterations": self.iterations,
               "residuals": list(map(float, self.residuals)),
               "floored_cells": list(map(int, self.floored)),
               "unrecoverable_cells": list(map(int, self.unrecoverable))}
        if self.condition is not None:
            c = self.condition[np.isfinite(self.condition)]
            out["condition_percentiles"] = (
                {f"p{q}": float(np.percentile(c, q)) for q in (50, 90, 99)}
                | {"max": float(c.max())} if c.size else {})
        if self.per_source:
            out["per_source"] = [r.summary() for r in self.per_source]
        return out

    def write(self, directory, grid):
        """One CSV per recovered field plus ``reconstruction.json``."""
        os.makedirs(directory, exist_ok=True)
        paths = []
        ScalarField(grid, self.absorption).to_csv(os.path.join(directory, "absorption.csv"))
        ScalarField(grid, self.mean).to_csv(os.path.join(directory, "mean.csv"))
        paths += ["absorption.csv", "mean.csv"]
        if self.coefficients is not None:
            for k, c in enumerate(self.coefficients):
                name = f"sigma_a_{k}.csv"
                ScalarField(grid, np.nan_to_num(c, nan=0.0)).to_csv(os.path.join(directory, name))
                paths.append(name)
        with open(os.path.join(directory, "reconstruction.json"), "w") as fh:
            json.dump(self.summary(), fh, indent=2, sort_keys=True)
        return paths + ["reconstruction.json"]


def add_noise(H, level, seed=0):
    """H * (1 + level * xi) with standard normal xi."""
    if level == 0:
        return np.asarray(H, dtype=float).copy()
    xi = np.random.default_rng(seed).standard_normal(np.shape(H))
    return np.asarray(H, dtype=float) * (1.0 + level * xi)


def recover_absorption_single(disc, H, sigma_s, scattering, source, cfg=None, transport=None):
    """Alternate a = (H / m)^(1/q) and m = <u[a]> until a^q m matches H.

    Starts from the transport solution with absorption (H / f_upper)^(1/q).
    """
    cfg = cfg or InversionConfig()
    transport = transport or TransportConfig()
    H = add_noise(H, cfg.noise, cfg.seed)
    if H.shape != (disc.n,):
        raise DataError("data must be an active-cell field")
    bad = np.flatnonzero(~(H > 0))
    if bad.size:
        raise DataError(f"data must be strictly positive; first offending cell {bad[0]}")
    q = cfg.q
    fbar = source.f_upper
    floor = cfg.delta_floor if cfg.delta_floor is not None else 1e-8 * fbar
    sigma_s = np.asarray(sigma_s, dtype=float)

    a = (H / fbar) ** (1.0 / q)
    m = solve_linear_rte(disc, a, sigma_s, scattering, source,
                         inner_config(transport, cfg.inner_eta, fbar)).mean
    residuals = []
    floored = np.zeros(disc.n, dtype=bool)
    mixer = _Anderson(cfg.anderson)
    coupled = cfg.coupled and scattering.is_isotropic
    h_ray = transport.ray_step(disc.grid)
    for it in range(1, cfg.max_iter + 1):
        floored |= m < floor
        a = (H / np.maximum(m, floor)) ** (1.0 / q)
        if coupled:
            m_new = source_iteration_mean(disc, a, sigma_s, source, m, h_ray)
        else:
            inner = inner_config(transport, cfg.inner_eta, residuals[-1] if residuals else fbar)
            m_new = solve_linear_rte(disc, a, sigma_s, scattering, source, inner, m0=m).mean
        res = float(np.max(np.abs(a ** q * m_new - H)))
        residuals.append(res)
        log.debug("inversion iteration %d: data residual %.3e", it, res)
        if res <= cfg.tol_inv:
            return ReconstructionResult(a, m_new, res, it, residuals,
                                        np.flatnonzero(floored).tolist())
        m = np.clip(mixer.update(m, m_new), floor, fbar)
    raise IterationError(f"inversion did not converge in {cfg.max_iter} iterations", residuals)


class _Anderson:
    """Anderson mixing for x = G(x) with a bounded history."""

    def __init__(self, depth):
        self.depth = int(depth)
        self.dx, self.df = [], []
        self.prev = None

    def update(self, x, gx):
        f = gx - x
        if self.depth <= 0:
            return gx
        if self.prev is not None:
            px, pf = self.prev
            self.dx.append(x - px)
            self.df.append(f - pf)
            if len(self.df) > self.depth:
                self.dx.pop(0)
                self.df.pop(0)
        self.prev = (x, f)
        if not self.df:
            return gx
        F = np.column_stack(self.df)
        X = np.column_stack(self.dx)
        gamma = np.linalg.lstsq(F, f, rcond=1e-12)[0]
        return gx - (X + F) @ gamma


def _strictly_ordered(disc, sources):
    vals = [disc.boundary_values(s) for s in sources]
    return all(np.all(lo < hi) for lo, hi in zip(vals, vals[1:]))


def recover_mpa_coefficients(disc, H_list, sources, sigma_s, scattering, cfg=None,
                             transport=None):
    """Per-cell Vandermonde recovery of sigma_{a,0..K} from K + 1 ordered illuminations."""
    if len(H_list) != len(sources) or not H_list:
        raise DataError("need one datum per source and at least one pair")
    if not _strictly_ordered(disc, sources):
        raise DataError("sources must be strictly ordered: 0 < f_0 < f_1 < ... < f_K")
    runs = [recover_absorption_single(disc, H, sigma_s, scattering, src, cfg, transport)
            for H, src in zip(H_list, sources)]
    M = np.stack([r.mean for r in runs])          # (K+1, N)
    A = np.stack([r.absorption for r in runs])
    n = disc.n
    steps = np.diff(M, axis=0)
    bad = np.argwhere(steps <= 0)
    if bad.size:
        i, cell = bad[0]
        x, y = disc.grid.centers[cell]
        raise DataError(f"recovered averages are not increasing between sources {i} and {i + 1} "
                        f"at cell {cell} ({x:.4f}, {y:.4f}); the ordered-source requirement fails")
    K = len(runs) - 1
    powers = np.arange(K + 1)
    V = M.T[:, :, None] ** powers[None, None, :]     # (N, K+1, K+1)
    scale = np.abs(V).max(axis=1)                    # column maxima per cell
    Vs = V / scale[:, None, :]
    cond = np.linalg.cond(Vs) if K > 0 else np.ones(n)
    coef = np.full((n, K + 1), np.nan)
    ok = cond <= COND_LIMIT
    if ok.any():
        y = np.linalg.solve(Vs[ok], A.T[ok][..., None])[..., 0]
        coef[ok] = y / scale[ok]
    ok &= coef[:, 0] > 0
    coef[~ok] = np.nan
    unrecoverable = np.flatnonzero(~ok).tolist()
    if unrecoverable:
        log.warning("%d cells flagged unrecoverable", len(unrecoverable))
    last = runs[-1]
    return ReconstructionResult(
        last.absorption, last.mean, max(r.residual for r in runs),
        sum(r.iterations for r in runs), [r.residual for r in runs],
        sorted(set().union(*[r.floored for r in runs])),
        [coef[:, k] for k in range(K + 1)], cond, unrecoverable, runs)


def _ratio(num, den):
    if den == 0.0:
        return 0.0 if num == 0.0 else math.inf
    return num / den


def l1_stability_report(sig, sig_t, H, H_t, ref, grid, weight=None, mean_t=None):
    """Relative L1 absorption error against relative L1 data error.

    Unweighted: ||(sig - sig~)/ref||_1 against ||(H - H~)/ref||_1. With a
    weight the absorption side also carries the perturbed average ``mean_t``.
    """
    arrays = [np.asarray(a, dtype=float) for a in (sig, sig_t, H, H_t, ref)]
    if any(a.shape != (grid.n,) for a in arrays):
        raise ValueError("all fields must live on the same grid")
    sig, sig_t, H, H_t, ref = arrays
    if not np.all(ref > 0):
        raise ValueError("reference absorption must be positive")
    if weight is None:
        w = np.ones(grid.n)
        factor = np.ones(grid.n)
    else:
        w = np.asarray(weight, dtype=float)
        if w.shape != (grid.n,) or np.any(w < 0):
            raise ValueError("weight must be a nonnegative field on the grid")
        if mean_t is None:
            raise ValueError("the weighted report needs the perturbed average")
        factor = np.asarray(mean_t, dtype=float)
    lhs = grid.lp_norm(w * (sig - sig_t) / ref * factor, 1)
    rhs = grid.lp_norm(w * (H - H_t) / ref, 1)
    return {"lhs": lhs, "rhs": rhs, "ratio": _ratio(lhs, rhs)}


def lp_interpolated_bound_check(sig, sig_t, H, H_t, p, grid, f_upper, g):
    """Compare ||dSigma||_p with the interpolated bound calibrated at p = 1.

    C = ||dSigma||_1 / ||dH||_1 and
    bound = C^(1/p) |Vol|^((1/p)(1 - 1/p)) g(f_upper)^(1 - 1/p) ||dH||_p^(1/p),
    with |Vol| the active-cell area. ``g`` is the growth envelope (callable).
    """
    if not 1 <= p < math.inf:
        raise ValueError("p must lie in [1, inf)")
    d_sig = np.asarray(sig, dtype=float) - np.asarray(sig_t, dtype=float)
    d_H = np.asarray(H, dtype=float) - np.asarray(H_t, dtype=float)
    C = _ratio(grid.lp_norm(d_sig, 1), grid.lp_norm(d_H, 1))
    lhs = grid.lp_norm(d_sig, p)
    vol = grid.active_area
    gval = g(f_upper) if callable(g) else float(g)
    rhs = (C ** (1.0 / p) * vol ** ((1.0 / p) * (1.0 - 1.0 / p))
           * gval ** (1.0 - 1.0 / p) * grid.lp_norm(d_H, p) ** (1.0 / p))
    if math.isinf(C):
        rhs = math.inf
    return {"p": p, "lhs": lhs, "rhs_bound": rhs, "C": C, "holds": bool(lhs <= rhs * (1 + 1e-12))}
