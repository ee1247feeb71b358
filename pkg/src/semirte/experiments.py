"""Scans over the Knudsen number: diffusion approximation and weighted stability."""
from __future__ import annotations

import logging

import numpy as np

from .diffusion import DiffusionProblem, solve_semilinear_diffusion
from .errors import ModelError
from .forward import FixedPointConfig, eval_sigma_a, fixed_point_solve
from .inversion import l1_stability_report
from .peierls import ScaledCoefficients, dirichlet_eigenpair
from .transport import TransportConfig

log = logging.getLogger(__name__)

DIFFUSION_COLUMNS = ("epsilon", "interior_error", "error_ratio", "iterations")
STABILITY_COLUMNS = ("epsilon", "weighted_ratio", "unweighted_ratio",
                     "weighted_lhs", "weighted_rhs", "unweighted_lhs", "unweighted_rhs")


def _check_eps(eps_list):
    eps_list = [float(e) for e in eps_list]
    if not eps_list or any(e <= 0 for e in eps_list):
        raise ModelError("every eps must be positive")
    if any(b >= a for a, b in zip(eps_list, eps_list[1:])):
        raise ModelError("eps list must be strictly decreasing")
    return eps_list


def scaled_forward(disc, model, sigma_s, scattering, source, eps, fp=None, method="gmres",
                   m0=None):
    """Forward solve with sigma_a -> eps sigma_a and sigma_s -> sigma_s / eps."""
    transport = TransportConfig.for_epsilon(eps, method=method)
    return fixed_point_solve(disc, model.scaled(eps), np.asarray(sigma_s, dtype=float) / eps,
                             scattering, source, fp or FixedPointConfig(tol_fp=1e-8),
                             transport, m0)


def diffusion_limit_scan(disc, model, sigma_s, scattering, source, eps_list, f0=None,
                         interior=0.2, fp=None, method="gmres"):
    """Interior sup-norm distance between <u_eps> and the semilinear diffusion solution.

    ``f0`` is the Dirichlet value (defaults to the source supremum, exact for
    a constant isotropic source). Cells closer than ``interior`` to the
    boundary are excluded.
    """
    eps_list = _check_eps(eps_list)
    grid = disc.grid
    f0 = source.f_upper if f0 is None else f0
    diff = solve_semilinear_diffusion(DiffusionProblem(grid, model, f0=f0, sigma_s=sigma_s))
    mask = grid.boundary_distance > interior
    if not mask.any():
        raise ModelError("no cells in the interior region")
    rows = []
    m0 = None
    for eps in eps_list:
        sol = scaled_forward(disc, model, sigma_s, scattering, source, eps, fp, method, m0)
        m0 = sol.m
        err = float(np.max(np.abs(sol.m - diff.U)[mask]))
        ratio = rows[-1]["interior_error"] / err if rows else float("nan")
        rows.append({"epsilon": eps, "interior_error": err, "error_ratio": ratio,
                     "iterations": sol.iterations})
        log.info("eps=%g: interior diffusion error %.4e", eps, err)
    return {"rows": rows, "diffusion": diff}


def stability_scan(disc, model, perturbation, sigma_s, scattering, source, eps_list,
                   fp=None, method="gmres"):
    """Weighted and unweighted L1 stability ratios for one fixed perturbation of sigma_{a,0}.

    At each eps the data are H_eps = sigma_a_eps(<u>) <u> for the model and
    for the model with ``perturbation`` added to its zeroth coefficient; the
    weight is the principal Dirichlet eigenfunction of -div(sigma_t_eps^-1 grad).
    """
    eps_list = _check_eps(eps_list)
    grid = disc.grid
    pert = model.perturbed(0, perturbation)
    rows = []
    for eps in eps_list:
        base = scaled_forward(disc, model, sigma_s, scattering, source, eps, fp, method)
        other = scaled_forward(disc, pert, sigma_s, scattering, source, eps, fp, method, base.m)
        sig = eval_sigma_a(model.scaled(eps), base.m)
        sig_t = eval_sigma_a(pert.scaled(eps), other.m)
        H, H_t = sig * base.m, sig_t * other.m
        coeffs = ScaledCoefficients(eps, sig / eps, np.broadcast_to(sigma_s, (grid.n,)))
        weight = dirichlet_eigenpair(coeffs, grid).vector
        wr = l1_stability_report(sig, sig_t, H, H_t, sig, grid, weight=weight, mean_t=other.m)
        ur = l1_stability_report(sig, sig_t, H, H_t, sig, grid)
        rows.append({"epsilon": eps, "weighted_ratio": wr["ratio"], "unweighted_ratio": ur["ratio"],
                     "weighted_lhs": wr["lhs"], "weighted_rhs": wr["rhs"],
                     "unweighted_lhs": ur["lhs"], "unweighted_rhs": ur["rhs"]})
        log.info("eps=%g: weighted %.4f unweighted %.4f", eps, wr["ratio"], ur["ratio"])
    return {"rows": rows}


LP_COLUMNS = ("pair", "h", "p", "ratio")


def gaussian_bumps(n_pairs, seed=0, radius=0.6):
    """Seeded bump parameters (centre, width, amplitude) inside the disk of ``radius``."""
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n_pairs):
        r = radius * np.sqrt(rng.random())
        t = 2.0 * np.pi * rng.random()
        out.append({"center": (float(r * np.cos(t)), float(r * np.sin(t))),
                    "width": float(rng.uniform(0.1, 0.3)),
                    "amplitude": float(rng.uniform(0.2, 0.5))})
    return out


def _bump(grid, b):
    cx, cy = b["center"]
    return grid.evaluate(lambda x, y: b["amplitude"] * np.exp(
        -((x - cx) ** 2 + (y - cy) ** 2) / (2.0 * b["width"] ** 2)))


def diffusion_stability_scan(domain, h_list, coefficient_fns, sigma_s_fn, f0=1.0, pairs=5,
                             seed=0, p_list=(1.0, 2.0)):
    """Lp ratio ||sigma_a(U) - sigma~_a(U~)||_p / ||H - H~||_p for bump perturbations of sigma_{a,0}.

    ``coefficient_fns`` and ``sigma_s_fn`` are callables f(x, y) so each grid
    in ``h_list`` samples the same continuous model.
    """
    from .diffusion import diffusion_data, lp_stability_ratio
    from .forward import MPAModel
    from .geometry import SpatialGrid

    bumps = gaussian_bumps(pairs, seed)
    rows = []
    for h in h_list:
        grid = SpatialGrid.build(domain, h)
        model = MPAModel([grid.evaluate(fn) for fn in coefficient_fns])
        sigma_s = grid.evaluate(sigma_s_fn)
        base = solve_semilinear_diffusion(DiffusionProblem(grid, model, f0, sigma_s=sigma_s))
        H = diffusion_data(base.U, model)
        sig = eval_sigma_a(model, base.U)
        for k, b in enumerate(bumps):
            pert = model.perturbed(0, _bump(grid, b))
            other = solve_semilinear_diffusion(DiffusionProblem(grid, pert, f0, sigma_s=sigma_s))
            H_t = diffusion_data(other.U, pert)
            sig_t = eval_sigma_a(pert, other.U)
            for p in p_list:
                rows.append({"pair": k, "h": float(h), "p": float(p),
                             "ratio": lp_stability_ratio(H, H_t, sig, sig_t, p, grid)})
    return {"rows": rows, "bumps": bumps}


def refinement_spread(rows):
    """max over (pair, p) of |ratio(h_fine) / ratio(h_coarse) - 1| for the two finest h."""
    hs = sorted({r["h"] for r in rows}, reverse=True)
    if len(hs) < 2:
        return float("nan")
    coarse, fine = hs[-2], hs[-1]
    table = {(r["pair"], r["p"], r["h"]): r["ratio"] for r in rows}
    spread = 0.0
    for (k, p, h), val in table.items():
        if h == coarse:
            spread = max(spread, abs(table[(k, p, fine)] / val - 1.0))
    return spread
