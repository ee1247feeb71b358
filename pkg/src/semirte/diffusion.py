"""Semilinear diffusion limit: -div(D grad U) + sigma_a(U) U = 0, U = f_0 on the boundary."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as sla

from .errors import DataError, IterationError, ModelError
from .fd import dirichlet_operator
from .forward import eval_sigma_a

log = logging.getLogger(__name__)

BOUND_SLACK = 1e-8


class DiffusionProblem:
    """Coefficients and Dirichlet data of the diffusion limit.

    ``f0`` is a positive constant or a callable ``f0(points) -> values`` on
    boundary points. ``D`` defaults to ``1 / (2 sigma_s)``.
    """

    def __init__(self, grid, model, f0=1.0, D=None, sigma_s=None):
        if D is None:
            if sigma_s is None:
                raise ModelError("give either D or sigma_s")
            D = 1.0 / (2.0 * np.asarray(sigma_s, dtype=float))
        D = np.broadcast_to(np.asarray(D, dtype=float), (grid.n,)).copy()
        if not np.all(D > 0):
            raise ModelError("diffusion coefficient must be positive")
        self.grid = grid
        self.model = model
        self.D = D
        self.f0 = f0
        self.op = dirichlet_operator(grid, D)
        g = self.boundary_values
        if not np.all(g > 0):
            raise ModelError("Dirichlet data must be positive")

    @property
    def boundary_values(self):
        pts = self.op.stub_points
        if callable(self.f0):
            return np.broadcast_to(np.asarray(self.f0(pts), dtype=float), (len(pts),)).copy()
        return np.full(len(pts), float(self.f0))

    @property
    def f0_sup(self):
        g = self.boundary_values
        return float(g.max()) if g.size else float(self.f0)

    @property
    def rhs(self):
        return self.op.boundary_rhs(self.boundary_values)

    def linear_solve(self, absorption):
        """Solve -div(D grad V) + absorption V = 0 with the problem's data."""
        A = (self.op.A + sp.diags(np.asarray(absorption, dtype=float))).tocsc()
        return sla.spsolve(A, self.rhs)


@dataclass
class DiffusionSolution:
    U: np.ndarray
    lower: np.ndarray
    residuals: list
    method: str

    @property
    def residual(self):
        return self.residuals[-1]


def _jacobian(problem, U):
    model = problem.model
    sig = eval_sigma_a(model, U)
    J = problem.op.A + sp.diags(sig)
    if model.degree == 0:
        return J
    if all(T is None for T in model.smoothing):
        dsig = np.zeros_like(U)
        for k, c in enumerate(model.coefficients[1:], start=1):
            dsig += k * c * np.abs(U) ** (k - 1) * np.sign(U)
        return J + sp.diags(dsig * U)
    # smoothing kernels make the derivative dense
    dense = np.zeros((U.size, U.size))
    for k, c in enumerate(model.coefficients[1:], start=1):
        T = model.smoothing[k]
        T = np.eye(U.size) if T is None else T
        tu = T @ U
        dense += (U * k * c * np.abs(tu) ** (k - 1) * np.sign(tu))[:, None] * T
    return sp.csr_matrix(J.toarray() + dense)


def solve_semilinear_diffusion(problem, tol=1e-9, max_newton=50, max_picard=500):
    """Newton with backtracking line search, iterates clamped to [V, sup f_0].

    V solves the linear comparison problem with absorption sigma_a(sup f_0);
    it and sup f_0 bound the exact discrete solution. Falls back to frozen
    coefficient (Picard) iteration if Newton stalls.
    """
    model = problem.model
    rhs = problem.rhs
    A = problem.op.A
    top = problem.f0_sup
    lower = problem.linear_solve(eval_sigma_a(model, np.full(problem.grid.n, top)))

    def F(U):
        return A @ U + eval_sigma_a(model, U) * U - rhs

    U = np.clip(lower.copy(), lower, top)
    r = F(U)
    res = [float(np.abs(r).max())]
    for _ in range(max_newton):
        if res[-1] <= tol:
            return DiffusionSolution(U, lower, res, "newton")
        try:
            step = sla.spsolve(_jacobian(problem, U).tocsc(), -r)
        except RuntimeError:
            break
        alpha = 1.0
        while alpha > 1e-6:
            trial = np.clip(U + alpha * step, lower, top)
            rt = F(trial)
            nt = float(np.abs(rt).max())
            if nt < (1.0 - 1e-4 * alpha) * res[-1]:
                break
            alpha *= 0.5
        else:
            log.info("Newton line search failed at residual %.3e; switching to Picard", res[-1])
            break
        U, r = trial, rt
        res.append(nt)
    if res[-1] <= tol:
        return DiffusionSolution(U, lower, res, "newton")

    for _ in range(max_picard):
        U = np.clip(problem.linear_solve(eval_sigma_a(model, U)), lower, top)
        res.append(float(np.abs(F(U)).max()))
        if res[-1] <= tol:
            return DiffusionSolution(U, lower, res, "picard")
    raise IterationError("diffusion solve failed (Newton and Picard)", res)


def diffusion_data(U, model):
    """H = sigma_a(U) U."""
    U = np.asarray(U, dtype=float)
    if np.any(U < 0):
        raise DataError("diffusion solution must be nonnegative")
    return eval_sigma_a(model, U) * U


def lp_stability_ratio(H, H_t, sig, sig_t, p, grid):
    """||sigma_a(U) - sigma~_a(U~)||_p / ||H - H~||_p with 0/0 = 0 and x/0 = inf.

    ``sig`` and ``sig_t`` are the absorptions evaluated at their own solutions.
    """
    arrays = [np.asarray(a, dtype=float) for a in (H, H_t, sig, sig_t)]
    if any(a.shape != (grid.n,) for a in arrays):
        raise ValueError("all fields must live on the same grid")
    if not 1 <= p < math.inf:
        raise ValueError("p must lie in [1, inf)")
    H, H_t, sig, sig_t = arrays
    num = grid.lp_norm(sig - sig_t, p)
    den = grid.lp_norm(H - H_t, p)
    if den == 0.0:
        return 0.0 if num == 0.0 else math.inf
    return num / den
