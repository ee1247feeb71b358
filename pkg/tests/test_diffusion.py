import math

import numpy as np
import pytest
from scipy.integrate import solve_bvp
from scipy.special import i0

from semirte.diffusion import (DiffusionProblem, diffusion_data, lp_stability_ratio,
                               solve_semilinear_diffusion)
from semirte.errors import ModelError
from semirte.forward import MPAModel
from semirte.geometry import Domain, SpatialGrid

DISK = Domain.unit_disk()


@pytest.fixture(scope="module")
def g32():
    return SpatialGrid.build(DISK, 1 / 32)


def _nearest(grid, x, y):
    return int(np.argmin(np.hypot(grid.centers[:, 0] - x, grid.centers[:, 1] - y)))


def _radial_oracle(sigma, D, r):
    # U'' + U'/r = (sigma/D) U, U'(0) = 0, U(1) = 1, solved as a BVP from r = 1e-6
    k2 = sigma / D
    sol = solve_bvp(lambda t, y: np.vstack([y[1], k2 * y[0] - y[1] / t]),
                    lambda ya, yb: np.array([ya[1], yb[0] - 1.0]),
                    np.linspace(1e-6, 1.0, 200), np.ones((2, 200)), tol=1e-10, max_nodes=100000)
    return sol.sol(r)[0]


def test_near_harmonic_constant_data(g32):
    model = MPAModel.constant(g32.n, [1e-8])
    sol = solve_semilinear_diffusion(DiffusionProblem(g32, model, 1.0, D=1.0))
    assert np.max(np.abs(sol.U - 1.0)) < 1e-6


def test_bessel_profile(g32):
    sigma, D = 2.0, 0.5
    sol = solve_semilinear_diffusion(DiffusionProblem(g32, MPAModel.constant(g32.n, [sigma]),
                                                      1.0, D=D))
    k = math.sqrt(sigma / D)
    for r in (0.0, 0.5):
        oracle = float(_radial_oracle(sigma, D, max(r, 1e-6)))
        assert oracle == pytest.approx(i0(k * r) / i0(k), abs=1e-6)
        # the nearest cell centre is within h/sqrt(2) of (r, 0); use the exact radius there
        i = _nearest(g32, r + g32.h / 2, g32.h / 2)
        rc = float(np.hypot(*g32.centers[i]))
        assert sol.U[i] == pytest.approx(i0(k * rc) / i0(k), abs=1e-3)


def test_nonlinear_between_comparison_bounds(g32):
    model = MPAModel.constant(g32.n, [0.5, 1.0])
    prob = DiffusionProblem(g32, model, 1.0, sigma_s=1.0)
    sol = solve_semilinear_diffusion(prob)
    assert sol.residual <= 1e-9
    assert np.all(sol.U >= sol.lower - 1e-8) and np.all(sol.U <= 1.0 + 1e-8)
    assert np.all(sol.U > 0)
    # the comparison solve obeys the discrete maximum principle
    assert sol.lower.max() <= 1.0 + 1e-12 and sol.lower.min() > 0


def test_newton_residual_monotone(g32):
    model = MPAModel.constant(g32.n, [0.2, 2.0, 1.0])
    sol = solve_semilinear_diffusion(DiffusionProblem(g32, model, 1.5, D=0.3))
    assert sol.method == "newton"
    assert np.all(np.diff(sol.residuals) < 0)


def test_variable_boundary_data(g32):
    f0 = lambda p: 1.0 + 0.5 * p[:, 0]
    model = MPAModel.constant(g32.n, [1e-8])
    sol = solve_semilinear_diffusion(DiffusionProblem(g32, model, f0, D=1.0))
    # harmonic extension of 1 + x/2 is itself
    inner = g32.boundary_distance > 0.1
    assert np.max(np.abs(sol.U - (1.0 + 0.5 * g32.centers[:, 0]))[inner]) < 2e-3


def test_problem_invariants(g32):
    model = MPAModel.constant(g32.n, [1.0])
    with pytest.raises(ModelError):
        DiffusionProblem(g32, model, 1.0, D=-1.0)
    with pytest.raises(ModelError):
        DiffusionProblem(g32, model, -1.0, D=1.0)
    with pytest.raises(ModelError):
        DiffusionProblem(g32, model, 1.0)


def test_diffusion_data_examples(rng):
    n = 6
    assert np.allclose(diffusion_data(np.ones(n), MPAModel.constant(n, [3.0])), 3.0)
    assert np.all(diffusion_data(np.zeros(n), MPAModel.constant(n, [3.0])) == 0)
    c0, c1 = 0.5 + rng.random(n), rng.random(n)
    U = rng.random(n)
    assert np.allclose(diffusion_data(U, MPAModel([c0, c1])), (c0 + c1 * U) * U, rtol=1e-14)


def test_lp_ratio_conventions(g32, rng):
    a = rng.random(g32.n)
    assert lp_stability_ratio(a, a, a, a, 1.0, g32) == 0.0
    assert lp_stability_ratio(a, a, a, a + 1, 2.0, g32) == math.inf
    with pytest.raises(ValueError):
        lp_stability_ratio(a, a, a, a[:-1], 1.0, g32)
    with pytest.raises(ValueError):
        lp_stability_ratio(a, a, a, a, 0.5, g32)


def test_lp_ratio_shift_stable_under_refinement():
    ratios = []
    for h in (1 / 32, 1 / 64):
        g = SpatialGrid.build(DISK, h)
        base = MPAModel.constant(g.n, [1.0, 0.5])
        pert = base.perturbed(0, g.constant(0.2))
        out = []
        for m in (base, pert):
            U = solve_semilinear_diffusion(DiffusionProblem(g, m, 1.0, sigma_s=1.0)).U
            out.append((diffusion_data(U, m), m(U)))
        r = [lp_stability_ratio(out[0][0], out[1][0], out[0][1], out[1][1], p, g)
             for p in (1.0, 2.0)]
        assert all(np.isfinite(r)) and all(x > 0 for x in r)
        ratios.append(r)
    assert np.allclose(ratios[1], ratios[0], rtol=0.2)
