import numpy as np
import pytest
from scipy.integrate import quad as quad1d

from semirte.errors import DomainError, NumericalIntegrityError
from semirte.geometry import BoundarySource, Discretization, ScatteringModel, angular_average
from semirte.transport import (AttenuationCache, TransportConfig, attenuation, check_bounds,
                               solve_linear_rte, sweep)


@pytest.fixture(scope="module")
def d16():
    return Discretization.unit_disk(h=1 / 16, nv=16)


@pytest.fixture(scope="module")
def d32():
    return Discretization.unit_disk(h=1 / 32, nv=16)


def test_attenuation_trivial_cases(d16):
    g = d16.grid
    x, v = np.array([0.1, 0.2]), np.array([1.0, 0.0])
    assert attenuation(x, v, 0.0, g.constant(3.0), g) == pytest.approx(1.0, abs=1e-15)
    assert attenuation(x, v, 0.5, g.constant(2.0), g) == pytest.approx(np.exp(-1.0), rel=1e-12)


def test_attenuation_quadratic_cross_section(d32):
    g = d32.grid
    sig = g.evaluate(lambda x, y: 1.0 + x * x)
    # ray from (0.9, 0) toward -x: v = (1, 0) so x - t v moves left
    E = attenuation((0.9, 0.0), (1.0, 0.0), 0.9, sig, g)
    h_ray = 0.5 * g.h
    tau, _ = quad1d(lambda t: 1.0 + (0.9 - t) ** 2, 0.0, 0.9, epsabs=1e-14,
                    limit=int(0.9 / (h_ray / 100)) + 1)
    # bilinear interpolation of a quadratic carries an O(h^2) error
    assert E == pytest.approx(np.exp(-tau), rel=2e-3)


def test_attenuation_monotone_in_s(d16, rng):
    g = d16.grid
    sig = 0.5 + rng.random(g.n)
    s = np.linspace(0.0, 0.8, 17)
    E = attenuation(np.tile([0.1, -0.1], (17, 1)), np.tile([0.0, 1.0], (17, 1)), s, sig, g)
    assert np.all(np.diff(E) <= 1e-15) and np.all(E > 0) and np.all(E <= 1)


def test_attenuation_rejects_long_path(d16):
    g = d16.grid
    with pytest.raises(DomainError):
        attenuation((0.5, 0.0), (1.0, 0.0), 1.6, g.constant(1.0), g)


def test_sweep_examples(d16):
    one = BoundarySource.constant(1.0)
    u = sweep(d16, 0.0, d16.grid.constant(0.0), one)
    assert np.allclose(u, 1.0, atol=1e-14)
    u = sweep(d16, 0.0, d16.grid.constant(0.7), one)
    assert np.allclose(u, np.exp(-0.7 * d16.tau_minus), atol=1e-12)


def test_sweep_interior_source(d32):
    tiny = BoundarySource.constant(1e-300)
    u = sweep(d32, 1.0, d32.grid.constant(1.0), tiny)
    exact = 1.0 - np.exp(-d32.tau_minus)
    inner = d32.grid.boundary_distance > 2 * d32.grid.h
    assert np.max(np.abs(u - exact)[inner]) < 1e-3


def test_sweep_linear(d16, rng):
    g = d16.grid
    sig = 0.5 + rng.random(g.n)
    q1, q2 = rng.random(g.n), rng.random(g.n)
    f1, f2 = BoundarySource.constant(0.3), BoundarySource.constant(0.9)
    cache = AttenuationCache(d16, sig)
    lhs = cache.uncollided(BoundarySource.constant(1.2)) + cache.sweep_volume(q1 + q2)
    rhs = sweep(d16, q1, sig, f1) + sweep(d16, q2, sig, f2)
    assert np.allclose(lhs, rhs, rtol=1e-12, atol=1e-14)
    assert np.all(cache.sweep_volume(q1) >= 0)


def test_cached_attenuation_matches_fresh(d16, rng):
    g = d16.grid
    sig = 0.5 + rng.random(g.n)
    cache = AttenuationCache(d16, sig)
    E = cache.exit_attenuation
    fresh = attenuation(np.repeat(g.centers, d16.nv, axis=0),
                        np.tile(d16.quad.directions, (g.n, 1)),
                        d16.tau_minus.ravel(), sig, g).reshape(g.n, d16.nv)
    assert np.allclose(E, fresh, rtol=1e-12)


def test_pure_absorber_one_iteration(d16):
    sol = solve_linear_rte(d16, d16.grid.constant(1.0), d16.grid.constant(0.0),
                           ScatteringModel.isotropic(d16.quad), BoundarySource.constant(1.0))
    assert sol.iterations == 1
    assert np.allclose(sol.u, np.exp(-d16.tau_minus), atol=1e-12)


@pytest.mark.parametrize("method", ["source", "gmres", "direct"])
def test_methods_agree(d16, method, rng):
    g = d16.grid
    sa = 0.5 + rng.random(g.n)
    ss = 0.5 + rng.random(g.n)
    K = ScatteringModel.isotropic(d16.quad)
    src = BoundarySource.constant(1.0)
    ref = solve_linear_rte(d16, sa, ss, K, src, TransportConfig(method="direct"))
    sol = solve_linear_rte(d16, sa, ss, K, src, TransportConfig(method=method, tol_si=1e-12))
    assert np.allclose(sol.mean, ref.mean, atol=1e-9)
    assert np.allclose(sol.u, ref.u, atol=1e-9)


def test_source_iteration_monotone_and_contracting(d16):
    g = d16.grid
    sa, ss = g.constant(1.0), g.constant(1.0)
    src = BoundarySource.constant(1.0)
    sol = solve_linear_rte(d16, sa, ss, ScatteringModel.isotropic(d16.quad), src,
                           TransportConfig(method="source", tol_si=1e-12))
    r = np.array(sol.residuals)
    r = r[r > 1e-13]
    assert np.all(r[1:] / r[:-1] <= 0.5 + 0.05)
    # monotone iterates from the uncollided start
    cache = AttenuationCache(d16, sa + ss)
    u = cache.uncollided(src)
    for _ in range(5):
        nxt = cache.uncollided(src) + cache.sweep_volume(ss * angular_average(u, d16.quad))
        assert np.all(nxt >= u - 1e-14)
        u = nxt


def test_comparison_principle(d16, rng):
    g = d16.grid
    ss = g.constant(1.0)
    K = ScatteringModel.isotropic(d16.quad)
    src = BoundarySource.constant(1.0)
    cfg = TransportConfig(method="direct")
    for _ in range(3):
        sa = 0.2 + rng.random(g.n)
        big = sa + rng.random(g.n)
        lo = solve_linear_rte(d16, big, ss, K, src, cfg).u
        hi = solve_linear_rte(d16, sa, ss, K, src, cfg).u
        assert np.all(lo <= hi + 1e-12)


def test_linearity_in_boundary_data(d16, rng):
    g = d16.grid
    sa, ss = 0.5 + rng.random(g.n), g.constant(0.8)
    K = ScatteringModel.henyey_greenstein(d16.quad, 0.4)
    cfg = TransportConfig(tol_si=1e-13)
    f1 = BoundarySource.isotropic(lambda x, y: 1.0 + 0.5 * x, 0.5, 1.5)
    f2 = BoundarySource.isotropic(lambda x, y: 2.0 + 0 * x, 2.0, 2.0)
    f12 = BoundarySource.isotropic(lambda x, y: 3.0 + 0.5 * x, 2.5, 3.5)
    u = solve_linear_rte(d16, sa, ss, K, f12, cfg).u
    u1 = solve_linear_rte(d16, sa, ss, K, f1, cfg).u
    u2 = solve_linear_rte(d16, sa, ss, K, f2, cfg).u
    assert np.max(np.abs(u - u1 - u2)) < 1e-10


def test_bounds_enforced():
    src = BoundarySource.constant(1.0)
    with pytest.raises(NumericalIntegrityError):
        check_bounds(np.array([0.5, 1.1]), src, 0.1)
    check_bounds(np.array([0.5, 1.0 + 5e-7]), src, 0.1)


def test_iteration_cap():
    from semirte.errors import IterationError
    d = Discretization.unit_disk(h=1 / 8, nv=8)
    g = d.grid
    with pytest.raises(IterationError):
        solve_linear_rte(d, g.constant(0.01), g.constant(10.0), ScatteringModel.isotropic(d.quad),
                         BoundarySource.constant(1.0),
                         TransportConfig(method="source", max_iter=3, tol_si=1e-12))
