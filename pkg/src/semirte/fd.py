"""Five-point finite differences for -div(a grad u) on a masked grid.

Where a grid edge leaves the domain the neighbour is replaced by the exact
crossing point with the boundary, at distance theta*h (Shortley-Weller), so
Dirichlet data are imposed on the true boundary.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

_AXES = ((1, 0), (-1, 0), (0, 1), (0, -1))
_MIN_FRACTION = 1e-6


@dataclass(frozen=True, eq=False)
class DirichletOperator:
    """Sparse matrix A and the boundary stubs that carry Dirichlet data.

    For boundary values ``g`` sampled at ``stub_points`` the discrete
    problem is ``A u = boundary_rhs(g)``.
    """

    A: sp.csr_matrix
    stub_rows: np.ndarray
    stub_weights: np.ndarray
    stub_points: np.ndarray

    def boundary_rhs(self, g):
        g = np.broadcast_to(np.asarray(g, dtype=float), self.stub_rows.shape)
        return np.bincount(self.stub_rows, self.stub_weights * g, minlength=self.A.shape[0])


def dirichlet_operator(grid, coeff):
    """Assemble -div(coeff grad .) with Dirichlet stubs on cut edges.

    ``coeff`` is an active-cell field; interior face values are arithmetic
    means of the two cells, cut faces use the cell value.
    """
    coeff = np.asarray(coeff, dtype=float)
    n = grid.n
    h = grid.h
    c = grid.centers
    lookup = grid.active_lookup
    iy, ix = np.divmod(grid.flat_active, grid.nx)
    rows, cols, vals = [], [], []
    s_rows, s_w, s_pts = [], [], []
    diag = np.zeros(n)
    idx = np.arange(n)
    for axis in (0, 1):
        pair = [a for a in _AXES if a[axis] != 0]
        dists, nbrs = [], []
        for dx, dy in pair:
            jx, jy = ix + dx, iy + dy
            inside = (jx >= 0) & (jx < grid.nx) & (jy >= 0) & (jy < grid.ny)
            nb = np.full(n, -1, dtype=np.int64)
            nb[inside] = lookup[jy[inside], jx[inside]]
            d = np.full(n, h)
            cut = nb < 0
            if cut.any():
                e = np.array([dx, dy], dtype=float)
                reach = grid.domain.exit_distance(c[cut], np.broadcast_to(e, (cut.sum(), 2)))
                d[cut] = np.clip(reach, _MIN_FRACTION * h, h)
            dists.append(d)
            nbrs.append(nb)
        span = dists[0] + dists[1]
        for (dx, dy), d, nb in zip(pair, dists, nbrs):
            cut = nb < 0
            a_face = np.where(cut, coeff, 0.5 * (coeff + coeff[np.maximum(nb, 0)]))
            w = 2.0 * a_face / (d * span)
            diag += w
            ok = ~cut
            rows.append(idx[ok])
            cols.append(nb[ok])
            vals.append(-w[ok])
            s_rows.append(idx[cut])
            s_w.append(w[cut])
            s_pts.append(c[cut] + d[cut, None] * np.array([dx, dy], dtype=float))
    rows.append(idx)
    cols.append(idx)
    vals.append(diag)
    A = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                      shape=(n, n))
    return DirichletOperator(A, np.concatenate(s_rows), np.concatenate(s_w),
                             np.concatenate(s_pts).reshape(-1, 2))
