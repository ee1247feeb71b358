# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
# cython: language_level=3
"""Compiled ray-marching kernels.

Every routine here has a numpy twin in ``_kernels_py`` with the same
signature and the same floating-point recipe; ``semirte.kernels`` picks one
at import time.

Fields are passed as "full" arrays of length ``nx * ny`` on the bounding box
of the cell-centred grid, with inactive cells already filled by their nearest
active neighbour, so bilinear interpolation is well defined everywhere in the
box.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport exp, ceil, floor, fabs, INFINITY

cnp.import_array()


cdef struct GridInfo:
    double x0
    double y0
    double h
    int nx
    int ny
    double inv_h


cdef inline void _locate(const GridInfo* g, double px, double py,
                         int* base, double* ax, double* ay) noexcept nogil:
    cdef double fx = (px - g.x0) * g.inv_h - 0.5
    cdef double fy = (py - g.y0) * g.inv_h - 0.5
    # truncation equals floor for fx > -1; anything lower is clamped below
    cdef int ix = <int>(fx + 1.0) - 1
    cdef int iy = <int>(fy + 1.0) - 1
    if ix < 0:
        ix = 0
    elif ix > g.nx - 2:
        ix = g.nx - 2
    if iy < 0:
        iy = 0
    elif iy > g.ny - 2:
        iy = g.ny - 2
    cdef double a = fx - ix
    cdef double b = fy - iy
    if a < 0.0:
        a = 0.0
    elif a > 1.0:
        a = 1.0
    if b < 0.0:
        b = 0.0
    elif b > 1.0:
        b = 1.0
    base[0] = iy * g.nx + ix
    ax[0] = a
    ay[0] = b


cdef inline double _interp(const double* f, const GridInfo* g,
                           double px, double py) noexcept nogil:
    cdef int base
    cdef double ax, ay
    _locate(g, px, py, &base, &ax, &ay)
    return ((1.0 - ay) * ((1.0 - ax) * f[base] + ax * f[base + 1])
            + ay * ((1.0 - ax) * f[base + g.nx] + ax * f[base + g.nx + 1]))


cdef inline double _psi12(double a, double* p1, double* p2) noexcept nogil:
    # weights of a linear g over one step of optical depth a:
    # p1 = int_0^1 a e^{-a t} (1 - t) dt, p2 = int_0^1 a e^{-a t} t dt
    # returns e^{-a}
    cdef double e = exp(-a)
    if a < 1e-4:
        p1[0] = a * (0.5 - a / 6.0 + a * a / 24.0)
        p2[0] = a * (0.5 - a / 3.0 + a * a / 8.0)
    else:
        p2[0] = (1.0 - (1.0 + a) * e) / a
        p1[0] = 1.0 - e - p2[0]
    return e


cdef inline double _segment_tau(const double* sig, const GridInfo* g,
                                double px, double py, double dx, double dy,
                                double length, double h_ray, double cap) noexcept nogil:
    if length <= 0.0:
        return 0.0
    # the slack keeps lengths that are whole multiples of h_ray from gaining a step on roundoff
    cdef int n = <int>ceil(length / h_ray - 1e-9)
    if n < 1:
        n = 1
    cdef double step = length / n
    cdef double tau = 0.0
    cdef double s_prev = _interp(sig, g, px, py)
    cdef double s_next
    cdef int k
    for k in range(1, n + 1):
        s_next = _interp(sig, g, px + k * step * dx, py + k * step * dy)
        tau += 0.5 * step * (s_prev + s_next)
        if tau > cap:
            return tau
        s_prev = s_next
    return tau


def segment_optical_depth(double[::1] px, double[::1] py, double[::1] dx,
                          double[::1] dy, double[::1] length, double[::1] sig,
                          double x0, double y0, double h, int nx, int ny,
                          double h_ray, double cap=INFINITY):
    """Trapezoid line integral of ``sig`` along a batch of segments."""
    cdef GridInfo g = GridInfo(x0, y0, h, nx, ny, 1.0 / h)
    cdef Py_ssize_t m = px.shape[0]
    out = np.empty(m, dtype=np.float64)
    cdef double[::1] o = out
    cdef Py_ssize_t i
    with nogil:
        for i in range(m):
            o[i] = _segment_tau(&sig[0], &g, px[i], py[i], dx[i], dy[i],
                                length[i], h_ray, cap)
    return out


def pair_optical_depth(double[::1] cx, double[::1] cy, double[::1] sig,
                       double x0, double y0, double h, int nx, int ny,
                       double h_ray, double cap=INFINITY):
    """Symmetric matrix of optical depths between all pairs of points.

    The segment is always marched from the lower to the higher index, so
    entry (i, j) and (j, i) are the same number.
    """
    cdef GridInfo g = GridInfo(x0, y0, h, nx, ny, 1.0 / h)
    cdef Py_ssize_t n = cx.shape[0]
    out = np.zeros((n, n), dtype=np.float64)
    cdef double[:, ::1] o = out
    cdef Py_ssize_t i, j
    cdef double ddx, ddy, r, t
    with nogil:
        for i in range(n):
            for j in range(i + 1, n):
                ddx = cx[j] - cx[i]
                ddy = cy[j] - cy[i]
                r = (ddx * ddx + ddy * ddy) ** 0.5
                t = _segment_tau(&sig[0], &g, cx[i], cy[i], ddx / r, ddy / r,
                                 r, h_ray, cap)
                o[i, j] = t
                o[j, i] = t
    return out


def sweep(double[::1] cx, double[::1] cy, double[:, ::1] dirs,
          double[:, ::1] tau_len, double[:, ::1] q, double[::1] sig,
          double x0, double y0, double h, int nx, int ny, double h_ray,
          double cap=INFINITY):
    """Integrate the volume source backwards along every (cell, direction) ray.

    The source enters as ``sig * g``: ``g`` (the source divided by the total
    cross section) is interpolated bilinearly and integrated against
    ``sig * exp(-tau)`` exactly for piecewise-linear g and optical depth, so a
    constant g contributes exactly ``g * (1 - exp(-tau_exit))``.
    ``g`` has shape (ng, nx*ny) with ng == 1 (angle independent) or
    ng == number of directions. Returns ``(u_volume, exit_attenuation)``; the
    caller adds ``exit_attenuation * f_minus``.
    """
    cdef GridInfo g = GridInfo(x0, y0, h, nx, ny, 1.0 / h)
    cdef Py_ssize_t n = cx.shape[0]
    cdef Py_ssize_t nv = dirs.shape[0]
    cdef bint per_dir = q.shape[0] > 1
    u_out = np.zeros((n, nv), dtype=np.float64)
    e_out = np.zeros((n, nv), dtype=np.float64)
    cdef double[:, ::1] u = u_out
    cdef double[:, ::1] e = e_out
    cdef const double* s = &sig[0]
    cdef Py_ssize_t i, j
    cdef int k, nstep, base
    cdef double length, step, dx, dy, px, py, tau, s_prev, s_next, q_prev, q_next
    cdef double a, p1, p2, acc, att, att_next, ax, ay, w00, w10, w01, w11
    cdef const double* qrow
    with nogil:
        for i in range(n):
            for j in range(nv):
                qrow = &q[j if per_dir else 0, 0]
                length = tau_len[i, j]
                dx = -dirs[j, 0]
                dy = -dirs[j, 1]
                nstep = <int>ceil(length / h_ray - 1e-9)
                if nstep < 1:
                    nstep = 1
                step = length / nstep
                tau = 0.0
                att = 1.0
                acc = 0.0
                _locate(&g, cx[i], cy[i], &base, &ax, &ay)
                w00 = (1.0 - ax) * (1.0 - ay)
                w10 = ax * (1.0 - ay)
                w01 = (1.0 - ax) * ay
                w11 = ax * ay
                s_prev = (w00 * s[base] + w10 * s[base + 1]
                          + w01 * s[base + g.nx] + w11 * s[base + g.nx + 1])
                q_prev = (w00 * qrow[base] + w10 * qrow[base + 1]
                          + w01 * qrow[base + g.nx] + w11 * qrow[base + g.nx + 1])
                for k in range(1, nstep + 1):
                    px = cx[i] + k * step * dx
                    py = cy[i] + k * step * dy
                    _locate(&g, px, py, &base, &ax, &ay)
                    w00 = (1.0 - ax) * (1.0 - ay)
                    w10 = ax * (1.0 - ay)
                    w01 = (1.0 - ax) * ay
                    w11 = ax * ay
                    s_next = (w00 * s[base] + w10 * s[base + 1]
                              + w01 * s[base + g.nx] + w11 * s[base + g.nx + 1])
                    q_next = (w00 * qrow[base] + w10 * qrow[base + 1]
                              + w01 * qrow[base + g.nx] + w11 * qrow[base + g.nx + 1])
                    a = 0.5 * step * (s_prev + s_next)
                    att_next = att * _psi12(a, &p1, &p2)
                    acc += att * (q_prev * p1 + q_next * p2)
                    att = att_next
                    tau += a
                    if tau > cap:
                        break
                    s_prev = s_next
                    q_prev = q_next
                u[i, j] = acc
                e[i, j] = att
    return u_out, e_out


def scalar_flux_matrix(double[::1] cx, double[::1] cy, double[:, ::1] dirs,
                       double[::1] weights, double[:, ::1] tau_len,
                       double[::1] sig, cnp.int64_t[::1] fill_index,
                       double x0, double y0, double h, int nx, int ny,
                       double h_ray, double cap=INFINITY):
    """Dense matrix M with <sweep(g)>_volume = M @ g for angle-independent g.

    M is the discrete-ordinates form of the Peierls operator.

    Also returns the exit attenuation per ray, exactly as ``sweep`` does.
    """
    cdef GridInfo g = GridInfo(x0, y0, h, nx, ny, 1.0 / h)
    cdef Py_ssize_t n = cx.shape[0]
    cdef Py_ssize_t nv = dirs.shape[0]
    m_out = np.zeros((n, n), dtype=np.float64)
    e_out = np.zeros((n, nv), dtype=np.float64)
    cdef double[:, ::1] m = m_out
    cdef double[:, ::1] e = e_out
    cdef Py_ssize_t i, j
    cdef int k, nstep, base
    cdef double length, step, dx, dy, px, py, tau, s_prev, s_next
    cdef double a, p1, p2, att, ea, carry, coef, ax, ay, w
    with nogil:
        for i in range(n):
            for j in range(nv):
                w = weights[j]
                length = tau_len[i, j]
                dx = -dirs[j, 0]
                dy = -dirs[j, 1]
                nstep = <int>ceil(length / h_ray - 1e-9)
                if nstep < 1:
                    nstep = 1
                step = length / nstep
                tau = 0.0
                att = 1.0
                carry = 0.0
                s_prev = _interp(&sig[0], &g, cx[i], cy[i])
                for k in range(0, nstep + 1):
                    px = cx[i] + k * step * dx
                    py = cy[i] + k * step * dy
                    coef = carry
                    if k < nstep:
                        s_next = _interp(&sig[0], &g, cx[i] + (k + 1) * step * dx,
                                         cy[i] + (k + 1) * step * dy)
                        a = 0.5 * step * (s_prev + s_next)
                        ea = _psi12(a, &p1, &p2)
                        coef = coef + att * p1
                        carry = att * p2
                        att = att * ea
                        tau += a
                        s_prev = s_next
                    coef = coef * w
                    _locate(&g, px, py, &base, &ax, &ay)
                    m[i, fill_index[base]] += coef * (1.0 - ax) * (1.0 - ay)
                    m[i, fill_index[base + 1]] += coef * ax * (1.0 - ay)
                    m[i, fill_index[base + g.nx]] += coef * (1.0 - ax) * ay
                    m[i, fill_index[base + g.nx + 1]] += coef * ax * ay
                    if tau > cap:
                        if k < nstep:
                            # flush the dangling half-step contribution
                            coef = carry * w
                            px = cx[i] + (k + 1) * step * dx
                            py = cy[i] + (k + 1) * step * dy
                            _locate(&g, px, py, &base, &ax, &ay)
                            m[i, fill_index[base]] += coef * (1.0 - ax) * (1.0 - ay)
                            m[i, fill_index[base + 1]] += coef * ax * (1.0 - ay)
                            m[i, fill_index[base + g.nx]] += coef * (1.0 - ax) * ay
                            m[i, fill_index[base + g.nx + 1]] += coef * ax * ay
                        break
                e[i, j] = att
    return m_out, e_out
