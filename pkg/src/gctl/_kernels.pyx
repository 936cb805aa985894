# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled stepping kernels; semantics mirror gctl._kernels_py exactly.

Reduction order and tie-breaking match the numpy backend: the first index
attaining a maximum over vertices or a minimum over controls wins.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport fabs, floor, sqrt

cnp.import_array()

BACKEND = "compiled"


cdef inline double _clip(double v, double lo, double hi) nogil:
    if v < lo:
        return lo
    if v > hi:
        return hi
    return v


cdef inline double _interp1(const double* vals, Py_ssize_t n, double lo, double h,
                            double q, int cubic, double* overshoot) nogil:
    """Clamped separable interpolation along one axis; tracks overshoot."""
    cdef double u = (q - lo) / h
    cdef double over = 0.0
    cdef Py_ssize_t j, b
    cdef double s, tt, w0, w1, w2, w3
    if u < 0.0:
        over = -u * h
        u = 0.0
    elif u > n - 1.0:
        over = (u - (n - 1.0)) * h
        u = n - 1.0
    if over > overshoot[0]:
        overshoot[0] = over
    j = <Py_ssize_t>floor(u)
    if j > n - 2:
        j = n - 2
    if cubic == 0 or n < 4:
        s = u - j
        return (1.0 - s) * vals[j] + s * vals[j + 1]
    b = j - 1
    if b < 0:
        b = 0
    elif b > n - 4:
        b = n - 4
    tt = u - b
    w0 = -(tt - 1.0) * (tt - 2.0) * (tt - 3.0) / 6.0
    w1 = tt * (tt - 2.0) * (tt - 3.0) / 2.0
    w2 = -tt * (tt - 1.0) * (tt - 3.0) / 2.0
    w3 = tt * (tt - 1.0) * (tt - 2.0) / 6.0
    return w0 * vals[b] + w1 * vals[b + 1] + w2 * vals[b + 2] + w3 * vals[b + 3]


cdef inline void _axis_weights(Py_ssize_t n, double lo, double h, double q,
                               int cubic, Py_ssize_t* base, double* w,
                               int* count, double* overshoot) nogil:
    cdef double u = (q - lo) / h
    cdef double over = 0.0
    cdef Py_ssize_t j, b
    cdef double s, tt
    if u < 0.0:
        over = -u * h
        u = 0.0
    elif u > n - 1.0:
        over = (u - (n - 1.0)) * h
        u = n - 1.0
    if over > overshoot[0]:
        overshoot[0] = over
    j = <Py_ssize_t>floor(u)
    if j > n - 2:
        j = n - 2
    if cubic == 0 or n < 4:
        s = u - j
        base[0] = j
        w[0] = 1.0 - s
        w[1] = s
        count[0] = 2
        return
    b = j - 1
    if b < 0:
        b = 0
    elif b > n - 4:
        b = n - 4
    tt = u - b
    base[0] = b
    w[0] = -(tt - 1.0) * (tt - 2.0) * (tt - 3.0) / 6.0
    w[1] = tt * (tt - 2.0) * (tt - 3.0) / 2.0
    w[2] = -tt * (tt - 1.0) * (tt - 3.0) / 2.0
    w[3] = tt * (tt - 1.0) * (tt - 2.0) / 6.0
    count[0] = 4


def gheat_step_1d(double[:, ::1] u, double h, double dt,
                  double gam_min, double gam_max, double[:, ::1] out):
    """One explicit step of u_t = G(u_xx) on batched rows."""
    cdef Py_ssize_t R = u.shape[0], nx = u.shape[1]
    cdef Py_ssize_t r, i
    cdef double h2 = h * h
    cdef double d2, g
    cdef double u0, u1, u2
    with nogil:
        for r in range(R):
            for i in range(nx):
                if i == 0:
                    d2 = (u[r, 2] - 2.0 * u[r, 1] + u[r, 0]) / h2
                elif i == nx - 1:
                    d2 = (u[r, nx - 1] - 2.0 * u[r, nx - 2] + u[r, nx - 3]) / h2
                else:
                    d2 = (u[r, i + 1] - 2.0 * u[r, i] + u[r, i - 1]) / h2
                g = gam_max * d2 if d2 >= 0.0 else gam_min * d2
                out[r, i] = u[r, i] + dt * 0.5 * g
    return None


cdef void _d2_axis0(double[:, ::1] u, double h, double[:, ::1] out) nogil:
    cdef Py_ssize_t n1 = u.shape[0], n2 = u.shape[1]
    cdef Py_ssize_t i, j
    cdef double h2 = h * h
    for j in range(n2):
        out[0, j] = (u[2, j] - 2.0 * u[1, j] + u[0, j]) / h2
        out[n1 - 1, j] = (u[n1 - 1, j] - 2.0 * u[n1 - 2, j] + u[n1 - 3, j]) / h2
    for i in range(1, n1 - 1):
        for j in range(n2):
            out[i, j] = (u[i + 1, j] - 2.0 * u[i, j] + u[i - 1, j]) / h2


cdef void _d2_axis1(double[:, ::1] u, double h, double[:, ::1] out) nogil:
    cdef Py_ssize_t n1 = u.shape[0], n2 = u.shape[1]
    cdef Py_ssize_t i, j
    cdef double h2 = h * h
    for i in range(n1):
        out[i, 0] = (u[i, 2] - 2.0 * u[i, 1] + u[i, 0]) / h2
        out[i, n2 - 1] = (u[i, n2 - 1] - 2.0 * u[i, n2 - 2] + u[i, n2 - 3]) / h2
        for j in range(1, n2 - 1):
            out[i, j] = (u[i, j + 1] - 2.0 * u[i, j] + u[i, j - 1]) / h2


cdef void _cross_pair(double[:, ::1] u, double h1, double h2,
                      double[:, ::1] P, double[:, ::1] N) nogil:
    """Sign-adapted cross stencils; boundary rows copy the nearest interior."""
    cdef Py_ssize_t n1 = u.shape[0], n2 = u.shape[1]
    cdef Py_ssize_t i, j
    cdef double den = 2.0 * h1 * h2
    cdef double axis_sum
    for i in range(1, n1 - 1):
        for j in range(1, n2 - 1):
            axis_sum = u[i + 1, j] + u[i - 1, j] + u[i, j + 1] + u[i, j - 1]
            P[i, j] = (2.0 * u[i, j] + u[i + 1, j + 1] + u[i - 1, j - 1] - axis_sum) / den
            N[i, j] = -(2.0 * u[i, j] + u[i + 1, j - 1] + u[i - 1, j + 1] - axis_sum) / den
    for j in range(1, n2 - 1):
        P[0, j] = P[1, j]
        P[n1 - 1, j] = P[n1 - 2, j]
        N[0, j] = N[1, j]
        N[n1 - 1, j] = N[n1 - 2, j]
    for i in range(n1):
        P[i, 0] = P[i, 1]
        P[i, n2 - 1] = P[i, n2 - 2]
        N[i, 0] = N[i, 1]
        N[i, n2 - 1] = N[i, n2 - 2]


def gheat_step_2d(double[:, ::1] u, double h1, double h2, double dt,
                  double[::1] g11, double[::1] g12, double[::1] g22,
                  double[:, ::1] out):
    cdef Py_ssize_t n1 = u.shape[0], n2 = u.shape[1], J = g11.shape[0]
    cdef Py_ssize_t i, j, k
    cdef double best, cand, cross
    d11_arr = np.empty((n1, n2))
    d22_arr = np.empty((n1, n2))
    P_arr = np.empty((n1, n2))
    N_arr = np.empty((n1, n2))
    cdef double[:, ::1] d11 = d11_arr, d22 = d22_arr, P = P_arr, N = N_arr
    with nogil:
        _d2_axis0(u, h1, d11)
        _d2_axis1(u, h2, d22)
        _cross_pair(u, h1, h2, P, N)
        for i in range(n1):
            for j in range(n2):
                best = -1e308
                for k in range(J):
                    cross = g12[k] * (P[i, j] if g12[k] >= 0.0 else N[i, j])
                    cand = 0.5 * (g11[k] * d11[i, j] + g22[k] * d22[i, j]) + cross
                    if cand > best:
                        best = cand
                out[i, j] = u[i, j] + dt * best
    return None


def hjb_step_1d(double[::1] v, double h, double dt,
                double[:, :, ::1] a, double[:, :, ::1] beff,
                double[:, :, ::1] c, double[::1] out):
    """V <- V + dt * min_k max_j [a/2 D2 + upwind(beff) D1 + c]."""
    cdef Py_ssize_t K = a.shape[0], J = a.shape[1], nx = a.shape[2]
    cdef Py_ssize_t i, k, j
    cdef double h2 = h * h
    cdef double d2, fwd, bwd, L, gbest, vbest, b
    with nogil:
        for i in range(nx):
            if i == 0:
                d2 = (v[2] - 2.0 * v[1] + v[0]) / h2
            elif i == nx - 1:
                d2 = (v[nx - 1] - 2.0 * v[nx - 2] + v[nx - 3]) / h2
            else:
                d2 = (v[i + 1] - 2.0 * v[i] + v[i - 1]) / h2
            if i < nx - 1:
                fwd = (v[i + 1] - v[i]) / h
            else:
                fwd = (v[nx - 1] - v[nx - 2]) / h
            if i > 0:
                bwd = (v[i] - v[i - 1]) / h
            else:
                bwd = (v[1] - v[0]) / h
            vbest = 1e308
            for k in range(K):
                gbest = -1e308
                for j in range(J):
                    b = beff[k, j, i]
                    L = 0.5 * a[k, j, i] * d2 + c[k, j, i]
                    if b >= 0.0:
                        L += b * fwd
                    else:
                        L += b * bwd
                    if L > gbest:
                        gbest = L
                if gbest < vbest:
                    vbest = gbest
            out[i] = v[i] + dt * vbest
    return None


def hjb_step_2d(double[:, ::1] v, double h1, double h2, double dt,
                double[:, :, :, ::1] a11, double[:, :, :, ::1] a12,
                double[:, :, :, ::1] a22, double[:, :, :, ::1] b1,
                double[:, :, :, ::1] b2, double[:, :, :, ::1] c,
                double[:, ::1] out):
    cdef Py_ssize_t K = a11.shape[0], J = a11.shape[1]
    cdef Py_ssize_t n1 = a11.shape[2], n2 = a11.shape[3]
    cdef Py_ssize_t i, j, k, m
    cdef double L, gbest, vbest, bb, cross, f1, w1, f2, w2
    d11_arr = np.empty((n1, n2))
    d22_arr = np.empty((n1, n2))
    P_arr = np.empty((n1, n2))
    N_arr = np.empty((n1, n2))
    cdef double[:, ::1] d11 = d11_arr, d22 = d22_arr, P = P_arr, N = N_arr
    with nogil:
        _d2_axis0(v, h1, d11)
        _d2_axis1(v, h2, d22)
        _cross_pair(v, h1, h2, P, N)
        for i in range(n1):
            for j in range(n2):
                if i < n1 - 1:
                    f1 = (v[i + 1, j] - v[i, j]) / h1
                else:
                    f1 = (v[n1 - 1, j] - v[n1 - 2, j]) / h1
                if i > 0:
                    w1 = (v[i, j] - v[i - 1, j]) / h1
                else:
                    w1 = (v[1, j] - v[0, j]) / h1
                if j < n2 - 1:
                    f2 = (v[i, j + 1] - v[i, j]) / h2
                else:
                    f2 = (v[i, n2 - 1] - v[i, n2 - 2]) / h2
                if j > 0:
                    w2 = (v[i, j] - v[i, j - 1]) / h2
                else:
                    w2 = (v[i, 1] - v[i, 0]) / h2
                vbest = 1e308
                for k in range(K):
                    gbest = -1e308
                    for m in range(J):
                        cross = a12[k, m, i, j] * (P[i, j] if a12[k, m, i, j] >= 0.0 else N[i, j])
                        L = 0.5 * (a11[k, m, i, j] * d11[i, j] + a22[k, m, i, j] * d22[i, j]) + cross + c[k, m, i, j]
                        bb = b1[k, m, i, j]
                        if bb >= 0.0:
                            L += bb * f1
                        else:
                            L += bb * w1
                        bb = b2[k, m, i, j]
                        if bb >= 0.0:
                            L += bb * f2
                        else:
                            L += bb * w2
                        if L > gbest:
                            gbest = L
                    if gbest < vbest:
                        vbest = gbest
                out[i, j] = v[i, j] + dt * vbest
    return None


def dpp_step_1d(double[::1] vnext, double x_lo, double h, double dt,
                double[:, :, ::1] mu, double[:, :, :, ::1] M,
                double[:, :, ::1] rc, double[:, ::1] Z, double[::1] w,
                int cubic, double[::1] out_v, cnp.int32_t[::1] out_iv,
                cnp.int32_t[::1] out_ig):
    """Backward Bellman step on a 1-D grid; returns the worst overshoot."""
    cdef Py_ssize_t K = mu.shape[0], J = mu.shape[1], nx = mu.shape[2]
    cdef Py_ssize_t Q = Z.shape[0], d = Z.shape[1]
    cdef Py_ssize_t i, k, j, q, e
    cdef double sq = sqrt(dt)
    cdef double over = 0.0
    cdef double x, qpt, acc, load, gbest, vbest, cand
    cdef int gidx, vidx, gb
    with nogil:
        for i in range(nx):
            x = x_lo + h * i
            vbest = 1e308
            vidx = 0
            gb = 0
            for k in range(K):
                gbest = -1e308
                gidx = 0
                for j in range(J):
                    acc = 0.0
                    for q in range(Q):
                        load = 0.0
                        for e in range(d):
                            load += M[k, j, i, e] * Z[q, e]
                        qpt = x + mu[k, j, i] * dt + sq * load
                        acc += w[q] * _interp1(&vnext[0], nx, x_lo, h, qpt, cubic, &over)
                    cand = acc + rc[k, j, i] * dt
                    if cand > gbest:
                        gbest = cand
                        gidx = <int>j
                if gbest < vbest:
                    vbest = gbest
                    vidx = <int>k
                    gb = gidx
            out_v[i] = vbest
            out_iv[i] = vidx
            out_ig[i] = gb
    return over


def dpp_step_2d(double[:, ::1] vnext, double lo1, double lo2,
                double h1, double h2, double dt,
                double[:, :, :, :, ::1] mu, double[:, :, :, :, :, ::1] M,
                double[:, :, :, ::1] rc, double[:, ::1] Z, double[::1] w,
                int cubic, double[:, ::1] out_v, cnp.int32_t[:, ::1] out_iv,
                cnp.int32_t[:, ::1] out_ig):
    """Backward Bellman step on a 2-D grid; returns the worst overshoot."""
    cdef Py_ssize_t K = rc.shape[0], J = rc.shape[1]
    cdef Py_ssize_t n1 = rc.shape[2], n2 = rc.shape[3]
    cdef Py_ssize_t Q = Z.shape[0], d = Z.shape[1]
    cdef Py_ssize_t i1, i2, k, j, q, e, aa, bb
    cdef double sq = sqrt(dt)
    cdef double over = 0.0
    cdef double x1, x2, q1, q2, acc, load1, load2, gbest, vbest, cand, val, wrow
    cdef int gidx, vidx, gb
    cdef Py_ssize_t base1, base2
    cdef double wts1[4]
    cdef double wts2[4]
    cdef int cnt1, cnt2
    with nogil:
        for i1 in range(n1):
            x1 = lo1 + h1 * i1
            for i2 in range(n2):
                x2 = lo2 + h2 * i2
                vbest = 1e308
                vidx = 0
                gb = 0
                for k in range(K):
                    gbest = -1e308
                    gidx = 0
                    for j in range(J):
                        acc = 0.0
                        for q in range(Q):
                            load1 = 0.0
                            load2 = 0.0
                            for e in range(d):
                                load1 += M[k, j, i1, i2, 0, e] * Z[q, e]
                                load2 += M[k, j, i1, i2, 1, e] * Z[q, e]
                            q1 = x1 + mu[k, j, i1, i2, 0] * dt + sq * load1
                            q2 = x2 + mu[k, j, i1, i2, 1] * dt + sq * load2
                            _axis_weights(n1, lo1, h1, q1, cubic, &base1, wts1, &cnt1, &over)
                            _axis_weights(n2, lo2, h2, q2, cubic, &base2, wts2, &cnt2, &over)
                            val = 0.0
                            for aa in range(cnt1):
                                wrow = 0.0
                                for bb in range(cnt2):
                                    wrow += wts2[bb] * vnext[base1 + aa, base2 + bb]
                                val += wts1[aa] * wrow
                            acc += w[q] * val
                        cand = acc + rc[k, j, i1, i2] * dt
                        if cand > gbest:
                            gbest = cand
                            gidx = <int>j
                    if gbest < vbest:
                        vbest = gbest
                        vidx = <int>k
                        gb = gidx
                out_v[i1, i2] = vbest
                out_iv[i1, i2] = vidx
                out_ig[i1, i2] = gb
    return over
