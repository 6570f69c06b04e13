# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled batched kernels for the weighted least-squares root solve.

Mirrors ``rootlift._kernels_py`` loop for loop; see that module for the
array conventions.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, isfinite, NAN, INFINITY

cnp.import_array()


cdef inline bint _factor(double s, double sa, double sb, double saa, int npos,
                         double cond_max, double* l, double* cond) noexcept nogil:
    cdef double n2, l22sq, half, d, lam_hi, lam_lo
    cond[0] = INFINITY
    if npos < 2 or not s > 0:
        return False
    l[0] = sqrt(s)
    l[1] = -sa / l[0]
    l[2] = -sb / l[0]
    n2 = sa * sa + sb * sb
    l22sq = saa - n2 / s
    if not l22sq > 0:
        return False
    l[3] = sqrt(l22sq)
    half = 0.5 * (s + saa)
    d = 0.5 * (s - saa)
    lam_hi = half + sqrt(d * d + n2)
    lam_lo = s * l22sq / lam_hi
    cond[0] = lam_hi / lam_lo
    if not isfinite(cond[0]) or cond[0] > cond_max:
        cond[0] = INFINITY
        return False
    return True


cdef inline void _chol_solve(double* l, double h0, double h1, double h2,
                             double* x) noexcept nogil:
    cdef double y0 = h0 / l[0]
    cdef double y1 = h1 / l[0]
    cdef double y2 = (h2 - l[1] * y0 - l[2] * y1) / l[3]
    x[2] = y2 / l[3]
    x[1] = (y1 - l[2] * x[2]) / l[0]
    x[0] = (y0 - l[1] * x[2]) / l[0]


def solve_batch(rays, rhs, w, double cond_max):
    cdef const double[:, :, ::1] R = np.ascontiguousarray(rays, dtype=np.float64)
    cdef const double[:, :, ::1] H = np.ascontiguousarray(rhs, dtype=np.float64)
    cdef const double[:, ::1] W = np.ascontiguousarray(w, dtype=np.float64)
    cdef Py_ssize_t nb = R.shape[0], nk = R.shape[1], k, i
    t_out = np.empty((nb, 3), dtype=np.float64)
    cond_out = np.empty(nb, dtype=np.float64)
    resid_out = np.empty(nb, dtype=np.float64)
    ok_out = np.zeros(nb, dtype=np.bool_)
    cdef double[:, ::1] T = t_out
    cdef double[::1] C = cond_out
    cdef double[::1] E = resid_out
    cdef cnp.npy_bool[::1] OK = ok_out
    cdef double s, sa, sb, saa, h0, h1, h2, w2, a, b, b0, b1, e0, e1, acc
    cdef double l[4]
    cdef double x[3]
    cdef int npos
    with nogil:
        for k in range(nb):
            s = 0.0; sa = 0.0; sb = 0.0; saa = 0.0
            h0 = 0.0; h1 = 0.0; h2 = 0.0
            npos = 0
            for i in range(nk):
                if W[k, i] > 0:
                    npos += 1
                w2 = W[k, i] * W[k, i]
                a = R[k, i, 0]
                b = R[k, i, 1]
                b0 = H[k, i, 0]
                b1 = H[k, i, 1]
                s = s + w2
                sa = sa + w2 * a
                sb = sb + w2 * b
                saa = saa + w2 * (a * a + b * b)
                h0 = h0 - w2 * b0
                h1 = h1 - w2 * b1
                h2 = h2 + w2 * (a * b0 + b * b1)
            if _factor(s, sa, sb, saa, npos, cond_max, l, &C[k]):
                _chol_solve(l, h0, h1, h2, x)
                T[k, 0] = x[0]; T[k, 1] = x[1]; T[k, 2] = x[2]
                acc = 0.0
                for i in range(nk):
                    w2 = W[k, i] * W[k, i]
                    e0 = H[k, i, 0] + x[0] - R[k, i, 0] * x[2]
                    e1 = H[k, i, 1] + x[1] - R[k, i, 1] * x[2]
                    acc = acc + w2 * (e0 * e0 + e1 * e1)
                E[k] = sqrt(acc)
                OK[k] = True
            else:
                T[k, 0] = NAN; T[k, 1] = NAN; T[k, 2] = NAN
                E[k] = NAN
    return t_out, cond_out, resid_out, ok_out


def vjp_batch(rays, rhs, w, t, g, double cond_max):
    cdef const double[:, :, ::1] R = np.ascontiguousarray(rays, dtype=np.float64)
    cdef const double[:, :, ::1] H = np.ascontiguousarray(rhs, dtype=np.float64)
    cdef const double[:, ::1] W = np.ascontiguousarray(w, dtype=np.float64)
    cdef const double[:, ::1] T = np.ascontiguousarray(t, dtype=np.float64)
    cdef const double[:, ::1] G = np.ascontiguousarray(g, dtype=np.float64)
    cdef Py_ssize_t nb = R.shape[0], nk = R.shape[1], k, i
    d_rays_out = np.zeros((nb, nk, 2), dtype=np.float64)
    d_rhs_out = np.zeros((nb, nk, 2), dtype=np.float64)
    d_w_out = np.zeros((nb, nk), dtype=np.float64)
    cdef double[:, :, ::1] DR = d_rays_out
    cdef double[:, :, ::1] DH = d_rhs_out
    cdef double[:, ::1] DW = d_w_out
    cdef double s, sa, sb, saa, w2, a, b, p0, p1, e0, e1, cond
    cdef double l[4]
    cdef double q[3]
    cdef int npos
    with nogil:
        for k in range(nb):
            s = 0.0; sa = 0.0; sb = 0.0; saa = 0.0
            npos = 0
            for i in range(nk):
                if W[k, i] > 0:
                    npos += 1
                w2 = W[k, i] * W[k, i]
                a = R[k, i, 0]
                b = R[k, i, 1]
                s = s + w2
                sa = sa + w2 * a
                sb = sb + w2 * b
                saa = saa + w2 * (a * a + b * b)
            if not _factor(s, sa, sb, saa, npos, cond_max, l, &cond):
                continue
            _chol_solve(l, G[k, 0], G[k, 1], G[k, 2], q)
            for i in range(nk):
                w2 = W[k, i] * W[k, i]
                a = R[k, i, 0]
                b = R[k, i, 1]
                p0 = -q[0] + a * q[2]
                p1 = -q[1] + b * q[2]
                e0 = H[k, i, 0] + T[k, 0] - a * T[k, 2]
                e1 = H[k, i, 1] + T[k, 1] - b * T[k, 2]
                DH[k, i, 0] = w2 * p0
                DH[k, i, 1] = w2 * p1
                DR[k, i, 0] = w2 * (e0 * q[2] - p0 * T[k, 2])
                DR[k, i, 1] = w2 * (e1 * q[2] - p1 * T[k, 2])
                DW[k, i] = 2.0 * W[k, i] * (p0 * e0 + p1 * e1)
    return d_rays_out, d_rhs_out, d_w_out
