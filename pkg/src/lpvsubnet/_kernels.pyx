# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled affine LPV mat-vec kernels (same contract as ``_kernels_py``)."""
import numpy as np
cimport numpy as cnp

cnp.import_array()


def affine_matvec_forward(double[:, :, ::1] M, double[:, ::1] pe, double[:, ::1] x):
    cdef Py_ssize_t I = M.shape[0], R = M.shape[1], C = M.shape[2], B = x.shape[0]
    cdef Py_ssize_t b, i, r, c
    cdef double acc, w
    cdef const double* xb
    cdef const double* Mir
    Mx_arr = np.empty((B, I, R), dtype=np.float64)
    out_arr = np.zeros((B, R), dtype=np.float64)
    cdef double[:, :, ::1] Mx = Mx_arr
    cdef double[:, ::1] out = out_arr
    with nogil:
        for b in range(B):
            xb = &x[b, 0]
            for i in range(I):
                w = pe[b, i]
                for r in range(R):
                    Mir = &M[i, r, 0]
                    acc = 0.0
                    for c in range(C):
                        acc += Mir[c] * xb[c]
                    Mx[b, i, r] = acc
                    out[b, r] += w * acc
    return out_arr, Mx_arr


def affine_matvec_backward(double[:, :, ::1] M, double[:, ::1] pe, double[:, ::1] x,
                           double[:, :, ::1] Mx, double[:, ::1] g, bint need_p):
    cdef Py_ssize_t I = M.shape[0], R = M.shape[1], C = M.shape[2], B = x.shape[0]
    cdef Py_ssize_t b, i, r, c
    cdef double w, acc
    cdef const double* xb
    cdef const double* Mir
    cdef double* dMir
    cdef double* dxb
    dM_arr = np.zeros((I, R, C), dtype=np.float64)
    dx_arr = np.zeros((B, C), dtype=np.float64)
    cdef double[:, :, ::1] dM = dM_arr
    cdef double[:, ::1] dx = dx_arr
    cdef double[:, ::1] dp
    dp_arr = None
    if need_p:
        dp_arr = np.zeros((B, I - 1), dtype=np.float64)
        dp = dp_arr
    with nogil:
        for b in range(B):
            xb = &x[b, 0]
            dxb = &dx[b, 0]
            for i in range(I):
                for r in range(R):
                    w = pe[b, i] * g[b, r]
                    Mir = &M[i, r, 0]
                    dMir = &dM[i, r, 0]
                    for c in range(C):
                        dMir[c] += w * xb[c]
                        dxb[c] += w * Mir[c]
            if need_p:
                for i in range(1, I):
                    acc = 0.0
                    for r in range(R):
                        acc += Mx[b, i, r] * g[b, r]
                    dp[b, i - 1] = acc
    return dM_arr, dx_arr, dp_arr
