# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels: affine path recursion and block-Gaussian reductions.

Signatures mirror noisediff._kernels.fallback; see there for semantics.
"""
import numpy as np

cimport cython
from libc.math cimport log, sqrt, isfinite

IS_COMPILED = True


def linear_path(double[:, ::1] M, double[::1] m, double[:, ::1] L,
                double[:, ::1] xi, double[::1] x0, Py_ssize_t record_every):
    cdef Py_ssize_t nsteps = xi.shape[0]
    cdef Py_ssize_t r = xi.shape[1]
    cdef Py_ssize_t d = x0.shape[0]
    if nsteps % record_every:
        raise ValueError("nsteps must be a multiple of record_every")
    out_np = np.empty((nsteps // record_every + 1, d))
    cdef double[:, ::1] out = out_np
    work_np = np.empty(d)
    cur_np = np.empty(d)
    cdef double[::1] work = work_np
    cdef double[::1] cur = cur_np
    cdef Py_ssize_t s, i, j, row
    cdef double acc
    for i in range(d):
        cur[i] = x0[i]
        out[0, i] = x0[i]
    row = 1
    with nogil:
        for s in range(nsteps):
            for i in range(d):
                acc = m[i]
                for j in range(d):
                    acc += M[i, j] * cur[j]
                for j in range(r):
                    acc += L[i, j] * xi[s, j]
                work[i] = acc
            for i in range(d):
                cur[i] = work[i]
            if (s + 1) % record_every == 0:
                for i in range(d):
                    out[row, i] = cur[i]
                row += 1
    return out_np


def block_quad_logdet(double[:, :, ::1] a_stack, double[:, ::1] v, double scale):
    cdef Py_ssize_t n = a_stack.shape[0]
    cdef Py_ssize_t d = a_stack.shape[1]
    chol_np = np.empty((d, d))
    y_np = np.empty(d)
    cdef double[:, ::1] chol = chol_np
    cdef double[::1] y = y_np
    cdef double qf = 0.0, logdet = 0.0
    cdef double acc, piv
    cdef Py_ssize_t jb, i, j, k2
    cdef Py_ssize_t bad = -1
    with nogil:
        for jb in range(n):
            # Cholesky of A_jb (lower)
            for j in range(d):
                for i in range(j, d):
                    acc = a_stack[jb, i, j]
                    for k2 in range(j):
                        acc -= chol[i, k2] * chol[j, k2]
                    if i == j:
                        if acc <= 0.0 or not isfinite(acc):
                            bad = jb
                            break
                        piv = sqrt(acc)
                        chol[j, j] = piv
                        logdet += 2.0 * log(piv)
                    else:
                        chol[i, j] = acc / piv
                if bad >= 0:
                    break
            if bad >= 0:
                break
            # forward solve chol y = v_jb, then qf += ||y||^2
            for i in range(d):
                acc = v[jb, i]
                for k2 in range(i):
                    acc -= chol[i, k2] * y[k2]
                y[i] = acc / chol[i, i]
                qf += y[i] * y[i]
    if bad >= 0:
        return np.nan, np.nan, bad
    return qf / scale, logdet, -1
