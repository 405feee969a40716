# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled versions of the hot loops in _kernels_py."""
import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt

cnp.import_array()

BACKEND = "cython"


def pairwise_distances(X):
    cdef double[:, ::1] x = np.ascontiguousarray(X, dtype=np.float64)
    cdef Py_ssize_t B = x.shape[0], F = x.shape[1]
    D_arr = np.zeros((B, B), dtype=np.float64)
    cdef double[:, ::1] D = D_arr
    cdef Py_ssize_t i, j, k
    cdef double s, t
    with nogil:
        for i in range(B):
            for j in range(i + 1, B):
                s = 0.0
                for k in range(F):
                    t = x[i, k] - x[j, k]
                    s = s + t * t
                if s < 0.0:
                    s = 0.0
                s = sqrt(s)
                D[i, j] = s
                D[j, i] = s
    return D_arr


def cross_distances(A, Q):
    cdef double[:, ::1] a = np.ascontiguousarray(A, dtype=np.float64)
    cdef double[:, ::1] q = np.ascontiguousarray(Q, dtype=np.float64)
    cdef Py_ssize_t N = a.shape[0], M = q.shape[0], F = a.shape[1]
    if q.shape[1] != F:
        raise ValueError("feature widths differ")
    out_arr = np.empty((M, N), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t i, j, k
    cdef double s, t
    with nogil:
        for i in range(M):
            for j in range(N):
                s = 0.0
                for k in range(F):
                    t = q[i, k] - a[j, k]
                    s = s + t * t
                if s < 0.0:
                    s = 0.0
                out[i, j] = sqrt(s)
    return out_arr


def semihard_triples(D, groups, double margin):
    cdef double[:, ::1] d = np.ascontiguousarray(D, dtype=np.float64)
    cdef cnp.int64_t[::1] g = np.ascontiguousarray(groups, dtype=np.int64)
    cdef Py_ssize_t B = d.shape[0]
    cdef Py_ssize_t r, e, i, count = 0, w = 0
    cdef double dap, upper, dan
    # first pass counts, second pass fills; same loop order both times
    with nogil:
        for r in range(B):
            for e in range(B):
                if e == r or g[e] != g[r]:
                    continue
                dap = d[r, e]
                upper = dap + margin
                for i in range(B):
                    if g[i] == g[r]:
                        continue
                    dan = d[r, i]
                    if dap < dan and dan < upper:
                        count += 1
    out_arr = np.empty((count, 3), dtype=np.int64)
    cdef cnp.int64_t[:, ::1] out = out_arr
    with nogil:
        for r in range(B):
            for e in range(B):
                if e == r or g[e] != g[r]:
                    continue
                dap = d[r, e]
                upper = dap + margin
                for i in range(B):
                    if g[i] == g[r]:
                        continue
                    dan = d[r, i]
                    if dap < dan and dan < upper:
                        out[w, 0] = r
                        out[w, 1] = e
                        out[w, 2] = i
                        w += 1
    return out_arr


def triplet_hinge(X, D, triples, double margin):
    cdef double[:, ::1] x = np.ascontiguousarray(X, dtype=np.float64)
    cdef double[:, ::1] d = np.ascontiguousarray(D, dtype=np.float64)
    cdef cnp.int64_t[:, ::1] tr = np.ascontiguousarray(triples, dtype=np.int64).reshape(-1, 3)
    cdef Py_ssize_t T = tr.shape[0], F = x.shape[1]
    grad_arr = np.zeros((x.shape[0], F), dtype=np.float64)
    if T == 0:
        return 0.0, grad_arr
    cdef double[:, ::1] grad = grad_arr
    cdef Py_ssize_t t, k, a, p, n
    cdef double total = 0.0, h, dap, dan, scale = 1.0 / T, inv_ap, inv_an, u_ap, u_an
    with nogil:
        for t in range(T):
            a = tr[t, 0]
            p = tr[t, 1]
            n = tr[t, 2]
            dap = d[a, p]
            dan = d[a, n]
            h = dap - dan + margin
            if h <= 0.0:
                continue
            total += h
            inv_ap = scale / dap if dap > 0.0 else 0.0
            inv_an = scale / dan
            for k in range(F):
                u_ap = (x[a, k] - x[p, k]) * inv_ap
                u_an = (x[a, k] - x[n, k]) * inv_an
                grad[a, k] += u_ap - u_an
                grad[p, k] -= u_ap
                grad[n, k] += u_an
    return total / T, grad_arr
