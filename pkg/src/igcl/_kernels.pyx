# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled contrastive kernels; see ``_kernels_py`` for the reference semantics.

Matrix products go through BLAS via ``np.dot``; the
elementwise passes between them (clamping, row softmax, loss accumulation,
gradient assembly) are fused loops that work in place.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, log

cnp.import_array()

# logits rows held at once by contrast_samples (about 32 MB of float64)
cdef Py_ssize_t _BLOCK = 1 << 22


cdef double _softmax_row(double[::1] row, Py_ssize_t b) noexcept nogil:
    """Replace ``row`` by its softmax and return its log-sum-exp."""
    cdef Py_ssize_t k
    cdef double mx = row[0], s = 0.0, lse
    for k in range(1, b):
        if row[k] > mx:
            mx = row[k]
    for k in range(b):
        row[k] = exp(row[k] - mx)
        s += row[k]
    lse = mx + log(s)
    s = 1.0 / s
    for k in range(b):
        row[k] *= s
    return lse


def icl_upper(double[:, ::1] Z, double[:, ::1] mu, double[:, ::1] var, double tau, bint need_grad=True):
    cdef Py_ssize_t b = Z.shape[0], D = Z.shape[1]
    cdef Py_ssize_t n, k, d
    cdef double inv_t = 1.0 / tau
    cdef double inv_t2 = inv_t * inv_t
    cdef double total = 0.0, q, c_n, diag

    Z_np = np.asarray(Z)
    mu_np = np.asarray(mu)
    var_np = np.asarray(var)
    # sum_d var_nd (z_kd - z_nd)^2 = [var_n, var_n z_n] . [z_k^2, -2 z_k] + sum_d var_nd z_nd^2
    left_np = np.empty((b, 2 * D))
    right_np = np.empty((b, 2 * D))
    cdef double[:, ::1] left = left_np, right = right_np
    cdef double[::1] const = np.empty(b)
    for n in range(b):
        c_n = 0.0
        for d in range(D):
            left[n, d] = var[n, d]
            left[n, D + d] = var[n, d] * Z[n, d]
            right[n, d] = Z[n, d] * Z[n, d]
            right[n, D + d] = -2.0 * Z[n, d]
            c_n += var[n, d] * Z[n, d] * Z[n, d]
        const[n] = c_n
    quad_np = np.dot(left_np, right_np.T)
    logits_np = np.dot(mu_np, Z_np.T)
    cdef double[:, ::1] quad = quad_np, logits = logits_np

    for n in range(b):
        for k in range(b):
            if k == n:
                q = 0.0
            else:
                q = quad[n, k] + const[n]
                if q < 0.0:
                    q = 0.0
            logits[n, k] = logits[n, k] * inv_t + 0.5 * inv_t2 * q
        diag = logits[n, n]
        total += _softmax_row(logits[n], b) - diag

    if not need_grad:
        return total / b, None

    # candidate side: sum_n P_nk (mu_n / tau - var_n z_n / tau^2) + z_k * sum_n P_nk var_n / tau^2
    for n in range(b):
        for d in range(D):
            left[n, d] = mu[n, d] * inv_t - var[n, d] * Z[n, d] * inv_t2
            left[n, D + d] = var[n, d] * inv_t2
    cand_np = np.dot(logits_np.T, left_np)
    # anchor side needs sum_k P_nk z_k
    pz_np = np.dot(logits_np, Z_np)
    cdef double[:, ::1] cand = cand_np, pz = pz_np
    grad_np = np.empty((b, D))
    cdef double[:, ::1] grad = grad_np
    cdef double inv_b = 1.0 / b
    for n in range(b):
        for d in range(D):
            grad[n, d] = inv_b * (
                cand[n, d] + cand[n, D + d] * Z[n, d]
                - mu[n, d] * inv_t - var[n, d] * inv_t2 * (pz[n, d] - Z[n, d])
            )
    return total / b, grad_np


def contrast_samples(double[:, ::1] Z, double[:, :, ::1] A, double tau, bint need_grad=True):
    cdef Py_ssize_t M = A.shape[0], b = A.shape[1], D = A.shape[2]
    cdef Py_ssize_t start, m, n, r, rows
    cdef double inv_t = 1.0 / tau
    cdef double pos, row_total
    cdef Py_ssize_t chunk = max(1, _BLOCK // (b * b))
    per_np = np.empty(M)
    cdef double[::1] per_sample = per_np
    Z_np = np.asarray(Z)
    A_np = np.asarray(A)
    ZT_np = np.ascontiguousarray(Z_np.T) * inv_t
    grad_np = np.zeros((b, D)) if need_grad else None
    cdef double[:, ::1] logits

    for start in range(0, M, chunk):
        rows = min(chunk, M - start)
        flat_np = A_np[start:start + rows].reshape(rows * b, D)
        logits_np = np.dot(flat_np, ZT_np)
        logits = logits_np
        for m in range(rows):
            row_total = 0.0
            for n in range(b):
                r = m * b + n
                pos = logits[r, n]
                row_total += _softmax_row(logits[r], b) - pos
                logits[r, n] -= 1.0
            per_sample[start + m] = row_total / b
        if need_grad:
            grad_np += np.dot(logits_np.T, flat_np)

    if not need_grad:
        return per_np, None
    grad_np *= inv_t / (b * M)
    return per_np, grad_np
