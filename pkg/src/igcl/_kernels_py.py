"""Numpy implementations of the contrastive kernels.

Used when the compiled extension is unavailable or ``IGCL_PURE_PYTHON=1``.
Signatures and results match :mod:`igcl._kernels` to rounding error.
"""

import numpy as np

_CHUNK = 4096


def _softmax_rows(logits):
    m = logits.max(axis=1, keepdims=True)
    e = np.exp(logits - m)
    s = e.sum(axis=1, keepdims=True)
    return m[:, 0] + np.log(s[:, 0]), e / s


def icl_upper(Z, mu, var, tau, need_grad=True):
    """Closed-form bound and its gradient with respect to ``Z``.

    Row ``n`` of the logit matrix holds, for every candidate ``k``,
    ``z_k.mu_n / tau + sum_d var_nd (z_kd - z_nd)^2 / (2 tau^2)``.
    """
    b = Z.shape[0]
    inv_t = 1.0 / tau
    inv_t2 = inv_t * inv_t
    sz = var * Z
    # sum_d var_nd (z_kd - z_nd)^2 expanded into three matrix products
    quad = var @ (Z * Z).T - 2.0 * sz @ Z.T + (sz * Z).sum(axis=1, keepdims=True)
    np.maximum(quad, 0.0, out=quad)
    np.fill_diagonal(quad, 0.0)
    logits = (mu @ Z.T) * inv_t + 0.5 * inv_t2 * quad
    lse, P = _softmax_rows(logits)
    loss = float(np.mean(lse - np.diagonal(logits)))
    if not need_grad:
        return loss, None
    # candidate side: P_nk (mu_n / tau + var_n * (z_k - z_n) / tau^2)
    grad = inv_t * (P.T @ mu) + inv_t2 * ((P.T @ var) * Z - P.T @ sz)
    # anchor side: -mu_n / tau - var_n * sum_k P_nk (z_k - z_n) / tau^2
    grad -= inv_t * mu + inv_t2 * var * (P @ Z - Z)
    return loss, grad / b


def contrast_samples(Z, A, tau, need_grad=True):
    """Per-sample InfoNCE over a stack of augmentations ``A`` of shape ``(M, b, D)``.

    Returns the length-``M`` vector of batch-mean losses and, optionally, the
    gradient of their mean with respect to ``Z``.
    """
    M, b, D = A.shape
    inv_t = 1.0 / tau
    per_sample = np.empty(M)
    grad = np.zeros_like(Z) if need_grad else None
    eye = np.eye(b)
    for start in range(0, M, _CHUNK):
        chunk = A[start:start + _CHUNK]
        m = chunk.shape[0]
        flat = chunk.reshape(m * b, D)
        logits = (flat @ Z.T) * inv_t
        lse, P = _softmax_rows(logits)
        pos = np.einsum("mnd,nd->mn", chunk, Z) * inv_t
        per_sample[start:start + m] = (lse.reshape(m, b) - pos).mean(axis=1)
        if need_grad:
            P -= np.tile(eye, (m, 1))
            grad += P.T @ flat
    if need_grad:
        grad *= inv_t / (b * M)
    return per_sample, grad
