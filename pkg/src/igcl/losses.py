"""Contrastive objectives over latent augmentations.

For anchor ``n`` with backbone embedding ``z_n`` and latent Gaussian
``N(mu_n, diag(sigma_n^2))`` the sampled objective is InfoNCE with the
augmentation ``a ~ N(mu_n, diag(sigma_n^2))`` as query and all ``z`` as keys.
Its expectation over ``a`` is bounded above (Jensen, then the Gaussian moment
generating function) by

    mean_n [ -z_n.mu_n/tau + log sum_k exp(z_k.mu_n/tau + q_kn/(2 tau^2)) ],
    q_kn = sum_d sigma_nd^2 (z_kd - z_nd)^2,

which costs O(b^2 D) and needs no samples. Gradients flow into ``Z`` only:
the latents are fixed targets for the backbone step.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import NumericError, ShapeError, UsageError
from .tensor import (
    Tensor,
    add,
    as_tensor,
    logsumexp_rows,
    matmul,
    mean,
    mul,
    normalize_rows,
    scale,
    square,
    sub,
    sum_rows,
    take_rows,
    transpose,
)

__all__ = [
    "ContrastiveBatch",
    "icl_upper",
    "icl_upper_expanded",
    "info_nce",
    "cl_loss_mc",
    "noise_contrast_loss",
    "explicit_cl_loss",
]

_MC_CHUNK = 8192


@dataclass
class ContrastiveBatch:
    """Aligned rows of embeddings ``Z`` and latent parameters ``(mu, sigma)``.

    ``normalize`` l2-normalises the rows of ``Z`` before the loss; it is off in
    every preset.
    """

    Z: Tensor
    mu: np.ndarray
    sigma: np.ndarray
    tau: float
    normalize: bool = False

    def __post_init__(self):
        self.Z = as_tensor(self.Z)
        self.mu = np.asarray(getattr(self.mu, "data", self.mu), dtype=np.float64)
        self.sigma = np.asarray(getattr(self.sigma, "data", self.sigma), dtype=np.float64)
        if self.sigma.ndim == 0:
            self.sigma = np.full(self.mu.shape, float(self.sigma))
        if not (self.Z.shape == self.mu.shape == self.sigma.shape):
            raise ShapeError(f"Z {self.Z.shape}, mu {self.mu.shape}, sigma {self.sigma.shape} must match")
        if not self.tau > 0:
            raise UsageError(f"temperature must be positive, got {self.tau}")
        if np.any(self.sigma < 0):
            raise UsageError("sigma must be non-negative")

    @property
    def size(self) -> int:
        return self.Z.rows

    def embeddings(self) -> Tensor:
        return normalize_rows(self.Z) if self.normalize else self.Z


def icl_upper(batch: ContrastiveBatch) -> Tensor:
    """Closed-form upper bound on the expected contrastive loss (fused kernel)."""
    Z = batch.embeddings()
    var = batch.sigma * batch.sigma
    value, grad = kernels.icl_upper(
        np.ascontiguousarray(Z.data), np.ascontiguousarray(batch.mu), np.ascontiguousarray(var),
        float(batch.tau), Z.requires_grad,
    )
    if not np.isfinite(value):
        raise NumericError("icl_upper produced a non-finite value")
    return Tensor._from_op(np.array([[value]]), (Z,), lambda g: (g[0, 0] * grad,))


def icl_upper_expanded(batch: ContrastiveBatch) -> Tensor:
    """The same bound before cancelling the positive term, built from tape primitives.

    ``mean_n log sum_k exp(delta_kn.mu_n/tau + delta_kn^T Sigma_n delta_kn/(2 tau^2))``
    with ``delta_kn = z_k - z_n``. One anchor at a time, so it is slow but shares
    no code with :func:`icl_upper`.
    """
    Z = batch.embeddings()
    b = batch.size
    tau = float(batch.tau)
    var = batch.sigma * batch.sigma
    total = None
    for n in range(b):
        delta = sub(Z, take_rows(Z, [n] * b))
        linear = scale(matmul(delta, batch.mu[n][:, None]), 1.0 / tau)
        quad = scale(matmul(square(delta), var[n][:, None]), 0.5 / tau**2)
        term = logsumexp_rows(transpose(add(linear, quad)))
        total = term if total is None else add(total, term)
    out = scale(total, 1.0 / b)
    if not np.isfinite(out.data).all():
        raise NumericError("icl_upper_expanded produced a non-finite value")
    return out


def info_nce(Z, A, tau: float) -> Tensor:
    """``mean_n -log softmax_k(z_k.a_n/tau)[n]``: query ``a_n``, keys ``z_k``, positive ``z_n``."""
    if not tau > 0:
        raise UsageError(f"temperature must be positive, got {tau}")
    Z, A = as_tensor(Z), as_tensor(A)
    if Z.shape != A.shape:
        raise ShapeError(f"info_nce: Z {Z.shape} vs A {A.shape}")
    logits = scale(matmul(A, transpose(Z)), 1.0 / tau)
    positive = scale(sum_rows(mul(A, Z)), 1.0 / tau)
    return mean(sub(logsumexp_rows(logits), positive))


def cl_loss_mc(batch: ContrastiveBatch, M: int, rng: np.random.Generator, return_stderr: bool = False):
    """Monte-Carlo contrastive loss over ``M`` latent augmentations per row.

    With ``return_stderr`` the standard error of the mean over the ``M``
    per-sample batch losses is returned alongside the loss tensor.
    """
    if M < 1:
        raise UsageError(f"M must be >= 1, got {M}")
    Z = batch.embeddings()
    Zd = np.ascontiguousarray(Z.data)
    b, D = Zd.shape
    per_sample = np.empty(M)
    grad = np.zeros_like(Zd) if Z.requires_grad else None
    for start in range(0, M, _MC_CHUNK):
        m = min(_MC_CHUNK, M - start)
        A = batch.mu + batch.sigma * rng.standard_normal((m, b, D))
        ps, g = kernels.contrast_samples(Zd, A, float(batch.tau), Z.requires_grad)
        per_sample[start:start + m] = ps
        if grad is not None:
            grad += g * (m / M)
    value = float(per_sample.mean())
    out = Tensor._from_op(np.array([[value]]), (Z,), lambda g: (g[0, 0] * grad,))
    if return_stderr:
        se = float(per_sample.std(ddof=1) / np.sqrt(M)) if M > 1 else float("inf")
        return out, se
    return out


def noise_contrast_loss(Z, tau: float) -> Tensor:
    """The bound with every latent replaced by the standard normal (``mu = 0``, ``sigma = 1``)."""
    Z = as_tensor(Z)
    return icl_upper(ContrastiveBatch(Z, np.zeros(Z.shape), np.ones(Z.shape), tau))


def explicit_cl_loss(Z_view1, Z_view2, tau: float) -> Tensor:
    """Symmetric single-sample InfoNCE between two perturbed views; gradients reach both."""
    Z1, Z2 = as_tensor(Z_view1), as_tensor(Z_view2)
    if Z1.shape != Z2.shape:
        raise ShapeError(f"views differ in shape: {Z1.shape} vs {Z2.shape}")
    return scale(add(info_nce(Z1, Z2, tau), info_nce(Z2, Z1, tau)), 0.5)
