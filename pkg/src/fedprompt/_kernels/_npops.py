"""NumPy fallback kernels.

Matrix products accumulate in float32 with a fixed left-to-right order over
the contracted axis (a loop of rank-1 updates), so results are bit-identical
to the Cython kernels and independent of any BLAS blocking scheme.
"""

import numpy as np

F32 = np.float32
LN_EPS = F32(1e-5)


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """(M,K) @ (K,N) with left-to-right float32 accumulation over K."""
    m, k = a.shape
    k2, n = b.shape
    out = np.zeros((m, n), dtype=F32)
    for i in range(k):
        out += a[:, i : i + 1] * b[i]
    return out


def bmm(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Batched (G,M,K) @ (G,K,N)."""
    g, m, k = a.shape
    out = np.zeros((g, m, b.shape[2]), dtype=F32)
    for i in range(k):
        out += a[:, :, i : i + 1] * b[:, i : i + 1, :]
    return out


def bmm_nt(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Batched (G,M,K) @ (G,N,K)^T -> (G,M,N)."""
    g, m, k = a.shape
    out = np.zeros((g, m, b.shape[1]), dtype=F32)
    for i in range(k):
        out += a[:, :, i : i + 1] * b[:, :, i][:, None, :]
    return out


def bmm_tn(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Batched (G,K,M)^T @ (G,K,N) -> (G,M,N)."""
    g, k, m = a.shape
    out = np.zeros((g, m, b.shape[2]), dtype=F32)
    for i in range(k):
        out += a[:, i, :][:, :, None] * b[:, i : i + 1, :]
    return out


def softmax_rows(x: np.ndarray) -> np.ndarray:
    """Row-wise softmax of a (N,K) matrix, max-subtracted for stability."""
    z = x - x.max(axis=1, keepdims=True)
    e = np.exp(z, dtype=F32)
    return e / e.sum(axis=1, keepdims=True, dtype=F32)


def softmax_backward_rows(dy: np.ndarray, y: np.ndarray) -> np.ndarray:
    dot = (dy * y).sum(axis=1, keepdims=True, dtype=F32)
    return ((dy - dot) * y).astype(F32, copy=False)


def layernorm_forward(x, gamma, beta):
    """Normalize rows of (N,D); returns (y, xhat, rstd) with caches for backward."""
    mu = x.mean(axis=1, keepdims=True, dtype=F32)
    var = np.square(x - mu).mean(axis=1, keepdims=True, dtype=F32)
    rstd = (1.0 / np.sqrt(var + LN_EPS)).astype(F32)
    xhat = ((x - mu) * rstd).astype(F32)
    y = xhat * gamma + beta
    return y.astype(F32, copy=False), xhat, rstd[:, 0]


def layernorm_backward(dy, xhat, rstd, gamma):
    ghat = (dy * gamma).astype(F32)
    m1 = ghat.mean(axis=1, keepdims=True, dtype=F32)
    m2 = (ghat * xhat).mean(axis=1, keepdims=True, dtype=F32)
    dx = ((ghat - m1 - xhat * m2) * rstd[:, None]).astype(F32)
    dgamma = (dy * xhat).sum(axis=0, dtype=F32)
    dbeta = dy.sum(axis=0, dtype=F32)
    return dx, dgamma, dbeta


def quickgelu_forward(x: np.ndarray) -> np.ndarray:
    """x * sigmoid(1.702 x), the gating nonlinearity used by CLIP-style encoders."""
    s = 1.0 / (1.0 + np.exp(F32(-1.702) * x, dtype=F32))
    return (x * s).astype(F32, copy=False)


def quickgelu_backward(dy: np.ndarray, x: np.ndarray) -> np.ndarray:
    s = (1.0 / (1.0 + np.exp(F32(-1.702) * x, dtype=F32))).astype(F32)
    return (dy * (s + x * s * (1 - s) * F32(1.702))).astype(F32, copy=False)
