"""Hot per-edge kernels for the attention backward pass.

numba-compiled when available (bit-identical IEEE order: each edge is
written exactly once, segments are walked sequentially), with pure-numpy
fallbacks. Only scalar-per-edge work lives here; all matrix math stays in
numpy/scipy.
"""

from __future__ import annotations

import numpy as np

try:
    from numba import njit

    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is an optional accelerator
    _HAVE_NUMBA = False


def _edge_dot_numpy(indptr: np.ndarray, src: np.ndarray, dst: np.ndarray,
                    z: np.ndarray, dout: np.ndarray) -> np.ndarray:
    return np.einsum("ed,ed->e", dout[dst], z[src])


def _softmax_bwd_numpy(indptr: np.ndarray, dst: np.ndarray, alpha: np.ndarray,
                       dalpha: np.ndarray) -> np.ndarray:
    prod = alpha * dalpha
    inner = np.add.reduceat(prod, indptr[:-1])
    return alpha * (dalpha - inner[dst])


if _HAVE_NUMBA:
    # sequential on purpose: these run between numpy calls, and parallel
    # dispatch wake-up costs more than the loops themselves at this scale

    @njit(cache=True)
    def _edge_dot_nb(indptr, src, z, dout, out):  # pragma: no cover - jit
        n = indptr.shape[0] - 1
        d = z.shape[1]
        for v in range(n):
            for e in range(indptr[v], indptr[v + 1]):
                s = src[e]
                acc = 0.0
                for k in range(d):
                    acc += dout[v, k] * z[s, k]
                out[e] = acc

    @njit(cache=True)
    def _softmax_bwd_nb(indptr, alpha, dalpha, out):  # pragma: no cover - jit
        n = indptr.shape[0] - 1
        for v in range(n):
            inner = 0.0
            for e in range(indptr[v], indptr[v + 1]):
                inner += alpha[e] * dalpha[e]
            for e in range(indptr[v], indptr[v + 1]):
                out[e] = alpha[e] * (dalpha[e] - inner)

    def edge_dot(indptr, src, dst, z, dout):
        out = np.empty(src.shape[0], dtype=np.float64)
        _edge_dot_nb(indptr, src, np.ascontiguousarray(z),
                     np.ascontiguousarray(dout), out)
        return out

    def softmax_backward(indptr, dst, alpha, dalpha):
        out = np.empty_like(alpha)
        _softmax_bwd_nb(indptr, alpha, dalpha, out)
        return out

else:
    edge_dot = lambda indptr, src, dst, z, dout: _edge_dot_numpy(indptr, src, dst, z, dout)  # noqa: E731
    softmax_backward = lambda indptr, dst, alpha, dalpha: _softmax_bwd_numpy(  # noqa: E731
        indptr, dst, alpha, dalpha)
