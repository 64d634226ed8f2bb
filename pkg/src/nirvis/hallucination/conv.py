"""Stride-1, zero-padded ("same") 2-D cross-correlation in the Fourier domain.

Activations use an (H, W, batch, channels) layout and kernels (k, k, in, out),
so channel mixing at every frequency is a single batched matmul. Images are
transformed with an FFT of size H + k - 1, which is exactly large enough for
circular correlation to reproduce zero padding. Kernels only have k x k taps,
so their spectra (and the kernel gradients) come from small phase matrices
instead of full FFTs.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np
import scipy.fft as sfft

# upper bound on one chunk of kernel spectrum held in memory during inference
CHUNK_BYTES = 192 * 2**20


def complex_dtype(dtype) -> np.dtype:
    return np.result_type(dtype, np.complex64)


class Geometry:
    """FFT sizes and phase matrices for one (H, W, k) configuration."""

    def __init__(self, height: int, width: int, k: int, dtype=np.float64):
        if k % 2 != 1:
            raise ValueError("kernel size must be odd")
        self.height, self.width, self.k = height, width, k
        self.n1 = height + k - 1
        self.n2 = width + k - 1
        self.nf = self.n2 // 2 + 1
        self.dtype = np.dtype(dtype)
        self.cdtype = complex_dtype(dtype)
        taps = np.arange(k) - k // 2
        # E[f, a] = exp(2 pi i f (a - pad) / n)
        self.e1 = np.exp(2j * np.pi * np.outer(np.arange(self.n1), taps) / self.n1).astype(self.cdtype)
        self.e2 = np.exp(2j * np.pi * np.outer(np.arange(self.nf), taps) / self.n2).astype(self.cdtype)
        herm = np.full(self.nf, 2.0)
        herm[0] = 1.0
        if self.n2 % 2 == 0:
            herm[-1] = 1.0
        # Hermitian weights fold the missing half-spectrum back in for real outputs
        e2h_t = (self.e2 * herm[:, None]).T
        # contiguous real/imag parts so the batched matmuls hit BLAS
        self.e2_re, self.e2_im = (np.ascontiguousarray(part, dtype=self.dtype)
                                  for part in (self.e2.real, self.e2.imag))
        self.e2h_re, self.e2h_im = (np.ascontiguousarray(part, dtype=self.dtype)
                                    for part in (e2h_t.real, e2h_t.imag))
        self.e1_t = np.ascontiguousarray(self.e1.T)

    def spectrum(self, x: np.ndarray) -> np.ndarray:
        return sfft.rfft2(x, s=(self.n1, self.n2), axes=(0, 1))

    def spatial(self, X: np.ndarray) -> np.ndarray:
        return sfft.irfft2(X, s=(self.n1, self.n2), axes=(0, 1))[: self.height, : self.width]

    def kernel_spectrum(self, w: np.ndarray, rows: slice = slice(None)) -> np.ndarray:
        """Spectrum of the (k, k, in, out) kernel, shape (rows, nf, in, out)."""
        k = self.k
        cin, cout = w.shape[2], w.shape[3]
        flat = w.reshape(k, k, cin * cout)
        # contract the width taps with real GEMMs first, then one large complex GEMM
        partial = np.empty((k, self.nf, cin * cout), dtype=self.cdtype)
        partial.real = np.matmul(self.e2_re, flat)
        partial.imag = np.matmul(self.e2_im, flat)
        spec = self.e1[rows] @ partial.reshape(k, self.nf * cin * cout)
        return spec.reshape(-1, self.nf, cin, cout)

    def kernel_gradient(self, D: np.ndarray) -> np.ndarray:
        """Adjoint of ``kernel_spectrum`` for a (n1, nf, in, out) cross-spectrum."""
        k = self.k
        n1, nf, cin, cout = D.shape
        partial = (self.e1_t @ D.reshape(n1, nf * cin * cout)).reshape(k, nf, cin * cout)
        # only the real part survives
        dw = (np.matmul(self.e2h_re, np.ascontiguousarray(partial.real))
              - np.matmul(self.e2h_im, np.ascontiguousarray(partial.imag)))
        return (dw / (self.n1 * self.n2)).reshape(k, k, cin, cout).astype(self.dtype, copy=False)


@lru_cache(maxsize=32)
def geometry(height: int, width: int, k: int, dtype: str) -> Geometry:
    return Geometry(height, width, k, np.dtype(dtype))


def _freq_matmul(X: np.ndarray, K: np.ndarray) -> np.ndarray:
    rows, nf, batch, cin = X.shape
    cout = K.shape[-1]
    Y = np.matmul(X.reshape(rows * nf, batch, cin), K.reshape(rows * nf, cin, cout))
    return Y.reshape(rows, nf, batch, cout)


def conv_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray, keep: bool = False):
    """Zero-padded same-size correlation of x (H, W, B, in) with w (k, k, in, out).

    With ``keep`` the input and kernel spectra are returned for the backward pass;
    otherwise the kernel spectrum is built in row chunks to bound memory.
    """
    H, W = x.shape[:2]
    geo = geometry(H, W, w.shape[0], x.dtype.str)
    X = geo.spectrum(x)
    cin, cout = w.shape[2], w.shape[3]
    if keep:
        K = geo.kernel_spectrum(w)
        y = geo.spatial(_freq_matmul(X, K)) + b
        return y, (X, K)
    row_bytes = geo.nf * cin * cout * np.dtype(geo.cdtype).itemsize
    step = max(1, CHUNK_BYTES // max(row_bytes, 1))
    Y = np.empty(X.shape[:3] + (cout,), dtype=geo.cdtype)
    for r0 in range(0, geo.n1, step):
        rows = slice(r0, min(r0 + step, geo.n1))
        Y[rows] = _freq_matmul(X[rows], geo.kernel_spectrum(w, rows))
    return geo.spatial(Y) + b, None


def conv_backward(gy: np.ndarray, cache, need_input_grad: bool = True):
    """Gradients of a scalar loss through ``conv_forward``.

    Returns (dx or None, dw, db) for an upstream gradient gy (H, W, B, out).
    """
    X, K = cache
    H, W = gy.shape[:2]
    k = None
    # kernel size is recoverable from the FFT size
    n1 = X.shape[0]
    k = n1 - H + 1
    geo = geometry(H, W, k, gy.dtype.str)
    G = geo.spectrum(gy)
    n1, nf, batch, cout = G.shape
    cin = X.shape[-1]
    F = n1 * nf
    dx = None
    if need_input_grad:
        Kh = np.conj(K.reshape(F, cin, cout)).transpose(0, 2, 1)
        dX = np.matmul(G.reshape(F, batch, cout), Kh)
        dx = geo.spatial(dX.reshape(n1, nf, batch, cin))
    D = np.matmul(X.reshape(F, batch, cin).transpose(0, 2, 1), np.conj(G).reshape(F, batch, cout))
    dw = geo.kernel_gradient(D.reshape(n1, nf, cin, cout))
    db = gy.sum(axis=(0, 1, 2))
    return dx, dw, db


def conv_direct(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Spatial-domain reference implementation (slow; used for cross-checks)."""
    H, W = x.shape[:2]
    k = w.shape[0]
    p = k // 2
    xp = np.pad(x, ((p, p), (p, p), (0, 0), (0, 0)))
    out = np.zeros((H, W, x.shape[2], w.shape[3]), dtype=np.result_type(x, w))
    for a in range(k):
        for c in range(k):
            out += np.einsum("hwbi,io->hwbo", xp[a:a + H, c:c + W], w[a, c])
    return out + b
