"""3x3 "same" convolution kernels in channels-last layout.

Two interchangeable backends compute identical results:

* ``numba``: direct loops compiled with ``@njit``.
* ``numpy``: im2col followed by one GEMM.

The numba path is used when numba imports and ``MIMOEST_NO_NUMBA`` is unset
(or ``0``). Tensors are ``(batch, height, width, channels)``; kernels are
``(3, 3, c_in, c_out)``.
"""

from __future__ import annotations

import os

import numpy as np

try:  # pragma: no cover - exercised implicitly by the active backend
    from numba import njit, prange
    HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    HAVE_NUMBA = False


def _numba_disabled() -> bool:
    return os.environ.get("MIMOEST_NO_NUMBA", "0").strip().lower() not in ("", "0", "false", "no")


def active_backend() -> str:
    return "numba" if HAVE_NUMBA and not _numba_disabled() else "numpy"


# --------------------------------------------------------------------- numpy

def _pad(x: np.ndarray) -> np.ndarray:
    return np.pad(x, ((0, 0), (1, 1), (1, 1), (0, 0)))


def im2col(x: np.ndarray) -> np.ndarray:
    """(B, H, W, C) -> (B, H, W, 9*C), patch order (ky, kx, c)."""
    _, h, w, _ = x.shape
    p = _pad(x)
    return np.concatenate(
        [p[:, ky:ky + h, kx:kx + w, :] for ky in range(3) for kx in range(3)], axis=-1)


def conv3x3_forward_np(x, w, b):
    bsz, h, wd, cin = x.shape
    cout = w.shape[-1]
    cols = im2col(x).reshape(-1, 9 * cin)
    y = cols @ w.reshape(9 * cin, cout)
    y += b
    return y.reshape(bsz, h, wd, cout)


def conv3x3_grad_input_np(g, w):
    # correlation with the spatially flipped, channel-transposed kernel
    w_flip = np.ascontiguousarray(w[::-1, ::-1].transpose(0, 1, 3, 2))
    zero = np.zeros(w.shape[2])
    return conv3x3_forward_np(g, w_flip, zero)


def conv3x3_grad_weight_np(x, g):
    cin = x.shape[-1]
    cout = g.shape[-1]
    cols = im2col(x).reshape(-1, 9 * cin)
    return (cols.T @ g.reshape(-1, cout)).reshape(3, 3, cin, cout)


# --------------------------------------------------------------------- numba

if HAVE_NUMBA:

    @njit(parallel=True, cache=True, fastmath=False)
    def _conv_fwd_nb(x, w, b, y):
        bsz, h, wd, cin = x.shape
        cout = w.shape[3]
        for n in prange(bsz):
            for i in range(h):
                for j in range(wd):
                    acc = y[n, i, j]
                    for co in range(cout):
                        acc[co] = b[co]
                    for ky in range(3):
                        ii = i + ky - 1
                        if ii < 0 or ii >= h:
                            continue
                        for kx in range(3):
                            jj = j + kx - 1
                            if jj < 0 or jj >= wd:
                                continue
                            for ci in range(cin):
                                xv = x[n, ii, jj, ci]
                                if xv == 0.0:
                                    continue
                                wrow = w[ky, kx, ci]
                                for co in range(cout):
                                    acc[co] += xv * wrow[co]

    @njit(parallel=True, cache=True, fastmath=False)
    def _conv_grad_w_nb(x, g, gw):
        bsz, h, wd, cin = x.shape
        cout = g.shape[3]
        # one task per tap; each owns gw[ky, kx] so the sum order is fixed
        for t in prange(9):
            ky = t // 3
            kx = t % 3
            acc = gw[ky, kx]
            for ci in range(cin):
                for co in range(cout):
                    acc[ci, co] = 0.0
            for n in range(bsz):
                for i in range(h):
                    ii = i + ky - 1
                    if ii < 0 or ii >= h:
                        continue
                    for j in range(wd):
                        jj = j + kx - 1
                        if jj < 0 or jj >= wd:
                            continue
                        grow = g[n, i, j]
                        for ci in range(cin):
                            xv = x[n, ii, jj, ci]
                            if xv == 0.0:
                                continue
                            arow = acc[ci]
                            for co in range(cout):
                                arow[co] += xv * grow[co]


def conv3x3_forward_nb(x, w, b):
    x = np.ascontiguousarray(x, dtype=np.float64)
    w = np.ascontiguousarray(w, dtype=np.float64)
    b = np.ascontiguousarray(b, dtype=np.float64)
    y = np.empty(x.shape[:3] + (w.shape[3],))
    _conv_fwd_nb(x, w, b, y)
    return y


def conv3x3_grad_input_nb(g, w):
    w_flip = np.ascontiguousarray(w[::-1, ::-1].transpose(0, 1, 3, 2), dtype=np.float64)
    return conv3x3_forward_nb(g, w_flip, np.zeros(w.shape[2]))


def conv3x3_grad_weight_nb(x, g):
    x = np.ascontiguousarray(x, dtype=np.float64)
    g = np.ascontiguousarray(g, dtype=np.float64)
    gw = np.empty((3, 3, x.shape[3], g.shape[3]))
    _conv_grad_w_nb(x, g, gw)
    return gw


# ------------------------------------------------------------------ dispatch

def conv3x3_forward(x, w, b):
    if active_backend() == "numba":
        return conv3x3_forward_nb(x, w, b)
    return conv3x3_forward_np(x, w, b)


def conv3x3_grad_input(g, w):
    if active_backend() == "numba":
        return conv3x3_grad_input_nb(g, w)
    return conv3x3_grad_input_np(g, w)


def conv3x3_grad_weight(x, g):
    if active_backend() == "numba":
        return conv3x3_grad_weight_nb(x, g)
    return conv3x3_grad_weight_np(x, g)
