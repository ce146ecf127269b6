"""Kernel backend selection and the convolution routines built on it.

The compiled extension is preferred; ``ECGC_KERNELS=python`` forces the numpy
fallback. ``BACKEND`` names the implementation actually in use. Convolution
is im2col (backend) + one BLAS matmul over the whole batch + col2im
(backend) for the input gradient.
"""

from __future__ import annotations

import logging
import os

import numpy as np

from ecgc import _pykernels

logger = logging.getLogger(__name__)


def _load(name: str):
    if name == "python":
        return _pykernels
    if name == "compiled":
        from ecgc import _kernels

        return _kernels
    raise ValueError(f"unknown kernel backend {name!r}")


def _select():
    forced = os.environ.get("ECGC_KERNELS", "").strip().lower()
    if forced:
        return forced, _load(forced)
    try:
        return "compiled", _load("compiled")
    except ImportError:
        logger.info("compiled kernels unavailable; using numpy fallback")
        return "python", _pykernels


BACKEND, _impl = _select()

im2col = _impl.im2col
col2im = _impl.col2im
threshold_peaks = _impl.threshold_peaks
layer_norm_forward = _impl.layer_norm_forward
layer_norm_backward = _impl.layer_norm_backward


def get_backend(name: str):
    """Return the module implementing backend ``name`` ("compiled" or "python")."""
    return _load(name)


def compiled_available() -> bool:
    try:
        _load("compiled")
    except ImportError:
        return False
    return True


def conv1d_forward(x, w, stride, padding, backend=None):
    """y [B, C_out, L_out] plus the unfolded input reused by the weight gradient."""
    impl = backend or _impl
    b = x.shape[0]
    c_out, c_in, k = w.shape
    cols = impl.im2col(x, k, stride, padding)
    l_out = cols.shape[1] // b
    y = (w.reshape(c_out, c_in * k) @ cols).reshape(c_out, b, l_out)
    return np.ascontiguousarray(y.transpose(1, 0, 2)), cols


def conv1d_backward(dy, w, cols, length, stride, padding, need_input=True, backend=None):
    """(dx or None, dw) for upstream gradient dy [B, C_out, L_out]."""
    impl = backend or _impl
    b, c_out, l_out = dy.shape
    _, c_in, k = w.shape
    dy_t = np.ascontiguousarray(dy.transpose(1, 0, 2)).reshape(c_out, b * l_out)
    dw = (dy_t @ cols.T).reshape(c_out, c_in, k)
    dx = None
    if need_input:
        dcols = np.ascontiguousarray(w.reshape(c_out, c_in * k).T @ dy_t)
        dx = impl.col2im(dcols, b, c_in, length, k, stride, padding)
    return dx, dw
