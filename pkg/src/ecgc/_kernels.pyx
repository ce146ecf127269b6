# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot kernels: convolution unfolding (im2col / col2im), fused
per-example layer normalization, and the adaptive-threshold QRS peak picker.
Semantics match ``ecgc._pykernels``."""

import numpy as np
cimport numpy as cnp

cnp.import_array()

ctypedef fused real:
    float
    double


def im2col(real[:, :, ::1] x, int k_size, int stride, int padding):
    """Unfold x [B, C, L] into columns [C*K, B*L_out] (zero padded)."""
    cdef Py_ssize_t b_size = x.shape[0], c_in = x.shape[1], length = x.shape[2]
    cdef Py_ssize_t l_out = (length + 2 * padding - k_size) // stride + 1
    cdef Py_ssize_t n_cols = b_size * l_out
    dtype = np.float32 if real is float else np.float64
    cols_arr = np.empty((c_in * k_size, n_cols), dtype=dtype)
    cdef real[:, ::1] cols = cols_arr
    cdef Py_ssize_t b, ci, k, t, src, lo, hi, off
    cdef real* row
    with nogil:
        for ci in range(c_in):
            for k in range(k_size):
                row = &cols[ci * k_size + k, 0]
                # valid t satisfy 0 <= t*stride + k - padding < length
                lo = 0
                if padding > k:
                    lo = (padding - k + stride - 1) // stride
                hi = (length - 1 + padding - k) // stride + 1 if length - 1 + padding - k >= 0 else 0
                if hi > l_out:
                    hi = l_out
                if lo > hi:
                    lo = hi
                for b in range(b_size):
                    off = b * l_out
                    for t in range(lo):
                        row[off + t] = 0
                    src = lo * stride + k - padding
                    for t in range(lo, hi):
                        row[off + t] = x[b, ci, src]
                        src = src + stride
                    for t in range(hi, l_out):
                        row[off + t] = 0
    return cols_arr


def col2im(real[:, ::1] dcols, Py_ssize_t b_size, Py_ssize_t c_in, Py_ssize_t length,
           int k_size, int stride, int padding):
    """Adjoint of ``im2col``: scatter-add columns back to [B, C, L]."""
    cdef Py_ssize_t l_out = dcols.shape[1] // b_size
    dtype = np.float32 if real is float else np.float64
    dx_arr = np.zeros((b_size, c_in, length), dtype=dtype)
    cdef real[:, :, ::1] dx = dx_arr
    cdef Py_ssize_t b, ci, k, t, dst, off
    cdef real* row
    with nogil:
        for b in range(b_size):
            off = b * l_out
            for ci in range(c_in):
                for k in range(k_size):
                    row = &dcols[ci * k_size + k, off]
                    for t in range(l_out):
                        dst = t * stride + k - padding
                        if 0 <= dst < length:
                            dx[b, ci, dst] += row[t]
    return dx_arr


def threshold_peaks(mwi_in, int refractory, double spk, double npk):
    cdef double[::1] mwi = np.ascontiguousarray(mwi_in, dtype=np.float64)
    cdef Py_ssize_t n = mwi.shape[0]
    cdef Py_ssize_t i, j
    cdef Py_ssize_t last = -1, best_idx = -1
    cdef double best_val = 0.0, v, rr_mean
    cdef double ring[8]
    cdef int ring_pos = 0, ring_count = 0
    cdef double thr = npk + 0.25 * (spk - npk)
    out = np.empty(max(n, 1), dtype=np.int64)
    cdef long long[::1] peaks = out
    cdef Py_ssize_t n_peaks = 0
    for j in range(8):
        ring[j] = 0.0

    for i in range(1, n - 1):
        v = mwi[i]
        if v > mwi[i - 1] and v >= mwi[i + 1]:
            if last >= 0 and i - last < refractory:
                if v > mwi[last]:
                    if ring_count > 0:
                        ring[(ring_pos + 7) % 8] += i - last
                    peaks[n_peaks - 1] = i
                    last = i
            elif v > thr:
                if last >= 0:
                    ring[ring_pos] = <double>(i - last)
                    ring_pos = (ring_pos + 1) % 8
                    ring_count = min(ring_count + 1, 8)
                peaks[n_peaks] = i
                n_peaks += 1
                last = i
                spk = 0.125 * v + 0.875 * spk
                best_idx = -1
                best_val = 0.0
            else:
                npk = 0.125 * v + 0.875 * npk
                if v > best_val:
                    best_idx = i
                    best_val = v
            thr = npk + 0.25 * (spk - npk)
        if ring_count > 0 and best_idx >= 0:
            rr_mean = 0.0
            for j in range(ring_count):
                rr_mean += ring[j]
            rr_mean /= ring_count
            if i - last > 1.66 * rr_mean:
                if best_val > 0.5 * thr:
                    ring[ring_pos] = <double>(best_idx - last)
                    ring_pos = (ring_pos + 1) % 8
                    ring_count = min(ring_count + 1, 8)
                    peaks[n_peaks] = best_idx
                    n_peaks += 1
                    last = best_idx
                    spk = 0.25 * best_val + 0.75 * spk
                    thr = npk + 0.25 * (spk - npk)
                best_idx = -1
                best_val = 0.0
    return out[:n_peaks].copy()


def layer_norm_forward(real[:, :, ::1] x, real[::1] scale, real[::1] shift, double eps):
    """Per-example normalization over (C, L) with per-channel affine.

    Returns (out, xhat, inv_std[B])."""
    cdef Py_ssize_t b_size = x.shape[0], c = x.shape[1], length = x.shape[2]
    cdef Py_ssize_t b, ci, t
    cdef double n = <double>(c * length)
    cdef double s, mu, var, d, inv
    dtype = np.float32 if real is float else np.float64
    out_arr = np.empty((b_size, c, length), dtype=dtype)
    xhat_arr = np.empty((b_size, c, length), dtype=dtype)
    inv_arr = np.empty(b_size, dtype=dtype)
    cdef real[:, :, ::1] out = out_arr
    cdef real[:, :, ::1] xhat = xhat_arr
    cdef real[::1] invs = inv_arr
    cdef real sc, sh, xh
    with nogil:
        for b in range(b_size):
            s = 0.0
            for ci in range(c):
                for t in range(length):
                    s = s + x[b, ci, t]
            mu = s / n
            var = 0.0
            for ci in range(c):
                for t in range(length):
                    d = x[b, ci, t] - mu
                    var = var + d * d
            var = var / n
            inv = 1.0 / (var + eps) ** 0.5
            invs[b] = <real>inv
            for ci in range(c):
                sc = scale[ci]
                sh = shift[ci]
                for t in range(length):
                    xh = <real>((x[b, ci, t] - mu) * inv)
                    xhat[b, ci, t] = xh
                    out[b, ci, t] = xh * sc + sh
    return out_arr, xhat_arr, inv_arr


def layer_norm_backward(real[:, :, ::1] g, real[:, :, ::1] xhat, real[::1] invs, real[::1] scale):
    """Gradients (dx, dscale, dshift) of ``layer_norm_forward``."""
    cdef Py_ssize_t b_size = g.shape[0], c = g.shape[1], length = g.shape[2]
    cdef Py_ssize_t b, ci, t
    cdef double n = <double>(c * length)
    cdef double sum_g, sum_gx, gx, coef
    dtype = np.float32 if real is float else np.float64
    dx_arr = np.empty((b_size, c, length), dtype=dtype)
    dscale_d = np.zeros(c, dtype=np.float64)
    dshift_d = np.zeros(c, dtype=np.float64)
    cdef real[:, :, ::1] dx = dx_arr
    cdef double[::1] dscale = dscale_d
    cdef double[::1] dshift = dshift_d
    cdef double acc_s, acc_h
    with nogil:
        for b in range(b_size):
            sum_g = 0.0
            sum_gx = 0.0
            for ci in range(c):
                acc_s = 0.0
                acc_h = 0.0
                for t in range(length):
                    acc_h = acc_h + g[b, ci, t]
                    acc_s = acc_s + g[b, ci, t] * xhat[b, ci, t]
                dshift[ci] += acc_h
                dscale[ci] += acc_s
                sum_g = sum_g + acc_h * scale[ci]
                sum_gx = sum_gx + acc_s * scale[ci]
            coef = invs[b] / n
            for ci in range(c):
                for t in range(length):
                    gx = g[b, ci, t] * scale[ci]
                    dx[b, ci, t] = <real>(coef * (n * gx - sum_g - xhat[b, ci, t] * sum_gx))
    return dx_arr, dscale_d.astype(dtype), dshift_d.astype(dtype)
