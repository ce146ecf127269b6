"""Pure numpy implementations of the hot kernels.

Used when the compiled ``ecgc._kernels`` extension is unavailable or when
``ECGC_KERNELS=python`` is set. Every function here has the same signature
and semantics as its compiled twin; ``tests/test_kernels.py`` checks that
the two agree.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import as_strided


def im2col(x, kernel_size, stride, padding):
    """Unfold x [B, C, L] into columns [C*K, B*L_out] (zero padded)."""
    b, c, length = x.shape
    if padding:
        x = np.pad(x, ((0, 0), (0, 0), (padding, padding)))
    x = np.ascontiguousarray(x)
    l_out = (length + 2 * padding - kernel_size) // stride + 1
    s0, s1, s2 = x.strides
    view = as_strided(x, (c, kernel_size, b, l_out), (s1, s2, s0, s2 * stride), writeable=False)
    return view.reshape(c * kernel_size, b * l_out)


def col2im(dcols, b, c_in, length, kernel_size, stride, padding):
    """Adjoint of ``im2col``: scatter-add columns back to [B, C, L]."""
    l_out = dcols.shape[1] // b
    d = dcols.reshape(c_in, kernel_size, b, l_out)
    dxp = np.zeros((b, c_in, length + 2 * padding), dtype=dcols.dtype)
    span = stride * (l_out - 1) + 1
    for j in range(kernel_size):
        dxp[:, :, j : j + span : stride] += d[:, j].transpose(1, 0, 2)
    return np.ascontiguousarray(dxp[:, :, padding : padding + length])


def threshold_peaks(mwi, refractory, spk, npk):
    """Adaptive dual-threshold peak picking on an integrated QRS-energy trace.

    Local maxima above ``npk + 0.25 (spk - npk)`` are beats; rejected maxima
    update the noise level. If no beat is found for 1.66 mean RR intervals,
    the tallest rejected maximum since the last beat is accepted when it
    clears half the threshold. Returns beat sample indices in order.
    """
    mwi = np.asarray(mwi, dtype=np.float64)
    n = mwi.shape[0]
    peaks: list[int] = []
    last = -1
    ring = [0.0] * 8
    ring_pos = 0
    ring_count = 0
    best_idx = -1
    best_val = 0.0
    thr = npk + 0.25 * (spk - npk)

    for i in range(1, n - 1):
        v = float(mwi[i])
        if v > mwi[i - 1] and v >= mwi[i + 1]:
            if last >= 0 and i - last < refractory:
                if v > mwi[last]:
                    if ring_count > 0:
                        ring[(ring_pos + 7) % 8] += i - last
                    peaks[-1] = i
                    last = i
            elif v > thr:
                if last >= 0:
                    ring[ring_pos] = float(i - last)
                    ring_pos = (ring_pos + 1) % 8
                    ring_count = min(ring_count + 1, 8)
                peaks.append(i)
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
                    ring[ring_pos] = float(best_idx - last)
                    ring_pos = (ring_pos + 1) % 8
                    ring_count = min(ring_count + 1, 8)
                    peaks.append(best_idx)
                    last = best_idx
                    spk = 0.25 * best_val + 0.75 * spk
                    thr = npk + 0.25 * (spk - npk)
                best_idx = -1
                best_val = 0.0
    return np.asarray(peaks, dtype=np.int64)


def layer_norm_forward(x, scale, shift, eps):
    """Per-example normalization over (C, L) with per-channel affine.

    Returns (out, xhat, inv_std[B])."""
    dtype = x.dtype
    mu = x.mean(axis=(1, 2), dtype=np.float64, keepdims=True)
    centered = x - mu
    var = (centered * centered).mean(axis=(1, 2), keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (centered * inv).astype(dtype)
    out = xhat * scale[None, :, None] + shift[None, :, None]
    return out.astype(dtype, copy=False), xhat, inv.reshape(-1).astype(dtype)


def layer_norm_backward(g, xhat, invs, scale):
    """Gradients (dx, dscale, dshift) of ``layer_norm_forward``."""
    dtype = g.dtype
    n = g.shape[1] * g.shape[2]
    per_ch_h = g.sum(axis=2, dtype=np.float64)
    per_ch_s = (g * xhat).sum(axis=2, dtype=np.float64)
    dshift = per_ch_h.sum(axis=0)
    dscale = per_ch_s.sum(axis=0)
    sum_g = (per_ch_h * scale).sum(axis=1)[:, None, None]
    sum_gx = (per_ch_s * scale).sum(axis=1)[:, None, None]
    coef = (invs.astype(np.float64) / n)[:, None, None]
    gx = g * scale[None, :, None]
    dx = coef * (n * gx - sum_g - xhat * sum_gx)
    return dx.astype(dtype), dscale.astype(dtype), dshift.astype(dtype)
