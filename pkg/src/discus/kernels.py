"""Inner-loop kernels with numba and numpy implementations.

Each kernel ``foo`` exists as ``foo_numba`` (compiled when numba is active)
and ``foo_numpy``; the public name is bound to whichever backend
:mod:`discus._accel` selected at import time. Both variants must agree to
floating-point round-off, which ``tests/test_kernels.py`` checks.
"""
import math

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from discus._accel import HAVE_NUMBA, njit

__all__ = [
    "bilinear_warp",
    "soft_threshold",
    "group_soft_threshold",
    "dwt_rows",
    "idwt_rows",
    "filter_valid",
]


# --- rigid warp --------------------------------------------------------------


def _warp_coords(h, w, angle_deg, dx, dy):
    # Inverse map: output pixel -> source coordinate. Positive angles rotate
    # counter-clockwise as displayed (row index grows downwards).
    th = math.radians(angle_deg)
    c, s = math.cos(th), math.sin(th)
    rc, cc = (h - 1) / 2.0, (w - 1) / 2.0
    return c, s, rc, cc


@njit(cache=True)
def _warp_numba_impl(img, c, s, rc, cc, dx, dy):
    h, w = img.shape
    out = np.zeros((h, w), dtype=img.dtype)
    for r in range(h):
        for q in range(w):
            u = q - cc - dx
            v = r - rc - dy
            sq = c * u - s * v + cc
            sr = s * u + c * v + rc
            r0 = math.floor(sr)
            q0 = math.floor(sq)
            fr = sr - r0
            fq = sq - q0
            acc = 0.0
            for i in range(2):
                ri = r0 + i
                if ri < 0 or ri >= h:
                    continue
                wr = fr if i == 1 else 1.0 - fr
                if wr == 0.0:
                    continue
                for j in range(2):
                    qj = q0 + j
                    if qj < 0 or qj >= w:
                        continue
                    wq = fq if j == 1 else 1.0 - fq
                    if wq == 0.0:
                        continue
                    acc += wr * wq * img[ri, qj]
            out[r, q] = acc
    return out


def bilinear_warp_numba(img, angle_deg, dx, dy):
    img = np.ascontiguousarray(img, dtype=np.float64)
    c, s, rc, cc = _warp_coords(*img.shape, angle_deg, dx, dy)
    return _warp_numba_impl(img, c, s, rc, cc, float(dx), float(dy))


def bilinear_warp_numpy(img, angle_deg, dx, dy):
    img = np.asarray(img, dtype=np.float64)
    h, w = img.shape
    c, s, rc, cc = _warp_coords(h, w, angle_deg, dx, dy)
    v, u = np.meshgrid(np.arange(h) - rc - dy, np.arange(w) - cc - dx, indexing="ij")
    sq = c * u - s * v + cc
    sr = s * u + c * v + rc
    r0 = np.floor(sr).astype(np.int64)
    q0 = np.floor(sq).astype(np.int64)
    fr = sr - r0
    fq = sq - q0
    out = np.zeros((h, w))
    for i, wr in ((0, 1.0 - fr), (1, fr)):
        for j, wq in ((0, 1.0 - fq), (1, fq)):
            ri, qj = r0 + i, q0 + j
            wt = wr * wq
            ok = (ri >= 0) & (ri < h) & (qj >= 0) & (qj < w) & (wt != 0.0)
            out[ok] += wt[ok] * img[ri[ok], qj[ok]]
    return out


# --- soft thresholding -------------------------------------------------------


@njit(cache=True)
def _soft_numba_impl(flat, tau):
    out = np.empty_like(flat)
    for i in range(flat.size):
        a = abs(flat[i])
        if a > tau:
            out[i] = flat[i] * (1.0 - tau / a)
        else:
            out[i] = 0.0
    return out


def soft_threshold_numba(v, tau):
    v = np.asarray(v)
    dt = np.complex128 if np.iscomplexobj(v) else np.float64
    flat = np.ascontiguousarray(v, dtype=dt).ravel()
    return _soft_numba_impl(flat, float(tau)).reshape(v.shape)


def soft_threshold_numpy(v, tau):
    v = np.asarray(v)
    dt = np.complex128 if np.iscomplexobj(v) else np.float64
    v = v.astype(dt, copy=False)
    mag = np.abs(v)
    scale = np.zeros(v.shape)
    big = mag > tau
    scale[big] = 1.0 - tau / mag[big]
    return v * scale


# --- group soft thresholding (columns of a T x N array) ----------------------


@njit(cache=True)
def _group_numba_impl(z, tau):
    t, n = z.shape
    out = np.zeros_like(z)
    for k in range(n):
        acc = 0.0
        for i in range(t):
            acc += z[i, k] * z[i, k]
        nrm = math.sqrt(acc)
        if nrm > tau:
            f = 1.0 - tau / nrm
            for i in range(t):
                out[i, k] = z[i, k] * f
    return out


def group_soft_threshold_numba(z, tau):
    z = np.ascontiguousarray(z, dtype=np.float64)
    return _group_numba_impl(z, float(tau))


def group_soft_threshold_numpy(z, tau):
    z = np.asarray(z, dtype=np.float64)
    nrm = np.sqrt(np.sum(z * z, axis=0))
    scale = np.zeros_like(nrm)
    keep = nrm > tau
    scale[keep] = 1.0 - tau / nrm[keep]
    return z * scale[None, :]


# --- periodic two-channel filter bank along the last axis -------------------
# a[k] = sum_n lo[n] x[(2k + n) mod N], d[k] likewise with hi.


@njit(cache=True)
def _dwt_numba_impl(x, lo, hi):
    rows, n = x.shape
    half = n // 2
    taps = lo.size
    a = np.zeros((rows, half), dtype=x.dtype)
    d = np.zeros((rows, half), dtype=x.dtype)
    for r in range(rows):
        for k in range(half):
            sa = 0.0 + 0.0j
            sd = 0.0 + 0.0j
            for m in range(taps):
                v = x[r, (2 * k + m) % n]
                sa += lo[m] * v
                sd += hi[m] * v
            a[r, k] = sa
            d[r, k] = sd
    return a, d


@njit(cache=True)
def _idwt_numba_impl(a, d, lo, hi):
    rows, half = a.shape
    n = 2 * half
    taps = lo.size
    x = np.zeros((rows, n), dtype=a.dtype)
    for r in range(rows):
        for k in range(half):
            for m in range(taps):
                j = (2 * k + m) % n
                x[r, j] += lo[m] * a[r, k] + hi[m] * d[r, k]
    return x


def dwt_rows_numba(x, lo, hi):
    x = np.ascontiguousarray(x, dtype=np.complex128)
    return _dwt_numba_impl(x, lo, hi)


def idwt_rows_numba(a, d, lo, hi):
    a = np.ascontiguousarray(a, dtype=np.complex128)
    d = np.ascontiguousarray(d, dtype=np.complex128)
    return _idwt_numba_impl(a, d, lo, hi)


def dwt_rows_numpy(x, lo, hi):
    x = np.asarray(x, dtype=np.complex128)
    n = x.shape[-1]
    idx = (2 * np.arange(n // 2)[:, None] + np.arange(lo.size)[None, :]) % n
    gathered = x[..., idx]
    return gathered @ lo, gathered @ hi


def idwt_rows_numpy(a, d, lo, hi):
    a = np.asarray(a, dtype=np.complex128)
    d = np.asarray(d, dtype=np.complex128)
    half = a.shape[-1]
    n = 2 * half
    x = np.zeros(a.shape[:-1] + (n,), dtype=np.complex128)
    k2 = 2 * np.arange(half)
    for m in range(lo.size):
        # (2k + m) mod n is injective in k, so fancy-index accumulation is safe
        x[..., (k2 + m) % n] += lo[m] * a + hi[m] * d
    return x


# --- weighted valid-mode correlation ----------------------------------------


@njit(cache=True)
def _filter_valid_numba_impl(img, win):
    h, w = img.shape
    kh, kw = win.shape
    out = np.zeros((h - kh + 1, w - kw + 1))
    for r in range(h - kh + 1):
        for q in range(w - kw + 1):
            acc = 0.0
            for i in range(kh):
                for j in range(kw):
                    acc += win[i, j] * img[r + i, q + j]
            out[r, q] = acc
    return out


def filter_valid_numba(img, win):
    return _filter_valid_numba_impl(
        np.ascontiguousarray(img, dtype=np.float64), np.ascontiguousarray(win, dtype=np.float64)
    )


def filter_valid_numpy(img, win):
    patches = sliding_window_view(np.asarray(img, dtype=np.float64), win.shape)
    return np.tensordot(patches, np.asarray(win, dtype=np.float64), axes=([2, 3], [0, 1]))


if HAVE_NUMBA:
    bilinear_warp = bilinear_warp_numba
    soft_threshold = soft_threshold_numba
    group_soft_threshold = group_soft_threshold_numba
    dwt_rows = dwt_rows_numba
    idwt_rows = idwt_rows_numba
    filter_valid = filter_valid_numba
else:
    bilinear_warp = bilinear_warp_numpy
    soft_threshold = soft_threshold_numpy
    group_soft_threshold = group_soft_threshold_numpy
    dwt_rows = dwt_rows_numpy
    idwt_rows = idwt_rows_numpy
    filter_valid = filter_valid_numpy
