"""Orthogonal periodic 2D discrete wavelet transform.

Coefficients are packed in the usual pyramid layout: after ``levels`` stages
the approximation band occupies the top-left ``H / 2**levels x W / 2**levels``
block and detail bands fill the rest. Because the filter bank is orthogonal,
:func:`idwt2` is both the inverse and the adjoint of :func:`dwt2`.
"""
import numpy as np

from discus.kernels import dwt_rows, idwt_rows

# Daubechies extremal-phase filter with 4 vanishing moments (8 taps),
# Daubechies, "Ten Lectures on Wavelets" (1992), Table 6.1; values recomputed
# by minimum-phase spectral factorisation to full double precision.
DB4_LO = np.array(
    [
        0.23037781330889645,
        0.7148465705529156,
        0.630880767929859,
        -0.027983769416859594,
        -0.18703481171909306,
        0.03084138183556063,
        0.032883011666885176,
        -0.010597401785069018,
    ]
)


def qmf(lo):
    """Quadrature-mirror high-pass partner of an orthogonal low-pass filter."""
    n = np.arange(lo.size)
    return ((-1.0) ** n * lo[::-1]).copy()


FILTERS = {"db4": (DB4_LO, qmf(DB4_LO))}


def max_levels(shape):
    h, w = shape[-2:]
    lv = 0
    while h % 2 == 0 and w % 2 == 0 and h >= 2 and w >= 2:
        h //= 2
        w //= 2
        lv += 1
    return lv


def _check(shape, levels):
    if levels < 1:
        raise ValueError("need at least one decomposition level")
    if levels > max_levels(shape):
        raise ValueError(f"shape {shape[-2:]} does not support {levels} dyadic levels")


def _analyze2(x, lo, hi):
    # rows of a 2D block, then columns
    a, d = dwt_rows(x, lo, hi)
    x = np.concatenate([a, d], axis=1)
    a, d = dwt_rows(x.T, lo, hi)
    return np.concatenate([a, d], axis=1).T


def _synthesize2(c, lo, hi):
    h, w = c.shape
    ct = c.T
    x = idwt_rows(ct[:, : h // 2], ct[:, h // 2 :], lo, hi).T
    return idwt_rows(x[:, : w // 2], x[:, w // 2 :], lo, hi)


def dwt2(x, levels=4, wavelet="db4"):
    """Multi-level DWT of a 2D frame (or a stack of frames along axis 0)."""
    x = np.asarray(x, dtype=np.complex128)
    if x.ndim == 3:
        return np.stack([dwt2(f, levels, wavelet) for f in x])
    _check(x.shape, levels)
    lo, hi = FILTERS[wavelet]
    c = x.copy()
    h, w = c.shape
    for _ in range(levels):
        c[:h, :w] = _analyze2(c[:h, :w], lo, hi)
        h //= 2
        w //= 2
    return c


def idwt2(c, levels=4, wavelet="db4"):
    c = np.asarray(c, dtype=np.complex128)
    if c.ndim == 3:
        return np.stack([idwt2(f, levels, wavelet) for f in c])
    _check(c.shape, levels)
    lo, hi = FILTERS[wavelet]
    x = c.copy()
    H, W = x.shape
    for lv in reversed(range(levels)):
        h, w = H >> lv, W >> lv
        x[:h, :w] = _synthesize2(x[:h, :w], lo, hi)
    return x


def detail_mask(shape, levels):
    """True on detail coefficients, False on the coarsest approximation band."""
    h, w = shape[-2:]
    m = np.ones((h, w), dtype=bool)
    m[: h >> levels, : w >> levels] = False
    return m
