"""Reconstruction quality: NMSE in dB and SSIM on magnitude images."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from discus.data_model import ImageSeries
from discus.kernels import filter_valid

SSIM_WIN = 7
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


@dataclass(frozen=True)
class MetricReport:
    nmse_db: float
    ssim: float
    per_frame: list = field(default_factory=list)

    def as_dict(self):
        return {
            "nmse_db": _jsonable(self.nmse_db),
            "ssim": _jsonable(self.ssim),
            "per_frame": [[_jsonable(a), _jsonable(b)] for a, b in self.per_frame],
        }


def _jsonable(v):
    v = float(v)
    if np.isneginf(v):
        return "-inf"
    return v


def _frames(x):
    return np.asarray(x.frames if isinstance(x, ImageSeries) else x)


def _pair(est, ref):
    e, r = _frames(est), _frames(ref)
    if e.shape != r.shape:
        raise ValueError(f"shape mismatch: {e.shape} vs {r.shape}")
    return e.astype(np.complex128), r.astype(np.complex128)


def nmse_db(est, ref):
    """10 log10(||est - ref||^2 / ||ref||^2) over the whole series; -inf when equal."""
    e, r = _pair(est, ref)
    den = np.vdot(r, r).real
    if den == 0:
        raise ValueError("reference series is identically zero")
    num = np.vdot(e - r, e - r).real
    if num == 0:
        return float("-inf")
    return float(10.0 * np.log10(num / den))


def gaussian_window(size=SSIM_WIN, sigma=SSIM_SIGMA):
    g = np.exp(-((np.arange(size) - (size - 1) / 2) ** 2) / (2 * sigma**2))
    w = np.outer(g, g)
    return w / w.sum()


def ssim_frame(a, b, win=None, data_range=1.0):
    """Mean SSIM over all fully contained Gaussian windows of two real images."""
    win = gaussian_window() if win is None else win
    if a.shape[0] < win.shape[0] or a.shape[1] < win.shape[1]:
        raise ValueError(f"image {a.shape} smaller than the {win.shape} SSIM window")
    c1 = (SSIM_K1 * data_range) ** 2
    c2 = (SSIM_K2 * data_range) ** 2
    mu_a = filter_valid(a, win)
    mu_b = filter_valid(b, win)
    saa = filter_valid(a * a, win) - mu_a**2
    sbb = filter_valid(b * b, win) - mu_b**2
    sab = filter_valid(a * b, win) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * sab + c2)
    den = (mu_a**2 + mu_b**2 + c1) * (saa + sbb + c2)
    return float(np.mean(num / den))


def _magnitudes(est, ref):
    e, r = _pair(est, ref)
    peak = np.abs(r).max()
    if peak == 0:
        peak = 1.0
    return np.abs(e) / peak, np.abs(r) / peak


def ssim_per_frame(est, ref):
    a, b = _magnitudes(est, ref)
    return [ssim_frame(fa, fb) for fa, fb in zip(a, b)]


def ssim(est, ref):
    """Frame-averaged SSIM of magnitudes scaled by the reference series' peak."""
    return float(np.mean(ssim_per_frame(est, ref)))


def evaluate(est, ref):
    e, r = _pair(est, ref)
    per = [(nmse_db(fe[None], fr[None]), s) for fe, fr, s in zip(e, r, ssim_per_frame(e, r))]
    return MetricReport(nmse_db(e, r), ssim(e, r), per)
