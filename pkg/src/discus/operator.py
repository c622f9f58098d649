"""Cartesian multicoil forward model: coil weighting, centred orthonormal DFT, line mask."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from discus.data_model import KSpaceDataset, MaskSeries, SensMaps


def fft2c(x):
    """Centred orthonormal 2D DFT over the last two axes."""
    ax = (-2, -1)
    return np.fft.fftshift(np.fft.fft2(np.fft.ifftshift(x, axes=ax), norm="ortho"), axes=ax)


def ifft2c(k):
    ax = (-2, -1)
    return np.fft.fftshift(np.fft.ifft2(np.fft.ifftshift(k, axes=ax), norm="ortho"), axes=ax)


@dataclass(frozen=True, eq=False)
class FrameOperator:
    """A_t for one frame: ``y_c = M_t * F(S_c * x)``."""

    sens: SensMaps
    mask_t: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.mask_t).astype(bool)
        if m.ndim != 1 or m.size != self.sens.maps.shape[1]:
            raise ValueError(
                f"mask line count {m.shape} does not match coil map rows {self.sens.maps.shape[1]}"
            )
        m.setflags(write=False)
        object.__setattr__(self, "mask_t", m)

    @property
    def C(self):
        return self.sens.maps.shape[0]

    @property
    def H(self):
        return self.sens.maps.shape[1]

    @property
    def W(self):
        return self.sens.maps.shape[2]

    @property
    def kmask(self):
        return self.mask_t[:, None]


def forward(x, op):
    x = np.asarray(x)
    if x.shape != (op.H, op.W):
        raise ValueError(f"frame shape {x.shape} does not match operator {(op.H, op.W)}")
    return np.where(op.kmask, fft2c(op.sens.maps * x), 0)


def adjoint(y, op):
    y = np.asarray(y)
    if y.shape != (op.C, op.H, op.W):
        raise ValueError(f"k-space shape {y.shape} does not match operator {(op.C, op.H, op.W)}")
    return np.sum(np.conj(op.sens.maps) * ifft2c(np.where(op.kmask, y, 0)), axis=0)


def lipschitz_estimate(op, iters=30, seed=0):
    """Power-method estimate of ||A^H A||_2."""
    if iters < 10:
        raise ValueError("use at least 10 power iterations")
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((op.H, op.W)) + 1j * rng.standard_normal((op.H, op.W))
    x /= np.linalg.norm(x)
    lam = 0.0
    for _ in range(iters):
        v = adjoint(forward(x, op), op)
        lam = float(np.real(np.vdot(x, v)))
        nrm = np.linalg.norm(v)
        if nrm == 0:
            return 0.0
        x = v / nrm
    return lam


class SeriesOperator:
    """All T frame operators of a dataset, applied in one vectorised call."""

    def __init__(self, sens, mask):
        self.sens = sens
        self.mask = mask
        self._s = sens.maps
        self._km = mask.mask.astype(bool)[:, None, :, None]

    @classmethod
    def from_dataset(cls, data):
        return cls(data.sens, data.mask)

    @property
    def shape(self):
        t = self.mask.frame_count
        c, h, w = self._s.shape
        return t, c, h, w

    def frame(self, t):
        return FrameOperator(self.sens, self.mask.mask[t])

    def forward(self, x):
        """T x H x W images -> T x C x H x W k-space."""
        return np.where(self._km, fft2c(self._s[None] * x[:, None]), 0)

    def adjoint(self, y):
        return np.sum(np.conj(self._s)[None] * ifft2c(np.where(self._km, y, 0)), axis=1)

    def normal(self, x):
        return self.adjoint(self.forward(x))


def simulate_kspace(series, mask, sens, seed=None):
    """Noise-free k-space of an image series under ``mask`` and ``sens``."""
    y = SeriesOperator(sens, mask).forward(series.frames.astype(np.complex128))
    return KSpaceDataset(y, mask, sens, snr_db=None, seed=seed)


def add_noise(data, snr_db, seed):
    """Complex white Gaussian noise on the acquired entries at the requested SNR.

    The SNR is referenced to the mean power of the acquired samples. Passing
    ``snr_db=None`` (no noise) returns ``data`` untouched.
    """
    if snr_db is None or np.isposinf(snr_db):
        return data
    y = np.array(data.samples, dtype=np.complex128)
    on = np.broadcast_to(data.mask.kspace_mask(y.shape[-1])[:, None], y.shape)
    p_sig = np.mean(np.abs(y[on]) ** 2)
    sigma2 = p_sig * 10.0 ** (-snr_db / 10.0)
    rng = np.random.default_rng(seed)
    n = on.sum()
    noise = np.sqrt(sigma2 / 2.0) * (rng.standard_normal(n) + 1j * rng.standard_normal(n))
    y[on] += noise
    return KSpaceDataset(y, data.mask, data.sens, snr_db=snr_db, seed=seed)


def full_mask(t, n_pe):
    return MaskSeries(np.ones((t, n_pe), dtype=np.uint8), 1.0)
