"""Classical baselines: frame-wise wavelet-l1 CS (FISTA) and low-rank + sparse."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from discus import kernels
from discus.data_model import ImageSeries, KSpaceDataset
from discus.operator import SeriesOperator, adjoint, forward, lipschitz_estimate
from discus.wavelet import detail_mask, dwt2, idwt2


@dataclass(frozen=True)
class CSParams:
    lambda_w: float = 1e-3
    iters: int = 200
    wavelet_levels: int = 4

    def __post_init__(self):
        if self.lambda_w < 0:
            raise ValueError("lambda_w must be non-negative")
        if self.iters < 1 or self.wavelet_levels < 1:
            raise ValueError("iters and wavelet_levels must be positive")


@dataclass(frozen=True)
class LSParams:
    lambda_l: float = 1e-2
    lambda_s: float = 1e-3
    iters: int = 100

    def __post_init__(self):
        if self.lambda_l < 0 or self.lambda_s < 0:
            raise ValueError("L+S weights must be non-negative")
        if self.iters < 1:
            raise ValueError("iters must be positive")


def soft_threshold(v, tau):
    """Prox of ``tau * |.|_1``: shrink magnitudes by ``tau``, keep phase."""
    if tau < 0:
        raise ValueError("threshold must be non-negative")
    return kernels.soft_threshold(v, tau)


def svt(m, tau):
    """Singular-value thresholding, the prox of ``tau * ||.||_*``."""
    if tau < 0:
        raise ValueError("threshold must be non-negative")
    u, s, vh = np.linalg.svd(np.asarray(m), full_matrices=False)
    s = np.maximum(s - tau, 0.0)
    return (u * s) @ vh


def casorati(x):
    """T x H x W series -> (H*W) x T matrix of vectorised frames."""
    t = x.shape[0]
    return x.reshape(t, -1).T


def uncasorati(c, shape):
    return c.T.reshape(shape)


def temporal_fft(x):
    return np.fft.fft(x, axis=0, norm="ortho")


def temporal_ifft(x):
    return np.fft.ifft(x, axis=0, norm="ortho")


# --- CS ----------------------------------------------------------------------


class _WaveletL1:
    def __init__(self, shape, levels, lam):
        self.levels = levels
        self.lam = lam
        self.detail = detail_mask(shape, levels)

    def value(self, x):
        c = dwt2(x, self.levels)
        return self.lam * float(np.sum(np.abs(c[self.detail])))

    def prox(self, x, step):
        c = dwt2(x, self.levels)
        c[self.detail] = kernels.soft_threshold(c[self.detail], self.lam * step)
        return idwt2(c, self.levels)


def fista_frame(y, op, lam, iters, levels=4, x0=None, lipschitz=None):
    """min_x 0.5 ||A x - y||^2 + lam ||detail(W x)||_1 for one frame.

    FISTA with function-value restart: when an accelerated step raises the
    objective, momentum is reset and a plain proximal-gradient step is taken
    from the last iterate instead, so the returned trace never increases.
    Returns (x, objective trace of length ``iters``).
    """
    reg = _WaveletL1((op.H, op.W), levels, lam)
    L = lipschitz if lipschitz is not None else lipschitz_estimate(op, 30)
    if L <= 0:
        x = adjoint(y, op) if x0 is None else np.asarray(x0, dtype=np.complex128)
        return x, np.full(iters, _objective(x, y, op, reg))
    step = 1.0 / L

    def grad(v):
        return adjoint(forward(v, op) - y, op)

    def pg(v):
        return reg.prox(v - step * grad(v), step)

    x_prev = adjoint(y, op) if x0 is None else np.asarray(x0, dtype=np.complex128)
    f_prev = _objective(x_prev, y, op, reg)
    z = x_prev
    t = 1.0
    trace = np.empty(iters)
    for k in range(iters):
        x = pg(z)
        f = _objective(x, y, op, reg)
        if f > f_prev:
            t = 1.0
            x = pg(x_prev)
            f = _objective(x, y, op, reg)
            if f > f_prev:
                x, f = x_prev, f_prev
        t_next = (1.0 + np.sqrt(1.0 + 4.0 * t * t)) / 2.0
        z = x + ((t - 1.0) / t_next) * (x - x_prev)
        x_prev, f_prev, t = x, f, t_next
        trace[k] = f
    return x_prev, trace


def _objective(x, y, op, reg):
    r = forward(x, op) - y
    return 0.5 * float(np.vdot(r, r).real) + reg.value(x)


def cs_wavelet_recon(data, params, *, return_trace=False):
    """Frame-by-frame wavelet-l1 CS reconstruction."""
    if not isinstance(data, KSpaceDataset):
        raise TypeError("cs_wavelet_recon needs a KSpaceDataset")
    sop = SeriesOperator.from_dataset(data)
    y = np.asarray(data.samples, dtype=np.complex128)
    frames, traces = [], []
    for t in range(y.shape[0]):
        op = sop.frame(t)
        x, tr = fista_frame(y[t], op, params.lambda_w, params.iters, params.wavelet_levels)
        frames.append(x)
        traces.append(tr)
    out = ImageSeries(np.stack(frames))
    if return_trace:
        return out, np.stack(traces)
    return out


# --- L+S ---------------------------------------------------------------------


def ls_recon(data, params, *, callback=None):
    """Low-rank + sparse reconstruction with temporal-Fourier sparsity.

    Per iteration::

        L <- SVT(casorati(M - S), lambda_l * step)
        S <- iFFT_t(soft(FFT_t(M - L), lambda_s * step))
        M <- L + S - step * A^H (A (L + S) - y)

    with ``step = 1 / ||A^H A||``. Returns ``(L + S, L, S)`` as image series.
    ``callback(k, M_in, S_in, L, S, M_out)`` is invoked after each iteration.
    """
    if not isinstance(data, KSpaceDataset):
        raise TypeError("ls_recon needs a KSpaceDataset")
    t, _, h, w = data.shape
    if t < 2:
        raise ValueError("L+S needs at least two frames")
    sop = SeriesOperator.from_dataset(data)
    y = np.asarray(data.samples, dtype=np.complex128)
    lip = max(lipschitz_estimate(sop.frame(i), 30) for i in range(t))
    step = 1.0 / lip if lip > 0 else 1.0
    tau_l = params.lambda_l * step
    tau_s = params.lambda_s * step
    m = sop.adjoint(y)
    s = np.zeros_like(m)
    low = np.zeros_like(m)
    for k in range(params.iters):
        m_in, s_in = m, s
        low = uncasorati(svt(casorati(m - s), tau_l), m.shape)
        s = temporal_ifft(kernels.soft_threshold(temporal_fft(m - low), tau_s))
        ls = low + s
        m = ls - step * sop.adjoint(sop.forward(ls) - y)
        if callback is not None:
            callback(k, m_in, s_in, low, s, m)
    return ImageSeries(low + s), ImageSeries(low), ImageSeries(s)
