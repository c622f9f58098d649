"""Dynamic Shepp-Logan series and synthetic coil sensitivities."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from discus.data_model import ImageSeries, SensMaps
from discus.kernels import bilinear_warp

# Shepp & Logan, IEEE Trans. Nucl. Sci. 21 (1974), with the contrast-enhanced
# intensities of Toft, "The Radon Transform" (1996), which keep the image in
# [0, 1]. Columns: intensity, semi-axis a, semi-axis b, x0, y0, tilt (deg).
# Coordinates live on [-1, 1]^2 with y pointing up.
SHEPP_LOGAN_ELLIPSES = np.array(
    [
        [1.00, 0.6900, 0.9200, 0.00, 0.0000, 0.0],
        [-0.80, 0.6624, 0.8740, 0.00, -0.0184, 0.0],
        [-0.20, 0.1100, 0.3100, 0.22, 0.0000, -18.0],
        [-0.20, 0.1600, 0.4100, -0.22, 0.0000, 18.0],
        [0.10, 0.2100, 0.2500, 0.00, 0.3500, 0.0],
        [0.10, 0.0460, 0.0460, 0.00, 0.1000, 0.0],
        [0.10, 0.0460, 0.0460, 0.00, -0.1000, 0.0],
        [0.10, 0.0460, 0.0230, -0.08, -0.6050, 0.0],
        [0.10, 0.0230, 0.0230, 0.00, -0.6060, 0.0],
        [0.10, 0.0230, 0.0460, 0.06, -0.6050, 0.0],
    ]
)


@dataclass(frozen=True)
class MotionSpec:
    """Uniform per-frame motion ranges: rotation in degrees, horizontal shift in pixels."""

    rotation_deg_max: float = 0.0
    shift_px_max: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.rotation_deg_max < 0 or self.shift_px_max < 0:
            raise ValueError("motion ranges must be non-negative")


def _grid(size):
    c = (np.arange(size) - (size - 1) / 2) / ((size - 1) / 2)
    x, y = np.meshgrid(c, -c)
    return x, y


def ellipse_sum(x, y, table=SHEPP_LOGAN_ELLIPSES):
    """Evaluate the summed ellipse intensities at coordinates (x, y)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    out = np.zeros(np.broadcast(x, y).shape)
    for rho, a, b, x0, y0, tilt in table:
        phi = np.deg2rad(tilt)
        xr = (x - x0) * np.cos(phi) + (y - y0) * np.sin(phi)
        yr = -(x - x0) * np.sin(phi) + (y - y0) * np.cos(phi)
        out = out + rho * ((xr / a) ** 2 + (yr / b) ** 2 <= 1.0)
    return out


def shepp_logan(size):
    """Real-valued ``size x size`` Shepp-Logan image as a one-frame series."""
    if size < 16:
        raise ValueError(f"phantom size must be at least 16, got {size}")
    x, y = _grid(size)
    img = np.clip(ellipse_sum(x, y), 0.0, 1.0)
    return ImageSeries(img[None].astype(np.complex128))


def apply_rigid(image, angle_deg, dx, dy):
    """Rotate about the image centre, then translate by (dx, dy) pixels.

    Bilinear interpolation with zero fill outside the field of view. ``dx``
    moves content towards larger column indices, ``dy`` towards larger rows.
    Complex frames are warped part by part.
    """
    if not all(np.isfinite([angle_deg, dx, dy])):
        raise ValueError("rigid transform parameters must be finite")
    image = np.asarray(image)
    if image.ndim != 2:
        raise ValueError(f"expected a single 2D frame, got shape {image.shape}")
    if np.iscomplexobj(image):
        re = bilinear_warp(image.real, angle_deg, dx, dy)
        if not np.any(image.imag):
            return re.astype(np.complex128)
        return re + 1j * bilinear_warp(image.imag, angle_deg, dx, dy)
    return bilinear_warp(image, angle_deg, dx, dy)


def draw_motion(t, spec):
    """Per-frame (angle_deg, dx, dy) drawn from the series' PRNG stream.

    One ``numpy.random.default_rng(seed)`` stream supplies a T x 2 block of
    U(-1, 1) draws in row order; column 0 scales to the rotation range and
    column 1 to the horizontal shift range. Vertical shift is always 0.
    """
    u = np.random.default_rng(spec.seed).uniform(-1.0, 1.0, size=(t, 2))
    params = np.zeros((t, 3))
    params[:, 0] = u[:, 0] * spec.rotation_deg_max
    params[:, 1] = u[:, 1] * spec.shift_px_max
    return params


def make_motion_series(base, t, spec):
    """T frames of ``base``, each independently moved relative to it."""
    if t < 1:
        raise ValueError("T must be positive")
    base = np.asarray(base.frames[0] if isinstance(base, ImageSeries) else base)
    frames = [apply_rigid(base, a, dx, dy) for a, dx, dy in draw_motion(t, spec)]
    return ImageSeries(np.stack(frames).astype(np.complex128))


def coil_anchors(n_coils, h, w, radius_frac=0.4):
    """(row, col) of the coil centres, equally spaced on a circle about the FOV centre."""
    ang = 2 * np.pi * np.arange(n_coils) / n_coils
    rc, cc = (h - 1) / 2, (w - 1) / 2
    rad = radius_frac * min(h, w)
    return np.stack([rc - rad * np.sin(ang), cc + rad * np.cos(ang)], axis=1), ang


def synth_coil_maps(n_coils, h, w, width_frac=0.25):
    """Smooth synthetic receive sensitivities with unit sum-of-squares.

    Each coil has an exponentially decaying magnitude lobe centred on its
    anchor and a linear phase ramp along its anchor direction (coil 0 has no
    phase). Exponential lobes are used because the pixelwise normalisation
    preserves their peak at the anchor.
    """
    if n_coils < 1:
        raise ValueError("need at least one coil")
    anchors, ang = coil_anchors(n_coils, h, w)
    rr, qq = np.meshgrid(np.arange(h, dtype=float), np.arange(w, dtype=float), indexing="ij")
    scale = width_frac * min(h, w)
    u = (qq - (w - 1) / 2) / max(h, w)
    v = ((h - 1) / 2 - rr) / max(h, w)
    # log-magnitudes, shifted per pixel before exponentiating to avoid underflow
    logmag = np.stack([-np.hypot(rr - ar, qq - aq) / scale for ar, aq in anchors])
    logmag -= logmag.max(axis=0, keepdims=True)
    mag = np.exp(logmag)
    mag /= np.sqrt(np.sum(mag**2, axis=0, keepdims=True))
    slope = np.pi * np.arange(n_coils) / n_coils
    phase = slope[:, None, None] * (np.cos(ang)[:, None, None] * u + np.sin(ang)[:, None, None] * v)
    return SensMaps(mag * np.exp(1j * phase))
