"""Per-frame Cartesian phase-encode undersampling patterns.

Line ``n_pe // 2`` is the k-space centre (matching the centred DFT in
:mod:`discus.operator`). Both generators draw lines from the density

    p(l) ∝ (1 - |l - n_pe // 2| / kappa_max) ** density_power,
    kappa_max = n_pe // 2 + 1,

with ``acs`` centre lines always acquired.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from discus.data_model import MaskSeries

GOLDEN = (np.sqrt(5.0) - 1.0) / 2.0


@dataclass(frozen=True)
class MaskParams:
    n_pe: int
    T: int
    R: float
    acs: int = 4
    seed: int = 0
    density_power: float = 1.5

    def __post_init__(self):
        if self.n_pe < 8:
            raise ValueError(f"n_pe must be at least 8, got {self.n_pe}")
        if self.T < 1:
            raise ValueError("T must be positive")
        if not self.R > 1:
            raise ValueError(f"acceleration must exceed 1, got {self.R}")
        if self.acs < 0 or self.density_power < 0:
            raise ValueError("acs and density_power must be non-negative")
        if self.lines_per_frame < max(self.acs, 1):
            raise ValueError(
                f"round(n_pe/R) = {self.lines_per_frame} cannot hold {self.acs} ACS lines"
            )

    @property
    def lines_per_frame(self):
        return int(round(self.n_pe / self.R))


def line_distance(n_pe):
    return np.abs(np.arange(n_pe) - n_pe // 2)


def acs_lines(n_pe, acs):
    start = n_pe // 2 - acs // 2
    return np.arange(start, start + acs)


def line_density(n_pe, density_power):
    kappa_max = n_pe // 2 + 1
    return (1.0 - line_distance(n_pe) / kappa_max) ** density_power


def vd_random_mask(params):
    """Seeded variable-density random mask, frames drawn independently."""
    p = params
    rng = np.random.default_rng(p.seed)
    center = acs_lines(p.n_pe, p.acs)
    others = np.setdiff1d(np.arange(p.n_pe), center)
    w = line_density(p.n_pe, p.density_power)[others]
    w = w / w.sum()
    n_rand = p.lines_per_frame - p.acs
    mask = np.zeros((p.T, p.n_pe), dtype=np.uint8)
    mask[:, center] = 1
    for t in range(p.T):
        mask[t, rng.choice(others, size=n_rand, replace=False, p=w)] = 1
    return MaskSeries(mask, p.R)


def _nearest_free(line, used, dist):
    n = used.size
    for off in range(1, n):
        cands = [c for c in (line - off, line + off) if 0 <= c < n and not used[c]]
        if cands:
            # equal offsets: prefer the line closer to the k-space centre
            return min(cands, key=lambda c: dist[c])
    raise RuntimeError("no free phase-encode line left")


def gro_mask(params):
    """Deterministic golden-ratio-offset variable-density mask.

    Frame ``t`` spreads its ``n`` non-ACS lines evenly over [0, 1) and shifts
    them by the golden-ratio fraction ``frac(t * GOLDEN)`` of one spacing:
    ``u_j = (j + frac(t * GOLDEN)) / n``. Each ``u_j`` goes through the inverse
    CDF of the line density; a line already taken moves to the nearest free
    one. ``params.seed`` is ignored.
    """
    p = params
    dist = line_distance(p.n_pe)
    cdf = np.cumsum(line_density(p.n_pe, p.density_power))
    cdf /= cdf[-1]
    n_extra = p.lines_per_frame - p.acs
    mask = np.zeros((p.T, p.n_pe), dtype=np.uint8)
    for t in range(p.T):
        used = np.zeros(p.n_pe, dtype=bool)
        used[acs_lines(p.n_pe, p.acs)] = True
        offset = (t * GOLDEN) % 1.0
        for j in range(n_extra):
            u = (j + offset) / n_extra
            line = min(int(np.searchsorted(cdf, u, side="right")), p.n_pe - 1)
            if used[line]:
                line = _nearest_free(line, used, dist)
            used[line] = True
        mask[t] = used
    return MaskSeries(mask, p.R)
