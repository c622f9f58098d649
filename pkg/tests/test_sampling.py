import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from discus.sampling import MaskParams, acs_lines, gro_mask, line_distance, vd_random_mask


def test_vd_line_count():
    m = vd_random_mask(MaskParams(n_pe=128, T=6, R=4, acs=4, seed=1)).mask
    assert np.all(m.sum(axis=1) == 32)
    assert np.all(m[:, acs_lines(128, 4)] == 1)


def test_vd_deterministic_and_frames_differ():
    p = MaskParams(n_pe=64, T=8, R=3, acs=4, seed=5)
    a, b = vd_random_mask(p).mask, vd_random_mask(p).mask
    assert np.array_equal(a, b)
    assert not np.array_equal(a[0], a[1])
    assert not np.array_equal(a, vd_random_mask(MaskParams(64, 8, 3, 4, seed=6)).mask)


def test_vd_uniform_when_power_zero():
    n_pe, T = 32, 10_000
    p = MaskParams(n_pe=n_pe, T=T, R=4, acs=2, seed=123, density_power=0.0)
    m = vd_random_mask(p).mask
    others = np.setdiff1d(np.arange(n_pe), acs_lines(n_pe, 2))
    freq = m[:, others].mean(axis=0)
    # each off-centre line is on with probability (8 - 2) / 30 per frame
    q = 6 / 30
    sigma = np.sqrt(q * (1 - q) / T)
    assert np.all(np.abs(freq - q) < 3 * sigma)


def test_vd_prefers_centre():
    m = vd_random_mask(MaskParams(n_pe=64, T=2000, R=4, acs=0, seed=3, density_power=2.0)).mask
    d = line_distance(64)
    assert m[:, d < 8].mean() > 2 * m[:, d > 24].mean()


def test_gro_counts_unique():
    m = gro_mask(MaskParams(n_pe=160, T=32, R=4, acs=4)).mask
    assert np.all(m.sum(axis=1) == 40)
    assert np.all(m[:, acs_lines(160, 4)] == 1)


def test_gro_consecutive_frames_differ():
    m = gro_mask(MaskParams(n_pe=160, T=64, R=4, acs=4)).mask
    assert all(not np.array_equal(m[t], m[t + 1]) for t in range(63))


def test_gro_coverage():
    m = gro_mask(MaskParams(n_pe=160, T=32, R=4, acs=4)).mask
    assert m.any(axis=0).mean() >= 0.9


def test_gro_ignores_seed():
    a = gro_mask(MaskParams(96, 12, 3, 4, seed=1)).mask
    b = gro_mask(MaskParams(96, 12, 3, 4, seed=99)).mask
    assert np.array_equal(a, b)


def test_infeasible_params():
    with pytest.raises(ValueError):
        MaskParams(n_pe=16, T=2, R=8, acs=4)
    with pytest.raises(ValueError):
        MaskParams(n_pe=4, T=2, R=2, acs=0)
    with pytest.raises(ValueError):
        MaskParams(n_pe=64, T=2, R=1.0)


@settings(max_examples=30, deadline=None)
@given(
    st.integers(8, 200),
    st.integers(1, 8),
    st.floats(1.2, 6.0),
    st.integers(0, 6),
    st.floats(0, 4),
    st.integers(0, 1000),
)
def test_mask_invariants_hold(n_pe, T, R, acs, power, seed):
    if round(n_pe / R) < max(acs, 1):
        return
    p = MaskParams(n_pe, T, R, acs, seed, power)
    for m in (vd_random_mask(p), gro_mask(p)):
        counts = m.mask.sum(axis=1)
        assert np.all(np.abs(counts - round(n_pe / R)) <= 1)
        assert np.all(m.mask[:, acs_lines(n_pe, acs)] == 1)
