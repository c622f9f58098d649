"""The numba and numpy variants of every kernel compute the same thing."""
import numpy as np
import pytest

from discus import kernels
from discus.wavelet import DB4_LO, qmf


@pytest.fixture
def rng():
    return np.random.default_rng(11)


@pytest.mark.parametrize("angle,dx,dy", [(0, 0, 0), (0, 2, -1), (17.5, 0.3, 1.7), (-90, 0, 0)])
def test_warp_backends_agree(rng, angle, dx, dy):
    img = rng.random((20, 24))
    a = kernels.bilinear_warp_numba(img, angle, dx, dy)
    b = kernels.bilinear_warp_numpy(img, angle, dx, dy)
    np.testing.assert_allclose(a, b, rtol=0, atol=1e-12)


def test_soft_backends_agree(rng):
    v = rng.standard_normal(200) + 1j * rng.standard_normal(200)
    np.testing.assert_allclose(
        kernels.soft_threshold_numba(v, 0.7), kernels.soft_threshold_numpy(v, 0.7), atol=1e-14
    )
    r = rng.standard_normal((5, 7))
    np.testing.assert_allclose(
        kernels.soft_threshold_numba(r, 0.3), kernels.soft_threshold_numpy(r, 0.3), atol=1e-14
    )


def test_group_backends_agree(rng):
    z = rng.standard_normal((6, 50))
    np.testing.assert_allclose(
        kernels.group_soft_threshold_numba(z, 1.5),
        kernels.group_soft_threshold_numpy(z, 1.5),
        atol=1e-14,
    )


def test_dwt_backends_agree(rng):
    x = rng.standard_normal((4, 16)) + 1j * rng.standard_normal((4, 16))
    hi = qmf(DB4_LO)
    a1, d1 = kernels.dwt_rows_numba(x, DB4_LO, hi)
    a2, d2 = kernels.dwt_rows_numpy(x, DB4_LO, hi)
    np.testing.assert_allclose(a1, a2, atol=1e-13)
    np.testing.assert_allclose(d1, d2, atol=1e-13)
    np.testing.assert_allclose(
        kernels.idwt_rows_numba(a1, d1, DB4_LO, hi), kernels.idwt_rows_numpy(a1, d1, DB4_LO, hi), atol=1e-13
    )


def test_filter_backends_agree(rng):
    img = rng.random((15, 12))
    win = rng.random((7, 7))
    np.testing.assert_allclose(
        kernels.filter_valid_numba(img, win), kernels.filter_valid_numpy(img, win), atol=1e-12
    )
