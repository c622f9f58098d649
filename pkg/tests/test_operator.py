import numpy as np
import pytest

from discus.data_model import KSpaceDataset, MaskSeries, SensMaps
from discus.operator import (
    FrameOperator,
    SeriesOperator,
    add_noise,
    adjoint,
    fft2c,
    forward,
    full_mask,
    lipschitz_estimate,
)
from discus.phantom import synth_coil_maps
from discus.sampling import MaskParams, gro_mask, vd_random_mask


def crandn(rng, shape):
    return rng.standard_normal(shape) + 1j * rng.standard_normal(shape)


def dense_matrix(op):
    """Assemble A_t column by column from its action on unit vectors (oracle)."""
    n = op.H * op.W
    cols = []
    for i in range(n):
        e = np.zeros(n, dtype=complex)
        e[i] = 1.0
        cols.append(forward(e.reshape(op.H, op.W), op).ravel())
    return np.stack(cols, axis=1)


def dft_matrix(n):
    # centred orthonormal DFT matrix built independently of numpy.fft
    k = np.arange(n) - n // 2
    return np.exp(-2j * np.pi * np.outer(k, k) / n) / np.sqrt(n)


@pytest.fixture
def rng():
    return np.random.default_rng(2024)


@pytest.fixture
def op_unit():
    return FrameOperator(SensMaps.unit(16, 16), np.ones(16))


@pytest.fixture
def op_gro8():
    mask = gro_mask(MaskParams(n_pe=32, T=2, R=4, acs=4)).mask[1]
    return FrameOperator(synth_coil_maps(8, 32, 32), mask)


def test_impulse_flat_spectrum(op_unit):
    x = np.zeros((16, 16), dtype=complex)
    x[8, 8] = 1
    y = forward(x, op_unit)
    np.testing.assert_allclose(np.abs(y), 1 / 16, atol=1e-15)


def test_zero_in_zero_out(op_gro8):
    assert not np.any(forward(np.zeros((32, 32)), op_gro8))
    assert not np.any(adjoint(np.zeros((8, 32, 32)), op_gro8))


def test_centred_dft_matches_explicit_matrix(rng):
    x = crandn(rng, (8, 8))
    f = dft_matrix(8)
    np.testing.assert_allclose(fft2c(x), f @ x @ f.T, atol=1e-12)


def test_forward_matches_dense_operator(rng):
    h = w = 8
    sens = synth_coil_maps(2, h, w)
    mask = np.array([1, 0, 1, 1, 1, 0, 0, 1])
    op = FrameOperator(sens, mask)
    # independent assembly: diag(mask) kron(F, F) diag(S_c) per coil
    f = dft_matrix(8)
    fk = np.kron(f, f)
    m = np.kron(np.diag(mask), np.eye(w))
    a = np.concatenate([m @ fk @ np.diag(sens.maps[c].ravel()) for c in range(2)], axis=0)
    assert a.shape == (128, 64)
    x = crandn(rng, (h, w))
    y = forward(x, op).ravel()
    assert np.linalg.norm(y - a @ x.ravel()) / np.linalg.norm(y) < 1e-10
    np.testing.assert_allclose(dense_matrix(op), a, atol=1e-12)


def test_unitary_full_mask(rng, op_unit):
    x = crandn(rng, (16, 16))
    back = adjoint(forward(x, op_unit), op_unit)
    assert np.linalg.norm(back - x) / np.linalg.norm(x) < 1e-6
    assert np.linalg.norm(forward(x, op_unit)) == pytest.approx(np.linalg.norm(x), rel=1e-12)


@pytest.mark.parametrize("which", ["op_unit", "op_gro8"])
def test_adjoint_dot_product(rng, request, which):
    op = request.getfixturevalue(which)
    for _ in range(20):
        x = crandn(rng, (op.H, op.W))
        y = crandn(rng, (op.C, op.H, op.W))
        lhs = np.vdot(forward(x, op), y)
        rhs = np.vdot(x, adjoint(y, op))
        assert abs(lhs - rhs) / abs(lhs) < 1e-6


def test_linearity(rng, op_gro8):
    x1, x2 = crandn(rng, (32, 32)), crandn(rng, (32, 32))
    a, b = 0.3 - 2j, 1.7
    lhs = forward(a * x1 + b * x2, op_gro8)
    rhs = a * forward(x1, op_gro8) + b * forward(x2, op_gro8)
    np.testing.assert_allclose(lhs, rhs, atol=1e-12)


def test_shape_errors(op_unit):
    with pytest.raises(ValueError):
        forward(np.zeros((8, 8)), op_unit)
    with pytest.raises(ValueError):
        adjoint(np.zeros((2, 16, 16)), op_unit)
    with pytest.raises(ValueError):
        FrameOperator(SensMaps.unit(16, 16), np.ones(8))


def test_lipschitz_unit(op_unit):
    assert lipschitz_estimate(op_unit, 20) == pytest.approx(1.0, abs=1e-6)


def test_lipschitz_bound_and_dense_oracle():
    op = FrameOperator(synth_coil_maps(3, 8, 8), np.array([1, 0, 0, 1, 1, 0, 1, 0]))
    a = dense_matrix(op)
    top = np.linalg.eigvalsh(a.conj().T @ a).max()
    # eigenvalue gap is ~0.5%, so the power method needs many steps here
    est = lipschitz_estimate(op, 1000)
    assert abs(est - top) / top < 1e-6
    assert 0 < est <= 1 + 1e-6
    for seed in range(5):
        m = vd_random_mask(MaskParams(32, 1, 3, 4, seed=seed)).mask[0]
        e = lipschitz_estimate(FrameOperator(synth_coil_maps(4, 32, 32), m), 30)
        assert 0 < e <= 1 + 1e-6
    with pytest.raises(ValueError):
        lipschitz_estimate(op, 5)


def test_series_operator_matches_frames(rng):
    mask = vd_random_mask(MaskParams(16, 4, 2, 2, seed=0))
    sens = synth_coil_maps(3, 16, 16)
    sop = SeriesOperator(sens, mask)
    x = crandn(rng, (4, 16, 16))
    y = sop.forward(x)
    for t in range(4):
        np.testing.assert_allclose(y[t], forward(x[t], sop.frame(t)), atol=1e-13)
        np.testing.assert_allclose(sop.adjoint(y)[t], adjoint(y[t], sop.frame(t)), atol=1e-13)


def _noisy_fixture(rng, t=4, c=2, h=64, w=64):
    mask = vd_random_mask(MaskParams(h, t, 2, 4, seed=1))
    sens = synth_coil_maps(c, h, w)
    x = crandn(rng, (t, h, w))
    y = SeriesOperator(sens, mask).forward(x)
    return KSpaceDataset(y, mask, sens)


def test_add_noise_none_is_identity(rng):
    d = _noisy_fixture(rng)
    assert add_noise(d, None, 0) is d


def test_add_noise_snr_and_mask(rng):
    # 64 frames x 4 coils x 32 lines x 128 readout ~ 1.05e6 sampled entries
    t, c, h, w = 64, 4, 64, 128
    mask = vd_random_mask(MaskParams(h, t, 2, 4, seed=2))
    sens = synth_coil_maps(c, h, w)
    y = SeriesOperator(sens, mask).forward(crandn(rng, (t, h, w)))
    d = KSpaceDataset(y, mask, sens)
    on = np.broadcast_to(mask.kspace_mask(w)[:, None], y.shape)
    assert on.sum() >= 1_000_000
    noisy = add_noise(d, 25.0, seed=5)
    noise = noisy.samples - d.samples
    snr = 10 * np.log10(np.mean(np.abs(d.samples[on]) ** 2) / np.mean(np.abs(noise[on]) ** 2))
    assert abs(snr - 25.0) < 0.1
    assert not np.any(noisy.samples[~on])
    assert noisy.snr_db == 25.0 and noisy.seed == 5


def test_full_mask_helper():
    m = full_mask(3, 16)
    assert isinstance(m, MaskSeries) and m.mask.sum() == 48
