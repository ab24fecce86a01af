import numpy as np
import pytest

from robinv.deconv import boundary_signals, build_deconv_model, convolution_matrix, default_kernel, signal_set_map
from robinv.geometry import gauge
from robinv.polyhedral import dct_matrix


def test_kernel_normalized_and_symmetric():
    k = default_kernel()
    assert k.sum() == pytest.approx(1.0)
    assert np.allclose(k, k[::-1])


def test_convolution_matches_numpy():
    k = np.array([1.0, 2.0, 3.0])
    x = np.arange(1.0, 7.0)
    assert np.allclose(convolution_matrix(k, 6) @ x, np.convolve(k, x)[:6])


def test_signal_set_map_inverse_square_root():
    T, P = signal_set_map(8)
    assert np.allclose(P @ T @ P, np.eye(8))


def test_model_structure():
    model, X, norm = build_deconv_model(n=10, m=10, nu=5, gamma=0.5)
    assert model.q == len(default_kernel())
    # unit perturbation of tap a equals gamma times the shifted identity
    assert np.allclose(model.Aa[0], 0.5 * np.eye(10))
    assert norm.nu == 5 and model.B.shape == (5, 10)
    eta = np.ones(model.q)
    assert np.allclose(model.matrix(eta), convolution_matrix(default_kernel() + 0.5, 10))
    with pytest.raises(ValueError):
        build_deconv_model(gamma=-1.0)


def test_boundary_signals_lie_on_boundary():
    model, X, _ = build_deconv_model(n=12, m=12, nu=6, gamma=0.1)
    xs = boundary_signals(12, 3, seed=0, model=model)
    assert xs.shape == (3, 12)
    assert np.allclose(gauge(X, xs), 1.0)
    coef = dct_matrix(12).T @ xs[0]
    assert np.allclose(coef, np.eye(12)[0])


def test_unit_impulse_without_perturbation():
    model, _, _ = build_deconv_model(n=6, m=6, nu=3, kernel=[1.0], gamma=0.0)
    assert np.allclose(model.A, np.eye(6))
    assert model.q == 1 and not np.any(model.Aa)


def test_default_kernel_has_nine_taps():
    model, _, _ = build_deconv_model(n=12, m=12, nu=4)
    assert model.q == 9
