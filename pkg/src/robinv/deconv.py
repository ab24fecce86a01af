"""Deconvolution test problem with an uncertain kernel.

The nominal operator is causal convolution with a length-q kernel restricted
to the horizon {1..n}; each kernel tap is perturbed independently, so the
perturbation matrices are the shifted identities scaled by gamma.  Signals
live in the ellipsoid ``{x : sum_i i^2 [D x]_i^2 <= 1}`` with D the inverse
DCT matrix, i.e. the coefficients ``D x`` decay like 1/i.
"""
from __future__ import annotations

import numpy as np
import scipy.linalg

from .geometry import BaseSet, EllitopeSpec, ErrorNorm
from .linear import UncertaintyModel
from .polyhedral import dct_matrix
from .stochastics import NoiseLaw, make_stream

__all__ = ["default_kernel", "convolution_matrix", "build_deconv_model", "signal_set_map", "boundary_signals"]


def default_kernel(length: int = 9, width: float = 2.0) -> np.ndarray:
    """Truncated Gaussian bump normalized to unit sum."""
    t = np.arange(length) - (length - 1) / 2.0
    k = np.exp(-0.5 * (t / width) ** 2)
    return k / k.sum()


def convolution_matrix(kernel, n: int, m: int | None = None) -> np.ndarray:
    """``(Ax)_t = sum_s kernel_s x_{t-s}`` for t = 1..m, zero outside the horizon."""
    m = n if m is None else m
    kernel = np.asarray(kernel, dtype=float)
    col = np.zeros(m)
    col[: min(len(kernel), m)] = kernel[:m]
    row = np.zeros(n)
    row[0] = kernel[0]
    return scipy.linalg.toeplitz(col, row)


def signal_set_map(n: int) -> tuple[np.ndarray, np.ndarray]:
    """``(T, P)`` with ``T = D' diag(i^2) D`` and ``P = T^{-1/2}`` (x = P y, ||y|| <= 1)."""
    D = dct_matrix(n).T  # inverse of the orthonormal DCT
    w = np.arange(1, n + 1, dtype=float)
    T = D.T @ np.diag(w**2) @ D
    P = D.T @ np.diag(1.0 / w) @ D
    return 0.5 * (T + T.T), 0.5 * (P + P.T)


def build_deconv_model(n: int = 32, m: int = 32, nu: int = 16, kernel=None, gamma: float = 0.01,
                       sigma: float = 1e-4, noise: str = "gaussian", perturbation: str = "gaussian",
                       dof: float = 3.0):
    """Return ``(model, X, norm)`` for the deconvolution experiment.

    ``A_a`` places tap a of the kernel with weight gamma, so a unit-parameter
    perturbation vector reproduces kernel noise of standard deviation gamma.
    """
    kernel = default_kernel() if kernel is None else np.asarray(kernel, dtype=float)
    q = len(kernel)
    if gamma < 0:
        raise ValueError("gamma must be nonnegative")
    A = convolution_matrix(kernel, n, m)
    Aa = np.stack([gamma * convolution_matrix(np.eye(q)[a], n, m) for a in range(q)])
    B = np.eye(nu, n)
    model = UncertaintyModel(A, Aa, B, sigma, NoiseLaw(noise, dof=dof), NoiseLaw(perturbation, dof=dof))
    T, _ = signal_set_map(n)
    X = EllitopeSpec(T[None], BaseSet.box(1))
    return model, X, ErrorNorm.euclidean(nu)


def boundary_signals(n: int, count: int = 3, seed: int = 0, model: UncertaintyModel | None = None) -> np.ndarray:
    """Signals on the boundary of the deconvolution ellipsoid.

    The first puts all coefficient mass on the first basis function
    (``D x = e_1``); when a model is given the second is the boundary signal
    that maximizes ||Bx||; the rest are random.
    """
    _, P = signal_set_map(n)
    D = dct_matrix(n).T
    rng = make_stream(seed)
    # P D'e_1 = D'e_1 because the first weight is 1
    ys = [D.T[:, 0]]
    if model is not None and count > 1:
        _, _, Vt = np.linalg.svd(model.B @ P)
        ys.append(Vt[0])
    while len(ys) < count:
        y = rng.standard_normal(n)
        ys.append(y / np.linalg.norm(y))
    return np.stack([P @ y for y in ys[:count]])
