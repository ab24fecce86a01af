import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from robinv.geometry import EllitopeSpec, ErrorNorm
from robinv.linear import (
    UncertaintyModel,
    aggregation_repetitions,
    column_erasure_model,
    confidence_factor,
    erasure_scale,
    geometric_median,
    lmi_residuals,
    reliable_estimate,
    risk_bound_expected,
    risk_bound_linear,
    synthesize_expected,
    synthesize_linear,
)
from robinv.stochastics import monte_carlo_risk


def small_model(rng, m=5, n=4, q=2, nu=3, sigma=0.05):
    A = rng.standard_normal((m, n))
    Aa = 0.1 * rng.standard_normal((q, m, n))
    B = rng.standard_normal((nu, n))
    return UncertaintyModel(A, Aa, B, sigma)


def test_confidence_factor():
    assert confidence_factor(1, 0.05) == pytest.approx(1 + np.sqrt(2 * np.log(40)))


def test_closed_form_matches_program(rng):
    model = small_model(rng)
    M = rng.standard_normal((4, 4))
    X = EllitopeSpec.ellipsoid(M @ M.T + np.eye(4))
    norm = ErrorNorm.euclidean(3)
    H = rng.standard_normal((5, 3))
    a = risk_bound_linear(H, model, X, norm, 0.05, method="closed-form")
    b = risk_bound_linear(H, model, X, norm, 0.05, method="sdp")
    assert a.bound == pytest.approx(b.bound, rel=1e-5)
    assert a.lmi_residual >= -1e-9


def test_closed_form_requires_ellipsoid(rng):
    with pytest.raises(ValueError):
        risk_bound_linear(np.zeros((5, 3)), small_model(rng), EllitopeSpec.box(4), ErrorNorm.euclidean(3), 0.05,
                          method="closed-form")


def test_synthesis_certificate_is_valid(rng):
    model = small_model(rng)
    X = EllitopeSpec.box(4)
    norm = ErrorNorm.euclidean(3)
    H, cert = synthesize_linear(model, X, norm, 0.05)
    assert cert.lmi_residual >= -1e-6
    # re-certifying the synthesized contrast reproduces the optimum
    again = risk_bound_linear(H, model, X, norm, 0.05)
    assert again.bound == pytest.approx(cert.bound, rel=1e-4)
    assert lmi_residuals(H, model, X, norm, again.multipliers) >= -1e-6
    # and beats the zero contrast
    assert cert.bound <= risk_bound_linear(np.zeros_like(H), model, X, norm, 0.05).bound + 1e-7


def test_zero_contrast_gives_bias_only():
    A = np.eye(2)
    model = UncertaintyModel(A, np.zeros((0, 2, 2)), np.eye(2), 0.1)
    cert = risk_bound_linear(np.zeros((2, 2)), model, EllitopeSpec.ball(2), ErrorNorm.euclidean(2), 0.05)
    # ||Bx|| over the unit ball
    assert cert.bound == pytest.approx(1.0, abs=1e-7)


def test_certified_bound_covers_monte_carlo(rng):
    model = small_model(rng, sigma=0.1)
    X = EllitopeSpec.ball(4)
    norm = ErrorNorm.euclidean(3)
    H, cert = synthesize_linear(model, X, norm, 0.1)
    signals = rng.standard_normal((3, 4))
    signals /= np.linalg.norm(signals, axis=1, keepdims=True)
    res = monte_carlo_risk(lambda w: H.T @ w, lambda x, s: model.observe(x, s), signals, model.B, 300, 0.1, 0)
    assert res.worst_quantile <= cert.bound


def test_multi_component_norm(rng):
    model = small_model(rng)
    R = np.stack([np.diag([1.0, 0.0, 0.0]), np.diag([0.0, 1.0, 1.0])])
    norm = ErrorNorm(R)
    X = EllitopeSpec.ball(4)
    H, cert = synthesize_linear(model, X, norm, 0.05)
    assert cert.lmi_residual >= -1e-6
    assert "lam1" in cert.multipliers


def test_expected_bound(rng):
    model = small_model(rng)
    X = EllitopeSpec.ball(4)
    norm = ErrorNorm.euclidean(3)
    H, val = synthesize_expected(0, model, X, norm)
    assert risk_bound_expected(H, 0, model, X, norm) == pytest.approx(val, rel=1e-4)
    # root-mean-square error at a boundary signal
    x = np.eye(4)[0]
    s = np.random.default_rng(0)
    errs = [np.linalg.norm(H.T @ model.observe(x, s) - model.B @ x) for _ in range(2000)]
    assert np.sqrt(np.mean(np.square(errs))) <= val * 1.05


def test_model_validation(rng):
    with pytest.raises(ValueError):
        UncertaintyModel(np.eye(2), np.zeros((1, 2, 2)), np.eye(3), 0.1)
    with pytest.raises(ValueError):
        risk_bound_linear(np.zeros((5, 3)), small_model(rng), EllitopeSpec.ball(4), ErrorNorm.euclidean(3), 1.5)
    m = small_model(rng)
    m2 = UncertaintyModel.from_dict(m.to_dict())
    assert np.allclose(m.Aa, m2.Aa) and m2.sigma == m.sigma


def test_aggregation_repetitions():
    assert aggregation_repetitions(1, 0.05) == int(np.ceil(np.log(20) / 0.10699))


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10_000), k=st.integers(2, 9))
def test_geometric_median_is_optimal(seed, k):
    rng = np.random.default_rng(seed)
    P = rng.standard_normal((k, 3))
    z = geometric_median(P, tol=1e-12, max_iter=5000)
    f = lambda v: np.linalg.norm(P - v, axis=1).sum()
    for _ in range(10):
        assert f(z) <= f(z + 1e-3 * rng.standard_normal(3)) + 1e-8


def test_geometric_median_breakdown():
    P = np.vstack([np.zeros((6, 2)), 1e6 * np.ones((4, 2))])
    assert np.linalg.norm(geometric_median(P)) < 1e-6


def test_reliable_estimate_picks_median():
    norm = ErrorNorm.euclidean(2)
    omegas = np.vstack([np.zeros((7, 2)), 100 * np.ones((2, 2))])
    w = reliable_estimate([np.eye(2)], omegas, [1.0], norm)
    assert np.linalg.norm(w) < 1e-6


def test_erasure_calibration():
    g = 0.3
    rho = erasure_scale(g)
    assert rho**2 * g * (1 - g) == pytest.approx(1.0)
    assert erasure_scale(0.5, "subgaussian") == pytest.approx(2.0)
    with pytest.raises(ValueError):
        erasure_scale(0.0)


def test_column_erasure_model_mean_matches(rng):
    Abar = rng.standard_normal((3, 4))
    model = column_erasure_model(Abar, 0.25, sigma=0.0)
    stream = np.random.default_rng(1)
    x = rng.standard_normal(4)
    obs = model.observe(x, stream, count=20_000)
    assert np.allclose(obs.mean(axis=0), 0.75 * Abar @ x, atol=0.05)
    # each draw keeps a subset of the columns
    o = model.observe(x, stream)
    cands = [Abar @ (x * np.array(k)) for k in itertools.product([0.0, 1.0], repeat=4)]
    assert min(np.linalg.norm(o - c) for c in cands) < 1e-10
