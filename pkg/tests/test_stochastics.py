import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from robinv.stochastics import (
    AGGREGATION_RATE,
    NoiseLaw,
    make_stream,
    maxquad_bound,
    monte_carlo_risk,
    psi,
    quadform_tail_bound,
    sample,
    split_streams,
    write_error_csv,
)


def test_aggregation_rate_frozen():
    assert AGGREGATION_RATE == pytest.approx(0.10699, abs=5e-5)


def test_psi_edges():
    assert psi(0.25, 0.25) == pytest.approx(0.0)
    assert psi(1.0, 0.5) == pytest.approx(np.log(2.0))
    with pytest.raises(ValueError):
        psi(0.5, 1.0)


@pytest.mark.parametrize("d", [1, 4, 9])
def test_quadform_identity_at_inverse_e(d):
    # Q = I, ln(1/eps) = 1 gives d + 2 sqrt(d) + 2
    assert quadform_tail_bound(np.eye(d), np.exp(-1.0)) == pytest.approx(d + 2 * np.sqrt(d) + 2)


def test_quadform_bound_holds_empirically():
    rng = np.random.default_rng(3)
    Q = np.diag([4.0, 1.0, 0.5, 0.0])
    lev = quadform_tail_bound(Q, 0.05)
    z = rng.standard_normal((200_000, 4))
    assert np.mean(np.einsum("ci,ij,cj->c", z, Q, z) > lev) <= 0.05


def test_quadform_rejects_indefinite():
    with pytest.raises(ValueError):
        quadform_tail_bound(np.diag([1.0, -1.0]), 0.1)


def test_maxquad_bound_holds_empirically():
    rng = np.random.default_rng(4)
    W = np.stack([np.diag([1.0, 0.0, 0.0]), np.diag([0.0, 2.0, 1.0])])
    V = np.diag([1.0, 0.5, 2.0])
    lev = maxquad_bound(W, V, 0.05)
    u = rng.multivariate_normal(np.zeros(3), V, size=100_000)
    vals = np.einsum("ci,lij,cj->cl", u, W, u).max(axis=1)
    assert np.mean(vals > lev) <= 0.05


@pytest.mark.parametrize("kind", ["gaussian", "rademacher", "student-t"])
def test_laws_have_unit_variance(kind):
    z = sample(NoiseLaw(kind, dof=5.0), 2, 200_000, make_stream(0))
    assert np.allclose(z.mean(axis=0), 0.0, atol=0.02)
    assert np.allclose(z.var(axis=0), 1.0, atol=0.05)


def test_column_erasure_law():
    law = NoiseLaw("column-erasure", gamma=0.2, rho=2.0)
    z = sample(law, 1, 200_000, make_stream(1)).ravel()
    assert set(np.round(np.unique(z), 12)) == {round(2.0 * (0.2 - 1), 12), round(2.0 * 0.2, 12)}
    assert z.mean() == pytest.approx(0.0, abs=0.01)
    assert law.sub_gaussian


def test_law_validation():
    with pytest.raises(ValueError):
        NoiseLaw("cauchy")
    with pytest.raises(ValueError):
        NoiseLaw("student-t", dof=2.0)
    with pytest.raises(ValueError):
        NoiseLaw("column-erasure", gamma=1.0)
    assert NoiseLaw.from_dict(NoiseLaw("rademacher", 0.3).to_dict()) == NoiseLaw("rademacher", 0.3)


def test_streams_reproducible_and_independent():
    a = make_stream(7).standard_normal(5)
    b = make_stream(7).standard_normal(5)
    assert np.array_equal(a, b)
    s1, s2 = split_streams(7, 2)
    assert not np.allclose(s1.standard_normal(5), s2.standard_normal(5))


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 2**31), n_sig=st.integers(1, 3))
def test_monte_carlo_reproducible(seed, n_sig):
    B = np.eye(2)
    signals = np.ones((n_sig, 2))

    def observe(x, stream):
        return x + stream.standard_normal(2)

    r1 = monte_carlo_risk(lambda w: w, observe, signals, B, 20, 0.1, seed)
    r2 = monte_carlo_risk(lambda w: w, observe, signals, B, 20, 0.1, seed)
    assert np.array_equal(r1.errors, r2.errors)
    assert r1.quantiles.shape == (n_sig,)
    assert np.all(r1.quantiles <= r1.errors.max(axis=1))


def test_monte_carlo_quantile_matches_chi():
    # error of the identity estimate is ||xi||, xi ~ N(0, I_3)
    r = monte_carlo_risk(lambda w: w, lambda x, s: x + s.standard_normal(3), np.zeros((1, 3)), np.eye(3),
                         20_000, 0.05, 0)
    assert r.worst_quantile == pytest.approx(np.sqrt(7.8147), rel=0.03)  # chi2_3 0.95 quantile
    assert r.failure_rate(r.worst_quantile) <= 0.05


def test_error_csv(tmp_path):
    p = write_error_csv(tmp_path / "sub" / "e.csv", np.array([[1.0, 2.0]]))
    lines = p.read_text().splitlines()
    assert lines[0] == "signal,draw,error" and len(lines) == 3
