import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from robinv.geometry import (
    BaseSet,
    EllitopeSpec,
    ErrorNorm,
    SpectratopeSpec,
    contains,
    ellitope_to_spectratope,
    gauge,
    gauge_bisect,
    support_function,
    validate,
)

from conftest import random_ellitope


def test_support_function_closed_forms():
    assert support_function(BaseSet.box(3), [1, -2, 3]) == pytest.approx(4.0)
    assert support_function(BaseSet.simplex(3), [1, -2, 3]) == pytest.approx(3.0)
    # pball p=4: ||t||_2 <= 1, support = ||y+||_2
    assert support_function(BaseSet.pball(2, 4), [3, 4]) == pytest.approx(5.0)
    assert support_function(BaseSet.box(2, scale=[2, 3]), [1, 1]) == pytest.approx(5.0)


def test_support_rejects_wrong_length():
    with pytest.raises(ValueError):
        BaseSet.box(3).support([1.0, 2.0])


def test_unit_ball_gauge_is_euclidean_norm(rng):
    X = EllitopeSpec.ball(4)
    v = rng.standard_normal(4)
    assert gauge(X, v) == pytest.approx(np.linalg.norm(v))


def test_box_gauge_is_sup_norm(rng):
    X = EllitopeSpec.box(5)
    v = rng.standard_normal(5)
    assert gauge(X, v) == pytest.approx(np.abs(v).max())


def test_ellipsoid_boundary_point_has_unit_gauge(rng):
    M = rng.standard_normal((3, 3))
    T = M @ M.T + np.eye(3)
    X = EllitopeSpec.ellipsoid(T)
    y = rng.standard_normal(3)
    x = y / np.sqrt(y @ T @ y)
    assert gauge(X, x) == pytest.approx(1.0)
    assert contains(X, x)
    assert not contains(X, 1.01 * x)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10_000), kind=st.sampled_from(["box", "pball", "simplex"]))
def test_closed_form_gauge_matches_bisection(seed, kind):
    rng = np.random.default_rng(seed)
    X = random_ellitope(rng, 4, 3, kind)
    v = rng.standard_normal(4)
    assert gauge(X, v) == pytest.approx(gauge_bisect(X, v, tol=1e-11), rel=1e-8, abs=1e-10)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10_000), c=st.floats(0.1, 10.0))
def test_gauge_is_positively_homogeneous(seed, c):
    rng = np.random.default_rng(seed)
    X = random_ellitope(rng, 3, 2, "pball")
    v = rng.standard_normal(3)
    assert gauge(X, c * v) == pytest.approx(c * gauge(X, v), rel=1e-9)


def test_spectratope_ball_gauge(rng):
    S = SpectratopeSpec.ball(3)
    v = rng.standard_normal(3)
    assert gauge(S, v) == pytest.approx(np.linalg.norm(v))


def test_rank_one_ellitope_becomes_scalar_blocks():
    X = EllitopeSpec.box(3)
    S = ellitope_to_spectratope(X)
    assert S.dims == [1, 1, 1]
    v = np.array([0.3, -2.0, 1.0])
    assert gauge(S, v) == pytest.approx(gauge(X, v))


def test_ellipsoid_to_spectratope_keeps_gauge(rng):
    M = rng.standard_normal((3, 3))
    X = EllitopeSpec.ellipsoid(M @ M.T + np.eye(3))
    S = ellitope_to_spectratope(X)
    v = rng.standard_normal(3)
    assert gauge(S, v) == pytest.approx(gauge(X, v))


def test_spectratope_adjoint_identity(rng):
    S = ellitope_to_spectratope(EllitopeSpec.ellipsoid(np.diag([1.0, 2.0, 3.0])))
    V = rng.standard_normal((4, 4))
    V = V + V.T
    G = rng.standard_normal((3, 3))
    lhs = np.trace(V @ S.calS(0, G))
    rhs = np.sum(S.calS_adjoint(0, V) * G)
    assert lhs == pytest.approx(rhs)


def test_validate_flags_problems():
    assert validate(EllitopeSpec.box(3))
    bad = EllitopeSpec(np.stack([np.diag([1.0, 0.0]), np.diag([1.0, 0.0])]), BaseSet.box(2))
    diag = validate(bad)
    assert not diag and any("singular" in p for p in diag.issues)
    S = np.zeros((2, 2, 2))
    S[0] = [[1, 0], [0, 0]]
    assert not validate(SpectratopeSpec((S,), BaseSet.box(1)))


def test_error_norm():
    nrm = ErrorNorm(np.stack([np.eye(2), np.diag([4.0, 0.0])]))
    assert nrm([1.0, 0.0]) == pytest.approx(2.0)
    assert nrm.L == 2 and nrm.nu == 2
    with pytest.raises(ValueError):
        ErrorNorm(np.diag([1.0, 0.0])[None])


def test_dict_round_trip(rng):
    X = random_ellitope(rng, 3, 2, "pball")
    Y = EllitopeSpec.from_dict(X.to_dict())
    assert np.allclose(X.T, Y.T) and Y.base.kind == "pball" and Y.base.p == X.base.p
    S = SpectratopeSpec.ball(2)
    S2 = SpectratopeSpec.from_dict(S.to_dict())
    assert np.allclose(S.blocks[0], S2.blocks[0])
