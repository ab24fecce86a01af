import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from robinv.geometry import EllitopeSpec
from robinv.quadmax import opt_bruteforce, opt_upper, tightness_factor

from conftest import random_ellitope


def test_ball_bound_is_top_eigenvalue(rng):
    C = rng.standard_normal((4, 4))
    C = C + C.T
    b = opt_upper(C, EllitopeSpec.ball(4))
    assert b.value == pytest.approx(max(np.linalg.eigvalsh(C).max(), 0.0), abs=1e-6)
    assert b.residual > -1e-7


def test_box_bound_is_exact_for_diagonal():
    C = np.diag([3.0, 1.0, 2.0])
    assert opt_upper(C, EllitopeSpec.box(3)).value == pytest.approx(6.0, abs=1e-6)


def test_tightness_factor_values():
    # 3 ln(sqrt(3) K)
    assert tightness_factor(1) == pytest.approx(1.6479184330021646)
    assert tightness_factor(10) == pytest.approx(3 * np.log(10 * np.sqrt(3.0)))


@pytest.mark.parametrize("kind", ["box", "pball", "simplex"])
def test_bound_sandwiches_true_maximum(rng, kind):
    X = random_ellitope(rng, 5, 3, kind)
    F = rng.standard_normal((5, 5))
    C = F @ F.T
    up = opt_upper(C, X)
    lo = opt_bruteforce(C, X, budget=400, seed=1)
    assert lo <= up.value * (1 + 1e-6)
    assert up.value <= up.tightness * lo * (1 + 1e-6)


@settings(max_examples=10, deadline=None)
@given(seed=st.integers(0, 10_000), c=st.floats(0.1, 10.0))
def test_bound_is_homogeneous(seed, c):
    rng = np.random.default_rng(seed)
    X = random_ellitope(rng, 3, 2, "box")
    F = rng.standard_normal((3, 3))
    C = F @ F.T
    a = opt_upper(C, X).value
    b = opt_upper(c * C, X).value
    assert b == pytest.approx(c * a, rel=1e-5, abs=1e-7)


def test_rejects_non_basic():
    X = EllitopeSpec.box(2)
    with pytest.raises(ValueError):
        opt_upper(np.eye(3), X)
