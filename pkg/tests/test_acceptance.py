"""End-to-end acceptance checks, one test per criterion.

Every test records a PASS/FAIL line (shown in the pytest terminal summary)
before asserting, so a failing criterion still reports its measured numbers.
"""
import time

import numpy as np
import pytest

from conftest import random_ellitope, record_acceptance
from robinv.conic import Tolerances
from robinv.deconv import boundary_signals, build_deconv_model
from robinv.geometry import BaseSet, EllitopeSpec, ErrorNorm, gauge
from robinv.linear import (
    UncertaintyModel,
    aggregation_repetitions,
    reliable_estimate,
    risk_bound_linear,
    synthesize_expected,
    synthesize_linear,
)
from robinv.polyhedral import (
    HSetSpec,
    PolyhedralEstimator,
    ball_coordinates,
    cone_radius,
    decompose_cone_point,
    extract_contrasts,
    mom_repetitions,
    risk_bound_poly,
    synthesize_poly_ball,
)
from robinv.quadmax import opt_bruteforce, opt_upper, tightness_factor
from robinv.robust import (
    StructuredUncertainty,
    risk_bound_poly_ubb,
    robust_norm_bound,
    robust_norm_bound_spectr,
    robust_norm_oracle,
    theta,
)
from robinv.stochastics import NoiseLaw, make_stream, maxquad_bound, monte_carlo_risk, quadform_tail_bound

EPS = 0.05
SYNTH_TOL = Tolerances(gap=1e-6, feas=1e-6)


def binomial_limit(p: float, trials: int) -> float:
    return p + 3.0 * np.sqrt(p * (1.0 - p) / trials)


# ---------------------------------------------------------------------------
# 1


def test_quadmax_sandwich():
    t0 = time.perf_counter()
    rng = np.random.default_rng(101)
    worst_low, worst_ratio = np.inf, 0.0
    for i in range(50):
        N, K = int(rng.integers(2, 7)), int(rng.integers(1, 5))
        X = random_ellitope(rng, N, K, "box" if i % 2 == 0 else "pball", p=float(rng.choice([2.0, 3.0, 4.0])))
        F = rng.standard_normal((N, N))
        C = 0.5 * (F + F.T) + F @ F.T / N
        up = opt_upper(C, X).value
        lo = opt_bruteforce(C, X, budget=300, seed=i)
        worst_low = min(worst_low, up - lo)
        if lo > 0:
            worst_ratio = max(worst_ratio, up / (tightness_factor(K) * lo))
    exact = 0.0
    for i in range(10):
        N = int(rng.integers(2, 7))
        F = rng.standard_normal((N, N))
        C = F + F.T
        exact = max(exact, abs(opt_upper(C, EllitopeSpec.ball(N)).value - max(np.linalg.eigvalsh(C).max(), 0.0)))
    dt = time.perf_counter() - t0
    ok = worst_low >= -1e-6 and worst_ratio <= 1 + 1e-3 and exact <= 1e-6 and dt < 60
    record_acceptance(1, "quadmax sandwich", ok,
                      f"min(upper-lower)={worst_low:.3g}, max upper/(factor*lower)={worst_ratio:.4f}, "
                      f"K=1 error={exact:.2g}", dt)
    assert ok


# ---------------------------------------------------------------------------
# 2 and 3 share the deconvolution syntheses


@pytest.fixture(scope="module")
def deconv_linear():
    """Per gamma: model, synthesized contrast, certificate, signals, errors."""
    t0 = time.perf_counter()
    out = {}
    for gamma in (1e-3, 1e-2, 1e-1, 1.0):
        model, X, norm = build_deconv_model(n=32, m=32, nu=16, gamma=gamma, sigma=1e-4)
        # the bound is recomputed in closed form for the returned H, so the
        # synthesis tolerance only affects how close H is to optimal
        H, cert = synthesize_linear(model, X, norm, EPS, SYNTH_TOL)
        bound = risk_bound_linear(H, model, X, norm, EPS).bound
        xs = boundary_signals(32, 3, seed=0, model=model)
        r = monte_carlo_risk(lambda w, H=H: H.T @ w, lambda x, s, m=model: m.observe(x, s), xs, model.B, 500, EPS,
                             seed=7)
        out[gamma] = {"model": model, "X": X, "norm": norm, "H": H, "bound": bound, "signals": xs, "mc": r}
    out["seconds"] = time.perf_counter() - t0
    return out


@pytest.mark.slow
def test_linear_coverage_deconvolution(deconv_linear):
    parts, ok = [], True
    for gamma in (1e-3, 1e-2, 1e-1, 1.0):
        d = deconv_linear[gamma]
        q, b = d["mc"].worst_quantile, d["bound"]
        ok &= q <= b
        parts.append(f"gamma={gamma:g}: q95={q:.4g} <= {b:.4g}")
    dt = deconv_linear["seconds"]
    ok &= dt < 600
    record_acceptance(2, "linear coverage", ok, "; ".join(parts), dt)
    assert ok


@pytest.mark.slow
def test_robust_beats_nominal(deconv_linear):
    t0 = time.perf_counter()
    d = deconv_linear[1.0]
    model, X, norm = d["model"], d["X"], d["norm"]
    Hn, _ = synthesize_linear(model.nominal(), X, norm, EPS)
    r = monte_carlo_risk(lambda w: Hn.T @ w, lambda x, s: model.observe(x, s), d["signals"], model.B, 500, EPS, seed=7)
    robust_med, nominal_med = float(np.median(d["mc"].errors)), float(np.median(r.errors))
    ok = robust_med <= nominal_med
    record_acceptance(3, "robust beats nominal", ok,
                      f"median error robust={robust_med:.4g}, nominal={nominal_med:.4g} at gamma=1",
                      time.perf_counter() - t0)
    assert ok


# ---------------------------------------------------------------------------
# 4


def test_aggregation_guarantee():
    t0 = time.perf_counter()
    rng = np.random.default_rng(404)
    m, n, q, nu = 8, 6, 3, 4
    heavy = NoiseLaw("student-t", dof=3.0)
    model = UncertaintyModel(rng.standard_normal((m, n)), 0.15 * rng.standard_normal((q, m, n)),
                             rng.standard_normal((nu, n)), 0.2, heavy, heavy)
    X = EllitopeSpec.box(n)
    norm = ErrorNorm(np.stack([np.diag([1.0, 1.0, 0.0, 0.0]), np.diag([0.0, 0.0, 1.0, 1.0])]))
    Hs, bounds = zip(*[synthesize_expected(l, model, X, norm) for l in range(norm.L)])
    K = aggregation_repetitions(norm.L, EPS)
    signals = np.sign(rng.standard_normal((4, n)))
    stream = make_stream(9)
    trials, fails = 400, 0
    limit = 8.0 * max(bounds)
    for t in range(trials):
        x = signals[t % len(signals)]
        w = reliable_estimate(Hs, model.observe(x, stream, count=K), bounds, norm, EPS)
        fails += norm(w - model.B @ x) > limit
    freq = fails / trials
    ok = freq <= binomial_limit(EPS, trials)
    record_acceptance(4, "aggregation guarantee", ok,
                      f"K={K}, failure frequency {freq:.4f} <= {binomial_limit(EPS, trials):.4f}",
                      time.perf_counter() - t0)
    assert ok


# ---------------------------------------------------------------------------
# 5


def test_decomposition_audit():
    t0 = time.perf_counter()
    rng = np.random.default_rng(505)
    worst_res, worst_weight, worst_gauge, rounds = 0.0, 0.0, 0.0, 0
    runs = 200
    for i in range(runs):
        m, n, q = int(rng.integers(3, 17)), int(rng.integers(2, 7)), int(rng.integers(1, 4))
        model = UncertaintyModel(rng.standard_normal((m, n)), 0.1 * rng.standard_normal((q, m, n)), np.eye(n), 0.1)
        S = HSetSpec.from_model(model, EllitopeSpec.ball(n), 0.05).spectratope()
        F = rng.standard_normal((m, int(rng.integers(1, m + 1))))
        Sigma = F @ F.T
        rho = float(S.base.gauge(cone_radius(Sigma, S))) * (1.0 + rng.random())
        dec = decompose_cone_point(Sigma, rho, S, seed=i)
        worst_res = max(worst_res, np.abs(dec.reconstruct() - Sigma).max() / np.abs(Sigma).max())
        worst_weight = max(worst_weight, dec.weight / (dec.kappa * rho))
        worst_gauge = max(worst_gauge, float(np.max(gauge(S, dec.g.T))))
        rounds += dec.rounds
    rate = runs / rounds
    ok = worst_res <= 1e-8 and worst_weight <= 1 + 1e-12 and worst_gauge <= 1 + 1e-8 and rate >= 0.4
    record_acceptance(5, "decomposition audit", ok,
                      f"residual {worst_res:.2g}, weight/(kappa rho) {worst_weight:.6f}, max gauge "
                      f"{worst_gauge:.10f}, success rate {rate:.3f}", time.perf_counter() - t0)
    assert ok


# ---------------------------------------------------------------------------
# 6


def test_polyhedral_end_to_end():
    t0 = time.perf_counter()
    model, X, norm = build_deconv_model(n=32, m=32, nu=16, gamma=0.01, sigma=1e-4)
    my, P = ball_coordinates(model, X)
    syn = synthesize_poly_ball(my, norm, EPS)
    H = extract_contrasts(syn.Theta, syn.varrho, syn.hspec, trials=20, seed=0)
    ball = EllitopeSpec.ball(my.n)
    bound = risk_bound_poly(H, my, ball, norm, EPS, hspec=syn.hspec).value
    est = PolyhedralEstimator(H, model.A, X, model.B)
    xs = boundary_signals(32, 3, seed=0, model=model)
    r = monte_carlo_risk(est, lambda x, s: model.observe(x, s), xs, model.B, 200, EPS, seed=11)
    ok = bound <= syn.bound * (1 + 1e-9) and r.worst_quantile <= bound
    record_acceptance(6, "polyhedral end-to-end", ok,
                      f"risk bound {bound:.4g} <= 2 sqrt(kappa) Opt = {syn.bound:.4g}; "
                      f"q95={r.worst_quantile:.4g}", time.perf_counter() - t0)
    assert ok


# ---------------------------------------------------------------------------
# 7


def test_robust_norm_tightness():
    t0 = time.perf_counter()
    cases = []
    for k in (2, 3, 5):
        I = np.eye(k)
        cases.append(("general", StructuredUncertainty(np.zeros((0, k, k)), ((I, I),))))
        cases.append(("scalar", StructuredUncertainty(I[None])))
        cases.append(("diagonal", StructuredUncertainty(np.stack([np.outer(e, e) for e in I]))))
    in_range = True
    for name, u in cases:
        k = u.n
        b = robust_norm_bound(u, EllitopeSpec.ball(k), EllitopeSpec.ball(k))
        hi = max(theta(2 * u.kappa), np.pi / 2) * (1 + 1e-3)
        in_range &= 1 - 1e-6 <= b.value <= hi
    rng = np.random.default_rng(707)
    dominated, worst = True, 0.0
    for i in range(30):
        m, n = int(rng.integers(2, 5)), int(rng.integers(2, 5))
        gen = tuple((rng.standard_normal((2, m)), rng.standard_normal((2, n))) for _ in range(int(rng.integers(0, 2))))
        u = StructuredUncertainty(rng.standard_normal((int(rng.integers(1, 3)), m, n)), gen)
        X = EllitopeSpec.box(n) if i % 2 else EllitopeSpec.ball(n)
        b = robust_norm_bound(u, X, EllitopeSpec.ball(m)).value
        lo = robust_norm_oracle(u, X, EllitopeSpec.ball(m), budget=10, seed=i)
        dominated &= lo <= b * (1 + 1e-6)
        worst = max(worst, lo / b)
    ok = in_range and dominated
    record_acceptance(7, "robust norm tightness", ok,
                      f"{len(cases)} unit-norm instances in range: {in_range}; max oracle/bound {worst:.4f}",
                      time.perf_counter() - t0)
    assert ok


# ---------------------------------------------------------------------------
# 8


def test_median_of_means():
    t0 = time.perf_counter()
    model, X, norm = build_deconv_model(n=16, m=16, nu=8, gamma=0.02, sigma=0.01, noise="student-t",
                                        perturbation="student-t")
    my, P = ball_coordinates(model, X)
    ball = EllitopeSpec.ball(my.n)
    hspec = HSetSpec.moment(my, ball)
    syn = synthesize_poly_ball(my, norm, EPS, noise_chi=hspec.noise_chi, unc_chi=hspec.unc_chi)
    H = extract_contrasts(syn.Theta, syn.varrho, hspec, trials=20, seed=0)
    bound = risk_bound_poly(H, my, ball, norm, EPS, hspec=hspec).value
    K = mom_repetitions(H.M, EPS)
    est = PolyhedralEstimator(H, model.A, X, model.B)
    xs = boundary_signals(16, 3, seed=0, model=model)
    stream = make_stream(13)
    trials, fails = 400, 0
    for t in range(trials):
        x = xs[t % len(xs)]
        w = est.recover_mom(model.observe(x, stream, count=K), EPS)[1]
        fails += norm(w - model.B @ x) > bound
    freq = fails / trials
    ok = freq <= binomial_limit(EPS, trials)
    record_acceptance(8, "median of means", ok,
                      f"K={K}, bound {bound:.4g}, failure frequency {freq:.4f} <= {binomial_limit(EPS, trials):.4f}",
                      time.perf_counter() - t0)
    assert ok


# ---------------------------------------------------------------------------
# 9


def test_concentration_utilities():
    t0 = time.perf_counter()
    rng = np.random.default_rng(909)
    draws = 10_000
    worst, ok = [], True
    for eps in (0.05, 0.1):
        limit = binomial_limit(eps, draws)
        for d in (1, 4, 10):
            F = rng.standard_normal((d, d))
            Q = F @ F.T
            z = rng.standard_normal((draws, d))
            f1 = np.mean(np.einsum("ci,ij,cj->c", z, Q, z) > quadform_tail_bound(Q, eps))
            W = np.stack([(lambda G: G @ G.T)(rng.standard_normal((d, d))) for _ in range(3)])
            G = rng.standard_normal((d, d))
            V = G @ G.T
            u = rng.standard_normal((draws, d)) @ np.linalg.cholesky(V + 1e-12 * np.eye(d)).T
            f2 = np.mean(np.einsum("ci,lij,cj->cl", u, W, u).max(axis=1) > maxquad_bound(W, V, eps))
            ok &= f1 <= limit and f2 <= limit
            worst.append(max(f1, f2) - eps)
    record_acceptance(9, "concentration utilities", ok, f"max exceedance minus eps {max(worst):+.4f}",
                      time.perf_counter() - t0)
    assert ok


# ---------------------------------------------------------------------------
# 10


def test_reduction_consistency():
    t0 = time.perf_counter()
    rng = np.random.default_rng(1010)
    worst = 0.0
    for i in range(20):
        if i % 2 == 0:
            m, n = int(rng.integers(2, 5)), int(rng.integers(2, 5))
            u = StructuredUncertainty(rng.standard_normal((2, m, n)),
                                      ((rng.standard_normal((2, m)), rng.standard_normal((2, n))),))
            X = EllitopeSpec(np.stack([np.diag(r) for r in np.eye(n)]) * rng.uniform(0.5, 2.0, (n, 1, 1)),
                             BaseSet.box(n))
            a = robust_norm_bound(u, X, EllitopeSpec.box(m)).value
            b = robust_norm_bound_spectr(u, X, EllitopeSpec.box(m)).value
        else:
            m, n = int(rng.integers(3, 6)), int(rng.integers(2, 5))
            model = UncertaintyModel(rng.standard_normal((m, n)), 0.05 * rng.standard_normal((2, m, n)), np.eye(n),
                                     0.01)
            H = 0.3 * rng.standard_normal((m, m))
            X = EllitopeSpec.box(n)
            norm = ErrorNorm.euclidean(n)
            a = risk_bound_poly(H, model, X, norm, EPS, admissibility="skip").value
            b = risk_bound_poly_ubb(H, model, EllitopeSpec.box(2), X, norm, EPS, admissibility="skip").value
        worst = max(worst, abs(a - b) / max(1.0, abs(a)))
    ok = worst <= 1e-6
    record_acceptance(10, "reduction consistency", ok, f"max relative difference {worst:.2g}",
                      time.perf_counter() - t0)
    assert ok
