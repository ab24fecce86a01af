"""Upper bounds on the maximum of a quadratic form over an ellitope.

``opt_upper`` solves the semidefinite relaxation
``min { phi_T(lam) : lam >= 0, sum_k lam_k T_k >= C }`` which overestimates
``max_{x in X} x'Cx`` by at most the factor ``3 ln(sqrt(3) K)``.
``opt_bruteforce`` is a multistart local search giving a certified lower bound.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .conic import ConicProgram, Tolerances, require_optimal, sym
from .geometry import EllitopeSpec, gauge

__all__ = ["QuadBound", "opt_upper", "opt_bruteforce", "tightness_factor"]


def tightness_factor(K: int) -> float:
    """Worst-case ratio between the relaxation and the true maximum."""
    return 3.0 * np.log(np.sqrt(3.0) * K)


@dataclass(frozen=True)
class QuadBound:
    value: float
    lam: np.ndarray
    tightness: float
    residual: float  # min eigenvalue of sum_k lam_k T_k - C


def opt_upper(C, X: EllitopeSpec, tol: Tolerances | None = None) -> QuadBound:
    C = sym(C)
    if not X.is_basic:
        raise ValueError("opt_upper expects a basic ellitope (fold P into C first)")
    if C.shape != (X.N, X.N):
        raise ValueError(f"C must be {X.N}x{X.N}")
    prog = ConicProgram("quadmax")
    lam = prog.variable("lam", (X.K,), nonneg=True)
    prog.add_psd(X.weighted(lam) - C)
    prog.minimize(X.cvx_phi(lam))
    sol = require_optimal(prog.solve(tol), "opt_upper")
    lam_v = np.maximum(sol["lam"], 0.0)
    resid = float(np.linalg.eigvalsh(X.weighted(lam_v) - C).min())
    return QuadBound(X.phi(lam_v), lam_v, tightness_factor(X.K), resid)


def _ascent(C, X: EllitopeSpec, starts: np.ndarray, steps: int):
    """Projected ascent run on all starts at once: step along Cx, rescale onto
    the gauge boundary, keep the best boundary value seen per start."""
    step = 0.5 / max(np.abs(C).max(), 1e-12)
    x = starts.copy()
    best = np.full(len(x), -np.inf)
    best_x = np.zeros_like(x)
    for _ in range(steps):
        g = gauge(X, x)
        live = g > 0
        x[live] /= g[live, None]
        vals = np.where(live, np.einsum("ci,ij,cj->c", x, C, x), -np.inf)
        better = vals > best
        best[better] = vals[better]
        best_x[better] = x[better]
        x = x + step * (x @ C)
    return best, best_x


def opt_bruteforce(C, X: EllitopeSpec, budget: int = 1000, seed: int = 0, ascent_steps: int = 60) -> float:
    """Certified lower bound on ``max_{x in X} x'Cx`` by multistart local search.

    Starts are the eigenvectors of C, sign patterns (corners of box-like sets)
    when N is small, and random directions; all are pushed to the boundary and
    improved by projected ascent.  Only points with gauge <= 1 + 1e-9 count.
    """
    C = sym(C)
    rng = np.random.default_rng(seed)
    N = X.N
    _, V = np.linalg.eigh(C)
    starts = [V.T, -V.T]
    if N <= 8:
        starts.append(np.array(np.meshgrid(*[[-1.0, 1.0]] * N)).reshape(N, -1).T)
    starts.append(rng.standard_normal((budget, N)))
    vals, xs = _ascent(C, X, np.concatenate(starts), ascent_steps)
    ok = np.isfinite(vals) & (gauge(X, xs) <= 1.0 + 1e-9)
    return float(max(0.0, vals[ok].max())) if ok.any() else 0.0
