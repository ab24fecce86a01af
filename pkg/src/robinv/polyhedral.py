"""Polyhedral estimates ``x_hat in Argmin_{u in X} ||H'(Au - omega)||_inf``.

Covers the risk bound of a given contrast matrix, the ball-case synthesis via a
cone compatible with the admissible-column spectratope, randomized extraction
of contrasts from the synthesis solution, recovery, and the median-of-means
variant for heavy-tailed noise.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import cvxpy as cp
import numpy as np
import scipy.fft

from .conic import ConicProgram, SolverError, Tolerances, build_lmi_block, require_optimal, solve
from .geometry import BaseSet, EllitopeSpec, ErrorNorm, SpectratopeSpec, gauge, psd_sqrt
from .linear import UncertaintyModel
from .stochastics import make_stream

__all__ = [
    "chi",
    "dct_matrix",
    "HSetSpec",
    "ContrastMatrix",
    "InadmissibleContrast",
    "PolyBound",
    "hset_opt",
    "hset_member",
    "risk_bound_poly",
    "p_oracle",
    "spectratope_cone_member",
    "cone_radius",
    "Decomposition",
    "decompose_cone_point",
    "compatibility_factor",
    "PolySynthesis",
    "synthesize_poly_ball",
    "extract_contrasts",
    "lift_relaxed_solution",
    "PolyhedralEstimator",
    "recover_poly",
    "mom_recover_poly",
    "mom_repetitions",
    "lower_median",
    "ball_coordinates",
]


def chi(delta: float) -> float:
    """``2 sqrt(2 ln(2/delta))``: a unit sub-Gaussian variable exceeds ``1/2``
    after division by chi with probability at most ``delta/2``."""
    if not 0 < delta < 1:
        raise ValueError("delta must lie in (0, 1)")
    return 2.0 * np.sqrt(2.0 * np.log(2.0 / delta))


def dct_matrix(m: int) -> np.ndarray:
    """Orthonormal DCT-II matrix (rows are the cosine basis vectors)."""
    return scipy.fft.dct(np.eye(m), type=2, norm="ortho", axis=0)


def compatibility_factor(D: int, N: int) -> float:
    """Bound on the weight inflation of the randomized decomposition."""
    return 4.0 * np.log(4.0 * D * N)


def mom_repetitions(M: int, eps: float) -> int:
    return int(np.ceil(2.5 * np.log(M / eps)))


def lower_median(values, axis: int = 0) -> np.ndarray:
    """Order statistic ceil(K/2) (1-based) along ``axis``."""
    v = np.sort(np.asarray(values, dtype=float), axis=axis)
    K = v.shape[axis]
    return np.take(v, (K + 1) // 2 - 1, axis=axis)


# ---------------------------------------------------------------------------
# admissible columns


@dataclass(frozen=True)
class HSetSpec:
    """Set of admissible contrast columns.

    ``h`` is admissible when ``sigma * noise_chi * ||h||_2 <= 1`` and
    ``unc_chi * Opt[h] <= 1``, where ``Opt[h]`` bounds the norm of
    ``x -> [h'A_1 x; ...; h'A_q x]`` from the signal-set norm to the Euclidean
    norm.  By default both scales equal ``chi(delta)``.
    """

    sigma: float
    delta: float
    Aa: np.ndarray
    X: EllitopeSpec
    noise_chi: float | None = None
    unc_chi: float | None = None
    tol: Tolerances | None = field(default=None, compare=False)
    _ellipsoid_map: np.ndarray | None = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        c = chi(self.delta)
        if self.noise_chi is None:
            object.__setattr__(self, "noise_chi", c)
        if self.unc_chi is None:
            object.__setattr__(self, "unc_chi", c)
        Aa = np.asarray(self.Aa, dtype=float)
        if Aa.ndim == 2:
            Aa = Aa[None]
        object.__setattr__(self, "Aa", Aa)
        if not self.X.is_basic:
            raise ValueError("admissible-column set needs a basic signal set")
        if Aa.size and Aa.shape[2] != self.X.N:
            raise ValueError("perturbation matrices do not act on the signal space")
        if self.X.K == 1:
            # X = {x' T x <= s}: ||M x||_2 over X equals sqrt(s) ||M T^{-1/2}||_2
            w, V = np.linalg.eigh(self.X.T[0])
            Tinv_half = (V / np.sqrt(w)) @ V.T
            object.__setattr__(self, "_ellipsoid_map", np.sqrt(self.X.base.scale[0]) * Tinv_half)

    @classmethod
    def from_model(cls, model: UncertaintyModel, X: EllitopeSpec, delta: float, **kw) -> "HSetSpec":
        model = model.folded(X.P)
        Xb = X if X.P is None else EllitopeSpec(X.T, X.base)
        return cls(model.sigma, delta, model.Aa, Xb, **kw)

    @classmethod
    def moment(cls, model: UncertaintyModel, X: EllitopeSpec) -> "HSetSpec":
        """Columns for the median-of-means estimate: both scales equal 8."""
        return cls.from_model(model, X, 0.5, noise_chi=8.0, unc_chi=8.0)

    @property
    def m(self) -> int:
        return self.Aa.shape[1] if self.Aa.size else -1

    @property
    def q(self) -> int:
        return self.Aa.shape[0] if self.Aa.size else 0

    @property
    def is_ellipsoid(self) -> bool:
        return self._ellipsoid_map is not None

    def calA(self, h) -> np.ndarray:
        """``[h'A_1; ...; h'A_q]`` (q x n); stacked over rows of a matrix of columns."""
        return np.einsum("...i,aij->...aj", np.asarray(h, dtype=float), self.Aa)

    def opt(self, h) -> float:
        if self.q == 0:
            return 0.0
        Ah = self.calA(h)
        if self.is_ellipsoid:
            return float(np.linalg.norm(Ah @ self._ellipsoid_map, 2))
        return _opt_sdp(Ah, self.X, self.tol)

    def gauge(self, h) -> np.ndarray | float:
        """Minkowski function; vectorized over rows when the signal set is an ellipsoid."""
        h = np.asarray(h, dtype=float)
        noise = self.sigma * self.noise_chi * np.linalg.norm(h, axis=-1)
        if self.q == 0:
            return noise
        if h.ndim == 1:
            return max(float(noise), self.unc_chi * self.opt(h))
        if self.is_ellipsoid:
            unc = np.linalg.norm(self.calA(h) @ self._ellipsoid_map, ord=2, axis=(1, 2))
        else:
            unc = np.array([self.opt(row) for row in h])
        return np.maximum(noise, self.unc_chi * unc)

    def member(self, h, tol: float = 1e-9) -> bool:
        return bool(np.all(self.gauge(h) <= 1.0 + tol))

    def spectratope(self) -> SpectratopeSpec:
        """Two-block spectratope description (signal set must be an ellipsoid).

        Block 1 (size m+1) is the arrow matrix of ``sigma*noise_chi*h``; block 2
        (size q+n) is the arrow matrix of ``unc_chi * A[h] T^{-1/2}``.
        """
        if not self.is_ellipsoid:
            raise ValueError("the spectratope description needs an ellipsoidal signal set")
        m, q = self.m, self.q
        n = self.X.N
        S1 = np.zeros((m, m + 1, m + 1))
        for j in range(m):
            S1[j, j, m] = S1[j, m, j] = self.sigma * self.noise_chi
        blocks = [S1]
        if q:
            # A[e_j] T^{-1/2}: row a is row j of A_a T^{-1/2}
            Mj = np.einsum("aij,jk->iak", self.Aa, self._ellipsoid_map) * self.unc_chi  # (m, q, n)
            S2 = np.zeros((m, q + n, q + n))
            S2[:, :q, q:] = Mj
            S2[:, q:, :q] = np.transpose(Mj, (0, 2, 1))
            blocks.append(S2)
        return SpectratopeSpec(tuple(blocks), BaseSet.box(len(blocks)))

    def to_dict(self) -> dict:
        return {"sigma": self.sigma, "delta": self.delta, "noise_chi": self.noise_chi, "unc_chi": self.unc_chi}


def _opt_sdp(Ah: np.ndarray, X: EllitopeSpec, tol=None) -> float:
    prog = ConicProgram("hset-opt")
    lam = prog.variable("lam", nonneg=True)
    mu = prog.variable("mu", (X.K,), nonneg=True)
    prog.add_lmi([[lam * np.eye(Ah.shape[0]), 0.5 * Ah], [None, X.weighted(mu)]])
    prog.minimize(lam + X.cvx_phi(mu))
    return float(require_optimal(prog.solve(tol), "hset_opt").objective)


def hset_opt(h, spec: HSetSpec) -> float:
    """Upper bound on ``max_{x in X} ||A[h] x||_2`` (exact for ellipsoids)."""
    if spec.q == 0:
        return 0.0
    return _opt_sdp(spec.calA(h), spec.X, spec.tol)


def hset_member(h, spec: HSetSpec, tol: float = 1e-9) -> bool:
    return spec.member(h, tol)


# ---------------------------------------------------------------------------
# contrast matrices and the risk bound


@dataclass
class ContrastMatrix:
    """Blocks ``H_l`` (m x M), one per error-norm component."""

    blocks: list
    delta: float | None = None
    seed: int | None = None
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        if isinstance(self.blocks, np.ndarray) and self.blocks.ndim == 2:
            self.blocks = [self.blocks]
        self.blocks = [np.atleast_2d(np.asarray(b, dtype=float)) for b in self.blocks]

    @property
    def L(self) -> int:
        return len(self.blocks)

    @property
    def M(self) -> int:
        return max(b.shape[1] for b in self.blocks)

    @property
    def matrix(self) -> np.ndarray:
        return np.concatenate(self.blocks, axis=1)

    def to_dict(self) -> dict:
        return {"blocks": [b.tolist() for b in self.blocks], "delta": self.delta, "seed": self.seed,
                "info": self.info}

    @classmethod
    def from_dict(cls, d: dict) -> "ContrastMatrix":
        return cls([np.asarray(b, dtype=float) for b in d["blocks"]], d.get("delta"), d.get("seed"),
                   d.get("info", {}))


class InadmissibleContrast(ValueError):
    def __init__(self, columns: list, gauges: np.ndarray):
        super().__init__(f"{len(columns)} contrast column(s) violate the admissibility test "
                         f"(worst gauge {np.max(gauges):.6g}); refusing to certify")
        self.columns = columns
        self.gauges = gauges


@dataclass
class PolyBound:
    value: float
    multipliers: dict
    delta: float | None
    column_gauges: np.ndarray | None
    stats: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "bound": float(self.value),
            "delta": self.delta,
            "max_column_gauge": None if self.column_gauges is None else float(np.max(self.column_gauges, initial=0)),
            "multipliers": {k: np.asarray(v).tolist() for k, v in self.multipliers.items()},
            "solver": self.stats,
        }


def _as_contrast(H) -> ContrastMatrix:
    return H if isinstance(H, ContrastMatrix) else ContrastMatrix(H)


def check_columns(H: ContrastMatrix, hspec: HSetSpec, tol: float = 1e-8) -> np.ndarray:
    """Gauges of all columns; raises :class:`InadmissibleContrast` on violation."""
    cols = H.matrix.T
    g = np.atleast_1d(hspec.gauge(cols)) if len(cols) else np.zeros(0)
    bad = [int(j) for j in np.flatnonzero(g > 1.0 + tol)]
    if bad:
        raise InadmissibleContrast(bad, g)
    return g


def _outer_stack(V: np.ndarray):
    """Rows v_j -> flattened v_j v_j' (count x n*n)."""
    return np.einsum("ji,jk->jik", V, V).reshape(V.shape[0], -1)


def risk_bound_poly(H, model: UncertaintyModel, X: EllitopeSpec, norm: ErrorNorm, eps: float,
                    hspec: HSetSpec | None = None, admissibility: str = "check",
                    tol: Tolerances | None = None) -> PolyBound:
    """Bound on the eps-risk of the polyhedral estimate with contrast ``H``.

    ``admissibility="check"`` verifies every column against ``hspec`` (built
    from the model with ``delta = eps / (M L)`` when not given) and raises
    :class:`InadmissibleContrast` otherwise; ``"skip"`` evaluates only the
    deterministic part (the bound on the quantity maximized by :func:`p_oracle`).
    """
    if not 0 < eps < 1:
        raise ValueError("eps must lie in (0, 1)")
    H = _as_contrast(H)
    if H.L != norm.L:
        raise ValueError(f"contrast has {H.L} blocks but the error norm has {norm.L} components")
    delta = eps / (H.M * H.L)
    gauges = None
    if admissibility == "check":
        hspec = HSetSpec.from_model(model, X, delta) if hspec is None else hspec
        gauges = check_columns(H, hspec)
    elif admissibility != "skip":
        raise ValueError("admissibility must be 'check' or 'skip'")
    fm = model.folded(X.P)
    n = X.N
    prog = ConicProgram("poly-risk")
    rho = prog.variable("rho", nonneg=True)
    for l, Hl in enumerate(H.blocks):
        lam = prog.variable(f"lam{l}", nonneg=True)
        mu = prog.variable(f"mu{l}", (X.K,), nonneg=True)
        ups = prog.variable(f"upsilon{l}", (Hl.shape[1],), nonneg=True)
        C = _outer_stack((fm.A.T @ Hl).T)
        quad = cp.reshape(ups @ C, (n, n), order="C") + X.weighted(mu)
        prog.add_lmi([[lam * np.eye(model.nu), 0.5 * norm.sqrt[l] @ fm.B], [None, quad]])
        prog.add(lam + X.cvx_phi(mu) + cp.sum(ups) <= rho)
    prog.minimize(2 * rho)
    sol = require_optimal(prog.solve(tol), "risk_bound_poly")
    return PolyBound(float(sol.objective), dict(sol.values), delta, gauges, sol.stats())


def p_oracle(H, model: UncertaintyModel, X: EllitopeSpec, norm: ErrorNorm | None = None,
             budget: int = 16, iters: int = 12, seed: int = 0) -> float:
    """Certified lower bound on ``sup {||By|| : y in 2X, ||H'Ay||_inf <= 2}``.

    Alternating maximization: for a direction u, maximize ``u' R_l^{1/2} B y``
    over the feasible set (a conic solve), then realign u with the maximizer.
    Maximizers are rescaled into the feasible set before being scored.
    """
    H = _as_contrast(H)
    fm = model.folded(X.P)
    norm = ErrorNorm.euclidean(fm.nu) if norm is None else norm
    if not np.any(fm.B):
        return 0.0
    Xb = X if X.P is None else EllitopeSpec(X.T, X.base)
    G = H.matrix.T @ fm.A
    y = cp.Variable(X.N)
    c = cp.Parameter(fm.nu)  # holds R_l^{1/2} u
    cons = Xb.cvx_members(y, radius=2.0)
    if G.size:
        cons.append(cp.abs(G @ y) <= 2)
    prob = cp.Problem(cp.Maximize(c @ (fm.B @ y)), cons)
    rng = make_stream(seed)

    def score(yv):
        g = gauge(Xb, yv) / 2.0
        c = np.abs(G @ yv).max() / 2.0 if G.size else 0.0
        s = max(g, c, 1.0)
        yv = yv / s
        return float(norm(fm.B @ yv))

    best = 0.0
    for start in range(budget):
        l = start % norm.L
        d = rng.standard_normal(fm.nu)
        prev = -np.inf
        for _ in range(iters):
            c.value = norm.sqrt[l] @ (d / np.linalg.norm(d))
            sol = solve(prob)
            if not sol.ok or y.value is None:
                break
            yv = np.asarray(y.value, dtype=float)
            best = max(best, score(yv))
            img = norm.sqrt[l] @ fm.B @ yv
            val = np.linalg.norm(img)
            if val <= prev * (1 + 1e-9) or val == 0:
                break
            prev, d = val, img
    return best


# ---------------------------------------------------------------------------
# the compatible cone of a spectratope and its randomized decomposition


def cone_radius(Sigma, H: SpectratopeSpec) -> np.ndarray:
    """Smallest certificate levels ``lambda_max(S_i[Sigma])`` per block."""
    Sigma = np.asarray(Sigma, dtype=float)
    return np.array([max(np.linalg.eigvalsh(H.calS(i, Sigma)).max(), 0.0) for i in range(H.I)])


def spectratope_cone_member(Sigma, rho: float, H: SpectratopeSpec, tol: float = 1e-9):
    """Is ``(Sigma, rho)`` in the cone ``{exists r in R: S_i[Sigma] <= rho r_i I}``?

    The maps S_i are monotone in Sigma and R is monotone, so it suffices to
    test the smallest candidate ``r_i = lambda_max(S_i[Sigma]) / rho``.
    Returns ``(member, r)``.
    """
    Sigma = 0.5 * (np.asarray(Sigma, dtype=float) + np.asarray(Sigma, dtype=float).T)
    scale = max(1.0, np.abs(Sigma).max())
    if np.linalg.eigvalsh(Sigma).min() < -tol * scale:
        return False, None
    levels = cone_radius(Sigma, H)
    if rho <= 0:
        ok = bool(np.all(levels <= tol * scale))
        return ok, (np.zeros(H.I) if ok else None)
    r = levels / rho
    return bool(H.base.gauge(r) <= 1.0 + tol), r


@dataclass
class Decomposition:
    """``Sigma = sum_j lam_j g_j g_j'`` with columns ``g`` (N x J)."""

    g: np.ndarray
    lam: np.ndarray
    rounds: int
    kappa: float

    @property
    def weight(self) -> float:
        return float(self.lam.sum())

    def reconstruct(self) -> np.ndarray:
        return (self.g * self.lam) @ self.g.T


def _spectratope_gauges(H: SpectratopeSpec, cols: np.ndarray) -> np.ndarray:
    return np.atleast_1d(gauge(H, cols)) if len(cols) else np.zeros(0)


def decompose_cone_point(Sigma, rho: float, H: SpectratopeSpec, max_rounds: int = 20, seed=0,
                         gauge_tol: float = 1e-8) -> Decomposition:
    """Write a cone point as a nonnegative combination of outer products of
    points of H, with total weight ``4 ln(4 D N) rho``.

    Each round draws a Rademacher vector s and uses the columns of
    ``Sigma^{1/2} Diag(s) O`` (O the orthonormal DCT), suitably scaled; a round
    succeeds when all columns lie in H, which happens with probability >= 1/2.
    """
    Sigma = 0.5 * (np.asarray(Sigma, dtype=float) + np.asarray(Sigma, dtype=float).T)
    N = H.N
    kappa = compatibility_factor(H.D, N)
    if rho <= 0 or not np.any(Sigma):
        return Decomposition(np.zeros((N, 0)), np.zeros(0), 0, kappa)
    Z = psd_sqrt(Sigma)
    O = dct_matrix(N)
    gamma = 2.0 * np.log(4.0 * H.D * N)
    scale = np.sqrt(N / (2.0 * gamma * rho))
    lam = np.full(N, 2.0 * gamma * rho / N)
    rng = make_stream(seed)
    for k in range(1, max_rounds + 1):
        s = rng.choice(np.array([-1.0, 1.0]), size=N)
        G = scale * (Z * s) @ O
        if np.all(_spectratope_gauges(H, G.T) <= 1.0 + gauge_tol):
            return Decomposition(G, lam, k, kappa)
    raise RuntimeError(f"decomposition failed in {max_rounds} rounds (probability <= 2^-{max_rounds})")


# ---------------------------------------------------------------------------
# ball-case synthesis


def ball_coordinates(model: UncertaintyModel, X: EllitopeSpec):
    """Reparametrize an ellipsoidal signal set as the unit ball.

    Returns ``(model_y, P)`` with ``x = P y``; the estimate of ``Bx`` is
    unchanged because ``B P y = B x``.
    """
    if X.K != 1:
        raise ValueError("only ellipsoids (a single T matrix) can be mapped onto the ball")
    w, V = np.linalg.eigh(X.T[0])
    P = np.sqrt(X.base.scale[0]) * (V / np.sqrt(w)) @ V.T
    if X.P is not None:
        P = X.P @ P
    return model.folded(P), P


@dataclass
class PolySynthesis:
    Theta: list
    varrho: np.ndarray
    lam: np.ndarray
    mu: np.ndarray
    opt: float
    kappa: float
    delta: float
    hspec: HSetSpec
    stats: dict = field(default_factory=dict)

    @property
    def bound(self) -> float:
        """Risk bound ``2 sqrt(kappa) Opt`` of the extracted estimate."""
        return 2.0 * np.sqrt(self.kappa) * self.opt

    def to_dict(self) -> dict:
        return {"opt": self.opt, "kappa": self.kappa, "bound": self.bound, "delta": self.delta,
                "varrho": self.varrho.tolist(), "lam": self.lam.tolist(), "mu": self.mu.tolist(),
                "hset": self.hspec.to_dict(), "solver": self.stats}


def synthesize_poly_ball(model: UncertaintyModel, norm: ErrorNorm, eps: float,
                         noise_chi: float | None = None, unc_chi: float | None = None,
                         tol: Tolerances | None = None) -> PolySynthesis:
    """Convex relaxation of contrast synthesis when X is the unit ball of R^n.

    Solves, for each norm component l, over ``Theta_l >= 0`` and scalars::

        sigma^2 noise_chi^2 Tr(Theta_l) <= varrho_l
        [Tr(A_a' Theta_l A_b)]_{ab} <= varrho_l / unc_chi^2 I_q
        sum_a A_a' Theta_l A_a       <= varrho_l / unc_chi^2 I_n
        [[lam_l I, R_l^{1/2} B / 2], [., A' Theta_l A + mu_l I]] >= 0
        lam_l + mu_l + varrho_l <= rho

    and minimizes rho.  Both chi scales default to ``chi(eps / (L m))``.
    """
    if not 0 < eps < 1:
        raise ValueError("eps must lie in (0, 1)")
    if model.sigma <= 0:
        raise ValueError("ball-case synthesis needs sigma > 0 (otherwise Theta is unbounded)")
    m, n, q, L = model.m, model.n, model.q, norm.L
    delta = eps / (L * m)
    X = EllitopeSpec.ball(n)
    hspec = HSetSpec(model.sigma, delta, model.Aa if q else np.zeros((0, m, n)), X, noise_chi, unc_chi)
    cn, cu = hspec.noise_chi, hspec.unc_chi
    # Theta = s * Theta_scaled keeps the trace constraint O(1) whatever sigma is
    s = 1.0 / (model.sigma * cn) ** 2
    if q:
        # entry (a, b) of the q x q block is <Theta, A_b A_a'>
        W = np.einsum("bik,ajk->abij", model.Aa, model.Aa).reshape(q * q, m * m)
    prog = ConicProgram("poly-ball-synthesis")
    rho = prog.variable("rho", nonneg=True)
    for l in range(L):
        Th = prog.variable(f"Theta{l}", (m, m), psd=True)
        vr = prog.variable(f"varrho{l}", nonneg=True)
        lam = prog.variable(f"lam{l}", nonneg=True)
        mu = prog.variable(f"mu{l}", nonneg=True)
        prog.add(cp.trace(Th) <= vr)
        if q:
            Gq = s * cp.reshape(W @ cp.vec(Th, order="C"), (q, q), order="C")
            prog.add_psd(vr / cu**2 * np.eye(q) - Gq)
            Gn = s * sum(model.Aa[a].T @ Th @ model.Aa[a] for a in range(q))
            prog.add_psd(vr / cu**2 * np.eye(n) - Gn)
        quad = s * (model.A.T @ Th @ model.A) + mu * np.eye(n)
        prog.add_lmi([[lam * np.eye(model.nu), 0.5 * norm.sqrt[l] @ model.B], [None, quad]])
        prog.add(lam + mu + vr <= rho)
    prog.minimize(rho)
    sol = require_optimal(prog.solve(tol), "synthesize_poly_ball")
    Thetas = [s * 0.5 * (sol[f"Theta{l}"] + sol[f"Theta{l}"].T) for l in range(L)]
    D = (m + 1) + (q + n if q else 0)
    kappa = compatibility_factor(m + n + q + 1, m)
    return PolySynthesis(
        Theta=Thetas,
        varrho=np.array([float(sol[f"varrho{l}"]) for l in range(L)]),
        lam=np.array([float(sol[f"lam{l}"]) for l in range(L)]),
        mu=np.array([float(sol[f"mu{l}"]) for l in range(L)]),
        opt=float(sol.objective),
        kappa=kappa,
        delta=delta,
        hspec=hspec,
        stats={**sol.stats(), "spectratope_dim": D},
    )


def extract_contrasts(Thetas, varrhos, hspec: HSetSpec, trials: int = 20, seed=0) -> ContrastMatrix:
    """Turn synthesis matrices ``Theta_l`` into an admissible contrast matrix.

    For each l, ``trials`` candidates ``Theta_l^{1/2} Diag(s) O`` (s Rademacher,
    O the DCT) are scored by their largest column gauge theta; the best one is
    divided by its theta, so every column lies in the admissible set and
    ``Theta_l = theta^2 H_l H_l'``.
    """
    Thetas = [np.asarray(T, dtype=float) for T in Thetas]
    m = Thetas[0].shape[0]
    O = dct_matrix(m)
    rng = make_stream(seed)
    blocks, thetas, weights = [], [], []
    for l, Th in enumerate(Thetas):
        Z = psd_sqrt(Th)
        best_theta, best_G = np.inf, None
        for _ in range(trials):
            s = rng.choice(np.array([-1.0, 1.0]), size=m)
            G = (Z * s) @ O
            theta = float(np.max(hspec.gauge(G.T)))
            if theta < best_theta:
                best_theta, best_G = theta, G
        if best_theta <= 0:
            blocks.append(np.zeros((m, m)))
            thetas.append(0.0)
            weights.append(0.0)
            continue
        blocks.append(best_G / best_theta)
        thetas.append(best_theta)
        weights.append(m * best_theta**2)
    info = {"theta": thetas, "weight": weights, "varrho": list(map(float, np.atleast_1d(varrhos))),
            "trials": trials}
    return ContrastMatrix(blocks, hspec.delta, seed if isinstance(seed, int) else None, info)


def lift_relaxed_solution(syn: PolySynthesis, H: ContrastMatrix) -> dict:
    """Feasible point of the risk-bound program built from the relaxation.

    With ``Theta_l = H_l Diag(ups_bar) H_l'`` and ``ups_bar = theta_l^2``, the
    scaling ``g_l = sqrt((mu_l + sum ups_bar) / lam_l)`` gives
    ``lam = g lam_bar``, ``mu = mu_bar / g``, ``ups = ups_bar / g``; the
    returned ``rho`` is at most ``sqrt(kappa) * Opt`` whenever
    ``sum ups_bar <= kappa * varrho_l``.
    """
    out = {"lam": [], "mu": [], "upsilon": [], "rho": 0.0}
    for l, Hl in enumerate(H.blocks):
        theta = H.info["theta"][l]
        ups_bar = np.full(Hl.shape[1], theta**2)
        lam_bar, mu_bar = syn.lam[l], syn.mu[l]
        total = mu_bar + ups_bar.sum()
        g = np.sqrt(total / lam_bar) if lam_bar > 0 and total > 0 else 1.0
        out["lam"].append(g * lam_bar)
        out["mu"].append(mu_bar / g)
        out["upsilon"].append(ups_bar / g)
        out["rho"] = max(out["rho"], g * lam_bar + (mu_bar + ups_bar.sum()) / g)
    return out


# ---------------------------------------------------------------------------
# recovery


class PolyhedralEstimator:
    """``omega -> B argmin_{u in X} ||H'(Au - omega)||_inf``.

    The conic problem is compiled once with the contrast values ``H' omega`` as
    a parameter, so repeated recoveries reuse the canonicalization.
    """

    def __init__(self, H, A, X: EllitopeSpec, B, tol: Tolerances | None = None):
        self.H = _as_contrast(H).matrix
        self.A = np.asarray(A, dtype=float)
        self.B = np.asarray(B, dtype=float)
        self.X = X
        self.tol = tol
        N = X.N
        self.P = np.eye(N) if X.P is None else X.P
        Xb = X if X.P is None else EllitopeSpec(X.T, X.base)
        self._u = cp.Variable(N)
        self._t = cp.Parameter(self.H.shape[1])
        self._G = self.H.T @ self.A @ self.P
        resid = self._G @ self._u - self._t
        self._prob = cp.Problem(cp.Minimize(cp.norm(resid, "inf")), Xb.cvx_members(self._u))

    def recover_from_contrasts(self, t) -> tuple[np.ndarray, np.ndarray, float]:
        self._t.value = np.asarray(t, dtype=float)
        sol = solve(self._prob, self.tol)
        if not sol.ok:
            raise SolverError(f"polyhedral recovery: solver returned {sol.status}", sol)
        x = self.P @ np.asarray(self._u.value, dtype=float)
        return x, self.B @ x, float(sol.objective)

    def recover(self, omega) -> tuple[np.ndarray, np.ndarray, float]:
        return self.recover_from_contrasts(self.H.T @ np.asarray(omega, dtype=float))

    def recover_mom(self, omegas, eps: float | None = None) -> tuple[np.ndarray, np.ndarray, float]:
        omegas = np.atleast_2d(np.asarray(omegas, dtype=float))
        K, M = omegas.shape[0], self.H.shape[1]
        if eps is not None and K < 2.5 * np.log(M / eps):
            warnings.warn(f"K={K} repetitions is below 2.5 ln(M/eps); the risk guarantee does not apply",
                          stacklevel=2)
        return self.recover_from_contrasts(lower_median(omegas @ self.H, axis=0))

    def __call__(self, omega) -> np.ndarray:
        return self.recover(omega)[1]


def recover_poly(H, omega, A, X: EllitopeSpec, B, tol: Tolerances | None = None):
    """``(x_hat, w_hat)`` for a single observation."""
    x, w, _ = PolyhedralEstimator(H, A, X, B, tol).recover(omega)
    return x, w


def mom_recover_poly(H, omegas, A, X: EllitopeSpec, B, eps: float | None = None,
                     tol: Tolerances | None = None) -> np.ndarray:
    """Median-of-means polyhedral estimate from K repeated observations."""
    return PolyhedralEstimator(H, A, X, B, tol).recover_mom(omegas, eps)[1]
