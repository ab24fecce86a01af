"""Uncertain-but-bounded perturbations of the sensing matrix.

Here ``omega = (A + D[eta]) x + sigma * xi`` where ``eta`` is only known to lie
in a bounded set, and risks are taken uniformly over ``x`` and ``eta``.  The
module provides

* scenario bounds (``eta`` ranges over the convex hull of a few points),
* semidefinite upper bounds on robust norms of matrices with structured
  norm-bounded uncertainty ``sum_s delta_s A_s + sum_t L_t' Delta_t R_t``
  (ellitopic and spectratopic versions), with sampling lower bounds,
* synthesis of linear estimates minimizing noise + uncertainty + bias bounds,
* bounds for linear forms under spectratopic uncertainty, used to admit
  polyhedral contrast columns, the polyhedral risk bound, and the
  ball/ball polyhedral synthesis.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import cvxpy as cp
import numpy as np

from .conic import ConicProgram, Tolerances, build_lmi_block, require_optimal
from .geometry import BaseSet, EllitopeSpec, ErrorNorm, SpectratopeSpec, ellitope_to_spectratope, gauge
from .linear import UncertaintyModel
from .polyhedral import (
    ContrastMatrix,
    InadmissibleContrast,
    PolyBound,
    PolySynthesis,
    chi,
    synthesize_poly_ball,
)
from .stochastics import NoiseLaw, make_stream, sample

__all__ = [
    "TightnessFactors",
    "theta",
    "varkappa",
    "varsigma_bar",
    "varsigma",
    "StructuredUncertainty",
    "RobustModel",
    "RobustNormBound",
    "scenario_bound",
    "robust_norm_bound",
    "robust_norm_bound_spectr",
    "robust_norm_oracle",
    "snb_bound",
    "snb_oracle",
    "bias_bound",
    "UBBCertificate",
    "synthesize_linear_ubb",
    "risk_bound_linear_ubb",
    "linform_bound",
    "linform_oracle",
    "risk_bound_poly_ubb",
    "synthesize_poly_ubb_ball",
    "boundary_perturbations",
]


# ---------------------------------------------------------------------------
# tightness factors (reported next to bounds, never used inside them)

_THETA_TABLE = (0.0, 1.0, np.pi / 2, 1.7348, 2.0)


def theta(k: int) -> float:
    """Tabulated for k <= 4, upper bound ``pi sqrt(k) / 2`` beyond."""
    k = int(k)
    if k < 0:
        raise ValueError("k must be nonnegative")
    return _THETA_TABLE[k] if k < len(_THETA_TABLE) else np.pi * np.sqrt(k) / 2


def varkappa(J: int) -> float:
    return 1.0 if J == 1 else 2.5 * np.sqrt(np.log(2 * J))


def varsigma_bar(J: int) -> float:
    return float(np.sqrt(2 * np.log(5 * J)))


def varsigma(J: int) -> float:
    return float(2 * np.sqrt(2 * np.log(2 * J)))


class TightnessFactors:
    """Namespace grouping the factor functions."""

    theta = staticmethod(theta)
    varkappa = staticmethod(varkappa)
    varsigma_bar = staticmethod(varsigma_bar)
    varsigma = staticmethod(varsigma)


def _numerical_rank(M: np.ndarray, rel: float = 1e-9) -> int:
    s = np.linalg.svd(M, compute_uv=False)
    return int(np.sum(s > rel * s.max())) if s.size and s.max() > 0 else 0


# ---------------------------------------------------------------------------
# structured norm-bounded uncertainty


@dataclass(frozen=True)
class StructuredUncertainty:
    """Uncertain matrix ``sum_s delta_s A_s + sum_t L_t' Delta_t R_t``.

    ``|delta_s| <= 1`` and ``||Delta_t||_2 <= 1``.  ``scalar_blocks`` has shape
    (S, m, n); ``general_blocks`` is a sequence of pairs ``(L_t, R_t)`` with
    ``L_t`` of shape (p_t, m) and ``R_t`` of shape (q_t, n).
    """

    scalar_blocks: np.ndarray
    general_blocks: tuple = ()
    shape: tuple | None = None

    def __post_init__(self):
        A = np.asarray(self.scalar_blocks, dtype=float)
        gen = tuple((np.atleast_2d(np.asarray(L, dtype=float)), np.atleast_2d(np.asarray(R, dtype=float)))
                    for L, R in self.general_blocks)
        shape = self.shape
        if A.size:
            if A.ndim == 2:
                A = A[None]
            shape = A.shape[1:]
        elif gen:
            shape = (gen[0][0].shape[1], gen[0][1].shape[1])
        if shape is None:
            raise ValueError("empty uncertainty needs an explicit shape (m, n)")
        shape = (int(shape[0]), int(shape[1]))
        if not A.size:
            A = np.zeros((0, *shape))
        if A.shape[1:] != shape:
            raise ValueError("scalar blocks must share the shape (m, n)")
        for L, R in gen:
            if L.shape[1] != shape[0] or R.shape[1] != shape[1]:
                raise ValueError(f"general block L {L.shape} / R {R.shape} does not match (m, n) = {shape}")
            if not np.any(L) or not np.any(R):
                raise ValueError("general blocks must have nonzero L and R")
        object.__setattr__(self, "scalar_blocks", A)
        object.__setattr__(self, "general_blocks", gen)
        object.__setattr__(self, "shape", shape)

    @classmethod
    def from_factors(cls, scalar=(), general=(), shape=None) -> "StructuredUncertainty":
        """Blocks given as pairs ``(P, Q)``: scalar ones contribute ``delta P'Q``,
        general ones ``P' Delta Q``."""
        A = [np.asarray(P, dtype=float).T @ np.asarray(Q, dtype=float) for P, Q in scalar]
        return cls(np.array(A) if A else np.zeros((0,) + tuple(shape or (0, 0))), tuple(general), shape)

    @property
    def m(self) -> int:
        return self.shape[0]

    @property
    def n(self) -> int:
        return self.shape[1]

    @property
    def S(self) -> int:
        return self.scalar_blocks.shape[0]

    @property
    def T(self) -> int:
        return len(self.general_blocks)

    @property
    def empty(self) -> bool:
        return self.S == 0 and self.T == 0

    @property
    def kappa(self) -> int:
        """Largest numerical rank of a scalar block (0 without scalar blocks)."""
        return max((_numerical_rank(A) for A in self.scalar_blocks), default=0)

    def matrix(self, deltas=None, Deltas=None) -> np.ndarray:
        out = np.zeros(self.shape)
        if self.S:
            out += np.einsum("s,sij->ij", np.asarray(deltas, dtype=float), self.scalar_blocks)
        for (L, R), Dt in zip(self.general_blocks, Deltas or []):
            out += L.T @ np.asarray(Dt, dtype=float) @ R
        return out

    def scaled(self, c: float) -> "StructuredUncertainty":
        """All blocks multiplied by c (general blocks through their left factor)."""
        return StructuredUncertainty(c * self.scalar_blocks, tuple((c * L, R) for L, R in self.general_blocks),
                                     self.shape)

    def induced(self, H: np.ndarray, S: np.ndarray) -> "StructuredUncertainty":
        """Uncertain matrix ``S H' D[eta]`` (nu x n) for a numeric contrast H."""
        H = np.asarray(H, dtype=float)
        A = np.einsum("ab,bi,sij->saj", S, H.T, self.scalar_blocks) if self.S else np.zeros((0, S.shape[0], self.n))
        gen = tuple((L @ H @ S.T, R) for L, R in self.general_blocks)
        return StructuredUncertainty(A, gen, (S.shape[0], self.n))

    def sample(self, stream: np.random.Generator):
        """Random extreme point: signs for scalar blocks, orthogonal-type Delta."""
        deltas = stream.choice(np.array([-1.0, 1.0]), size=self.S)
        Deltas = []
        for L, R in self.general_blocks:
            Z = stream.standard_normal((L.shape[0], R.shape[0]))
            U, _, Vt = np.linalg.svd(Z, full_matrices=False)
            Deltas.append(U @ Vt)
        return deltas, Deltas

    def linear_form(self) -> tuple[np.ndarray, SpectratopeSpec]:
        """``D[eta] = sum_a eta_a A_a`` with ``eta`` in a spectratope.

        Coordinates are the scalar deltas followed by ``vec(Delta_t)``
        (row-major).  Scalar blocks become 1x1 blocks; general blocks become
        ``[[0, Delta], [Delta', 0]]``, whose square is below ``I`` exactly
        when ``||Delta||_2 <= 1``.
        """
        mats = list(self.scalar_blocks)
        sizes = [(L.shape[0], R.shape[0]) for L, R in self.general_blocks]
        for L, R in self.general_blocks:
            for i in range(L.shape[0]):
                for j in range(R.shape[0]):
                    mats.append(np.outer(L[i], R[j]))
        q = len(mats)
        Aa = np.array(mats) if mats else np.zeros((0, *self.shape))
        if q == 0:
            raise ValueError("empty uncertainty has no spectratope description")
        blocks = []
        for s in range(self.S):
            B = np.zeros((q, 1, 1))
            B[s, 0, 0] = 1.0
            blocks.append(B)
        off = self.S
        for p, r in sizes:
            B = np.zeros((q, p + r, p + r))
            for i in range(p):
                for j in range(r):
                    B[off + i * r + j, i, p + j] = B[off + i * r + j, p + j, i] = 1.0
            blocks.append(B)
            off += p * r
        return Aa, SpectratopeSpec(tuple(blocks), BaseSet.box(len(blocks)))

    def to_dict(self) -> dict:
        return {
            "shape": list(self.shape),
            "scalar_blocks": self.scalar_blocks.tolist(),
            "general_blocks": [{"L": L.tolist(), "R": R.tolist()} for L, R in self.general_blocks],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "StructuredUncertainty":
        gen = tuple((np.asarray(g["L"], dtype=float), np.asarray(g["R"], dtype=float))
                    for g in d.get("general_blocks", []))
        A = np.asarray(d.get("scalar_blocks", []), dtype=float)
        return cls(A if A.size else np.zeros((0, 0, 0)), gen, tuple(d["shape"]) if "shape" in d else None)


@dataclass(frozen=True)
class RobustModel:
    """``omega = (A + D[eta]) x + sigma xi`` with ``D`` structured norm-bounded."""

    A: np.ndarray
    B: np.ndarray
    sigma: float
    uncertainty: StructuredUncertainty
    noise: NoiseLaw = field(default_factory=NoiseLaw)

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        B = np.atleast_2d(np.asarray(self.B, dtype=float))
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)
        if self.uncertainty.shape != A.shape:
            raise ValueError(f"uncertainty acts on {self.uncertainty.shape} matrices, A is {A.shape}")
        if B.shape[1] != A.shape[1]:
            raise ValueError("B and A must have the same number of columns")
        if self.sigma < 0:
            raise ValueError("sigma must be nonnegative")

    @property
    def m(self) -> int:
        return self.A.shape[0]

    @property
    def n(self) -> int:
        return self.A.shape[1]

    @property
    def nu(self) -> int:
        return self.B.shape[0]

    def observe(self, x, deltas, Deltas, stream: np.random.Generator) -> np.ndarray:
        Ax = (self.A + self.uncertainty.matrix(deltas, Deltas)) @ x
        return Ax + self.sigma * sample(self.noise, self.m, 1, stream)[0]

    def as_random_model(self) -> tuple[UncertaintyModel, SpectratopeSpec]:
        """Perturbation matrices and the spectratope of admissible ``eta``."""
        Aa, U = self.uncertainty.linear_form()
        return UncertaintyModel(self.A, Aa, self.B, self.sigma, self.noise), U

    def to_dict(self) -> dict:
        return {"A": self.A.tolist(), "B": self.B.tolist(), "sigma": self.sigma,
                "uncertainty": self.uncertainty.to_dict(), "noise": self.noise.to_dict()}

    @classmethod
    def from_dict(cls, d: dict) -> "RobustModel":
        return cls(np.asarray(d["A"], dtype=float), np.asarray(d["B"], dtype=float), float(d.get("sigma", 0.0)),
                   StructuredUncertainty.from_dict(d["uncertainty"]),
                   NoiseLaw.from_dict(d["noise"]) if "noise" in d else NoiseLaw())


# ---------------------------------------------------------------------------
# semidefinite machinery shared by the robust-norm bounds


def _as_spectratope(spec) -> SpectratopeSpec:
    return spec if isinstance(spec, SpectratopeSpec) else ellitope_to_spectratope(spec)


def _side(prog: ConicProgram, tag: str, spec):
    """Multipliers for one side of a bilinear maximization over ``P Y``.

    Returns ``(P, Sigma, phi)``: ``Sigma`` is the matrix expression dominating
    ``y y'`` on Y after weighting and ``phi`` its price (support function of
    the base set at the weights, or at the traces in the spectratopic case).
    """
    P = np.eye(spec.N) if spec.P is None else spec.P
    if isinstance(spec, EllitopeSpec):
        mu = prog.variable(f"mu_{tag}", (spec.K,), nonneg=True)
        return P, spec.weighted(mu), spec.cvx_phi(mu)
    Ms = [prog.variable(f"M_{tag}{i}", (d, d), psd=True) for i, d in enumerate(spec.dims)]
    Sigma = sum(spec.calS_adjoint(i, M) for i, M in enumerate(Ms))
    traces = cp.hstack([cp.trace(M) for M in Ms])
    return P, Sigma, spec.base.cvx_support(traces)


def _unit_ball_side(prog: ConicProgram, tag: str, dim: int):
    mu = prog.variable(f"mu_{tag}", nonneg=True)
    return np.eye(dim), mu * np.eye(dim), mu


def _robust_norm_terms(prog: ConicProgram, tag: str, scalar, general, xside, zside):
    """Constraints certifying ``z'Q' A P y <= value`` over the uncertain set.

    ``scalar`` lists the matrices ``A_s`` and ``general`` the pairs
    ``(L_t, R_t)``; either may be cvxpy expressions affine in a design
    variable.  Returns the objective ``(phi_Z + phi_X) / 2``.
    """
    PX, SigX, phiX = xside
    QZ, SigZ, phiZ = zside
    M, N = QZ.shape[1], PX.shape[1]
    Us, Vs = [], []
    for s, As in enumerate(scalar):
        U = prog.variable(f"U_{tag}s{s}", (M, M), symmetric=True)
        V = prog.variable(f"V_{tag}s{s}", (N, N), symmetric=True)
        prog.add_psd(build_lmi_block([[U, -(QZ.T @ As @ PX)], [None, V]]))
        Us.append(U)
        Vs.append(V)
    for t, (Lt, Rt) in enumerate(general):
        lam = prog.variable(f"lam_{tag}t{t}", nonneg=True)
        U = prog.variable(f"U_{tag}t{t}", (M, M), symmetric=True)
        V = prog.variable(f"V_{tag}t{t}", (N, N), symmetric=True)
        p = Lt.shape[0]
        prog.add_psd(build_lmi_block([[U, -(QZ.T @ Lt.T)], [None, lam * np.eye(p)]]))
        RP = np.asarray(Rt) @ PX
        prog.add_psd(V - lam * (RP.T @ RP))
        Us.append(U)
        Vs.append(V)
    prog.add_psd(SigZ - sum(Us) if Us else SigZ)
    prog.add_psd(SigX - sum(Vs) if Vs else SigX)
    return 0.5 * (phiZ + phiX)


@dataclass
class RobustNormBound:
    value: float
    factor: float
    kappa: int
    stats: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"bound": self.value, "tightness_factor": self.factor, "kappa": self.kappa, "solver": self.stats}


def _robust_norm(u: StructuredUncertainty, X, Bstar, tol, what: str):
    if X.n != u.n or Bstar.n != u.m:
        raise ValueError(f"sets live in R^{X.n} and R^{Bstar.n}, uncertain matrix is {u.shape}")
    prog = ConicProgram(what)
    obj = _robust_norm_terms(prog, "", list(u.scalar_blocks), u.general_blocks,
                             _side(prog, "x", X), _side(prog, "z", Bstar))
    prog.minimize(obj)
    sol = require_optimal(prog.solve(tol), what)
    return max(float(sol.objective), 0.0), sol.stats()


def robust_norm_bound(u: StructuredUncertainty, X: EllitopeSpec, Bstar: EllitopeSpec,
                      tol: Tolerances | None = None) -> RobustNormBound:
    """Upper bound on ``max_{A in U} max_{x in X, z in B*} z'Ax``.

    X and B* are ellitopes (the unit ball of the argument norm and the polar
    of the unit ball of the image norm).  The reported factor
    ``varkappa(K) varkappa(L) max(theta(2 kappa), pi/2)`` bounds the ratio of
    the result to the true robust norm.
    """
    if u.empty:
        return RobustNormBound(0.0, 1.0, 0)
    value, stats = _robust_norm(u, X, Bstar, tol, "robust_norm_bound")
    k = u.kappa
    factor = varkappa(X.K) * varkappa(Bstar.K) * max(theta(2 * k), np.pi / 2)
    return RobustNormBound(value, factor, k, stats)


def robust_norm_bound_spectr(u: StructuredUncertainty, X, Bstar, tol: Tolerances | None = None) -> RobustNormBound:
    """Spectratopic version of :func:`robust_norm_bound` (ellitopes are
    converted); factor ``varsigma(sum f_k) varsigma(sum d_l) max(theta(2 kappa), pi/2)``."""
    if u.empty:
        return RobustNormBound(0.0, 1.0, 0)
    X, Bstar = _as_spectratope(X), _as_spectratope(Bstar)
    value, stats = _robust_norm(u, X, Bstar, tol, "robust_norm_bound_spectr")
    k = u.kappa
    factor = varsigma(X.D) * varsigma(Bstar.D) * max(theta(2 * k), np.pi / 2)
    return RobustNormBound(value, factor, k, stats)


# ---------------------------------------------------------------------------
# sampling lower bounds


def _argmax_linear(spec, c: np.ndarray) -> np.ndarray:
    """A point of the basic set Y with large ``c'y`` (exact for ellipsoids).

    Candidates: ``c``, ``sign(c)`` and ``(sum T)^{-1} c`` pushed to the boundary.
    """
    if not np.any(c):
        return np.zeros_like(c)
    cands = [c, np.sign(c)]
    if isinstance(spec, EllitopeSpec):
        Tsum = spec.T.sum(axis=0)
        cands.append(np.linalg.solve(Tsum, c))
    best, best_val = None, -np.inf
    for v in cands:
        g = gauge(spec, v)
        if g <= 0:
            continue
        y = v / g
        val = c @ y
        if val > best_val:
            best, best_val = y, val
    return best


def _basic(spec):
    if isinstance(spec, EllitopeSpec):
        return EllitopeSpec(spec.T, spec.base)
    return SpectratopeSpec(spec.blocks, spec.base)


def robust_norm_oracle(u: StructuredUncertainty, X, Bstar, budget: int = 30, iters: int = 50,
                       seed=0) -> float:
    """Certified lower bound on the robust norm by alternating maximization.

    Over feasible triples ``(eta, y, z)`` the value ``z' Q' D[eta] P y`` is
    increased blockwise: ``eta`` exactly (signs and aligned rank-one
    ``Delta``), ``y`` and ``z`` by linear maximization over their sets.
    """
    if u.empty:
        return 0.0
    rng = make_stream(seed)
    Y, Z = _basic(X), _basic(Bstar)
    P = np.eye(Y.N) if X.P is None else X.P
    Q = np.eye(Z.N) if Bstar.P is None else Bstar.P
    best = 0.0
    for _ in range(budget):
        deltas, Deltas = u.sample(rng)
        y = _argmax_linear(Y, rng.standard_normal(Y.N))
        z = None
        for _ in range(iters):
            Mq = Q.T @ u.matrix(deltas, Deltas) @ P
            z = _argmax_linear(Z, Mq @ y)
            if z is None:
                break
            y = _argmax_linear(Y, Mq.T @ z)
            if y is None:
                break
            a, b = Q @ z, P @ y
            deltas = np.sign(np.einsum("i,sij,j->s", a, u.scalar_blocks, b)) if u.S else deltas
            deltas = np.where(deltas == 0, 1.0, deltas) if u.S else deltas
            Deltas = []
            for L, R in u.general_blocks:
                la, rb = L @ a, R @ b
                nl, nr = np.linalg.norm(la), np.linalg.norm(rb)
                Deltas.append(np.outer(la, rb) / (nl * nr) if nl > 0 and nr > 0 else np.zeros((len(la), len(rb))))
        if y is None or z is None:
            continue
        val = abs(float((Q @ z) @ u.matrix(deltas, Deltas) @ (P @ y)))
        best = max(best, val)
    return best


# ---------------------------------------------------------------------------
# scenario uncertainty


def scenario_bound(H, scenarios, X: EllitopeSpec, norm: ErrorNorm, tol: Tolerances | None = None) -> float:
    """Bound on ``max_{s, x in X} ||H' D_s x||`` for scenario matrices ``D_s``.

    Each term is the semidefinite bound on ``||R_l^{1/2} H' D_s||_{X,2}``;
    for an ellipsoid X it is evaluated in closed form (and is exact).
    """
    H = np.asarray(H, dtype=float)
    mats = np.asarray(scenarios, dtype=float)
    if mats.ndim == 2:
        mats = mats[None]
    P = np.eye(X.N) if X.P is None else X.P
    single = X.K == 1 and np.linalg.eigvalsh(X.T[0]).min() > 0
    if single:
        w, V = np.linalg.eigh(X.T[0])
        Tih = np.sqrt(X.base.scale[0]) * (V / np.sqrt(w)) @ V.T
    best = 0.0
    for D in mats:
        for l in range(norm.L):
            Qm = norm.sqrt[l] @ H.T @ D @ P
            if not np.any(Qm):
                continue
            if single:
                val = float(np.linalg.norm(Qm @ Tih, 2))
            else:
                prog = ConicProgram("scenario")
                lam = prog.variable("lam", nonneg=True)
                mu = prog.variable("mu", (X.K,), nonneg=True)
                prog.add_lmi([[lam * np.eye(norm.nu), 0.5 * Qm], [None, X.weighted(mu)]])
                prog.minimize(lam + X.cvx_phi(mu))
                val = float(require_optimal(prog.solve(tol), "scenario_bound").objective)
            best = max(best, val)
    return best


# ---------------------------------------------------------------------------
# linear estimates


def _snb_terms(prog: ConicProgram, tag: str, H, u: StructuredUncertainty, S: np.ndarray, X: EllitopeSpec):
    """Objective bounding ``max ||S H' D[eta] x||_2`` over X and the uncertainty."""
    if isinstance(H, cp.Expression):
        scalar = [S @ H.T @ A for A in u.scalar_blocks]
        general = [(L @ H @ S.T, R) for L, R in u.general_blocks]
    else:
        ind = u.induced(H, S)
        scalar, general = list(ind.scalar_blocks), ind.general_blocks
    return _robust_norm_terms(prog, tag, scalar, general, _side(prog, f"x{tag}", X),
                              _unit_ball_side(prog, f"z{tag}", S.shape[0]))


def snb_bound(H, u: StructuredUncertainty, X: EllitopeSpec, norm: ErrorNorm,
              tol: Tolerances | None = None) -> float:
    """Upper bound on ``max_{x in X, eta} ||H' D[eta] x||`` (within
    ``varkappa(K) max(theta(2 kappa), pi/2)`` of the truth)."""
    H = np.asarray(H, dtype=float)
    if u.empty or not np.any(H):
        return 0.0
    best = 0.0
    for l in range(norm.L):
        prog = ConicProgram("snb_bound")
        prog.minimize(_snb_terms(prog, "", H, u, norm.sqrt[l], X))
        best = max(best, float(require_optimal(prog.solve(tol), "snb_bound").objective))
    return best


def snb_oracle(H, u: StructuredUncertainty, X: EllitopeSpec, norm: ErrorNorm, budget: int = 30, seed=0) -> float:
    """Sampling lower bound on ``max_{x, eta} ||H' D[eta] x||``."""
    H = np.asarray(H, dtype=float)
    return max(robust_norm_oracle(u.induced(H, norm.sqrt[l]), X, EllitopeSpec.ball(norm.nu), budget, seed=seed)
               for l in range(norm.L))


def _bias_terms(prog: ConicProgram, tag: str, H, A, B, S, X: EllitopeSpec):
    lam = prog.variable(f"beta_{tag}", nonneg=True)
    mu = prog.variable(f"bmu_{tag}", (X.K,), nonneg=True)
    P = np.eye(X.N) if X.P is None else X.P
    prog.add_lmi([[lam * np.eye(S.shape[0]), 0.5 * (S @ (B - H.T @ A) @ P)], [None, X.weighted(mu)]])
    return lam + X.cvx_phi(mu)


def bias_bound(H, A, B, X: EllitopeSpec, norm: ErrorNorm, tol: Tolerances | None = None) -> float:
    """Upper bound on ``max_{x in X} ||(B - H'A) x||``."""
    H = np.asarray(H, dtype=float)
    best = 0.0
    for l in range(norm.L):
        prog = ConicProgram("bias_bound")
        prog.minimize(_bias_terms(prog, "", H, A, B, norm.sqrt[l], X))
        best = max(best, float(require_optimal(prog.solve(tol), "bias_bound").objective))
    return best


def _noise_factor(L: int, eps: float) -> float:
    return 1.0 + np.sqrt(2.0 * np.log(L / eps))


@dataclass
class UBBCertificate:
    bound: float
    noise: float
    uncertainty: float
    bias: float
    eps: float
    stats: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"bound": self.bound, "noise": self.noise, "uncertainty": self.uncertainty, "bias": self.bias,
                "eps": self.eps, "solver": self.stats}


def _check(model: RobustModel, X: EllitopeSpec, norm: ErrorNorm, eps: float):
    if not 0 < eps < 1:
        raise ValueError("eps must lie in (0, 1)")
    if norm.nu != model.nu:
        raise ValueError("error norm and B disagree on the output dimension")
    if X.n != model.n:
        raise ValueError("signal set and model disagree on the signal dimension")


def risk_bound_linear_ubb(H, model: RobustModel, X: EllitopeSpec, norm: ErrorNorm, eps: float,
                          tol: Tolerances | None = None) -> UBBCertificate:
    """Sum of the noise, uncertainty and bias bounds for a given contrast H.

    With probability at least 1 - eps (over the noise only) the error of
    ``H' omega`` is below ``bound`` for every signal in X and every
    admissible perturbation.
    """
    _check(model, X, norm, eps)
    H = np.asarray(H, dtype=float).reshape(model.m, model.nu)
    noise = _noise_factor(norm.L, eps) * model.sigma * max(np.linalg.norm(H @ S) for S in norm.sqrt)
    unc = snb_bound(H, model.uncertainty, X, norm, tol)
    bias = bias_bound(H, model.A, model.B, X, norm, tol)
    return UBBCertificate(float(noise + unc + bias), float(noise), unc, bias, eps)


def synthesize_linear_ubb(model: RobustModel, X: EllitopeSpec, norm: ErrorNorm, eps: float,
                          tol: Tolerances | None = None) -> tuple[np.ndarray, UBBCertificate]:
    """Contrast minimizing noise + uncertainty + bias bounds in one program."""
    _check(model, X, norm, eps)
    prog = ConicProgram("linear-ubb-synthesis")
    H = prog.variable("H", (model.m, model.nu))
    frob = prog.variable("frob", nonneg=True)
    unc = prog.variable("unc", nonneg=True)
    bias = prog.variable("bias", nonneg=True)
    for l, S in enumerate(norm.sqrt):
        prog.add_soc(frob, H @ S)
        if not model.uncertainty.empty:
            prog.add(_snb_terms(prog, f"l{l}", H, model.uncertainty, S, X) <= unc)
        prog.add(_bias_terms(prog, f"l{l}", H, model.A, model.B, S, X) <= bias)
    noise_coef = _noise_factor(norm.L, eps) * model.sigma
    prog.minimize(noise_coef * frob + unc + bias)
    sol = require_optimal(prog.solve(tol), "synthesize_linear_ubb")
    Hv = sol["H"]
    cert = UBBCertificate(float(sol.objective), float(noise_coef * sol["frob"]), float(sol["unc"]),
                          float(sol["bias"]), eps, sol.stats())
    return Hv, cert


# ---------------------------------------------------------------------------
# linear forms and polyhedral estimates


def _calA(h, Aa) -> np.ndarray:
    return np.einsum("i,aij->aj", np.asarray(h, dtype=float), Aa)


def linform_bound(h, Aa, U, X, tol: Tolerances | None = None) -> float:
    """Upper bound on ``max_{eta in U, x in X} sum_a eta_a h'A_a x``.

    U and X are spectratopes (ellitopes are converted).  The bound exceeds
    the true value by at most ``varsigma_bar(sum f_k) varsigma_bar(sum d_l)``.
    """
    Aa = np.asarray(Aa, dtype=float)
    if Aa.ndim == 2:
        Aa = Aa[None]
    if Aa.shape[0] == 0:
        return 0.0
    Ah = _calA(h, Aa)
    if not np.any(Ah):
        return 0.0
    U, X = _as_spectratope(U), _as_spectratope(X)
    prog = ConicProgram("linform_bound")
    Q, SigU, phiU = _side(prog, "u", U)
    P, SigX, phiX = _side(prog, "x", X)
    prog.add_lmi([[SigU, Q.T @ Ah @ P], [None, SigX]])
    prog.minimize(0.5 * (phiX + phiU))
    return max(float(require_optimal(prog.solve(tol), "linform_bound").objective), 0.0)


def linform_factor(U, X) -> float:
    U, X = _as_spectratope(U), _as_spectratope(X)
    return varsigma_bar(X.D) * varsigma_bar(U.D)


def linform_oracle(h, Aa, U, X, budget: int = 30, iters: int = 50, seed=0) -> float:
    """Sampling lower bound on ``max eta' A[h] x`` by alternating maximization."""
    Aa = np.asarray(Aa, dtype=float)
    if Aa.ndim == 2:
        Aa = Aa[None]
    if Aa.shape[0] == 0:
        return 0.0
    Ah = _calA(h, Aa)
    if not np.any(Ah):
        return 0.0
    V, Y = _basic(U), _basic(X)
    Q = np.eye(V.N) if U.P is None else U.P
    P = np.eye(Y.N) if X.P is None else X.P
    M = Q.T @ Ah @ P
    rng = make_stream(seed)
    best = 0.0
    for _ in range(budget):
        y = _argmax_linear(Y, rng.standard_normal(Y.N))
        v = None
        for _ in range(iters):
            v = _argmax_linear(V, M @ y)
            if v is None:
                break
            y = _argmax_linear(Y, M.T @ v)
            if y is None:
                break
        if v is not None and y is not None:
            best = max(best, abs(float(v @ M @ y)))
    return best


def risk_bound_poly_ubb(H, model: UncertaintyModel, U, X, norm: ErrorNorm, eps: float,
                        admissibility: str = "check", tol: Tolerances | None = None) -> PolyBound:
    """Bound on the worst-case eps-risk of a polyhedral estimate.

    The perturbation is ``sum_a eta_a A_a`` with ``eta`` in the spectratope U
    and X is a spectratope (ellitopes are converted).  With
    ``admissibility="check"`` every column must satisfy
    ``sigma chi(delta) ||h||_2 <= 1`` and ``linform_bound(h) <= 1/2`` for
    ``delta = eps / (M L)``; otherwise :class:`InadmissibleContrast` is raised.
    """
    if not 0 < eps < 1:
        raise ValueError("eps must lie in (0, 1)")
    H = H if isinstance(H, ContrastMatrix) else ContrastMatrix(H)
    if H.L != norm.L:
        raise ValueError(f"contrast has {H.L} blocks but the error norm has {norm.L} components")
    Xs = _as_spectratope(X)
    delta = eps / (H.M * H.L)
    gauges = None
    if admissibility == "check":
        cols = H.matrix.T
        c = chi(delta)
        noise = model.sigma * c * np.linalg.norm(cols, axis=1)
        unc = np.array([2.0 * linform_bound(h, model.Aa, U, Xs, tol) for h in cols]) if model.q else 0 * noise
        gauges = np.maximum(noise, unc)
        bad = [int(j) for j in np.flatnonzero(gauges > 1.0 + 1e-8)]
        if bad:
            raise InadmissibleContrast(bad, gauges)
    elif admissibility != "skip":
        raise ValueError("admissibility must be 'check' or 'skip'")
    P = np.eye(Xs.N) if Xs.P is None else Xs.P
    AP, BP = model.A @ P, model.B @ P
    N = Xs.N
    prog = ConicProgram("poly-ubb-risk")
    rho = prog.variable("rho", nonneg=True)
    for l, Hl in enumerate(H.blocks):
        lam = prog.variable(f"lam{l}", nonneg=True)
        ups = prog.variable(f"upsilon{l}", (Hl.shape[1],), nonneg=True)
        Ys = [prog.variable(f"Ups{l}_{k}", (d, d), psd=True) for k, d in enumerate(Xs.dims)]
        G = (AP.T @ Hl).T  # rows are (A P)' h_j
        quad = cp.reshape(ups @ np.einsum("ji,jk->jik", G, G).reshape(len(G), -1), (N, N), order="C")
        quad = quad + sum(Xs.calS_adjoint(k, Yk) for k, Yk in enumerate(Ys))
        prog.add_lmi([[lam * np.eye(model.nu), 0.5 * norm.sqrt[l] @ BP], [None, quad]])
        traces = cp.hstack([cp.trace(Yk) for Yk in Ys])
        prog.add(lam + Xs.base.cvx_support(traces) + cp.sum(ups) <= rho)
    prog.minimize(2 * rho)
    sol = require_optimal(prog.solve(tol), "risk_bound_poly_ubb")
    mult = {k: v for k, v in sol.values.items() if not k.startswith("Ups")}
    return PolyBound(float(sol.objective), mult, delta, gauges, sol.stats())


def synthesize_poly_ubb_ball(model: UncertaintyModel, norm: ErrorNorm, eps: float,
                             tol: Tolerances | None = None) -> PolySynthesis:
    """Ball-case synthesis when X and the perturbation set are unit balls.

    Same relaxation as the random-perturbation synthesis with the uncertainty
    scale fixed to 2 (columns must keep ``||A[h]||_2 <= 1/2``), the noise
    scale staying ``chi(delta)``.  The extracted estimate has worst-case
    eps-risk at most ``2 sqrt(kappa) Opt`` (``PolySynthesis.bound``).
    """
    return synthesize_poly_ball(model, norm, eps, unc_chi=2.0, tol=tol)


def boundary_perturbations(q: int, count: int, seed=0) -> np.ndarray:
    """Perturbation vectors on the unit sphere of R^q (adversary heuristic);
    the first 2q are the signed coordinate vectors when count allows."""
    rng = make_stream(seed)
    out = []
    for a in range(min(q, count // 2)):
        e = np.zeros(q)
        e[a] = 1.0
        out.extend([e, -e])
    while len(out) < count:
        v = rng.standard_normal(q)
        out.append(v / np.linalg.norm(v))
    return np.array(out[:count])
