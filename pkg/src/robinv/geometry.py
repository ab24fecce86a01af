"""Signal and uncertainty sets: ellitopes, spectratopes and the error norm.

An ellitope is ``{P y : exists t in T, y' T_k y <= t_k}`` and a spectratope is
``{P y : exists r in R, S_i[y]^2 <= r_i I}``.  The sets ``T`` / ``R`` are
monotone convex compacts in the nonnegative orthant; only three closed-form
kinds are supported (see :class:`BaseSet`) so that their support functions can
be written exactly inside a conic program.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import cvxpy as cp
import numpy as np

__all__ = [
    "BaseSet",
    "EllitopeSpec",
    "SpectratopeSpec",
    "ErrorNorm",
    "Diagnostics",
    "support_function",
    "gauge",
    "gauge_bisect",
    "validate",
    "psd_sqrt",
    "ellitope_to_spectratope",
]

PSD_TOL = 1e-10
BASE_KINDS = ("box", "pball", "simplex")


def psd_sqrt(M: np.ndarray) -> np.ndarray:
    """Symmetric square root with negative eigenvalues clipped at zero."""
    M = 0.5 * (np.asarray(M, dtype=float) + np.asarray(M, dtype=float).T)
    w, V = np.linalg.eigh(M)
    w = np.clip(w, 0.0, None)
    return (V * np.sqrt(w)) @ V.T


def _dual_exponent(r: float) -> float:
    if r == 1.0:
        return np.inf
    if np.isinf(r):
        return 1.0
    return r / (r - 1.0)


@dataclass(frozen=True)
class BaseSet:
    """Monotone base set in the nonnegative orthant.

    ``box``      {0 <= t <= scale}
    ``pball``    {t >= 0 : ||t / scale||_{p/2} <= 1}, p >= 2 (p = inf gives a box)
    ``simplex``  {t >= 0 : sum(t / scale) <= 1}
    """

    kind: str
    dim: int
    p: float = 2.0
    scale: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in BASE_KINDS:
            raise ValueError(f"unsupported base set kind {self.kind!r}; expected one of {BASE_KINDS}")
        if self.dim < 1:
            raise ValueError("base set dimension must be positive")
        if self.kind == "pball" and not self.p >= 2.0:
            raise ValueError("pball base requires p >= 2")
        scale = np.ones(self.dim) if self.scale is None else np.asarray(self.scale, dtype=float).reshape(-1)
        if scale.shape != (self.dim,):
            raise ValueError("scale vector must have length dim")
        object.__setattr__(self, "scale", scale)

    @classmethod
    def box(cls, dim: int, scale=None) -> "BaseSet":
        return cls("box", dim, scale=scale)

    @classmethod
    def pball(cls, dim: int, p: float, scale=None) -> "BaseSet":
        return cls("pball", dim, p=float(p), scale=scale)

    @classmethod
    def simplex(cls, dim: int, scale=None) -> "BaseSet":
        return cls("simplex", dim, scale=scale)

    @property
    def exponent(self) -> float:
        """Norm exponent r = p/2 of a pball base."""
        return self.p / 2.0

    def support(self, y) -> float:
        y = np.asarray(y, dtype=float).reshape(-1)
        if y.shape != (self.dim,):
            raise ValueError(f"support function expects a vector of length {self.dim}, got {y.shape}")
        yp = np.maximum(y, 0.0) * self.scale
        if self.kind == "box":
            return float(yp.sum())
        if self.kind == "simplex":
            return float(yp.max())
        return float(np.linalg.norm(yp, ord=_dual_exponent(self.exponent)))

    def gauge(self, t) -> np.ndarray | float:
        """Smallest c >= 0 with t in c * base, for t >= 0 (rows if 2-d)."""
        t = np.asarray(t, dtype=float)
        u = np.maximum(t, 0.0) / self.scale
        if self.kind == "box":
            out = u.max(axis=-1)
        elif self.kind == "simplex":
            out = u.sum(axis=-1)
        else:
            out = np.linalg.norm(u, ord=self.exponent, axis=-1)
        return out if np.ndim(out) else float(out)

    def contains(self, t, tol: float = 0.0) -> bool:
        t = np.asarray(t, dtype=float)
        if np.any(t < -tol):
            return False
        return bool(self.gauge(t) <= 1.0 + tol)

    # conic representations ------------------------------------------------

    def cvx_support(self, y, nonneg: bool = True):
        """cvxpy expression for the support function at ``y``."""
        if not nonneg:
            y = cp.pos(y)
        scaled = cp.multiply(self.scale, y)
        if self.kind == "box":
            return cp.sum(scaled)
        if self.kind == "simplex":
            return cp.max(scaled)
        r_star = _dual_exponent(self.exponent)
        return cp.norm(scaled, "inf" if np.isinf(r_star) else r_star)

    def cvx_contains(self, t, radius: float = 1.0) -> list:
        """Constraints encoding ``t in radius * base``."""
        u = cp.multiply(1.0 / (radius * self.scale), t)
        cons = [t >= 0]
        if self.kind == "box":
            cons.append(u <= 1)
        elif self.kind == "simplex":
            cons.append(cp.sum(u) <= 1)
        else:
            r = self.exponent
            cons.append(cp.norm(u, "inf" if np.isinf(r) else r) <= 1)
        return cons


def support_function(base: BaseSet, y) -> float:
    """``sup_{t in base} y't``."""
    return base.support(y)


def _as_matrix_stack(mats, name: str) -> np.ndarray:
    arr = np.asarray(mats, dtype=float)
    if arr.ndim == 2:
        arr = arr[None]
    if arr.ndim != 3 or arr.shape[1] != arr.shape[2]:
        raise ValueError(f"{name} must be a list of square matrices")
    return arr


@dataclass(frozen=True)
class EllitopeSpec:
    """Ellitope ``{P y : exists t in base, y' T_k y <= t_k}``.

    ``T`` is stored as an array of shape (K, N, N); ``P`` is None for a basic
    ellitope (then n = N).
    """

    T: np.ndarray
    base: BaseSet
    P: np.ndarray | None = None
    factors: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        T = _as_matrix_stack(self.T, "T")
        T = 0.5 * (T + np.transpose(T, (0, 2, 1)))
        object.__setattr__(self, "T", T)
        if self.base.dim != T.shape[0]:
            raise ValueError(f"base set dimension {self.base.dim} != number of T_k ({T.shape[0]})")
        if self.P is not None:
            P = np.atleast_2d(np.asarray(self.P, dtype=float))
            if P.shape[1] != T.shape[1]:
                raise ValueError("P must have N columns")
            object.__setattr__(self, "P", P)
        object.__setattr__(self, "factors", np.stack([psd_sqrt(Tk) for Tk in T]))

    @classmethod
    def ball(cls, n: int, radius: float = 1.0) -> "EllitopeSpec":
        return cls(np.eye(n)[None] / radius**2, BaseSet.box(1))

    @classmethod
    def ellipsoid(cls, T: np.ndarray) -> "EllitopeSpec":
        return cls(np.asarray(T, dtype=float)[None], BaseSet.box(1))

    @classmethod
    def box(cls, n: int) -> "EllitopeSpec":
        """Unit box ``||x||_inf <= 1``."""
        T = np.zeros((n, n, n))
        T[np.arange(n), np.arange(n), np.arange(n)] = 1.0
        return cls(T, BaseSet.box(n))

    @property
    def K(self) -> int:
        return self.T.shape[0]

    @property
    def N(self) -> int:
        return self.T.shape[1]

    @property
    def n(self) -> int:
        return self.N if self.P is None else self.P.shape[0]

    @property
    def is_basic(self) -> bool:
        return self.P is None

    def quad_values(self, y) -> np.ndarray:
        """t_k = y' T_k y for a vector (K,) or for rows of a matrix (count, K)."""
        y = np.asarray(y, dtype=float)
        return np.einsum("...i,kij,...j->...k", y, self.T, y)

    def phi(self, y) -> float:
        return self.base.support(y)

    def cvx_phi(self, y, nonneg: bool = True):
        return self.base.cvx_support(y, nonneg=nonneg)

    def weighted(self, mu):
        """``sum_k mu_k T_k`` for a numeric or cvxpy vector ``mu``."""
        if isinstance(mu, cp.Expression):
            return sum(mu[k] * self.T[k] for k in range(self.K))
        return np.einsum("k,kij->ij", np.asarray(mu, dtype=float), self.T)

    def cvx_members(self, y, radius: float = 1.0) -> list:
        """Constraints forcing the cvxpy vector ``y`` (in R^N) into ``radius * Y``."""
        t = cp.Variable(self.K)
        cons = [cp.sum_squares(self.factors[k] @ y) <= t[k] for k in range(self.K)]
        return cons + self.base.cvx_contains(t, radius=radius**2)

    def to_dict(self) -> dict:
        out = {"type": "ellitope", "T": self.T.tolist(), "base": _base_to_dict(self.base)}
        if self.P is not None:
            out["P"] = self.P.tolist()
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "EllitopeSpec":
        T = np.asarray(d["T"], dtype=float)
        base = _base_from_dict(d.get("base", {"kind": "box", "K": _as_matrix_stack(T, "T").shape[0]}))
        return cls(T, base, d.get("P"))


@dataclass(frozen=True)
class SpectratopeSpec:
    """Spectratope ``{P y : exists r in base, S_i[y]^2 <= r_i I_{d_i}}``.

    Each entry of ``blocks`` has shape (N, d_i, d_i): ``blocks[i][j]`` is the
    symmetric matrix S^{ij} and ``S_i[y] = sum_j y_j S^{ij}``.
    """

    blocks: tuple
    base: BaseSet
    P: np.ndarray | None = None

    def __post_init__(self):
        blocks = tuple(np.asarray(b, dtype=float) for b in self.blocks)
        if not blocks:
            raise ValueError("spectratope needs at least one block")
        N = blocks[0].shape[0]
        for b in blocks:
            if b.ndim != 3 or b.shape[0] != N or b.shape[1] != b.shape[2]:
                raise ValueError("each block must have shape (N, d_i, d_i) with a common N")
        object.__setattr__(self, "blocks", blocks)
        if self.base.dim != len(blocks):
            raise ValueError(f"base set dimension {self.base.dim} != number of blocks ({len(blocks)})")
        if self.P is not None:
            P = np.atleast_2d(np.asarray(self.P, dtype=float))
            if P.shape[1] != N:
                raise ValueError("P must have N columns")
            object.__setattr__(self, "P", P)

    @classmethod
    def ball(cls, n: int) -> "SpectratopeSpec":
        """Unit Euclidean ball as a single arrow block of size n+1."""
        S = np.zeros((n, n + 1, n + 1))
        for j in range(n):
            S[j, j, n] = S[j, n, j] = 1.0
        return cls((S,), BaseSet.box(1))

    @property
    def N(self) -> int:
        return self.blocks[0].shape[0]

    @property
    def n(self) -> int:
        return self.N if self.P is None else self.P.shape[0]

    @property
    def I(self) -> int:
        return len(self.blocks)

    @property
    def dims(self) -> list[int]:
        return [b.shape[1] for b in self.blocks]

    @property
    def D(self) -> int:
        return int(sum(self.dims))

    @property
    def is_basic(self) -> bool:
        return self.P is None

    def S(self, i: int, g):
        """S_i[g] for a numeric or cvxpy vector g."""
        if isinstance(g, cp.Expression):
            return sum(g[j] * self.blocks[i][j] for j in range(self.N))
        return np.einsum("j,jab->ab", np.asarray(g, dtype=float), self.blocks[i])

    def calS(self, i: int, G: np.ndarray) -> np.ndarray:
        """The linear map G -> sum_{p,q} G_pq S^{ip} S^{iq}."""
        Sb = self.blocks[i]
        Y = np.einsum("pq,pab->qab", np.asarray(G, dtype=float), Sb)
        return np.einsum("qab,qbc->ac", Y, Sb)

    def adjoint_matrices(self, i: int) -> np.ndarray:
        """Array W[p, q] = S^{ip} S^{iq}, shape (N, N, d_i, d_i)."""
        Sb = self.blocks[i]
        return np.einsum("pab,qbc->pqac", Sb, Sb)

    def calS_adjoint(self, i: int, V):
        """``[Tr(V S^{ip} S^{iq})]_{p,q}`` for numeric or cvxpy ``V``."""
        W = self.adjoint_matrices(i)
        N, d = self.N, self.dims[i]
        if isinstance(V, cp.Expression):
            # Tr(V X) = sum_ab V_ab X_ba
            M = np.transpose(W, (0, 1, 3, 2)).reshape(N * N, d * d)
            return cp.reshape(M @ cp.vec(V, order="C"), (N, N), order="C")
        return np.einsum("ab,pqba->pq", np.asarray(V, dtype=float), W)

    def block_norms_sq(self, g) -> np.ndarray:
        """``lambda_max(S_i[g]^2)`` per block, for a vector or rows of a matrix."""
        g = np.asarray(g, dtype=float)
        single = g.ndim == 1
        G = np.atleast_2d(g)
        out = np.empty((G.shape[0], self.I))
        for i, Sb in enumerate(self.blocks):
            mats = np.einsum("cj,jab->cab", G, Sb)
            out[:, i] = np.linalg.norm(mats, ord=2, axis=(1, 2)) ** 2
        return out[0] if single else out

    def phi(self, y) -> float:
        return self.base.support(y)

    def cvx_members(self, y, radius: float = 1.0) -> list:
        """LMI constraints forcing the cvxpy vector ``y`` into ``radius * Y``."""
        r = cp.Variable(self.I)
        cons = []
        for i, d in enumerate(self.dims):
            Si = self.S(i, y)
            cons.append(cp.bmat([[r[i] * np.eye(d), Si], [Si, np.eye(d)]]) >> 0)
        return cons + self.base.cvx_contains(r, radius=radius**2)

    def to_dict(self) -> dict:
        out = {
            "type": "spectratope",
            "blocks": [b.tolist() for b in self.blocks],
            "base": _base_to_dict(self.base),
        }
        if self.P is not None:
            out["P"] = self.P.tolist()
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "SpectratopeSpec":
        blocks = tuple(np.asarray(b, dtype=float) for b in d["blocks"])
        base = _base_from_dict(d.get("base", {"kind": "box", "K": len(blocks)}))
        return cls(blocks, base, d.get("P"))


def _base_to_dict(base: BaseSet) -> dict:
    out = {"kind": base.kind, "K": base.dim}
    if base.kind == "pball":
        out["p"] = base.p
    if not np.allclose(base.scale, 1.0):
        out["scale"] = base.scale.tolist()
    return out


def _base_from_dict(d: dict) -> BaseSet:
    kind = d.get("kind", "box")
    return BaseSet(kind, int(d["K"]), p=float(d.get("p", 2.0)), scale=d.get("scale"))


def ellitope_to_spectratope(X: EllitopeSpec, tol: float = 1e-12) -> SpectratopeSpec:
    """Spectratopic description of an ellitope.

    Rank-one ``T_k = a a'`` become 1x1 blocks ``a' y``; higher-rank ``T_k``
    become arrow blocks ``[[0, F_k y], [(F_k y)', 0]]`` with ``F_k' F_k = T_k``.
    """
    blocks = []
    N = X.N
    for Tk in X.T:
        w, V = np.linalg.eigh(Tk)
        keep = w > tol * max(1.0, w.max())
        F = (V[:, keep] * np.sqrt(w[keep])).T  # rows span T_k
        r = F.shape[0]
        if r == 1:
            blocks.append(F[0][:, None, None].copy())
        else:
            S = np.zeros((N, r + 1, r + 1))
            S[:, :r, r] = F.T
            S[:, r, :r] = F.T
            blocks.append(S)
    return SpectratopeSpec(tuple(blocks), X.base, X.P)


@dataclass(frozen=True)
class ErrorNorm:
    """``||u|| = max_l sqrt(u' R_l u)``."""

    R: np.ndarray
    sqrt: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        R = _as_matrix_stack(self.R, "R")
        R = 0.5 * (R + np.transpose(R, (0, 2, 1)))
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "sqrt", np.stack([psd_sqrt(Rl) for Rl in R]))
        if np.linalg.eigvalsh(R.sum(axis=0)).min() <= PSD_TOL:
            raise ValueError("sum of R_l must be positive definite")

    @classmethod
    def euclidean(cls, nu: int) -> "ErrorNorm":
        return cls(np.eye(nu)[None])

    @property
    def L(self) -> int:
        return self.R.shape[0]

    @property
    def nu(self) -> int:
        return self.R.shape[1]

    def __call__(self, u) -> np.ndarray | float:
        u = np.asarray(u, dtype=float)
        vals = np.einsum("...i,lij,...j->...l", u, self.R, u)
        out = np.sqrt(np.maximum(vals, 0.0)).max(axis=-1)
        return out if np.ndim(out) else float(out)

    def to_dict(self) -> dict:
        return {"R": self.R.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "ErrorNorm":
        return cls(np.asarray(d["R"], dtype=float))


Spec = EllitopeSpec | SpectratopeSpec


def _min_level(spec: Spec, v) -> np.ndarray:
    if isinstance(spec, EllitopeSpec):
        return spec.quad_values(v)
    return spec.block_norms_sq(v)


def gauge(spec: Spec, v) -> np.ndarray | float:
    """Minkowski function of a basic ellitope/spectratope.

    By monotonicity of the base set, ``v`` lies in ``s * set`` iff the vector of
    minimal levels ``(v'T_k v)`` (resp. ``||S_i[v]||^2``) lies in ``s^2 * base``,
    so the gauge is ``sqrt(base_gauge(levels))``.  Accepts a vector or a matrix
    whose rows are evaluated independently.
    """
    if not spec.is_basic:
        raise ValueError("gauge is only defined for basic sets (P must be None)")
    v = np.asarray(v, dtype=float)
    if v.shape[-1] != spec.N:
        raise ValueError(f"expected vectors of length {spec.N}")
    out = np.sqrt(np.maximum(spec.base.gauge(_min_level(spec, v)), 0.0))
    return out if np.ndim(out) else float(out)


def contains(spec: Spec, v, tol: float = 1e-9) -> bool:
    return bool(gauge(spec, v) <= 1.0 + tol)


def gauge_bisect(spec: Spec, v, tol: float = 1e-9, max_iter: int = 200) -> float:
    """Gauge by bisection on the scale with a membership test per candidate.

    Independent of :func:`gauge` apart from the membership test, which checks
    the minimal levels of ``v / s`` against the base set directly.
    """
    if not spec.is_basic:
        raise ValueError("gauge is only defined for basic sets (P must be None)")
    v = np.asarray(v, dtype=float)
    if not np.any(v):
        return 0.0

    def member(s: float) -> bool:
        return spec.base.contains(_min_level(spec, v / s))

    hi = 1.0
    while not member(hi):
        hi *= 2.0
    lo = 0.0
    for _ in range(max_iter):
        if hi - lo <= tol:
            break
        mid = 0.5 * (lo + hi)
        if member(mid):
            hi = mid
        else:
            lo = mid
    return hi


@dataclass
class Diagnostics:
    valid: bool = True
    issues: list[str] = field(default_factory=list)

    def fail(self, msg: str) -> None:
        self.valid = False
        self.issues.append(msg)

    def __bool__(self) -> bool:
        return self.valid


def validate(spec, rng: np.random.Generator | None = None, n_checks: int = 3) -> Diagnostics:
    """Structural checks; never raises, reports every problem found."""
    diag = Diagnostics()
    rng = np.random.default_rng(0) if rng is None else rng
    base = spec.base
    if np.any(base.scale <= 0):
        diag.fail("base set scale must be strictly positive (nonempty interior)")
    if isinstance(spec, EllitopeSpec):
        for k, Tk in enumerate(spec.T):
            lam = np.linalg.eigvalsh(Tk).min()
            if lam < -PSD_TOL:
                diag.fail(f"T_{k} is not PSD (min eigenvalue {lam:.3e})")
        lam = np.linalg.eigvalsh(spec.T.sum(axis=0)).min()
        if lam <= PSD_TOL:
            diag.fail(f"sum of T_k is singular (min eigenvalue {lam:.3e})")
    elif isinstance(spec, SpectratopeSpec):
        for i, Sb in enumerate(spec.blocks):
            asym = np.abs(Sb - np.transpose(Sb, (0, 2, 1))).max()
            if asym > PSD_TOL:
                diag.fail(f"block {i} has non-symmetric matrices (asymmetry {asym:.3e})")
        # Gram matrix of g -> (S_i[g])_i; positive definite iff sum_i S_i^2[g] != 0 for g != 0
        Q, _ = np.linalg.qr(rng.standard_normal((spec.N, spec.N)))
        flat = [np.einsum("cj,jab->cab", Q.T, Sb).reshape(spec.N, -1) for Sb in spec.blocks]
        F = np.concatenate(flat, axis=1)
        gram = F @ F.T
        lam = np.linalg.eigvalsh(gram).min()
        if lam <= PSD_TOL * max(1.0, np.trace(gram)):
            diag.fail(f"sum_i S_i^2[g] vanishes for some g != 0 (Gram min eigenvalue {lam:.3e})")
        for _ in range(n_checks):
            g = rng.standard_normal((3, spec.N))
            lam_w = rng.random(3)
            G = np.einsum("j,ja,jb->ab", lam_w, g, g)
            for i in range(spec.I):
                lhs = spec.calS(i, G)
                rhs = sum(lam_w[j] * np.linalg.matrix_power(spec.S(i, g[j]), 2) for j in range(3))
                err = np.abs(lhs - rhs).max() / max(1.0, np.abs(rhs).max())
                if err > 1e-10:
                    diag.fail(f"block {i}: S_i[sum g g'] identity violated (rel. error {err:.3e})")
    else:
        diag.fail(f"unknown spec type {type(spec).__name__}")
    return diag


def as_matrices(mats: Sequence | np.ndarray | None, shape: tuple[int, int]) -> np.ndarray:
    """Stack a possibly empty list of matrices into an array of shape (q, *shape)."""
    if mats is None or len(mats) == 0:
        return np.zeros((0,) + tuple(shape))
    arr = np.asarray(mats, dtype=float)
    if arr.ndim == 2:
        arr = arr[None]
    if arr.shape[1:] != tuple(shape):
        raise ValueError(f"expected matrices of shape {shape}, got {arr.shape[1:]}")
    return arr
