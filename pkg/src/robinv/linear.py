"""Linear estimates ``w = H' omega`` under random perturbations of the sensing
matrix: high-probability and root-mean-square risk certificates, contrast
synthesis, and the K-repeated geometric-median aggregation.

Observation model::

    omega = (A + sum_a eta_a A_a) x + sigma * xi,    x in X (an ellitope)

with zero-mean ``eta`` (unit sub-Gaussian parameter, or unit second moment for
the aggregated estimate) and ``xi`` likewise.  The error is measured in
``||u|| = max_l ||R_l^{1/2} u||_2``.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace

import cvxpy as cp
import numpy as np

from .conic import ConicProgram, SolverError, Tolerances, build_lmi_block, require_optimal, solve
from .geometry import EllitopeSpec, ErrorNorm, as_matrices
from .stochastics import AGGREGATION_RATE, NoiseLaw, sample

__all__ = [
    "UncertaintyModel",
    "RiskCertificate",
    "risk_bound_linear",
    "synthesize_linear",
    "risk_bound_expected",
    "synthesize_expected",
    "geometric_median",
    "reliable_estimate",
    "aggregation_repetitions",
    "column_erasure_model",
    "erasure_scale",
    "lmi_residuals",
]


@dataclass(frozen=True)
class UncertaintyModel:
    """Nominal matrix ``A`` (m x n), perturbation matrices ``Aa`` (q x m x n),
    target map ``B`` (nu x n) and noise level ``sigma``."""

    A: np.ndarray
    Aa: np.ndarray
    B: np.ndarray
    sigma: float
    noise: NoiseLaw = field(default_factory=NoiseLaw)
    perturbation: NoiseLaw = field(default_factory=NoiseLaw)

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        B = np.atleast_2d(np.asarray(self.B, dtype=float))
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "Aa", as_matrices(self.Aa, A.shape))
        if B.shape[1] != A.shape[1]:
            raise ValueError(f"B has {B.shape[1]} columns but A has {A.shape[1]}")
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

    @property
    def q(self) -> int:
        return self.Aa.shape[0]

    def nominal(self) -> "UncertaintyModel":
        """Same model with the perturbation matrices dropped."""
        return replace(self, Aa=np.zeros((0, self.m, self.n)))

    def folded(self, P) -> "UncertaintyModel":
        """Model in the coordinates y of a signal set given as x = P y."""
        if P is None:
            return self
        P = np.asarray(P, dtype=float)
        return replace(self, A=self.A @ P, Aa=self.Aa @ P if self.q else np.zeros((0, self.m, P.shape[1])),
                       B=self.B @ P)

    def matrix(self, eta) -> np.ndarray:
        eta = np.asarray(eta, dtype=float)
        return self.A + np.einsum("a,aij->ij", eta, self.Aa) if self.q else self.A.copy()

    def observe(self, x, stream: np.random.Generator, count: int | None = None) -> np.ndarray:
        """One observation (or ``count`` independent ones, stacked as rows)."""
        k = 1 if count is None else count
        eta = sample(self.perturbation, self.q, k, stream)
        xi = sample(self.noise, self.m, k, stream)
        Ax = self.A @ x
        out = Ax[None, :] + (np.einsum("ka,aij,j->ki", eta, self.Aa, x) if self.q else 0.0) + self.sigma * xi
        return out[0] if count is None else out

    def to_dict(self) -> dict:
        return {
            "A": self.A.tolist(),
            "A_alpha": self.Aa.tolist(),
            "B": self.B.tolist(),
            "sigma": self.sigma,
            "noise": self.noise.to_dict(),
            "perturbation": self.perturbation.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "UncertaintyModel":
        A = np.asarray(d["A"], dtype=float)
        return cls(
            A,
            np.asarray(d.get("A_alpha", []), dtype=float).reshape(-1, *A.shape),
            np.asarray(d["B"], dtype=float),
            float(d.get("sigma", 0.0)),
            NoiseLaw.from_dict(d["noise"]) if "noise" in d else NoiseLaw(),
            NoiseLaw.from_dict(d["perturbation"]) if "perturbation" in d else NoiseLaw(),
        )


@dataclass
class RiskCertificate:
    """Bound plus the multipliers proving it (per error-norm index l)."""

    bound: float
    eps: float | None
    multipliers: dict
    lmi_residual: float
    stats: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "bound": float(self.bound),
            "eps": self.eps,
            "lmi_residual": float(self.lmi_residual),
            "multipliers": {k: np.asarray(v).tolist() for k, v in self.multipliers.items()},
            "solver": self.stats,
        }


def confidence_factor(L: int, eps: float) -> float:
    return 1.0 + np.sqrt(2.0 * np.log(2.0 * L / eps))


def _check_eps(eps: float) -> None:
    if not 0 < eps < 1:
        raise ValueError("eps must lie in (0, 1)")


def _prepare(model: UncertaintyModel, X: EllitopeSpec, norm: ErrorNorm) -> UncertaintyModel:
    if norm.nu != model.nu:
        raise ValueError(f"error norm acts on R^{norm.nu} but B maps into R^{model.nu}")
    model = model.folded(X.P)
    if model.n != X.N:
        raise ValueError(f"signal set lives in R^{X.N} but the model acts on R^{model.n}")
    return model


def _stacked_perturbation(S: np.ndarray, H, Aa: np.ndarray):
    """Rows [S H' A_1; ...; S H' A_q] (shape nu*q x n), numeric or cvxpy."""
    if isinstance(H, cp.Expression):
        return cp.vstack([S @ H.T @ Aa[a] for a in range(Aa.shape[0])])
    return np.concatenate([S @ H.T @ Aa[a] for a in range(Aa.shape[0])], axis=0)


def _add_pair(prog: ConicProgram, tag: str, S: np.ndarray, H, model: UncertaintyModel, X: EllitopeSpec):
    """Multipliers and LMIs bounding the perturbation and bias terms for one l.

    Returns (lam, mu, kappa, varkappa) as cvxpy variables; ``lam + phi(mu)``
    bounds the perturbation-induced error and ``kappa + phi(varkappa)`` the bias.
    """
    nu = model.nu
    lam = prog.variable(f"lam{tag}", nonneg=True)
    mu = prog.variable(f"mu{tag}", (X.K,), nonneg=True)
    kappa = prog.variable(f"kappa{tag}", nonneg=True)
    vk = prog.variable(f"varkappa{tag}", (X.K,), nonneg=True)
    if model.q:
        # [[lam I, M/2], [M'/2, W(mu)]] >= 0 with M = [S H'A_1; ...; S H'A_q] is
        # split by Schur complement into q blocks of size n + nu:
        # [[W_a, (S H'A_a)'/2], [., lam I]] >= 0 and sum_a W_a <= W(mu).
        # Same feasible set, far smaller PSD cones than one (nu q + n) block.
        n = X.N
        Ws = []
        for a in range(model.q):
            Wa = prog.variable(f"W{tag}_{a}", (n, n), symmetric=True)
            Za = 0.5 * (S @ H.T @ model.Aa[a])
            prog.add_psd(build_lmi_block([[Wa, Za.T], [None, lam * np.eye(nu)]]))
            Ws.append(Wa)
        prog.add_psd(X.weighted(mu) - sum(Ws))
    bias = 0.5 * (S @ (model.B - H.T @ model.A))
    prog.add_psd(build_lmi_block([[kappa * np.eye(nu), bias], [None, X.weighted(vk)]]))
    return lam, mu, kappa, vk


def lmi_residuals(H, model: UncertaintyModel, X: EllitopeSpec, norm: ErrorNorm, mult: dict) -> float:
    """Smallest eigenvalue over every certificate LMI (>= 0 means valid)."""
    model = _prepare(model, X, norm)
    H = np.asarray(H, dtype=float)
    worst = np.inf
    for l in range(norm.L):
        S = norm.sqrt[l]
        tag = str(l)
        if model.q:
            off = 0.5 * _stacked_perturbation(S, H, model.Aa)
            M = np.block([[mult[f"lam{tag}"] * np.eye(model.nu * model.q), off],
                          [off.T, X.weighted(mult[f"mu{tag}"])]])
            worst = min(worst, np.linalg.eigvalsh(M).min())
        bias = 0.5 * (S @ (model.B - H.T @ model.A))
        M = np.block([[mult[f"kappa{tag}"] * np.eye(model.nu), bias], [bias.T, X.weighted(mult[f"varkappa{tag}"])]])
        worst = min(worst, np.linalg.eigvalsh(M).min())
        for key in (f"mu{tag}", f"varkappa{tag}"):
            worst = min(worst, float(np.min(mult[key])))
    return float(worst)


def _linear_program(H, model, X, norm, eps, prog=None):
    prog = ConicProgram("linear-risk") if prog is None else prog
    rho = prog.variable("rho", nonneg=True)
    varrho = prog.variable("varrho", nonneg=True)
    frob = prog.variable("frob", nonneg=True)
    for l in range(norm.L):
        S = norm.sqrt[l]
        lam, mu, kappa, vk = _add_pair(prog, str(l), S, H, model, X)
        prog.add(lam + X.cvx_phi(mu) <= rho, kappa + X.cvx_phi(vk) <= varrho)
        prog.add_soc(frob, H @ S)
    prog.minimize(confidence_factor(norm.L, eps) * (model.sigma * frob + rho) + varrho)
    return prog


def _certificate(sol, prog, H, model, X, norm, eps) -> RiskCertificate:
    mult = {k: v for k, v in sol.values.items() if k != "H" and not k.startswith("W")}
    resid = lmi_residuals(H, model, X, norm, mult)
    return RiskCertificate(float(sol.objective), eps, mult, resid, sol.stats())


def _ellipsoid_certificate(H, model, X, norm, eps) -> RiskCertificate:
    """Closed-form optimum of the certificate program when X = {y'Ty <= s}.

    Each LMI ``[[lam I, Q/2], [Q'/2, mu T]] >= 0`` is minimized in
    ``lam + s mu`` by ``lam = r/2``, ``mu = r/(2s)`` with
    ``r = sqrt(s) ||Q T^{-1/2}||_2``.
    """
    s = float(X.base.scale[0])
    w, V = np.linalg.eigh(X.T[0])
    Tih = (V / np.sqrt(w)) @ V.T
    mult, rho, varrho, frob = {}, 0.0, 0.0, 0.0
    for l in range(norm.L):
        S = norm.sqrt[l]
        r = 0.0
        if model.q:
            r = np.sqrt(s) * np.linalg.norm(_stacked_perturbation(S, H, model.Aa) @ Tih, 2)
        b = np.sqrt(s) * np.linalg.norm(S @ (model.B - H.T @ model.A) @ Tih, 2)
        mult.update({f"lam{l}": r / 2, f"mu{l}": np.array([r / (2 * s)]),
                     f"kappa{l}": b / 2, f"varkappa{l}": np.array([b / (2 * s)])})
        rho, varrho = max(rho, r), max(varrho, b)
        frob = max(frob, np.linalg.norm(H @ S))
    mult.update(rho=rho, varrho=varrho, frob=frob)
    bound = confidence_factor(norm.L, eps) * (model.sigma * frob + rho) + varrho
    resid = lmi_residuals(H, model, X, norm, mult)
    return RiskCertificate(float(bound), eps, mult, resid, {"status": "optimal", "method": "closed-form"})


def risk_bound_linear(H, model: UncertaintyModel, X: EllitopeSpec, norm: ErrorNorm, eps: float,
                      tol: Tolerances | None = None, method: str = "auto") -> RiskCertificate:
    """High-probability bound on ``||H' omega - Bx||`` valid uniformly over X.

    With probability at least 1 - eps the error does not exceed ``bound``.
    ``method="auto"`` uses the closed form when X is a single ellipsoid and
    the semidefinite program otherwise; ``"sdp"`` forces the program.
    """
    _check_eps(eps)
    if method not in ("auto", "sdp", "closed-form"):
        raise ValueError("method must be 'auto', 'sdp' or 'closed-form'")
    model = _prepare(model, X, norm)
    H = np.asarray(H, dtype=float).reshape(model.m, model.nu)
    single = X.K == 1 and np.linalg.eigvalsh(X.T[0]).min() > 1e-12 * np.abs(X.T[0]).max()
    if method == "closed-form" and not single:
        raise ValueError("closed form needs X to be a single non-degenerate ellipsoid")
    if method != "sdp" and single:
        return _ellipsoid_certificate(H, model, X, norm, eps)
    prog = _linear_program(H, model, X, norm, eps)
    sol = require_optimal(prog.solve(tol), "risk_bound_linear")
    return _certificate(sol, prog, H, model, X, norm, eps)


def synthesize_linear(model: UncertaintyModel, X: EllitopeSpec, norm: ErrorNorm, eps: float,
                      tol: Tolerances | None = None) -> tuple[np.ndarray, RiskCertificate]:
    """Contrast matrix minimizing the high-probability risk bound."""
    _check_eps(eps)
    model = _prepare(model, X, norm)
    prog = ConicProgram("linear-synthesis")
    H = prog.variable("H", (model.m, model.nu))
    _linear_program(H, model, X, norm, eps, prog)
    sol = require_optimal(prog.solve(tol), "synthesize_linear")
    Hv = sol["H"]
    return Hv, _certificate(sol, prog, Hv, model, X, norm, eps)


def _expected_program(H, l, model, X, norm, prog=None):
    prog = ConicProgram("expected-risk") if prog is None else prog
    frob = prog.variable("frob", nonneg=True)
    S = norm.sqrt[l]
    lam, mu, kappa, vk = _add_pair(prog, str(l), S, H, model, X)
    prog.add_soc(frob, H @ S)
    prog.minimize(model.sigma * frob + lam + X.cvx_phi(mu) + kappa + X.cvx_phi(vk))
    return prog


def risk_bound_expected(H, l: int, model: UncertaintyModel, X: EllitopeSpec, norm: ErrorNorm,
                        tol: Tolerances | None = None) -> float:
    """Bound on ``sqrt(E ||R_l^{1/2}(H' omega - Bx)||^2)`` under second-moment
    assumptions on the noise and the perturbation."""
    model = _prepare(model, X, norm)
    H = np.asarray(H, dtype=float).reshape(model.m, model.nu)
    sol = require_optimal(_expected_program(H, l, model, X, norm).solve(tol), "risk_bound_expected")
    return float(sol.objective)


def synthesize_expected(l: int, model: UncertaintyModel, X: EllitopeSpec, norm: ErrorNorm,
                        tol: Tolerances | None = None) -> tuple[np.ndarray, float]:
    """Contrast minimizing the root-mean-square bound for norm index ``l``."""
    model = _prepare(model, X, norm)
    prog = ConicProgram("expected-synthesis")
    H = prog.variable("H", (model.m, model.nu))
    _expected_program(H, l, model, X, norm, prog)
    sol = require_optimal(prog.solve(tol), "synthesize_expected")
    return sol["H"], float(sol.objective)


# ---------------------------------------------------------------------------
# aggregation


def _weiszfeld(Y: np.ndarray, tol: float, max_iter: int):
    """Geometric median of the rows of Y in the Euclidean metric.

    Iteratively reweighted averaging with the Vardi-Zhang correction when the
    iterate hits a data point.  Returns (median, converged).
    """
    z = Y.mean(axis=0)
    for _ in range(max_iter):
        d = np.linalg.norm(Y - z, axis=1)
        hit = d < 1e-12
        far = ~hit
        if not far.any():
            return z, True
        w = 1.0 / d[far]
        T = (w[:, None] * Y[far]).sum(axis=0) / w.sum()
        if hit.any():
            # z sits on data point(s) of multiplicity eta: optimal iff the pull
            # of the remaining points has norm <= eta
            eta = hit.sum()
            pull = ((Y[far] - z) * w[:, None]).sum(axis=0)
            r = np.linalg.norm(pull)
            if r <= eta:
                return z, True
            z_new = (1.0 - eta / r) * T + (eta / r) * z
        else:
            z_new = T
        step = np.linalg.norm(z_new - z)
        z = z_new
        if step < tol:
            return z, True
    return z, False


def geometric_median(points, metric=None, tol: float = 1e-9, max_iter: int = 1000) -> np.ndarray:
    """Minimizer of ``sum_k ||S (p_k - z)||_2`` with ``S = metric`` (identity if None).

    A singular ``S`` leaves the component of z in its null space undetermined;
    that component is set to the mean of the points.  When the iteration does
    not settle within ``max_iter`` steps a conic solve is used and the better
    of the two points is returned.
    """
    P = np.atleast_2d(np.asarray(points, dtype=float))
    if P.shape[0] == 1:
        return P[0].copy()
    S = np.eye(P.shape[1]) if metric is None else np.asarray(metric, dtype=float)
    Y = P @ S.T
    zy, converged = _weiszfeld(Y, tol, max_iter)
    if not converged:
        zv = cp.Variable(Y.shape[1])
        prob = cp.Problem(cp.Minimize(cp.sum(cp.norm(Y - cp.reshape(zv, (1, -1), order="C"), 2, axis=1))))
        sol = solve(prob)
        if sol.ok:
            alt = np.asarray(zv.value, dtype=float)
            if np.linalg.norm(Y - alt, axis=1).sum() < np.linalg.norm(Y - zy, axis=1).sum():
                zy = alt
    Sp = np.linalg.pinv(S)
    return Sp @ zy + (np.eye(P.shape[1]) - Sp @ S) @ P.mean(axis=0)


def aggregation_repetitions(L: int, eps: float) -> int:
    """Smallest K with K >= ln(L / eps) / 0.1070."""
    return int(np.ceil(np.log(L / eps) / AGGREGATION_RATE))


def reliable_estimate(Hs, omegas, bounds, norm: ErrorNorm, eps: float | None = None,
                      tol: Tolerances | None = None) -> np.ndarray:
    """Aggregate K repeated observations into one estimate.

    ``Hs[l]`` is the contrast for norm index l and ``bounds[l]`` its
    root-mean-square bound.  Each contrast is applied to every observation, the
    estimates are combined by their geometric median ``z_l``, and the result is
    any point within ``4 * bounds[l]`` of every ``z_l`` (or 0 if there is none).
    """
    omegas = np.atleast_2d(np.asarray(omegas, dtype=float))
    K = omegas.shape[0]
    L = norm.L
    if len(Hs) != L or len(bounds) != L:
        raise ValueError("need one contrast and one bound per error-norm component")
    if eps is not None and K < np.log(L / eps) / AGGREGATION_RATE:
        warnings.warn(f"K={K} repetitions is below ln(L/eps)/0.1070; the risk guarantee does not apply",
                      stacklevel=2)
    radii = 4.0 * np.asarray(bounds, dtype=float)
    z = np.stack([geometric_median(omegas @ np.asarray(Hs[l]), norm.sqrt[l]) for l in range(L)])

    def inside(w) -> bool:
        return all(np.linalg.norm(norm.sqrt[l] @ (z[l] - w)) <= radii[l] * (1 + 1e-9) for l in range(L))

    for cand in z:
        if inside(cand):
            return cand.copy()
    w = cp.Variable(norm.nu)
    t = cp.Variable()
    cons = [cp.norm(norm.sqrt[l] @ (z[l] - w)) <= radii[l] + t for l in range(L)]
    sol = solve(cp.Problem(cp.Minimize(t), cons), tol)
    if sol.ok and sol.objective <= 1e-9 * max(1.0, radii.max()):
        return np.asarray(w.value, dtype=float)
    return np.zeros(norm.nu)


# ---------------------------------------------------------------------------
# column erasure


def erasure_scale(gamma: float, calibration: str = "second-moment") -> float:
    """Scale rho making ``eta = rho (gamma - b)``, b ~ Bernoulli(gamma), have unit
    second moment or unit sub-Gaussian parameter."""
    if not 0 < gamma < 1:
        raise ValueError("gamma must lie in (0, 1)")
    if calibration == "second-moment":
        return 1.0 / np.sqrt(gamma * (1.0 - gamma))
    if calibration == "subgaussian":
        # optimal sub-Gaussian variance proxy of a centred Bernoulli variable
        if abs(gamma - 0.5) < 1e-12:
            s2 = 0.25
        else:
            s2 = (1.0 - 2.0 * gamma) / (2.0 * np.log((1.0 - gamma) / gamma))
        return 1.0 / np.sqrt(s2)
    raise ValueError(f"unknown calibration {calibration!r}")


def column_erasure_model(Abar, gamma: float, calibration: str = "second-moment", B=None,
                         sigma: float = 0.0, noise: NoiseLaw | None = None) -> UncertaintyModel:
    """Columns of ``Abar`` are zeroed independently with probability gamma.

    ``A[eta] = (1 - gamma) Abar + sum_a eta_a A_a`` where ``A_a`` keeps only
    column a of ``Abar / rho``.
    """
    Abar = np.atleast_2d(np.asarray(Abar, dtype=float))
    rho = erasure_scale(gamma, calibration)
    m, n = Abar.shape
    Aa = np.zeros((n, m, n))
    Aa[np.arange(n), :, np.arange(n)] = Abar.T / rho
    B = np.eye(n) if B is None else B
    law = NoiseLaw("column-erasure", gamma=gamma, rho=rho)
    return UncertaintyModel((1.0 - gamma) * Abar, Aa, B, sigma, noise or NoiseLaw(), law)
