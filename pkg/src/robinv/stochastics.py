"""Noise and perturbation laws, seeded streams, concentration bounds and the
Monte Carlo risk evaluator."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "NoiseLaw",
    "make_stream",
    "split_streams",
    "sample",
    "quadform_tail_bound",
    "maxquad_bound",
    "psi",
    "MonteCarloResult",
    "monte_carlo_risk",
    "write_error_csv",
    "AGGREGATION_RATE",
]

LAW_KINDS = ("gaussian", "rademacher", "column-erasure", "student-t")


def psi(alpha: float, beta: float) -> float:
    """Binary relative entropy ``(1-a) ln((1-a)/(1-b)) + a ln(a/b)``."""
    if not (0 < beta < 1 and 0 <= alpha <= 1):
        raise ValueError("need 0 <= alpha <= 1 and 0 < beta < 1")
    out = 0.0
    if alpha < 1:
        out += (1 - alpha) * np.log((1 - alpha) / (1 - beta))
    if alpha > 0:
        out += alpha * np.log(alpha / beta)
    return float(out)


# Exponent of the per-repetition failure probability of the geometric-median
# aggregation: psi(sqrt(3)/(2+sqrt(3)), 1/4), about 0.1070.
AGGREGATION_RATE = psi(np.sqrt(3.0) / (2.0 + np.sqrt(3.0)), 0.25)


@dataclass(frozen=True)
class NoiseLaw:
    """Zero-mean law of a random vector.

    ``scale`` multiplies every draw (the noise level sigma for observation
    noise).  ``dof`` is used by ``student-t`` (scaled to unit variance) and
    ``gamma``/``rho`` by ``column-erasure`` (values ``rho(gamma - 1)`` with
    probability gamma, ``rho*gamma`` otherwise).
    """

    kind: str = "gaussian"
    scale: float = 1.0
    dof: float = 3.0
    gamma: float = 0.0
    rho: float = 1.0

    def __post_init__(self):
        if self.kind not in LAW_KINDS:
            raise ValueError(f"unknown law {self.kind!r}; expected one of {LAW_KINDS}")
        if self.scale < 0:
            raise ValueError("scale must be nonnegative")
        if self.kind == "student-t" and self.dof <= 2:
            raise ValueError("student-t needs dof > 2 for a finite variance")
        if self.kind == "column-erasure" and not 0 < self.gamma < 1:
            raise ValueError("column-erasure needs 0 < gamma < 1")

    @property
    def sub_gaussian(self) -> bool:
        return self.kind in ("gaussian", "rademacher", "column-erasure")

    def to_dict(self) -> dict:
        return {"kind": self.kind, "scale": self.scale, "dof": self.dof, "gamma": self.gamma, "rho": self.rho}

    @classmethod
    def from_dict(cls, d: dict) -> "NoiseLaw":
        return cls(**d)


def make_stream(seed) -> np.random.Generator:
    """Counter-based generator (Philox) from an int seed or a SeedSequence."""
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    return np.random.Generator(np.random.Philox(ss))


def split_streams(seed, count: int) -> list[np.random.Generator]:
    """Independent child streams, one per worker or per Monte Carlo unit."""
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    return [make_stream(child) for child in ss.spawn(count)]


def sample(law: NoiseLaw, dim: int, count: int, stream: np.random.Generator) -> np.ndarray:
    """Draws of shape (count, dim)."""
    shape = (count, dim)
    if law.kind == "gaussian":
        z = stream.standard_normal(shape)
    elif law.kind == "rademacher":
        z = stream.choice(np.array([-1.0, 1.0]), size=shape)
    elif law.kind == "student-t":
        z = stream.standard_t(law.dof, size=shape) * np.sqrt((law.dof - 2.0) / law.dof)
    else:
        erased = stream.random(shape) < law.gamma
        z = law.rho * (law.gamma - erased.astype(float))
    return law.scale * z


def quadform_tail_bound(Q, eps: float) -> float:
    """Level exceeded by ``zeta' Q zeta`` (zeta standard Gaussian) with probability <= eps."""
    if not 0 < eps < 1:
        raise ValueError("eps must lie in (0, 1)")
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    Q = 0.5 * (Q + Q.T)
    lam = np.linalg.eigvalsh(Q)
    if lam.min() < -1e-10 * max(1.0, abs(lam).max()):
        raise ValueError("Q must be positive semidefinite")
    lam = np.clip(lam, 0.0, None)
    ln = np.log(1.0 / eps)
    return float(lam.sum() + 2.0 * np.sqrt((lam**2).sum() * ln) + 2.0 * lam.max() * ln)


def maxquad_bound(W: Sequence, V, eps: float) -> float:
    """Level exceeded by ``max_l u' W_l u`` (u ~ N(0, V)) with probability <= eps."""
    if not 0 < eps < 1:
        raise ValueError("eps must lie in (0, 1)")
    W = np.asarray(W, dtype=float)
    if W.ndim == 2:
        W = W[None]
    V = np.asarray(V, dtype=float)
    L = W.shape[0]
    traces = np.einsum("lij,ji->l", W, V)
    return float((1.0 + np.sqrt(2.0 * np.log(L / eps))) ** 2 * max(traces.max(), 0.0))


@dataclass
class MonteCarloResult:
    quantiles: np.ndarray  # per signal, empirical (1 - eps)-quantile of the error
    errors: np.ndarray  # (signals, draws)
    eps: float
    seed: int | None = None
    extra: dict = field(default_factory=dict)

    @property
    def worst_quantile(self) -> float:
        return float(self.quantiles.max())

    def failure_rate(self, bound: float) -> float:
        return float(np.mean(self.errors > bound))


def monte_carlo_risk(
    estimator: Callable[[np.ndarray], np.ndarray],
    observe: Callable[[np.ndarray, np.random.Generator], np.ndarray],
    signals: np.ndarray,
    B: np.ndarray,
    N: int,
    eps: float,
    seed: int = 0,
    norm: Callable[[np.ndarray], float] | None = None,
) -> MonteCarloResult:
    """Empirical (1 - eps)-quantiles of ``||estimator(omega) - Bx||``.

    ``observe(x, stream)`` draws one observation of signal ``x`` (perturbation
    and noise together); each signal gets its own child stream so results do
    not depend on the order of evaluation.
    """
    if N < 1:
        raise ValueError("Monte Carlo needs at least one draw")
    signals = np.atleast_2d(np.asarray(signals, dtype=float))
    norm = np.linalg.norm if norm is None else norm
    streams = split_streams(seed, len(signals))
    errors = np.empty((len(signals), N))
    for i, (x, stream) in enumerate(zip(signals, streams)):
        target = B @ x
        for k in range(N):
            errors[i, k] = norm(estimator(observe(x, stream)) - target)
    q = np.quantile(errors, 1.0 - eps, axis=1, method="higher")
    return MonteCarloResult(q, errors, eps, seed)


def write_error_csv(path, errors: np.ndarray, labels: Sequence | None = None) -> Path:
    """One row per draw: signal id, draw id, error."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    errors = np.atleast_2d(errors)
    labels = range(len(errors)) if labels is None else labels
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["signal", "draw", "error"])
        for lab, row in zip(labels, errors):
            for k, e in enumerate(row):
                w.writerow([lab, k, repr(float(e))])
    return path
