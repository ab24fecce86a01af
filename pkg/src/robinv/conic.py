"""Thin conic-program layer over cvxpy with the Clarabel interior-point solver.

Every semidefinite program in the package is assembled through
:class:`ConicProgram` and solved by :func:`solve`, which reports a uniform
:class:`ConicSolution` (status, values, residuals, duality gap).
"""
from __future__ import annotations

import threading
import time
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import cvxpy as cp
import numpy as np

__all__ = [
    "Tolerances",
    "ConicProgram",
    "ConicSolution",
    "SolverError",
    "build_lmi_block",
    "solve",
    "sym",
    "load_cbf",
]

# Clarabel is reentrant, but cvxpy's canonicalization caches are not documented
# as thread safe; solves are serialized through this lock.
_SOLVE_LOCK = threading.Lock()

_STATUS_MAP = {
    "Solved": "optimal",
    "AlmostSolved": "optimal",
    "PrimalInfeasible": "infeasible",
    "AlmostPrimalInfeasible": "infeasible",
    "DualInfeasible": "unbounded",
    "AlmostDualInfeasible": "unbounded",
}


class SolverError(RuntimeError):
    """Raised by callers that need an optimal solution and did not get one."""

    def __init__(self, message: str, solution: "ConicSolution | None" = None):
        super().__init__(message)
        self.solution = solution


@dataclass(frozen=True)
class Tolerances:
    gap: float = 1e-8
    feas: float = 1e-8
    max_iter: int = 200
    # near-optimal exits ("AlmostSolved", stalled progress) are accepted when the
    # measured residuals and gap stay within `accept` times the targets
    accept: float = 1e3

    def solver_opts(self) -> dict:
        return {
            "tol_gap_abs": self.gap,
            "tol_gap_rel": self.gap,
            "tol_feas": self.feas,
            "max_iter": int(self.max_iter),
        }

    def to_dict(self) -> dict:
        return {"gap": self.gap, "feas": self.feas, "max_iter": self.max_iter, "accept": self.accept}


DEFAULT_TOL = Tolerances()


@dataclass
class ConicSolution:
    status: str
    objective: float
    values: dict = field(default_factory=dict)
    primal_residual: float = np.nan
    dual_residual: float = np.nan
    gap: float = np.nan
    iterations: int = 0
    solve_time: float = 0.0
    raw_status: str = ""

    @property
    def ok(self) -> bool:
        return self.status == "optimal"

    def __getitem__(self, name: str):
        return self.values[name]

    def stats(self) -> dict:
        return {
            "status": self.status,
            "raw_status": self.raw_status,
            "objective": float(self.objective),
            "primal_residual": float(self.primal_residual),
            "dual_residual": float(self.dual_residual),
            "gap": float(self.gap),
            "iterations": int(self.iterations),
            "solve_time": float(self.solve_time),
        }


def sym(M):
    """Symmetric part of a numeric or cvxpy square matrix."""
    if isinstance(M, cp.Expression):
        return 0.5 * (M + M.T)
    M = np.asarray(M, dtype=float)
    return 0.5 * (M + M.T)


def _shape(block):
    if block is None:
        return None
    if isinstance(block, cp.Expression):
        s = block.shape
    else:
        s = np.shape(block)
    if len(s) == 0:
        return (1, 1)
    if len(s) == 1:
        return (s[0], 1)
    return tuple(s)


def _as_2d(block):
    if isinstance(block, cp.Expression):
        if block.ndim == 0:
            return cp.reshape(block, (1, 1), order="C")
        if block.ndim == 1:
            return cp.reshape(block, (block.shape[0], 1), order="C")
        return block
    return np.atleast_2d(np.asarray(block, dtype=float))


def build_lmi_block(blocks) -> cp.Expression:
    """Assemble ``[[P, Q], [Q', R]]`` from a 2x2 grid; ``None`` means zero.

    The lower-left entry may be given explicitly or left ``None``, in which
    case the transpose of the upper-right block is used.  Returns the
    symmetrized block matrix; use :meth:`ConicProgram.add_psd` or
    :meth:`ConicProgram.add_lmi` to constrain it.
    """
    if len(blocks) != 2 or any(len(row) != 2 for row in blocks):
        raise ValueError("LMI needs a 2x2 grid of blocks")
    (P, Q), (Qt, R) = blocks
    sP, sQ, sQt, sR = map(_shape, (P, Q, Qt, R))
    if sP is None or sR is None:
        raise ValueError("diagonal blocks must be given")
    if sP[0] != sP[1] or sR[0] != sR[1]:
        raise ValueError(f"diagonal blocks must be square, got {sP} and {sR}")
    p, r = sP[0], sR[0]
    if sQ is not None and sQ != (p, r):
        raise ValueError(f"off-diagonal block has shape {sQ}, expected {(p, r)}")
    if sQt is not None and sQt != (r, p):
        raise ValueError(f"off-diagonal block has shape {sQt}, expected {(r, p)}")
    if Q is None and Qt is None:
        Q = np.zeros((p, r))
    upper = _as_2d(Q) if Q is not None else _as_2d(Qt).T
    lower = _as_2d(Qt) if Qt is not None else upper.T
    M = cp.bmat([[_as_2d(P), upper], [lower, _as_2d(R)]])
    return sym(M)


class ConicProgram:
    """A linear objective over free/nonnegative/symmetric variables with
    affine, second-order and PSD constraints.

    Variables are declared once by name; ``values`` in the solution are keyed
    by these names.
    """

    def __init__(self, name: str = "program"):
        self.name = name
        self._vars: dict[str, cp.Variable] = {}
        self.constraints: list[cp.Constraint] = []
        self._objective = None
        self._problem: cp.Problem | None = None

    def variable(self, name: str, shape=(), *, nonneg: bool = False, symmetric: bool = False,
                 psd: bool = False) -> cp.Variable:
        if name in self._vars:
            raise ValueError(f"variable {name!r} declared twice")
        if (symmetric or psd) and (len(shape) != 2 or shape[0] != shape[1]):
            raise ValueError("symmetric/PSD variables must be square")
        kwargs = {"name": name}
        if nonneg:
            kwargs["nonneg"] = True
        if psd:
            kwargs["PSD"] = True
        elif symmetric:
            kwargs["symmetric"] = True
        var = cp.Variable(shape, **kwargs)
        self._vars[name] = var
        self._problem = None
        return var

    def __getitem__(self, name: str) -> cp.Variable:
        return self._vars[name]

    @property
    def variables(self) -> dict:
        return dict(self._vars)

    def add(self, *constraints) -> None:
        for c in constraints:
            if isinstance(c, (list, tuple)):
                self.add(*c)
            else:
                self.constraints.append(c)
        self._problem = None

    def add_psd(self, M) -> cp.Constraint:
        shape = _shape(M)
        if shape[0] != shape[1]:
            raise ValueError(f"PSD constraint needs a square matrix, got {shape}")
        M = _as_2d(M)
        if not isinstance(M, cp.Expression):
            M = cp.Constant(M)
        con = sym(M) >> 0
        self.add(con)
        return con

    def add_lmi(self, blocks) -> cp.Constraint:
        """Register ``[[P, Q], [Q', R]] >= 0``; see :func:`build_lmi_block`."""
        return self.add_psd(build_lmi_block(blocks))

    def add_soc(self, t, x) -> cp.Constraint:
        """``||x||_2 <= t`` (x is flattened)."""
        con = cp.SOC(t, cp.vec(x, order="C") if x.ndim > 1 else x)
        self.add(con)
        return con

    def minimize(self, expr) -> None:
        self._objective = cp.Minimize(expr)
        self._problem = None

    def maximize(self, expr) -> None:
        self._objective = cp.Maximize(expr)
        self._problem = None

    @property
    def problem(self) -> cp.Problem:
        if self._problem is None:
            obj = self._objective if self._objective is not None else cp.Minimize(0)
            self._problem = cp.Problem(obj, self.constraints)
        return self._problem

    def solve(self, tol: Tolerances | None = None) -> ConicSolution:
        return solve(self, tol)

    def dump_cbf(self, path) -> Path:
        """Write the program in Conic Benchmark Format (CBF v3)."""
        return _dump_cbf(self.problem, Path(path))


def _max_violation(problem: cp.Problem) -> float:
    worst = 0.0
    for c in problem.constraints:
        try:
            v = c.violation()
        except (ValueError, TypeError):
            continue
        if v is None:
            continue
        v = np.max(np.abs(np.asarray(v, dtype=float))) if np.size(v) else 0.0
        worst = max(worst, float(v))
    return worst


def solve(program: ConicProgram | cp.Problem, tol: Tolerances | None = None) -> ConicSolution:
    """Solve with Clarabel and report a :class:`ConicSolution`.

    Never raises on solver breakdown: the status becomes ``numerical-failure``.
    """
    tol = DEFAULT_TOL if tol is None else tol
    problem = program.problem if isinstance(program, ConicProgram) else program
    names = program._vars if isinstance(program, ConicProgram) else {v.name(): v for v in problem.variables()}
    t0 = time.perf_counter()
    with _SOLVE_LOCK:
        try:
            data, chain, inverse = problem.get_problem_data(cp.CLARABEL)
            raw = chain.solver.solve_via_data(data, False, False, tol.solver_opts())
            with warnings.catch_warnings():
                # inaccurate solutions are judged below against Tolerances.accept
                warnings.filterwarnings("ignore", message="Solution may be inaccurate")
                problem.unpack_results(raw, chain, inverse)
        except (cp.error.SolverError, ValueError, ArithmeticError) as exc:  # pragma: no cover - solver breakdown
            return ConicSolution("numerical-failure", np.nan, raw_status=f"exception: {exc}",
                                 solve_time=time.perf_counter() - t0)
    if not hasattr(raw, "obj_val_dual"):
        # no decision variables: cvxpy short-circuits to a constant solution
        status = {"optimal": "optimal", "infeasible": "infeasible", "unbounded": "unbounded"}.get(
            problem.status, "numerical-failure")
        objective = float(problem.value) if status == "optimal" else np.nan
        return ConicSolution(status, objective, primal_residual=0.0, dual_residual=0.0, gap=0.0,
                             solve_time=time.perf_counter() - t0, raw_status=str(problem.status))
    raw_status = str(raw.status)
    obj_p, obj_d = float(raw.obj_val), float(raw.obj_val_dual)
    gap = abs(obj_p - obj_d) / max(1.0, abs(obj_p), abs(obj_d))
    r_prim, r_dual = float(raw.r_prim), float(raw.r_dual)
    status = _STATUS_MAP.get(raw_status, "numerical-failure")
    if status == "optimal" or status == "numerical-failure":
        lim = tol.accept
        within = gap <= lim * tol.gap and r_prim <= lim * tol.feas and r_dual <= lim * tol.feas
        if raw_status == "Solved" or within:
            status = "optimal"
        else:
            status = "numerical-failure"
    values = {}
    if status == "optimal":
        values = {name: (None if v.value is None else np.array(v.value, dtype=float)) for name, v in names.items()}
        objective = float(problem.value)
    else:
        objective = {"infeasible": np.inf, "unbounded": -np.inf}.get(status, np.nan)
        if problem.objective.NAME == "maximize" and status in ("infeasible", "unbounded"):
            objective = -objective
    return ConicSolution(
        status=status,
        objective=objective,
        values=values,
        primal_residual=r_prim,
        dual_residual=r_dual,
        gap=gap,
        iterations=int(raw.iterations),
        solve_time=time.perf_counter() - t0,
        raw_status=raw_status,
    )


def require_optimal(sol: ConicSolution, what: str) -> ConicSolution:
    if not sol.ok:
        raise SolverError(f"{what}: solver returned {sol.status} ({sol.raw_status})", sol)
    return sol


# ---------------------------------------------------------------------------
# Conic Benchmark Format export/import


def _dump_cbf(problem: cp.Problem, path: Path) -> Path:
    data, _chain, inverse = problem.get_problem_data(cp.SCS)
    c = np.asarray(data["c"], dtype=float)
    A = data["A"].tocoo()
    b = np.asarray(data["b"], dtype=float)
    dims = data["dims"]
    offset = float(np.asarray(inverse[-1].get("offset", 0.0)))
    n = c.size
    scalar_rows = dims.zero + dims.nonneg + sum(dims.soc)
    lines = ["VER", "3", "", "OBJSENSE", "MIN", "", "VAR", f"{n} 1", f"F {n}", ""]

    psd_sizes = list(dims.psd)
    if psd_sizes:
        lines += ["PSDCON", str(len(psd_sizes))] + [str(k) for k in psd_sizes] + [""]

    cones = []
    if dims.zero:
        cones.append(f"L= {dims.zero}")
    if dims.nonneg:
        cones.append(f"L+ {dims.nonneg}")
    cones += [f"Q {k}" for k in dims.soc]
    if scalar_rows:
        lines += ["CON", f"{scalar_rows} {len(cones)}"] + cones + [""]

    obj = [(j, c[j]) for j in np.flatnonzero(c)]
    if obj:
        lines += ["OBJACOORD", str(len(obj))] + [f"{j} {float(v)!r}" for j, v in obj] + [""]
    if offset:
        lines += ["OBJBCOORD", repr(float(offset)), ""]

    # scalar cones: s = b - A x  ->  CBF stores a x + b in the cone
    mask = A.row < scalar_rows
    acoord = [(r, j, -v) for r, j, v in zip(A.row[mask], A.col[mask], A.data[mask]) if v != 0]
    if acoord:
        lines += ["ACOORD", str(len(acoord))] + [f"{r} {j} {float(v)!r}" for r, j, v in acoord] + [""]
    bcoord = [(r, b[r]) for r in range(scalar_rows) if b[r] != 0]
    if bcoord:
        lines += ["BCOORD", str(len(bcoord))] + [f"{r} {float(v)!r}" for r, v in bcoord] + [""]

    # PSD cones: svec (lower triangle, column-major, off-diagonals scaled by sqrt 2)
    hcoord, dcoord = [], []
    row0 = scalar_rows
    for k, size in enumerate(psd_sizes):
        index = _svec_index(size)
        nrows = len(index)
        sel = (A.row >= row0) & (A.row < row0 + nrows)
        for r, j, v in zip(A.row[sel], A.col[sel], A.data[sel]):
            a, bb = index[r - row0]
            scale = 1.0 if a == bb else np.sqrt(2.0)
            if v != 0:
                hcoord.append(f"{k} {j} {a} {bb} {float(-v / scale)!r}")
        for r in range(nrows):
            if b[row0 + r] != 0:
                a, bb = index[r]
                scale = 1.0 if a == bb else np.sqrt(2.0)
                dcoord.append(f"{k} {a} {bb} {float(b[row0 + r] / scale)!r}")
        row0 += nrows
    if hcoord:
        lines += ["HCOORD", str(len(hcoord))] + hcoord + [""]
    if dcoord:
        lines += ["DCOORD", str(len(dcoord))] + dcoord + [""]
    path.write_text("\n".join(lines) + "\n")
    return path


def _svec_index(size: int) -> list[tuple[int, int]]:
    return [(i, j) for j in range(size) for i in range(j, size)]


def load_cbf(path) -> tuple[cp.Problem, cp.Variable]:
    """Read back a file written by :meth:`ConicProgram.dump_cbf` (subset of CBF)."""
    tokens = [ln.strip() for ln in Path(path).read_text().splitlines()]
    tokens = [t for t in tokens if t and not t.startswith("#")]
    it = iter(tokens)
    n = 0
    cones: list[tuple[str, int]] = []
    psd: list[int] = []
    obj_a: dict[int, float] = {}
    obj_b = 0.0
    acoord, bcoord, hcoord, dcoord = [], [], [], []
    for key in it:
        if key == "VER":
            next(it)
        elif key == "OBJSENSE":
            if next(it) != "MIN":
                raise ValueError("only minimization is supported")
        elif key == "VAR":
            n, k = map(int, next(it).split())
            for _ in range(k):
                next(it)
        elif key == "PSDCON":
            psd = [int(next(it)) for _ in range(int(next(it)))]
        elif key == "CON":
            _, k = map(int, next(it).split())
            for _ in range(k):
                kind, size = next(it).split()
                cones.append((kind, int(size)))
        elif key == "OBJACOORD":
            for _ in range(int(next(it))):
                j, v = next(it).split()
                obj_a[int(j)] = float(v)
        elif key == "OBJBCOORD":
            obj_b = float(next(it))
        elif key in ("ACOORD", "BCOORD", "HCOORD", "DCOORD"):
            target = {"ACOORD": acoord, "BCOORD": bcoord, "HCOORD": hcoord, "DCOORD": dcoord}[key]
            for _ in range(int(next(it))):
                target.append(next(it).split())
        else:
            raise ValueError(f"unsupported CBF section {key}")
    x = cp.Variable(n)
    m = sum(size for _, size in cones)
    Amat = np.zeros((m, n))
    bvec = np.zeros(m)
    for r, j, v in acoord:
        Amat[int(r), int(j)] += float(v)
    for r, v in bcoord:
        bvec[int(r)] += float(v)
    expr = Amat @ x + bvec if m else None
    cons = []
    row = 0
    for kind, size in cones:
        seg = expr[row:row + size]
        if kind == "L=":
            cons.append(seg == 0)
        elif kind == "L+":
            cons.append(seg >= 0)
        elif kind == "Q":
            cons.append(cp.SOC(seg[0], seg[1:]))
        else:
            raise ValueError(f"unsupported cone {kind}")
        row += size
    for k, size in enumerate(psd):
        H = [np.zeros((size, size)) for _ in range(n)]
        D = np.zeros((size, size))
        for kk, j, a, bb, v in hcoord:
            if int(kk) == k:
                a, bb, v = int(a), int(bb), float(v)
                H[int(j)][a, bb] += v
                if a != bb:
                    H[int(j)][bb, a] += v
        for kk, a, bb, v in dcoord:
            if int(kk) == k:
                a, bb, v = int(a), int(bb), float(v)
                D[a, bb] += v
                if a != bb:
                    D[bb, a] += v
        M = D + sum(x[j] * H[j] for j in range(n) if np.any(H[j]))
        cons.append(sym(M) >> 0)
    c = np.zeros(n)
    for j, v in obj_a.items():
        c[j] = v
    return cp.Problem(cp.Minimize(c @ x + obj_b), cons), x
