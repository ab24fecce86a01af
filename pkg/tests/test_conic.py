import cvxpy as cp
import numpy as np
import pytest

from robinv.conic import (
    ConicProgram,
    SolverError,
    Tolerances,
    build_lmi_block,
    load_cbf,
    require_optimal,
    solve,
)


def test_lmi_block_schur_complement():
    # [[t, 1], [1, 1]] >= 0 iff t >= 1
    prog = ConicProgram("schur")
    t = prog.variable("t")
    prog.add_lmi([[t, 1.0], [None, 1.0]])
    prog.minimize(t)
    sol = prog.solve()
    assert sol.ok
    assert sol["t"] == pytest.approx(1.0, abs=1e-6)
    assert sol.stats()["status"] == "optimal"


def test_max_eigenvalue_program(rng):
    M = rng.standard_normal((5, 5))
    M = M + M.T
    prog = ConicProgram("lmax")
    t = prog.variable("t")
    prog.add_psd(t * np.eye(5) - M)
    prog.minimize(t)
    sol = require_optimal(prog.solve(), "lmax")
    assert sol.objective == pytest.approx(np.linalg.eigvalsh(M).max(), abs=1e-6)


def test_block_shape_checks():
    with pytest.raises(ValueError):
        build_lmi_block([[np.eye(2), np.zeros((3, 3))], [None, np.eye(3)]])
    with pytest.raises(ValueError):
        build_lmi_block([[np.zeros((2, 3)), None], [None, np.eye(3)]])
    M = build_lmi_block([[np.eye(2), None], [None, np.eye(3)]])
    assert M.shape == (5, 5)


def test_infeasible_and_unbounded_are_reported():
    prog = ConicProgram("infeasible")
    x = prog.variable("x")
    prog.add(x >= 1, x <= 0)
    prog.minimize(x)
    sol = prog.solve()
    assert sol.status == "infeasible"
    with pytest.raises(SolverError):
        require_optimal(sol, "infeasible")

    prog = ConicProgram("unbounded")
    y = prog.variable("y")
    prog.minimize(y)
    assert prog.solve().status == "unbounded"


def test_tolerances_forwarded():
    opts = Tolerances(gap=1e-5, feas=1e-6, max_iter=17).solver_opts()
    assert opts["tol_gap_rel"] == 1e-5 and opts["tol_feas"] == 1e-6 and opts["max_iter"] == 17


def test_cbf_round_trip(tmp_path):
    prog = ConicProgram("roundtrip")
    t = prog.variable("t")
    prog.add_psd(t * np.eye(2) - np.array([[2.0, 1.0], [1.0, 0.0]]))
    prog.minimize(t)
    ref = prog.solve().objective
    path = prog.dump_cbf(tmp_path / "p.cbf")
    problem, _ = load_cbf(path)
    assert solve(problem).objective == pytest.approx(ref, abs=1e-6)


def test_duplicate_variable_name_rejected():
    prog = ConicProgram()
    prog.variable("x")
    with pytest.raises(ValueError):
        prog.variable("x")
