import numpy as np
import pytest

from mfsb import conic
from mfsb.errors import ConfigurationError
from mfsb.linalg import smat, svec, svec_basis, svec_dim


def test_svec_roundtrip_and_inner_product():
    rng = np.random.default_rng(0)
    for n in (1, 2, 3, 5):
        a = rng.normal(size=(n, n)); a = a + a.T
        b = rng.normal(size=(n, n)); b = b + b.T
        np.testing.assert_allclose(smat(svec(a)), a, atol=1e-14)
        assert svec(a) @ svec(b) == pytest.approx(np.sum(a * b), rel=1e-12)
        assert len(svec_basis(n)) == svec_dim(n)


def _min_trace_program():
    prog = conic.ConicProgram()
    prog.add_symmetric("X", 2)
    prog.add_equality(conic.Aff(1, [-1.0]).add_term("X", [[1.0, 0.0, 0.0]]))
    prog.add_psd(conic.Aff(3).add_term("X", np.eye(3)), 2)
    prog.set_objective(conic.Aff(1).add_term("X", svec(np.eye(2)).reshape(1, -1)))
    return prog


def test_min_trace_psd():
    sol = conic.solve(_min_trace_program())
    assert sol.status == "optimal"
    assert sol.objective_value == pytest.approx(1.0, abs=1e-7)
    np.testing.assert_allclose(sol.extract_block("X"), np.diag([1.0, 0.0]),
                               atol=1e-7)


def test_nonneg_scalar():
    prog = conic.ConicProgram()
    prog.add_scalar("x")
    prog.add_nonneg(conic.Aff(1).add_term("x", [[1.0]]))
    prog.set_objective(conic.Aff(1).add_term("x", [[1.0]]))
    sol = conic.solve(prog)
    assert sol.status == "optimal"
    assert sol.objective_value == pytest.approx(0.0, abs=1e-8)


def test_contradictory_equality_is_infeasible():
    prog = conic.ConicProgram()
    prog.add_scalar("x")
    prog.add_equality(conic.Aff(1, [1.0]))  # 1 == 0
    prog.set_objective(conic.Aff(1).add_term("x", [[1.0]]))
    assert conic.solve(prog).status == "infeasible"


def test_unbounded_direction():
    prog = conic.ConicProgram()
    prog.add_scalar("x")
    prog.set_objective(conic.Aff(1).add_term("x", [[1.0]]))
    assert conic.solve(prog).status == "unbounded"


def test_extract_block_and_lookup_error():
    sol = conic.solve(_min_trace_program())
    assert sol.extract_block("X").shape == (2, 2)
    with pytest.raises(KeyError):
        sol.extract_block("missing")


def test_duplicate_and_unknown_block_errors():
    prog = conic.ConicProgram()
    prog.add_scalar("x")
    with pytest.raises(ConfigurationError):
        prog.add_scalar("x")
    with pytest.raises(ConfigurationError):
        prog.add_equality(conic.Aff(1).add_term("y", [[1.0]]))
    with pytest.raises(ConfigurationError):
        prog.add_equality(conic.Aff(1).add_term("x", [[1.0, 2.0]]))


def test_solution_residuals_and_reverification():
    prog = _min_trace_program()
    sol = conic.solve(prog)
    assert sol.residuals["primal"] <= 1e-6
    assert sol.residuals["dual"] <= 1e-6
    assert sol.residuals["gap"] <= 1e-6
    eq, pos, psd = prog.residuals(sol.block_values)
    assert eq <= 10 * 1e-6
    assert psd >= -10 * 1e-6


def test_weak_duality_against_external_bound():
    # max x12 over PSD X with unit diagonal is 1; the dual bound is the
    # trace of the multiplier, here checked as: objective >= -1 exactly.
    prog = conic.ConicProgram()
    prog.add_symmetric("X", 2)
    prog.add_equality(conic.Aff(2, [-1.0, -1.0]).add_term(
        "X", [[1.0, 0.0, 0.0], [0.0, 0.0, 1.0]]))
    prog.add_psd(conic.Aff(3).add_term("X", np.eye(3)), 2)
    prog.set_objective(conic.Aff(1).add_term(
        "X", (svec(np.array([[0.0, 0.5], [0.5, 0.0]]))).reshape(1, -1)))
    sol = conic.solve(prog)
    assert sol.status == "optimal"
    assert sol.objective_value >= -1.0 - 1e-6
    assert sol.objective_value == pytest.approx(-1.0, abs=1e-6)


def test_dump_triplet_format(tmp_path):
    prog = _min_trace_program()
    path = tmp_path / "prog.txt"
    prog.dump(path)
    lines = path.read_text().splitlines()
    kinds = {line.split()[0] for line in lines if not line.startswith("#")}
    assert {"VAR", "OBJ", "A", "B", "CONE"} <= kinds
    a_lines = [l.split() for l in lines if l.startswith("A ")]
    assert a_lines
    # one entry per line: constraint index, variable index, coefficient
    for row in a_lines:
        int(row[1]), int(row[2]), float(row[3])


def test_solver_is_deterministic():
    a = conic.solve(_min_trace_program())
    b = conic.solve(_min_trace_program())
    np.testing.assert_array_equal(a.extract_block("X"), b.extract_block("X"))
