import math
from pathlib import Path

import numpy as np
from pytest import approx, raises

from robustprice.errors import InstanceError
from robustprice.lp_core import (
    INFEASIBLE,
    OPTIMAL,
    UNBOUNDED,
    LinearProgram,
    Tolerances,
    as_csr,
    solve,
    write_mps,
)


def test_single_equality():
    solution = solve(LinearProgram(objective=[1.0], a_eq=[[1.0]], b_eq=[1.0]))
    assert solution.status == OPTIMAL
    assert solution.primal == approx([1.0])
    assert solution.objective_value == approx(1.0)
    assert solution.dual_eq == approx([1.0])
    assert solution.gap <= 1e-12


def test_infeasible_has_farkas_ray():
    lp = LinearProgram(objective=[0.0], a_ub=[[1.0]], b_ub=[-1.0])
    solution = solve(lp)
    assert solution.status == INFEASIBLE
    ray = solution.farkas
    assert ray.ub == approx([1.0])
    assert ray.lower == approx([1.0])
    assert ray.value == approx(-1.0)
    assert ray.residual <= 1e-12

    # y >= 0 and y <= -1 add up to 0 <= -1.
    combined = lp.a_ub.T @ ray.ub - ray.lower + ray.upper
    assert np.abs(combined).max() <= 1e-12


def test_simplex_constraint_dual():
    solution = solve(LinearProgram(objective=[-1.0, -1.0], a_eq=[[1.0, 1.0]], b_eq=[1.0]))
    assert solution.status == OPTIMAL
    assert solution.objective_value == approx(-1.0)
    assert solution.primal.sum() == approx(1.0)
    assert solution.dual_eq == approx([-1.0])
    assert solution.dual_lower == approx([0.0, 0.0])


def test_unbounded_has_ray():
    solution = solve(LinearProgram(objective=[-1.0, 0.0], a_eq=[[1.0, -1.0]], b_eq=[0.0]))
    assert solution.status == UNBOUNDED
    assert solution.objective_value == -math.inf
    assert solution.primal_ray == approx([1.0, 1.0])


def test_unbounded_without_constraint_rows():
    solution = solve(LinearProgram(objective=[-1.0]))
    assert solution.status == UNBOUNDED
    assert solution.primal_ray == approx([1.0])


def test_bounded_without_constraint_rows():
    solution = solve(LinearProgram(objective=[1.0, 2.0], lower=[1.0, -1.0]))
    assert solution.status == OPTIMAL
    assert solution.primal == approx([1.0, -1.0])
    assert solution.dual_lower == approx([1.0, 2.0])


def test_upper_bound_dual():
    solution = solve(LinearProgram(objective=[-1.0], lower=0.0, upper=2.0))
    assert solution.status == OPTIMAL
    assert solution.primal == approx([2.0])
    assert solution.objective_value == approx(-2.0)
    assert solution.dual_upper == approx([-1.0])
    assert solution.dual_objective == approx(-2.0)


def test_free_variable():
    lp = LinearProgram(objective=[1.0, 0.0], a_eq=[[1.0, -1.0]], b_eq=[0.0], lower=[-math.inf, 1.0])
    solution = solve(lp)
    assert solution.status == OPTIMAL
    assert solution.primal == approx([1.0, 1.0])
    assert solution.dual_eq == approx([1.0])
    assert solution.dual_lower == approx([0.0, 1.0])


def test_inequality_dual_is_nonpositive():
    # min -y subject to y <= 3.
    solution = solve(LinearProgram(objective=[-1.0], a_ub=[[1.0]], b_ub=[3.0]))
    assert solution.status == OPTIMAL
    assert solution.primal == approx([3.0])
    assert solution.dual_ub == approx([-1.0])
    assert solution.dual == approx([-1.0])


def test_triplet_constraints():
    matrix = as_csr(([0, 0, 1], [0, 1, 1], [1.0, 1.0, 2.0]), 2, 2)
    assert matrix.toarray().tolist() == [[1.0, 1.0], [0.0, 2.0]]
    with raises(InstanceError):
        as_csr(([0, 2], [0, 0], [1.0, 1.0]), 2, 2)


def test_invalid_programs():
    with raises(InstanceError):
        LinearProgram(objective=[1.0, math.nan])
    with raises(InstanceError):
        LinearProgram(objective=[1.0], a_eq=[[1.0, 2.0]], b_eq=[1.0])
    with raises(InstanceError):
        LinearProgram(objective=[1.0], lower=2.0, upper=1.0)
    with raises(InstanceError):
        Tolerances(feas_tol=0.0)


def test_resolving_gives_identical_answers(oracle):
    a_eq, b_eq = oracle.martingale_system((0.0, 1.0, 2.0), 1.0, 2)
    rng = np.random.default_rng(42)
    lp = LinearProgram(objective=rng.normal(size=a_eq.shape[1]), a_eq=a_eq, b_eq=b_eq)
    first = solve(lp)
    second = solve(lp)
    assert first.status == second.status == OPTIMAL
    assert np.array_equal(first.primal, second.primal)
    assert np.array_equal(first.dual_eq, second.dual_eq)
    assert first.iterations == second.iterations


def test_agrees_with_vertex_enumeration(oracle):
    a_eq, b_eq = oracle.martingale_system((0.0, 0.5, 1.5, 2.0), 1.0, 1)
    a_eq2, b_eq2 = oracle.martingale_system((0.0, 1.0, 3.0), 1.0, 2)
    rng = np.random.default_rng(7)
    for a, b in [(a_eq, b_eq), (a_eq2, b_eq2)]:
        for _ in range(10):
            c = np.round(rng.normal(size=a.shape[1]), 3)
            a_ub = np.round(rng.normal(size=(1, a.shape[1])), 3)
            solution = solve(LinearProgram(objective=c, a_eq=a, b_eq=b, a_ub=a_ub, b_ub=[0.1]))
            values = oracle.vertex_objective_values(c, a, b, a_ub, [0.1])
            if not values:
                assert solution.status == INFEASIBLE
                assert solution.farkas.value < 0
            else:
                assert solution.status == OPTIMAL
                assert solution.objective_value == approx(min(values), abs=1e-9)
                assert solution.dual_objective == approx(min(values), abs=1e-7)


def test_write_mps(tmp_path):
    lp = LinearProgram(
        objective=[1.0, -2.0, 0.0],
        a_eq=[[1.0, 1.0, 1.0]],
        b_eq=[1.0],
        a_ub=[[0.0, 1.0, -1.0]],
        b_ub=[0.5],
        lower=[0.0, -math.inf, 1.0],
        upper=[math.inf, math.inf, 3.0],
    )
    mps_file = Path(tmp_path, "test.mps").as_posix()
    write_mps(lp, mps_file, name="test")

    with open(mps_file) as f:
        lines = f.read().splitlines()

    assert lines[0].startswith("NAME")
    assert lines[-1] == "ENDATA"
    for section in ["ROWS", "COLUMNS", "RHS", "BOUNDS"]:
        assert section in lines
    assert " E  E0000000" in lines
    assert " L  L0000000" in lines
    assert any(line.startswith(" FR") and "X0000001" in line for line in lines)
    assert any(line.startswith(" LO") and "X0000002" in line for line in lines)
    assert any(line.startswith(" UP") and "X0000002" in line for line in lines)
