"""A small, self-contained linear-program solver with certified answers.

Problems have the form::

    minimize    c' y
    subject to  A_eq y  = b_eq
                A_ub y <= b_ub
                lower <= y <= upper      (infinite bounds allowed)

:func:`solve` is a two-phase revised simplex method using Bland's rule, so the
returned vertex is deterministic.  Every answer comes with a certificate that is
re-checked before returning:

``optimal``
    primal ``y`` and dual multipliers with small residuals and duality gap.
``infeasible``
    a Farkas ray (see :class:`FarkasRay`).
``unbounded``
    a feasible point and a primal ray along which the objective decreases.

Dual multipliers are sensitivities of the optimal value with respect to the
right-hand side: equality multipliers are free, ``<=`` multipliers are
nonpositive, lower-bound multipliers nonnegative and upper-bound multipliers
nonpositive, and ``c = A_eq' dual_eq + A_ub' dual_ub + dual_lower + dual_upper``.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Any, Self

import numpy as np
import scipy.sparse
from scipy.linalg import lu_factor, lu_solve

from robustprice.errors import InstanceError, NumericalFailure
from robustprice.yaml_data import YamlData


OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"


@dataclass(frozen=True)
class Tolerances(YamlData):
    """Numerical tolerances shared by the solver and the independent verifications."""

    feas_tol: float = 1e-9
    """Primal and dual feasibility residuals, and the margin for strict inequalities."""

    gap_tol: float = 1e-7
    """Allowed difference between primal and dual objective values."""

    comp_tol: float = 1e-7
    """Allowed product of slack and multiplier for each inequality."""

    pivot_tol: float = 1e-10
    """Smallest pivot element the ratio test accepts."""

    max_iterations: int = 200_000
    """Simplex pivots allowed across both phases before giving up."""

    def __post_init__(self):
        for name in ("feas_tol", "gap_tol", "comp_tol", "pivot_tol"):
            value = getattr(self, name)
            if not value > 0:
                raise InstanceError(f"Tolerance {name} must be positive, got {value}.")
        if self.max_iterations < 1:
            raise InstanceError(f"max_iterations must be positive, got {self.max_iterations}.")


def as_csr(block: Any, rows: int, columns: int) -> scipy.sparse.csr_matrix:
    """Convert a dense array, a sparse matrix, or (row, column, value) triplets to CSR.

    Duplicate triplets are summed.
    """
    if block is None:
        return scipy.sparse.csr_matrix((rows, columns))
    if isinstance(block, tuple) and len(block) == 3:
        r, c, v = (np.asarray(a) for a in block)
        if r.size and (r.min() < 0 or r.max() >= rows):
            raise InstanceError(f"Constraint row index out of range 0..{rows - 1}.")
        if c.size and (c.min() < 0 or c.max() >= columns):
            raise InstanceError(f"Constraint column index out of range 0..{columns - 1}.")
        matrix = scipy.sparse.coo_matrix((v.astype(float), (r, c)), shape=(rows, columns)).tocsr()
    else:
        matrix = scipy.sparse.csr_matrix(block, dtype=float)
    if matrix.shape != (rows, columns):
        raise InstanceError(f"Constraint block has shape {matrix.shape}, expected {(rows, columns)}.")
    matrix.sum_duplicates()
    return matrix


@dataclass
class LinearProgram():
    """A linear program in the form solved by :func:`solve`.

    Constraint blocks may be given as dense arrays, scipy sparse matrices, or
    ``(rows, columns, values)`` triplets.  Bounds may be scalars or vectors.
    """

    objective: np.ndarray
    a_eq: Any = None
    b_eq: np.ndarray = None
    a_ub: Any = None
    b_ub: np.ndarray = None
    lower: Any = 0.0
    upper: Any = math.inf
    eq_names: list[str] = field(default_factory=list)
    ub_names: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.objective = np.asarray(self.objective, dtype=float).ravel()
        n = self.objective.size
        self.b_eq = np.zeros(0) if self.b_eq is None else np.asarray(self.b_eq, dtype=float).ravel()
        self.b_ub = np.zeros(0) if self.b_ub is None else np.asarray(self.b_ub, dtype=float).ravel()
        self.a_eq = as_csr(self.a_eq, self.b_eq.size, n)
        self.a_ub = as_csr(self.a_ub, self.b_ub.size, n)
        self.lower = np.broadcast_to(np.asarray(self.lower, dtype=float), (n,)).copy()
        self.upper = np.broadcast_to(np.asarray(self.upper, dtype=float), (n,)).copy()

        for name, values in [("objective", self.objective), ("b_eq", self.b_eq), ("b_ub", self.b_ub),
                             ("a_eq", self.a_eq.data), ("a_ub", self.a_ub.data)]:
            if not np.all(np.isfinite(values)):
                raise InstanceError(f"Linear program {name} has NaN or infinite coefficients.")
        if np.any(np.isnan(self.lower)) or np.any(np.isnan(self.upper)):
            raise InstanceError("Linear program bounds contain NaN.")
        if np.any(self.lower == math.inf) or np.any(self.upper == -math.inf):
            raise InstanceError("Lower bounds can't be +inf and upper bounds can't be -inf.")
        if np.any(self.lower > self.upper):
            raise InstanceError("Some variable has lower bound above its upper bound.")

    @property
    def num_variables(self) -> int:
        return self.objective.size

    @property
    def num_eq(self) -> int:
        return self.b_eq.size

    @property
    def num_ub(self) -> int:
        return self.b_ub.size


@dataclass
class FarkasRay(YamlData):
    """Proof that a linear program has no feasible point.

    Multipliers ``ub``, ``lower`` and ``upper`` are nonnegative, and::

        A_eq' eq + A_ub' ub - lower + upper = 0
        b_eq' eq + b_ub' ub - l' lower + u' upper = value < 0

    Adding the constraints with these weights gives ``0 <= value < 0``.
    """

    eq: np.ndarray = None
    ub: np.ndarray = None
    lower: np.ndarray = None
    upper: np.ndarray = None
    value: float = None
    residual: float = None


@dataclass
class LpSolution(YamlData):
    status: str = None
    primal: np.ndarray = None
    dual_eq: np.ndarray = None
    dual_ub: np.ndarray = None
    dual_lower: np.ndarray = None
    dual_upper: np.ndarray = None
    objective_value: float = None
    dual_objective: float = None
    farkas: FarkasRay = None
    primal_ray: np.ndarray = None
    iterations: int = 0
    primal_residual: float = None
    dual_residual: float = None
    gap: float = None
    complementarity: float = None

    @property
    def dual(self) -> np.ndarray:
        """Multipliers for all constraints, equality rows first."""
        return np.concatenate([self.dual_eq, self.dual_ub])


class _StandardForm():
    """The program rewritten as ``min c'x, A x = b, x >= 0`` with ``b >= 0``.

    Each original variable maps to one column (``y = l + x`` or ``y = u - x``) or, when free,
    two columns ``y = x+ - x-``.  Boxed variables get an extra row ``x + t = u - l``.
    Inequalities get slack columns.
    """

    def __init__(self, lp: LinearProgram):
        n = lp.num_variables
        self.lp = lp
        self.has_lower = np.isfinite(lp.lower)
        self.has_upper = np.isfinite(lp.upper)
        self.shift = np.where(self.has_lower, lp.lower, np.where(self.has_upper, lp.upper, 0.0))

        free = ~self.has_lower & ~self.has_upper
        boxed = np.flatnonzero(self.has_lower & self.has_upper)
        main_sign = np.where(self.has_lower | free, 1.0, -1.0)
        self.col_var = np.concatenate([np.arange(n), np.flatnonzero(free)])
        self.col_sign = np.concatenate([main_sign, -np.ones(int(free.sum()))])

        n_struct = self.col_var.size
        m_eq, m_ub, m_box = lp.num_eq, lp.num_ub, boxed.size
        self.m_eq, self.m_ub, self.m_box = m_eq, m_ub, m_box
        self.n_struct = n_struct
        self.n_cols = n_struct + m_ub + m_box
        self.m = m_eq + m_ub + m_box

        a = np.zeros((self.m, self.n_cols))
        if m_eq:
            a[:m_eq, :n_struct] = lp.a_eq.toarray()[:, self.col_var] * self.col_sign
        if m_ub:
            a[m_eq:m_eq + m_ub, :n_struct] = lp.a_ub.toarray()[:, self.col_var] * self.col_sign
            a[m_eq:m_eq + m_ub, n_struct:n_struct + m_ub] = np.eye(m_ub)
        if m_box:
            a[m_eq + m_ub + np.arange(m_box), boxed] = 1.0
            a[m_eq + m_ub:, n_struct + m_ub:] = np.eye(m_box)

        b = np.concatenate([
            lp.b_eq - lp.a_eq @ self.shift,
            lp.b_ub - lp.a_ub @ self.shift,
            lp.upper[boxed] - lp.lower[boxed],
        ])
        self.row_sign = np.where(b < 0, -1.0, 1.0)
        self.a = a * self.row_sign[:, None]
        self.b = b * self.row_sign
        self.c = np.concatenate([lp.objective[self.col_var] * self.col_sign, np.zeros(m_ub + m_box)])

    def recover(self, x: np.ndarray, shift: bool = True) -> np.ndarray:
        """Map standard-form columns back to original variables."""
        y = np.bincount(self.col_var, weights=self.col_sign * x[:self.n_struct], minlength=self.lp.num_variables)
        return y + self.shift if shift else y

    def row_multipliers(self, w: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Undo row flips and split standard-form row multipliers into equality and inequality parts."""
        v = w * self.row_sign
        return v[:self.m_eq], v[self.m_eq:self.m_eq + self.m_ub]


class _Simplex():
    """Revised simplex iterations over a dense standard form with explicit artificial columns."""

    def __init__(self, a: np.ndarray, b: np.ndarray, tolerances: Tolerances):
        self.m, self.n = a.shape
        self.a = np.hstack([a, np.eye(self.m)])
        self.b = b
        self.tolerances = tolerances
        self.basis = self.n + np.arange(self.m)
        self.iterations = 0
        self.dual_tol = tolerances.feas_tol * 0.1

    def is_artificial(self, columns: np.ndarray) -> np.ndarray:
        return columns >= self.n

    def factor(self):
        if not self.m:
            return None
        return lu_factor(self.a[:, self.basis], check_finite=False)

    def basis_solve(self, lu, rhs: np.ndarray, trans: int = 0) -> np.ndarray:
        if lu is None:
            return np.zeros(0)
        return lu_solve(lu, rhs, trans=trans, check_finite=False)

    def run(self, c: np.ndarray, allowed: np.ndarray) -> tuple[str, Any]:
        """Pivot with Bland's rule until optimal or unbounded.

        Returns ``(OPTIMAL, None)`` or ``(UNBOUNDED, (column, direction))``.
        """
        tol = self.tolerances
        while True:
            if self.iterations >= tol.max_iterations:
                raise NumericalFailure(f"Simplex did not finish within {tol.max_iterations} iterations.")

            lu = self.factor()
            x_basic = np.maximum(self.basis_solve(lu, self.b), 0.0)
            w = self.basis_solve(lu, c[self.basis], trans=1)
            reduced = c - self.a.T @ w

            candidates = allowed.copy()
            candidates[self.basis] = False
            entering = np.flatnonzero(candidates & (reduced < -self.dual_tol))
            if not entering.size:
                return OPTIMAL, None

            # Bland's rule: lowest-index improving column...
            j = entering[0]
            u = self.basis_solve(lu, self.a[:, j])

            blocking = u > tol.pivot_tol
            theta = np.full(self.m, math.inf)
            theta[blocking] = x_basic[blocking] / u[blocking]

            # Artificials left in redundant rows must stay at zero.
            stuck = self.is_artificial(self.basis) & (np.abs(u) > tol.pivot_tol) & ~allowed[self.basis]
            theta[stuck] = 0.0

            if not np.isfinite(theta).any():
                return UNBOUNDED, (j, u)

            # ...and lowest-index leaving column among ties.
            ties = np.flatnonzero(theta <= theta.min() + 1e-12)
            r = ties[np.argmin(self.basis[ties])]
            self.basis[r] = j
            self.iterations += 1

    def drive_out_artificials(self):
        """After phase 1, swap zero-valued artificials out of the basis where some real column can replace them."""
        for r in range(self.m):
            if not self.is_artificial(self.basis[r]):
                continue
            lu = self.factor()
            e = np.zeros(self.m)
            e[r] = 1.0
            row = self.basis_solve(lu, e, trans=1) @ self.a[:, :self.n]
            row[self.basis[~self.is_artificial(self.basis)]] = 0.0
            j = int(np.argmax(np.abs(row)))
            if abs(row[j]) > self.tolerances.pivot_tol:
                self.basis[r] = j

    def point(self) -> np.ndarray:
        x = np.zeros(self.n + self.m)
        x[self.basis] = np.maximum(self.basis_solve(self.factor(), self.b), 0.0)
        return x

    def duals(self, c: np.ndarray) -> np.ndarray:
        return self.basis_solve(self.factor(), c[self.basis], trans=1)


def solve(lp: LinearProgram, tolerances: Tolerances = Tolerances()) -> LpSolution:
    """Solve the linear program and certify the answer.

    Raises :class:`NumericalFailure` when the certificate doesn't hold within
    tolerance, rather than returning an uncertified answer.
    """
    standard = _StandardForm(lp)
    logging.debug(f"Solving LP with {lp.num_variables} variables, {lp.num_eq} equalities, {lp.num_ub} inequalities.")

    simplex = _Simplex(standard.a, standard.b, tolerances)
    phase_one_costs = np.concatenate([np.zeros(standard.n_cols), np.ones(standard.m)])
    simplex.run(phase_one_costs, np.ones(standard.n_cols + standard.m, dtype=bool))
    infeasibility = float(phase_one_costs @ simplex.point())

    if infeasibility > tolerances.feas_tol * (1.0 + np.abs(standard.b).max(initial=0.0)):
        solution = _infeasible_solution(standard, simplex.duals(phase_one_costs), tolerances)
        solution.iterations = simplex.iterations
        logging.debug(f"LP infeasible after {simplex.iterations} iterations, phase one value {infeasibility:.3g}.")
        return solution

    simplex.drive_out_artificials()
    costs = np.concatenate([standard.c, np.zeros(standard.m)])
    allowed = np.concatenate([np.ones(standard.n_cols, dtype=bool), np.zeros(standard.m, dtype=bool)])
    status, detail = simplex.run(costs, allowed)

    if status == UNBOUNDED:
        solution = _unbounded_solution(standard, simplex, detail, tolerances)
    else:
        solution = _optimal_solution(standard, simplex.point(), simplex.duals(costs), tolerances)
    solution.iterations = simplex.iterations
    logging.debug(f"LP {solution.status} after {simplex.iterations} iterations.")
    return solution


def _infeasible_solution(standard: _StandardForm, w: np.ndarray, tolerances: Tolerances) -> LpSolution:
    lp = standard.lp
    lambda_eq, lambda_ub = standard.row_multipliers(w)
    ray_eq = -lambda_eq
    ray_ub = np.maximum(-lambda_ub, 0.0)

    scale = max(np.abs(ray_eq).max(initial=0.0), ray_ub.max(initial=0.0))
    if not scale > 0:
        raise NumericalFailure("Phase one ended infeasible but produced an empty Farkas ray.")
    ray_eq, ray_ub = ray_eq / scale, ray_ub / scale

    combined = lp.a_eq.T @ ray_eq + lp.a_ub.T @ ray_ub
    ray_lower = np.where(standard.has_lower, np.maximum(combined, 0.0), 0.0)
    ray_upper = np.where(standard.has_upper, np.maximum(-combined, 0.0), 0.0)
    residual = float(np.abs(combined - ray_lower + ray_upper).max(initial=0.0))
    value = float(lp.b_eq @ ray_eq + lp.b_ub @ ray_ub
                  - lp.lower[standard.has_lower] @ ray_lower[standard.has_lower]
                  + lp.upper[standard.has_upper] @ ray_upper[standard.has_upper])

    a_scale = 1.0 + max(np.abs(lp.a_eq.data).max(initial=0.0), np.abs(lp.a_ub.data).max(initial=0.0))
    if residual > tolerances.feas_tol * a_scale or not value < -tolerances.feas_tol:
        raise NumericalFailure(f"Farkas certificate failed: residual {residual:.3g}, value {value:.3g}.")

    return LpSolution(
        status=INFEASIBLE,
        farkas=FarkasRay(eq=ray_eq, ub=ray_ub, lower=ray_lower, upper=ray_upper, value=value, residual=residual),
    )


def _unbounded_solution(standard: _StandardForm, simplex: _Simplex, detail, tolerances: Tolerances) -> LpSolution:
    lp = standard.lp
    j, u = detail
    direction = np.zeros(simplex.n + simplex.m)
    direction[simplex.basis] = -u
    direction[j] = 1.0
    ray = standard.recover(direction, shift=False)
    point = standard.recover(simplex.point())

    slope = float(lp.objective @ ray)
    drift = max(np.abs(lp.a_eq @ ray).max(initial=0.0), (lp.a_ub @ ray).max(initial=0.0))
    if not slope < 0 or drift > tolerances.feas_tol * (1.0 + np.abs(ray).max()):
        raise NumericalFailure(f"Unbounded ray failed: slope {slope:.3g}, drift {drift:.3g}.")

    return LpSolution(status=UNBOUNDED, primal=point, primal_ray=ray, objective_value=-math.inf)


def _optimal_solution(standard: _StandardForm, x: np.ndarray, w: np.ndarray, tolerances: Tolerances) -> LpSolution:
    lp = standard.lp
    y = standard.recover(x)
    dual_eq, dual_ub = standard.row_multipliers(w)
    dual_ub = np.minimum(dual_ub, 0.0)

    reduced = lp.objective - lp.a_eq.T @ dual_eq - lp.a_ub.T @ dual_ub
    dual_lower = np.where(standard.has_lower, np.maximum(reduced, 0.0), 0.0)
    dual_upper = np.where(standard.has_upper, np.minimum(reduced, 0.0), 0.0)
    dual_residual = float(np.abs(reduced - dual_lower - dual_upper).max(initial=0.0))

    slack_ub = lp.b_ub - lp.a_ub @ y
    slack_lower = np.where(standard.has_lower, y - lp.lower, 0.0)
    slack_upper = np.where(standard.has_upper, lp.upper - y, 0.0)
    primal_residual = float(max(
        np.abs(lp.a_eq @ y - lp.b_eq).max(initial=0.0),
        (-slack_ub).max(initial=0.0),
        (-slack_lower).max(initial=0.0),
        (-slack_upper).max(initial=0.0),
    ))

    objective_value = float(lp.objective @ y)
    dual_objective = float(lp.b_eq @ dual_eq + lp.b_ub @ dual_ub
                           + lp.lower[standard.has_lower] @ dual_lower[standard.has_lower]
                           + lp.upper[standard.has_upper] @ dual_upper[standard.has_upper])
    gap = abs(objective_value - dual_objective)
    complementarity = float(max(
        (np.abs(dual_ub) * np.abs(slack_ub)).max(initial=0.0),
        (dual_lower * np.abs(slack_lower)).max(initial=0.0),
        (np.abs(dual_upper) * np.abs(slack_upper)).max(initial=0.0),
    ))

    solution = LpSolution(
        status=OPTIMAL,
        primal=y,
        dual_eq=dual_eq,
        dual_ub=dual_ub,
        dual_lower=dual_lower,
        dual_upper=dual_upper,
        objective_value=objective_value,
        dual_objective=dual_objective,
        primal_residual=primal_residual,
        dual_residual=dual_residual,
        gap=gap,
        complementarity=complementarity,
    )

    scale = 1.0 + abs(objective_value)
    if (primal_residual > tolerances.feas_tol * (1.0 + np.abs(standard.b).max(initial=0.0))
            or dual_residual > tolerances.feas_tol * (1.0 + np.abs(lp.objective).max(initial=0.0))
            or gap > tolerances.gap_tol * scale
            or complementarity > tolerances.comp_tol * scale):
        raise NumericalFailure(
            f"Optimal certificate failed: primal residual {primal_residual:.3g}, dual residual {dual_residual:.3g}, "
            f"gap {gap:.3g}, complementarity {complementarity:.3g}.")
    return solution


def _mps_number(value: float) -> str:
    for digits in range(12, 2, -1):
        text = f"{value:.{digits}g}"
        if len(text) <= 12:
            return text
    return f"{value:.2e}"


def write_mps(lp: LinearProgram, mps_file: str, name: str = "ROBUSTLP"):
    """Write the program in fixed-format MPS, for cross-checking with external solvers."""
    logging.info(f"Writing LP in MPS format to: {mps_file}")
    eq_rows = [f"E{i:07d}" for i in range(lp.num_eq)]
    ub_rows = [f"L{i:07d}" for i in range(lp.num_ub)]
    columns = [f"X{j:07d}" for j in range(lp.num_variables)]

    lines = [f"NAME          {name[:8]}", "ROWS", " N  COST"]
    lines += [f" E  {row}" for row in eq_rows]
    lines += [f" L  {row}" for row in ub_rows]

    lines.append("COLUMNS")
    a_eq = lp.a_eq.tocsc()
    a_ub = lp.a_ub.tocsc()
    for j, column in enumerate(columns):
        entries = []
        if lp.objective[j] != 0:
            entries.append(("COST", lp.objective[j]))
        for k in range(a_eq.indptr[j], a_eq.indptr[j + 1]):
            entries.append((eq_rows[a_eq.indices[k]], a_eq.data[k]))
        for k in range(a_ub.indptr[j], a_ub.indptr[j + 1]):
            entries.append((ub_rows[a_ub.indices[k]], a_ub.data[k]))
        for row, value in entries:
            lines.append(f"    {column:<8}  {row:<8}  {_mps_number(value):>12}")

    lines.append("RHS")
    for row, value in zip(eq_rows + ub_rows, np.concatenate([lp.b_eq, lp.b_ub])):
        if value != 0:
            lines.append(f"    {'RHS':<8}  {row:<8}  {_mps_number(value):>12}")

    lines.append("BOUNDS")
    for column, lower, upper in zip(columns, lp.lower, lp.upper):
        if lower == upper:
            lines.append(f" FX {'BND':<8}  {column:<8}  {_mps_number(lower):>12}")
            continue
        if math.isinf(lower) and math.isinf(upper):
            lines.append(f" FR {'BND':<8}  {column:<8}")
            continue
        if math.isinf(lower):
            lines.append(f" MI {'BND':<8}  {column:<8}")
        elif lower != 0:
            lines.append(f" LO {'BND':<8}  {column:<8}  {_mps_number(lower):>12}")
        if not math.isinf(upper):
            lines.append(f" UP {'BND':<8}  {column:<8}  {_mps_number(upper):>12}")
    lines.append("ENDATA")

    with open(mps_file, "w") as f:
        f.write("\n".join(lines) + "\n")
