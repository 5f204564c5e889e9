import itertools
from pathlib import Path

import numpy as np
from pytest import fixture


@fixture
def fixture_path(request):
    this_file = Path(request.module.__file__)
    return Path(this_file.parent, 'fixture_files')


def vertex_objective_values(c, a_eq, b_eq, a_ub=None, b_ub=None, tol=1e-9):
    """Objective values at every basic feasible solution of ``{x >= 0, a_eq x = b_eq, a_ub x <= b_ub}``.

    Brute force over column subsets, for polytopes small enough to enumerate.
    """
    a_eq = np.asarray(a_eq, dtype=float)
    b_eq = np.asarray(b_eq, dtype=float)
    n = a_eq.shape[1]
    k = 0 if a_ub is None else len(a_ub)
    if k:
        a_ub = np.asarray(a_ub, dtype=float).reshape(k, n)
        matrix = np.vstack([np.hstack([a_eq, np.zeros((a_eq.shape[0], k))]), np.hstack([a_ub, np.eye(k)])])
        rhs = np.concatenate([b_eq, np.asarray(b_ub, dtype=float)])
    else:
        matrix = a_eq
        rhs = b_eq
    costs = np.concatenate([np.asarray(c, dtype=float), np.zeros(k)])

    rank = np.linalg.matrix_rank(matrix)
    values = []
    for columns in itertools.combinations(range(n + k), rank):
        columns = list(columns)
        sub = matrix[:, columns]
        if np.linalg.matrix_rank(sub) < rank:
            continue
        z, *_ = np.linalg.lstsq(sub, rhs, rcond=None)
        if np.abs(sub @ z - rhs).max() > tol or z.min() < -tol:
            continue
        values.append(float(costs[columns] @ z))
    return values


def martingale_system(levels, s0, horizon, marginals=()):
    """Probability, martingale, and marginal rows written out one path at a time."""
    paths = list(itertools.product(levels, repeat=horizon))
    rows = [[1.0] * len(paths)]
    rhs = [1.0]
    for t in range(horizon):
        for prefix in itertools.product(levels, repeat=t):
            row = []
            for path in paths:
                before = s0 if t == 0 else path[t - 1]
                row.append(path[t] - before if path[:t] == prefix else 0.0)
            rows.append(row)
            rhs.append(0.0)
    for date, masses in marginals:
        for level, mass in zip(levels, masses):
            rows.append([1.0 if path[date - 1] == level else 0.0 for path in paths])
            rhs.append(mass)
    return np.array(rows), np.array(rhs)


class VertexOracle():
    """Robust price bounds by enumerating every vertex of the martingale polytope."""

    vertex_objective_values = staticmethod(vertex_objective_values)
    martingale_system = staticmethod(martingale_system)

    def bounds(self, levels, s0, horizon, phi_values, two_sided=(), buy_only=(), marginals=()):
        """Return ``(lower, upper)`` of ``E[phi]``, or None when the polytope is empty.

        ``two_sided`` and ``buy_only`` are per-path values of ``payoff - price``.
        """
        a_eq, b_eq = martingale_system(levels, s0, horizon, marginals)
        if len(two_sided):
            a_eq = np.vstack([a_eq, np.asarray(two_sided, dtype=float)])
            b_eq = np.concatenate([b_eq, np.zeros(len(two_sided))])
        b_ub = np.zeros(len(buy_only)) if len(buy_only) else None
        values = vertex_objective_values(phi_values, a_eq, b_eq, buy_only if len(buy_only) else None, b_ub)
        if not values:
            return None
        return min(values), max(values)


@fixture
def oracle():
    return VertexOracle()
