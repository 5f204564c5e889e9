"""Linear constraints saying "pi is an admissible martingale measure on the grid".

Variables are the path weights ``pi(p)``, one per path in enumeration order, all ``>= 0``.
Equality rows come first, in this order:

``probability``
    one row, ``sum_p pi(p) = 1``
``martingale``
    one row per prefix ``(x_1, ..., x_t)`` for ``t = 0, ..., T-1``, saying
    ``sum_{p extends prefix} pi(p) (x_{t+1} - x_t) = 0`` with ``x_0 = s0``.
    Prefix rows of length t start at offset ``sum_{s<t} G**s``.
``instrument_eq``
    one row per two-sided instrument, ``sum_p pi(p) phi_i(p) = 0``
``marginal``
    optional, one row per (marginal, level), ``sum_{p: x_t(p) = y} pi(p) = nu_t(y)``

Inequality rows are one per buy-only instrument, ``sum_p pi(p) phi_i(p) <= 0``.
"""

import logging
from dataclasses import dataclass, field
from typing import Any, Self

import numpy as np
import scipy.sparse

from robustprice.errors import InstanceError
from robustprice.lp_core import LinearProgram
from robustprice.marginals import Marginal
from robustprice.model import (
    GridPath,
    InstrumentSet,
    PathGridModel,
    path_array,
    path_at,
    path_digits,
    path_index,
    prefix_indices,
    with_initial_price,
)
from robustprice.yaml_data import YamlData


ATOM_THRESHOLD = 1e-12


@dataclass
class PathMeasure(YamlData):
    """A probability vector over all grid paths, indexed in enumeration order.

    Written out sparsely, listing only paths with weight above 1e-12.

    .. code-block:: json

        {"model": {"horizon": 1, "levels": [0, 2], "s0": 1},
         "atoms": [{"path": [0], "weight": 0.5}, {"path": [2], "weight": 0.5}]}
    """

    model: PathGridModel = field(default_factory=PathGridModel)
    weights: np.ndarray = None

    def __post_init__(self):
        if self.weights is None:
            self.weights = np.zeros(self.model.path_count)
        self.weights = np.asarray(self.weights, dtype=float).ravel()

    @classmethod
    def dirac(cls, model: PathGridModel, path: GridPath) -> Self:
        weights = np.zeros(model.path_count)
        weights[path_index(path, model)] = 1.0
        return cls(model=model, weights=weights)

    @property
    def total_mass(self) -> float:
        return float(self.weights.sum())

    def expectation(self, values: np.ndarray) -> float:
        return float(self.weights @ np.asarray(values, dtype=float))

    def marginal_masses(self, date: int) -> np.ndarray:
        """Push-forward of the measure to the levels at the given date."""
        digits = path_digits(self.model)[:, date - 1]
        return np.bincount(digits, weights=self.weights, minlength=self.model.level_count)

    def atoms(self, threshold: float = ATOM_THRESHOLD) -> list[tuple[GridPath, float]]:
        return [(path_at(int(p), self.model), float(self.weights[p])) for p in np.flatnonzero(self.weights > threshold)]

    def to_dict(self) -> dict[str, Any]:
        return {
            "model": self.model.to_dict(),
            "atoms": [{"path": list(path.coordinates), "weight": weight} for path, weight in self.atoms()],
        }

    @classmethod
    def from_dict(cls, instance_dict) -> Self:
        model = PathGridModel.from_dict(instance_dict["model"])
        weights = np.zeros(model.path_count)
        for atom in instance_dict.get("atoms", []):
            weights[path_index(GridPath(tuple(atom["path"])), model)] = atom["weight"]
        return cls(model=model, weights=weights)


def martingale_row_count(model: PathGridModel) -> int:
    return sum(model.prefix_count(t) for t in range(model.horizon))


@dataclass
class ConstraintBundle():
    """Constraint blocks over path weights, see the module docs for row layout."""

    model: PathGridModel
    instruments: InstrumentSet
    marginals: list[Marginal]
    probability: scipy.sparse.csr_matrix
    martingale: scipy.sparse.csr_matrix
    instrument_eq: scipy.sparse.csr_matrix
    instrument_eq_index: list[int]
    instrument_ub: scipy.sparse.csr_matrix
    instrument_ub_index: list[int]
    marginal: scipy.sparse.csr_matrix
    marginal_rhs: np.ndarray

    @property
    def variable_count(self) -> int:
        return self.model.path_count

    @property
    def row_count(self) -> int:
        return self.equality_matrix().shape[0] + self.instrument_ub.shape[0]

    def equality_blocks(self) -> dict[str, slice]:
        """Row ranges of each equality block within :meth:`equality_matrix`."""
        blocks = {}
        start = 0
        for name in ("probability", "martingale", "instrument_eq", "marginal"):
            rows = getattr(self, name).shape[0]
            blocks[name] = slice(start, start + rows)
            start += rows
        return blocks

    def equality_matrix(self) -> scipy.sparse.csr_matrix:
        return scipy.sparse.vstack(
            [self.probability, self.martingale, self.instrument_eq, self.marginal], format="csr")

    def equality_rhs(self) -> np.ndarray:
        return np.concatenate([
            [1.0],
            np.zeros(self.martingale.shape[0] + self.instrument_eq.shape[0]),
            self.marginal_rhs,
        ])

    def to_linear_program(self, objective: np.ndarray = None) -> LinearProgram:
        """Minimize ``objective . pi`` over the bundle, or just find a feasible ``pi`` by default."""
        if objective is None:
            objective = np.zeros(self.variable_count)
        return LinearProgram(
            objective=objective,
            a_eq=self.equality_matrix(),
            b_eq=self.equality_rhs(),
            a_ub=self.instrument_ub,
            b_ub=np.zeros(self.instrument_ub.shape[0]),
            lower=0.0,
        )


def _martingale_block(model: PathGridModel) -> scipy.sparse.csr_matrix:
    full = with_initial_price(path_array(model), model.s0)
    n = model.path_count
    rows, values = [], []
    offset = 0
    for t in range(model.horizon):
        rows.append(offset + prefix_indices(model, t))
        values.append(full[:, t + 1] - full[:, t])
        offset += model.prefix_count(t)
    columns = np.tile(np.arange(n), model.horizon)
    block = scipy.sparse.coo_matrix(
        (np.concatenate(values), (np.concatenate(rows), columns)), shape=(offset, n)).tocsr()
    block.eliminate_zeros()
    return block


def _marginal_block(model: PathGridModel, marginals: list[Marginal]) -> tuple[scipy.sparse.csr_matrix, np.ndarray]:
    n = model.path_count
    if not marginals:
        return scipy.sparse.csr_matrix((0, n)), np.zeros(0)
    digits = path_digits(model)
    blocks, rhs = [], []
    for marginal in marginals:
        if not 1 <= marginal.date <= model.horizon:
            raise InstanceError(f"Marginal date {marginal.date} outside 1..{model.horizon}.")
        if len(marginal.masses) != model.level_count:
            raise InstanceError(f"Marginal at date {marginal.date} has {len(marginal.masses)} masses, "
                                f"expected {model.level_count}.")
        blocks.append(scipy.sparse.coo_matrix(
            (np.ones(n), (digits[:, marginal.date - 1], np.arange(n))), shape=(model.level_count, n)))
        rhs.append(marginal.mass_array)
    return scipy.sparse.vstack(blocks, format="csr"), np.concatenate(rhs)


def build_constraints(
    model: PathGridModel,
    instruments: InstrumentSet = InstrumentSet(),
    marginals: list[Marginal] = None
) -> ConstraintBundle:
    """Assemble the constraints whose solutions are the admissible martingale measures on the grid."""
    model.check_size()
    instruments.validate(model)
    marginals = list(marginals or [])

    phi = instruments.constraint_matrix(model)
    eq_index = [i for i, instrument in enumerate(instruments) if instrument.two_sided]
    ub_index = [i for i, instrument in enumerate(instruments) if not instrument.two_sided]
    marginal, marginal_rhs = _marginal_block(model, marginals)

    bundle = ConstraintBundle(
        model=model,
        instruments=instruments,
        marginals=marginals,
        probability=scipy.sparse.csr_matrix(np.ones((1, model.path_count))),
        martingale=_martingale_block(model),
        instrument_eq=scipy.sparse.csr_matrix(phi[eq_index].reshape(len(eq_index), model.path_count)),
        instrument_eq_index=eq_index,
        instrument_ub=scipy.sparse.csr_matrix(phi[ub_index].reshape(len(ub_index), model.path_count)),
        instrument_ub_index=ub_index,
        marginal=marginal,
        marginal_rhs=marginal_rhs,
    )
    logging.info(f"Built constraints over {model.path_count} paths: {martingale_row_count(model)} martingale rows, "
                 f"{len(eq_index)} two-sided and {len(ub_index)} buy-only instrument rows, "
                 f"{marginal.shape[0]} marginal rows.")
    return bundle


@dataclass
class MeasureReport(YamlData):
    """Largest violation of each constraint block by a candidate measure."""

    nonnegativity: float = 0.0
    probability: float = 0.0
    martingale: float = 0.0
    instruments: float = 0.0
    marginals: float = 0.0
    tolerance: float = 0.0
    passed: bool = False
    message: str = None

    @property
    def max_violation(self) -> float:
        return max(self.nonnegativity, self.probability, self.martingale, self.instruments, self.marginals)


def verify_measure(pi: PathMeasure, bundle: ConstraintBundle, tol: float = 1e-8) -> MeasureReport:
    """Re-check a measure against the bundle by direct summation over paths, without the LP solver."""
    model = bundle.model
    weights = pi.weights
    if weights.size != model.path_count:
        return MeasureReport(
            nonnegativity=np.inf, tolerance=tol, passed=False,
            message=f"Measure has {weights.size} weights, expected {model.path_count}.")

    full = with_initial_price(path_array(model), model.s0)
    martingale = 0.0
    for t in range(model.horizon):
        increments = np.bincount(prefix_indices(model, t), weights=weights * (full[:, t + 1] - full[:, t]),
                                 minlength=model.prefix_count(t))
        martingale = max(martingale, float(np.abs(increments).max()))

    instruments = 0.0
    for instrument in bundle.instruments:
        value = float(weights @ instrument.constraint_values(model))
        instruments = max(instruments, abs(value) if instrument.two_sided else max(value, 0.0))

    marginals = 0.0
    for marginal in bundle.marginals:
        pushed = pi.marginal_masses(marginal.date)
        marginals = max(marginals, float(np.abs(pushed - marginal.mass_array).max()))

    report = MeasureReport(
        nonnegativity=float(max(-weights.min(initial=0.0), 0.0)),
        probability=abs(float(weights.sum()) - 1.0),
        martingale=martingale,
        instruments=instruments,
        marginals=marginals,
        tolerance=tol,
    )
    report.passed = report.max_violation <= tol
    return report
