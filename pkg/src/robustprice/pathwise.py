"""Doob's L1 inequality as a pathwise hedge, checked on every grid path.

For nonnegative numbers with ``x_0 = 1`` and running maximum ``xbar_t = max(x_0, ..., x_t)``::

    xbar_T <= a (x_T log x_T - C) + a (C + 1) + eps - sum_t log(xbar_t) (x_{t+1} - x_t)

with ``a = e / (e - 1)`` and any ``C >= 0, eps >= 0``.  Read as a hedge, this is
cash ``a (C + 1) + eps``, ``a`` units of an entropy option priced ``C`` and the position
``Delta_t = -log(xbar_t)`` in the underlying.  Taking expectations under a
martingale measure gives ``E[xbar_T] <= a (E[x_T log x_T] + 1)``.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import pandas as pd

from robustprice.errors import DomainError, InstanceError, NotAMartingale, NumericalFailure
from robustprice.ftap import DynamicStrategy, gains_expectation, split_static_weights
from robustprice.lp_core import Tolerances
from robustprice.martingale_lp import PathMeasure, build_constraints, verify_measure
from robustprice.model import (
    BUY_ONLY,
    Instrument,
    InstrumentSet,
    PathGridModel,
    Payoff,
    entropy,
    path_array,
    payoff_values,
)
from robustprice.superrep import PriceBounds, SemiStaticHedge, price_bounds, verify_hedge
from robustprice.yaml_data import YamlData


DOOB_CONSTANT = math.e / (math.e - 1.0)


@dataclass(frozen=True)
class DoobInstance(YamlData):
    """A grid with ``s0 = 1`` and the terms of the entropy-option hedge.

    .. code-block:: json

        {"model": {"horizon": 3, "levels": [0.5, 1, 2], "s0": 1}, "C": 0.0}
    """

    model: PathGridModel = field(default_factory=PathGridModel)
    C: float = 0.0
    """Price of the entropy option ``x_T log x_T``."""

    a: float = DOOB_CONSTANT
    """Units of the entropy option held."""

    eps: float = 0.0
    """Extra cash beyond ``cash_constant * (C + 1)``."""

    cash_constant: float = DOOB_CONSTANT
    """Multiplier of ``C + 1`` in the cash; lowering it below ``e / (e - 1)`` breaks the hedge."""

    def __post_init__(self):
        if isinstance(self.model, dict):
            object.__setattr__(self, "model", PathGridModel.from_dict(self.model))
        if not self.C >= 0:
            raise InstanceError(f"Entropy option price C must be >= 0, got {self.C}.")
        if self.eps < 0:
            raise InstanceError(f"Slack eps must be >= 0, got {self.eps}.")
        if self.model.s0 != 1.0:
            raise InstanceError(f"The Doob hedge is stated for s0 = 1, got {self.model.s0}.")

    @property
    def cash(self) -> float:
        return self.cash_constant * (self.C + 1.0) + self.eps

    @property
    def analytic_bound(self) -> float:
        return DOOB_CONSTANT * (self.C + 1.0)


def doob_instruments(C: float) -> InstrumentSet:
    """The single buy-only entropy option at the horizon, priced C."""
    return InstrumentSet(instruments=(Instrument(payoff=Payoff.entropy(), price=C, side=BUY_ONLY, name="x log x"),))


def doob_strategy(model: PathGridModel) -> DynamicStrategy:
    """``Delta_t(x_1, ..., x_t) = -log(max(s0, x_1, ..., x_t))`` for every prefix."""
    positions = []
    for t in range(model.horizon):
        if t == 0:
            running_max = np.array([model.s0])
        else:
            digits = np.indices((model.level_count,) * t).reshape(t, -1)
            running_max = np.maximum(model.level_array[digits].max(axis=0), model.s0)
        if np.any(running_max <= 0):
            raise DomainError(f"Running maximum is 0 on some prefix of length {t}, so its log is undefined.")
        positions.append(-np.log(running_max))
    return DynamicStrategy(model=model, positions=positions)


def doob_hedge(model: PathGridModel | DoobInstance, C: float = 0.0) -> SemiStaticHedge:
    """The explicit pathwise super-hedge of the running maximum by an entropy option priced C."""
    instance = model if isinstance(model, DoobInstance) else DoobInstance(model=model, C=C)
    instruments = doob_instruments(instance.C)
    weights = np.array([instance.a])
    hedge = SemiStaticHedge(
        cash=instance.cash,
        weights=weights,
        static=split_static_weights(weights, instruments),
        dynamic=doob_strategy(instance.model),
    )
    hedge.slack_min = verify_hedge(hedge, Payoff.running_max(), instance.model, instruments)
    return hedge


@dataclass
class DoobReport(YamlData):
    """Smallest slack of the Doob hedge over all grid paths."""

    path_count: int = 0
    min_slack: float = None
    argmin_path: list[float] = None
    passed: bool = False
    relative_tolerance: float = 1e-12


def doob_verify_all(
    model: PathGridModel | DoobInstance,
    C: float = 0.0,
    chunk_size: int = 1 << 16,
    relative_tolerance: float = 1e-12
) -> DoobReport:
    """Evaluate the Doob hedge minus the running maximum on every path, in chunks of path indices.

    A path passes when its slack is at least ``-relative_tolerance * max(1, xbar_T)``.
    """
    instance = model if isinstance(model, DoobInstance) else DoobInstance(model=model, C=C)
    model = instance.model
    model.check_size()
    strategy = doob_strategy(model)
    powers = model.level_count ** np.arange(model.horizon - 1, -1, -1)

    min_slack = math.inf
    argmin = 0
    passed = True
    for start in range(0, model.path_count, chunk_size):
        path_ids = np.arange(start, min(start + chunk_size, model.path_count))
        rows = model.level_array[(path_ids[:, None] // powers) % model.level_count]
        running_max = np.maximum(rows.max(axis=1), model.s0)
        hedge = (instance.cash + instance.a * (entropy(rows[:, -1]) - instance.C)
                 + strategy.gains_on(rows, path_ids))
        slack = hedge - running_max
        passed = passed and bool(np.all(slack >= -relative_tolerance * np.maximum(running_max, 1.0)))
        i = int(np.argmin(slack))
        if slack[i] < min_slack:
            min_slack = float(slack[i])
            argmin = int(path_ids[i])

    argmin_path = [float(x) for x in model.level_array[(argmin // powers) % model.level_count]]
    logging.info(f"Doob hedge over {model.path_count} paths: min slack {min_slack:.6g} at {argmin_path}.")
    return DoobReport(path_count=model.path_count, min_slack=min_slack, argmin_path=argmin_path,
                      passed=passed, relative_tolerance=relative_tolerance)


def doob_bounds(model: PathGridModel, C: float, tolerances: Tolerances = Tolerances()) -> PriceBounds:
    """Robust bounds on the running maximum given a buy-only entropy option priced C."""
    if not C >= 0:
        raise InstanceError(f"Entropy option price C must be >= 0, got {C}.")
    return price_bounds(model, doob_instruments(C), Payoff.running_max(), tolerances)


def doob_lp_bound(model: PathGridModel, C: float, tolerances: Tolerances = Tolerances()) -> float:
    """Largest expected running maximum over martingale measures with ``E[x_T log x_T] <= C``."""
    bound = doob_bounds(model, C, tolerances).upper.value
    analytic = DOOB_CONSTANT * (C + 1.0)
    if bound > analytic + tolerances.gap_tol:
        raise NumericalFailure(f"LP bound {bound} exceeds the analytic bound {analytic}.")
    return bound


@dataclass
class InducedInequality(YamlData):
    """Both sides of ``E[xbar_T] <= e/(e-1) (E[x_T log x_T] + 1)`` under one measure."""

    lhs: float = None
    rhs: float = None
    gains_expectation: float = None
    holds: bool = False


def induced_martingale_inequality(model: PathGridModel, pi: PathMeasure, tol: float = 1e-8) -> InducedInequality:
    """Take expectations of the pathwise hedge under a martingale measure.

    Raises :class:`NotAMartingale` unless ``pi`` passes verification against the
    pure martingale constraints.
    """
    report = verify_measure(pi, build_constraints(model), tol)
    if not report.passed:
        raise NotAMartingale(f"Measure violates the martingale constraints by {report.max_violation:.3g}.")
    if model.s0 != 1.0:
        raise InstanceError(f"The Doob inequality is stated for s0 = 1, got {model.s0}.")
    strategy = doob_strategy(model)

    lhs = pi.expectation(payoff_values(Payoff.running_max(), model))
    rhs = DOOB_CONSTANT * (pi.expectation(entropy(path_array(model)[:, -1])) + 1.0)
    gains = gains_expectation(strategy, pi)
    return InducedInequality(lhs=lhs, rhs=rhs, gains_expectation=gains, holds=lhs <= rhs + tol)


def doob_tightness(
    grids: Sequence[Sequence[float]],
    horizons: Sequence[int],
    c_values: Sequence[float],
    tolerances: Tolerances = Tolerances(),
    max_paths: int = 100_000
) -> pd.DataFrame:
    """Compare LP bounds with the analytic bound across grids, horizons, and entropy prices."""
    rows = []
    for levels in grids:
        for horizon in horizons:
            model = PathGridModel(horizon=horizon, levels=tuple(levels), s0=1.0, max_paths=max_paths)
            for C in c_values:
                instance = DoobInstance(model=model, C=C)
                pathwise = doob_verify_all(instance)
                bounds = doob_bounds(model, C, tolerances)
                induced = induced_martingale_inequality(model, bounds.upper.measure, 10 * tolerances.feas_tol)
                rows.append({
                    "levels": " ".join(f"{level:g}" for level in levels),
                    "horizon": horizon,
                    "C": C,
                    "lp_bound": bounds.upper.value,
                    "analytic_bound": instance.analytic_bound,
                    "ratio": bounds.upper.value / instance.analytic_bound,
                    "min_slack": pathwise.min_slack,
                    "argmin_path": " ".join(f"{x:g}" for x in pathwise.argmin_path),
                    "pathwise_passed": pathwise.passed,
                    "induced_lhs": induced.lhs,
                    "induced_rhs": induced.rhs,
                    "induced_holds": induced.holds,
                })
    return pd.DataFrame(rows)
