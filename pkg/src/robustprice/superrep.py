"""Robust price bounds over admissible martingale measures, with the matching semi-static hedges.

The upper bound solves ``max_pi E_pi[Phi]`` over the constraint bundle as the
minimization of ``-Phi . pi``.  Its dual multipliers ``lambda`` give a hedge that
dominates ``Phi`` on every path::

    cash      d       = -lambda_probability
    underlying Delta  = -lambda_martingale      (per prefix)
    options    a_i    = -lambda_instrument      (>= 0 for buy-only)
    Europeans  phi_t  = -lambda_marginal        (per date and level)

and the upper bound equals ``d + sum_t E_nu_t[phi_t]``, the cost of the hedge.
Lower bounds are ``-upper(-Phi)``; the hedge for a lower bound dominates ``-Phi``.

On a finite grid both the measure and the hedge are attained whenever the bundle
is feasible, so the super-replication infimum is always a minimum here.
"""

import logging
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from robustprice import lp_core
from robustprice.errors import DomainError, InstanceError, NoAdmissibleMeasure, NumericalFailure
from robustprice.ftap import DynamicStrategy, StaticPosition, check, split_static_weights
from robustprice.lp_core import Tolerances, solve
from robustprice.marginals import Marginal
from robustprice.martingale_lp import ConstraintBundle, MeasureReport, PathMeasure, build_constraints, verify_measure
from robustprice.model import (
    BUY_ONLY,
    Instrument,
    InstrumentSet,
    PathGridModel,
    Payoff,
    path_digits,
    payoff_values,
)
from robustprice.yaml_data import YamlData


GRID_GROWTH_NOTE = "Payoff growth conditions are vacuous on a bounded grid and were not checked."


@dataclass
class EuropeanLeg(YamlData):
    """A European payoff ``phi_t(x_t)`` given by its value at each level, funded at its marginal expectation."""

    date: int = 1
    values: list[float] = field(default_factory=list)
    cost: float = 0.0


@dataclass
class SemiStaticHedge(YamlData):
    """Cash, static option positions, European legs, and a dynamic strategy in the underlying.

    :attr:`weights` are net positions per instrument; :attr:`static` reports the same
    positions as nonnegative weights on ``+phi`` or ``-phi``.
    """

    cash: float = 0.0
    weights: np.ndarray = None
    static: list[StaticPosition] = field(default_factory=list)
    european: list[EuropeanLeg] = field(default_factory=list)
    dynamic: DynamicStrategy = None
    slack_min: float = None

    def __post_init__(self):
        self.weights = np.zeros(0) if self.weights is None else np.asarray(self.weights, dtype=float).ravel()

    @property
    def cost(self) -> float:
        """Initial outlay: cash plus the cost of any European legs, options being free after normalization."""
        return self.cash + sum(leg.cost for leg in self.european)

    def payoff(self, model: PathGridModel, instruments: InstrumentSet) -> np.ndarray:
        """Hedge value ``d + sum_i a_i phi_i + sum_t phi_t(x_t) + (Delta . x)_T`` on every path."""
        if self.weights.size != len(instruments):
            raise InstanceError(f"Hedge has {self.weights.size} weights for {len(instruments)} instruments.")
        values = np.full(model.path_count, self.cash)
        if len(instruments):
            values += self.weights @ instruments.constraint_matrix(model)
        if self.european:
            digits = path_digits(model)
            for leg in self.european:
                values += np.asarray(leg.values)[digits[:, leg.date - 1]]
        if self.dynamic is not None:
            values += self.dynamic.gains()
        return values


@dataclass
class PriceBound(YamlData):
    """One side of the bounds: the value, a measure attaining it, and a hedge proving it."""

    value: float = None
    sense: int = 1
    """1 for the upper bound, where the hedge dominates Phi, and -1 for the lower bound, where it dominates -Phi."""

    measure: PathMeasure = None
    measure_report: MeasureReport = None
    hedge: SemiStaticHedge = None
    gap: float = None


@dataclass
class PriceBounds(YamlData):
    upper: PriceBound = None
    lower: PriceBound = None
    notes: list[str] = field(default_factory=list)

    @property
    def gap(self) -> float:
        return max(self.upper.gap, self.lower.gap)


def verify_hedge(
    hedge: SemiStaticHedge,
    phi: Payoff | np.ndarray,
    model: PathGridModel,
    instruments: InstrumentSet = InstrumentSet(),
    sense: int = 1
) -> float:
    """Minimum over all paths of ``hedge - sense * Phi``, by direct evaluation."""
    phi_values = payoff_values(phi, model) if isinstance(phi, Payoff) else np.asarray(phi, dtype=float)
    return float((hedge.payoff(model, instruments) - sense * phi_values).min())


def _optimize(bundle: ConstraintBundle, phi_values: np.ndarray, sense: int, tolerances: Tolerances) -> PriceBound:
    model = bundle.model
    solution = solve(bundle.to_linear_program(-sense * phi_values), tolerances)
    match solution.status:
        case lp_core.INFEASIBLE:
            raise NoAdmissibleMeasure("No admissible martingale measure exists on the grid.")
        case lp_core.OPTIMAL:
            pass
        case _:
            raise NumericalFailure(f"Pricing LP returned unexpected status '{solution.status}'.")

    measure = PathMeasure(model=model, weights=np.clip(solution.primal, 0.0, None))
    report = verify_measure(measure, bundle, 10 * tolerances.feas_tol)
    if not report.passed:
        raise NumericalFailure(f"Witness measure fails verification by {report.max_violation:.3g}.")

    blocks = bundle.equality_blocks()
    multipliers = -solution.dual_eq
    weights = np.zeros(len(bundle.instruments))
    weights[bundle.instrument_eq_index] = multipliers[blocks["instrument_eq"]]
    weights[bundle.instrument_ub_index] = -solution.dual_ub

    european = []
    leg_values = multipliers[blocks["marginal"]].reshape(len(bundle.marginals), model.level_count)
    for marginal, values in zip(bundle.marginals, leg_values):
        european.append(EuropeanLeg(date=marginal.date, values=values.tolist(), cost=marginal.expectation(values)))

    hedge = SemiStaticHedge(
        cash=float(multipliers[blocks["probability"]][0]),
        weights=weights,
        static=split_static_weights(weights, bundle.instruments),
        european=european,
        dynamic=DynamicStrategy.from_vector(model, multipliers[blocks["martingale"]]),
    )
    hedge.slack_min = verify_hedge(hedge, phi_values, model, bundle.instruments, sense)
    if hedge.slack_min < -10 * tolerances.feas_tol * (1.0 + np.abs(phi_values).max()):
        raise NumericalFailure(f"Extracted hedge misses the payoff by {-hedge.slack_min:.3g} on some path.")

    value = sense * -solution.objective_value
    return PriceBound(value=value, sense=sense, measure=measure, measure_report=report, hedge=hedge, gap=solution.gap)


def _bounds(bundle: ConstraintBundle, phi: Payoff, tolerances: Tolerances) -> PriceBounds:
    phi_values = payoff_values(phi, bundle.model)
    upper = _optimize(bundle, phi_values, 1, tolerances)
    lower = _optimize(bundle, phi_values, -1, tolerances)
    if lower.value > upper.value + tolerances.gap_tol * (1.0 + abs(upper.value)):
        raise NumericalFailure(f"Lower bound {lower.value} exceeds upper bound {upper.value}.")
    logging.info(f"Price bounds for {phi.kind}: [{lower.value:.10g}, {upper.value:.10g}].")
    return PriceBounds(upper=upper, lower=lower, notes=[GRID_GROWTH_NOTE])


def price_bounds(
    model: PathGridModel,
    instruments: InstrumentSet,
    phi: Payoff,
    tolerances: Tolerances = Tolerances()
) -> PriceBounds:
    """Upper and lower robust prices of ``phi`` over admissible martingale measures, with hedges."""
    bundle = build_constraints(model, instruments)
    try:
        return _bounds(bundle, phi, tolerances)
    except NoAdmissibleMeasure as error:
        verdict = check(model, instruments, tolerances)
        raise NoAdmissibleMeasure(f"{error} The instruments admit an arbitrage.", verdict) from error


def bounds_with_marginals(
    model: PathGridModel,
    marginals: Sequence[Marginal],
    phi: Payoff,
    instruments: InstrumentSet = None,
    tolerances: Tolerances = Tolerances()
) -> PriceBounds:
    """Robust prices of ``phi`` over martingale measures with the given marginals, and optional instruments too.

    Hedges carry one European leg per marginal.
    """
    instruments = instruments or InstrumentSet()
    bundle = build_constraints(model, instruments, list(marginals))
    try:
        return _bounds(bundle, phi, tolerances)
    except NoAdmissibleMeasure as error:
        verdict = check(model, instruments, tolerances, marginals=marginals)
        raise NoAdmissibleMeasure(f"{error} The instruments and marginals admit an arbitrage.", verdict) from error


def _subgradient(g: Payoff, x: np.ndarray) -> np.ndarray:
    match g.kind:
        case "call":
            slope = (x >= g.strike).astype(float)
        case "power":
            slope = g.exponent * x ** (g.exponent - 1)
        case "entropy":
            if np.any(x <= 0):
                raise DomainError("The entropy payoff has no derivative at level 0.")
            slope = np.log(x) + 1.0
        case _:
            raise InstanceError(f"Calendar spread needs a call, power, or entropy payoff, got '{g.kind}'.")
    return slope if g.notional is None else g.notional * slope


def calendar_spread_hedge(
    model: PathGridModel,
    g: Payoff,
    date: int
) -> tuple[Payoff, InstrumentSet, SemiStaticHedge]:
    """Dominate ``g(x_date)`` by holding ``g(x_{date+1})`` and shorting ``g'(x_date)`` units of the underlying.

    Returns the payoff at ``date``, the single free buy-only option on ``g`` at ``date + 1``, and the hedge.
    """
    if not 1 <= date < model.horizon:
        raise InstanceError(f"Calendar spread date must be in 1..{model.horizon - 1}, got {date}.")
    phi = replace(g, date=date)
    later = Instrument(payoff=replace(g, date=date + 1), price=0.0, side=BUY_ONLY,
                       name=f"{g.kind}@t{date + 1}")
    instruments = InstrumentSet(instruments=(later,))

    positions = [np.zeros(model.prefix_count(t)) for t in range(model.horizon)]
    prefix_levels = model.level_array[np.arange(model.prefix_count(date)) % model.level_count]
    positions[date] = -_subgradient(g, prefix_levels)

    hedge = SemiStaticHedge(
        cash=0.0,
        weights=np.ones(1),
        static=split_static_weights(np.ones(1), instruments),
        dynamic=DynamicStrategy(model=model, positions=positions),
    )
    hedge.slack_min = verify_hedge(hedge, phi, model, instruments)
    return phi, instruments, hedge
