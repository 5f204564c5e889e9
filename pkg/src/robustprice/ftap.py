import logging
from dataclasses import dataclass, field
from typing import Any, Callable, Self, Sequence

import numpy as np

from robustprice.errors import InstanceError, NumericalFailure
from robustprice import lp_core
from robustprice.lp_core import Tolerances, solve
from robustprice.marginals import Marginal, marginal_instruments
from robustprice.martingale_lp import MeasureReport, PathMeasure, build_constraints, verify_measure
from robustprice.model import (
    InstrumentSet,
    PathGridModel,
    path_array,
    with_initial_price,
)
from robustprice.yaml_data import YamlData


FEASIBLE = "feasible"
ARBITRAGE = "arbitrage"

GRID_GROWTH_NOTE = (
    "The path grid is compact, so no super-linear growth witness is needed for the dichotomy; "
    "conclusions apply to the given finite instrument list only."
)


def prefix_coordinates(model: PathGridModel, t: int, index: int) -> tuple[float, ...]:
    """Levels ``(x_1, ..., x_t)`` of the prefix with the given index among the ``G**t`` prefixes."""
    digits = []
    for _ in range(t):
        index, digit = divmod(index, model.level_count)
        digits.append(digit)
    return tuple(model.levels[d] for d in reversed(digits))


def prefix_number(model: PathGridModel, prefix: tuple[float, ...]) -> int:
    index = 0
    for x in prefix:
        index = index * model.level_count + model.level_index(x)
    return index


@dataclass
class DynamicStrategy(YamlData):
    """Positions in the underlying held from date t to t+1, as a function of the prefix ``(x_1, ..., x_t)``.

    :attr:`positions` has one array per date ``t = 0, ..., T-1``, of length ``G**t``
    and indexed like the prefixes in enumeration order.  The empty prefix carries ``Delta_0``.
    On a finite grid every such map is bounded, so every strategy is admissible.

    Written out as a list of nonzero ``{prefix, position}`` entries.

    .. code-block:: json

        {"model": {"horizon": 1, "levels": [0, 2], "s0": 1},
         "positions": [{"prefix": [], "position": 1.0}]}
    """

    model: PathGridModel = field(default_factory=PathGridModel)
    positions: list[np.ndarray] = None

    def __post_init__(self):
        if self.positions is None:
            self.positions = [np.zeros(self.model.prefix_count(t)) for t in range(self.model.horizon)]
        self.positions = [np.asarray(p, dtype=float).ravel() for p in self.positions]
        if len(self.positions) != self.model.horizon:
            raise InstanceError(f"Strategy has {len(self.positions)} dates, expected {self.model.horizon}.")
        for t, p in enumerate(self.positions):
            if p.size != self.model.prefix_count(t):
                raise InstanceError(f"Strategy has {p.size} positions at date {t}, expected {self.model.prefix_count(t)}.")
            if not np.all(np.isfinite(p)):
                raise InstanceError(f"Strategy positions at date {t} must be finite.")

    @classmethod
    def from_vector(cls, model: PathGridModel, vector: np.ndarray) -> Self:
        """Split a vector laid out like the martingale rows, shortest prefixes first."""
        vector = np.asarray(vector, dtype=float)
        positions = []
        offset = 0
        for t in range(model.horizon):
            positions.append(vector[offset:offset + model.prefix_count(t)])
            offset += model.prefix_count(t)
        if offset != vector.size:
            raise InstanceError(f"Strategy vector has {vector.size} entries, expected {offset}.")
        return cls(model=model, positions=positions)

    @classmethod
    def from_function(cls, model: PathGridModel, position: Callable[[tuple[float, ...]], float]) -> Self:
        """Tabulate a position function of the prefix ``(x_1, ..., x_t)`` over all prefixes."""
        positions = [
            np.array([position(prefix_coordinates(model, t, i)) for i in range(model.prefix_count(t))], dtype=float)
            for t in range(model.horizon)
        ]
        return cls(model=model, positions=positions)

    @classmethod
    def random(cls, model: PathGridModel, rng: np.random.Generator, bound: float = 1.0) -> Self:
        positions = [rng.uniform(-bound, bound, model.prefix_count(t)) for t in range(model.horizon)]
        return cls(model=model, positions=positions)

    def vector(self) -> np.ndarray:
        return np.concatenate(self.positions)

    def position(self, prefix: tuple[float, ...]) -> float:
        return float(self.positions[len(prefix)][prefix_number(self.model, prefix)])

    def scaled(self, factor: float) -> Self:
        return DynamicStrategy(model=self.model, positions=[factor * p for p in self.positions])

    def gains_on(self, rows: np.ndarray, path_ids: np.ndarray) -> np.ndarray:
        """Gains ``(Delta . x)_T`` on a block of path coordinates with the given path indices."""
        full = with_initial_price(rows, self.model.s0)
        gains = np.zeros(rows.shape[0])
        for t, positions in enumerate(self.positions):
            prefix = path_ids // self.model.level_count ** (self.model.horizon - t)
            gains += positions[prefix] * (full[:, t + 1] - full[:, t])
        return gains

    def gains(self) -> np.ndarray:
        """Gains on every grid path, in enumeration order."""
        return self.gains_on(path_array(self.model), np.arange(self.model.path_count))

    def to_dict(self) -> dict[str, Any]:
        entries = []
        for t, positions in enumerate(self.positions):
            for i in np.flatnonzero(positions):
                entries.append({"prefix": list(prefix_coordinates(self.model, t, int(i))), "position": float(positions[i])})
        return {"model": self.model.to_dict(), "positions": entries}

    @classmethod
    def from_dict(cls, instance_dict) -> Self:
        strategy = cls(model=PathGridModel.from_dict(instance_dict["model"]))
        for entry in instance_dict.get("positions", []):
            prefix = tuple(entry["prefix"])
            strategy.positions[len(prefix)][prefix_number(strategy.model, prefix)] = entry["position"]
        return strategy


@dataclass
class StaticPosition(YamlData):
    """Hold ``weight >= 0`` units of ``direction * (payoff - price)`` of one instrument.

    Direction is -1 only for selling a two-sided instrument.
    """

    index: int = 0
    direction: int = 1
    weight: float = 0.0
    label: str = None


def split_static_weights(weights: np.ndarray, instruments: InstrumentSet, threshold: float = 0.0) -> list[StaticPosition]:
    """Report signed instrument weights as nonnegative weights on ``+phi`` or ``-phi``."""
    positions = []
    for i, w in enumerate(weights):
        if abs(w) <= threshold:
            continue
        positions.append(StaticPosition(index=i, direction=1 if w > 0 else -1, weight=float(abs(w)),
                                        label=instruments[i].label()))
    return positions


@dataclass
class ArbitrageCertificate(YamlData):
    """A zero-cost semi-static portfolio with strictly positive payoff on every grid path.

    :attr:`weights` are net positions per instrument, nonnegative for buy-only
    instruments and either sign for two-sided ones.
    """

    weights: np.ndarray = None
    strategy: DynamicStrategy = None
    min_gain: float = None
    static: list[StaticPosition] = field(default_factory=list)

    def __post_init__(self):
        self.weights = np.zeros(0) if self.weights is None else np.asarray(self.weights, dtype=float).ravel()

    def payoff(self, model: PathGridModel, instruments: InstrumentSet) -> np.ndarray:
        """Payoff ``sum_n a_n phi_n + (Delta . x)_T`` on every path."""
        if self.weights.size != len(instruments):
            raise InstanceError(f"Certificate has {self.weights.size} weights for {len(instruments)} instruments.")
        return self.weights @ instruments.constraint_matrix(model) + self.strategy.gains()


@dataclass
class FtapVerdict(YamlData):
    """Either an admissible martingale measure or an arbitrage, never both."""

    branch: str = None
    measure: PathMeasure = None
    measure_report: MeasureReport = None
    certificate: ArbitrageCertificate = None
    notes: list[str] = field(default_factory=list)

    @property
    def feasible(self) -> bool:
        return self.branch == FEASIBLE


def certify_arbitrage(cert: ArbitrageCertificate, model: PathGridModel, instruments: InstrumentSet) -> float:
    """Minimum over all grid paths of the certificate's payoff, by direct evaluation."""
    return float(cert.payoff(model, instruments).min())


def gains_expectation(strategy: DynamicStrategy, pi: PathMeasure) -> float:
    """Expected trading gain under a measure, which is 0 for martingale measures."""
    return pi.expectation(strategy.gains())


def check(
    model: PathGridModel,
    instruments: InstrumentSet = InstrumentSet(),
    tolerances: Tolerances = Tolerances(),
    marginals: Sequence[Marginal] = ()
) -> FtapVerdict:
    """Find an admissible martingale measure, or else a model-independent arbitrage.

    Marginals enter as two-sided calls at every level, priced under the marginal.
    These pin the same measures as marginal rows would, and keep any arbitrage
    certificate a portfolio of traded claims.  Certificate weights follow the
    instruments, then the calls of each marginal in turn.
    """
    notes = [GRID_GROWTH_NOTE]
    for nu in marginals:
        instruments = instruments.extended(marginal_instruments(nu).instruments)
        notes.append(f"Marginal at date {nu.date} enters as {len(nu.levels)} two-sided calls.")

    bundle = build_constraints(model, instruments)
    solution = solve(bundle.to_linear_program(), tolerances)

    if instruments.growth_witness is None:
        notes.append("No growth witness given; none is needed on the grid.")

    match solution.status:
        case lp_core.OPTIMAL:
            measure = PathMeasure(model=model, weights=np.clip(solution.primal, 0.0, None))
            report = verify_measure(measure, bundle, 10 * tolerances.feas_tol)
            if not report.passed:
                raise NumericalFailure(f"Solver measure fails verification by {report.max_violation:.3g}.")
            logging.info(f"No arbitrage: found a martingale measure on {len(measure.atoms())} paths.")
            return FtapVerdict(branch=FEASIBLE, measure=measure, measure_report=report, notes=notes)

        case lp_core.INFEASIBLE:
            ray = solution.farkas
            blocks = bundle.equality_blocks()
            cash = float(ray.eq[blocks["probability"]][0])
            if not cash < 0:
                raise NumericalFailure(f"Farkas ray has nonnegative probability multiplier {cash:.3g}.")

            # Scale so the portfolio pays at least 1 on every path.
            weights = np.zeros(len(instruments))
            weights[bundle.instrument_eq_index] = ray.eq[blocks["instrument_eq"]]
            weights[bundle.instrument_ub_index] = ray.ub
            weights /= -cash
            strategy = DynamicStrategy.from_vector(model, ray.eq[blocks["martingale"]] / -cash)

            certificate = ArbitrageCertificate(weights=weights, strategy=strategy,
                                               static=split_static_weights(weights, instruments, 1e-15))
            certificate.min_gain = certify_arbitrage(certificate, model, instruments)
            if not certificate.min_gain > tolerances.feas_tol:
                raise NumericalFailure(f"Arbitrage certificate has min gain {certificate.min_gain:.3g}.")
            logging.info(f"Arbitrage: portfolio of {len(certificate.static)} instrument positions "
                         f"gains at least {certificate.min_gain:.6g} on every path.")
            return FtapVerdict(branch=ARBITRAGE, certificate=certificate, notes=notes)

        case _:
            raise NumericalFailure(f"Feasibility LP returned unexpected status '{solution.status}'.")
