import itertools
import logging
import math
from dataclasses import dataclass, field, replace
from functools import lru_cache
from typing import Any, Iterator, Self, Sequence

import numpy as np
import yaml

from robustprice.errors import InstanceError, InvalidPath, SizeLimit
from robustprice.yaml_data import YamlData, plain_data


DEFAULT_MAX_PATHS = 10_000_000

BUY_ONLY = "buy_only"
TWO_SIDED = "two_sided"
SIDES = (BUY_ONLY, TWO_SIDED)

PAYOFF_KINDS = ("call", "put", "power", "entropy", "running_max", "spread", "custom", "constant")


@dataclass(frozen=True)
class PathGridModel(YamlData):
    """The discretized market: a finite grid of price levels traded at dates 1 through :attr:`horizon`.

    Paths are sequences ``(x_1, ..., x_T)`` with every coordinate taken from :attr:`levels`.
    The initial price ``x_0 = s0`` is a model constant, not a path coordinate.
    Paths are enumerated in lexicographic order of their level indices, so path ``p``
    has level index ``(p // G**(T - t)) % G`` at date ``t``.

    .. code-block:: json

        {"horizon": 2, "levels": [0.5, 1.0, 2.0], "s0": 1.0}
    """

    horizon: int = 1
    """Number of trading dates after time 0 (``T >= 1``)."""

    levels: tuple[float, ...] = (1.0,)
    """Strictly increasing, nonnegative price levels.

    The largest level is a truncation chosen by the user.
    Nothing is ever extrapolated beyond it.
    """

    s0: float = 1.0
    """Initial price, which must lie between the smallest and largest level."""

    max_paths: int = field(default=DEFAULT_MAX_PATHS, compare=False)
    """Cap on the number of grid paths ``G**T`` that operations agree to enumerate."""

    def __post_init__(self):
        object.__setattr__(self, "levels", tuple(float(level) for level in self.levels))
        object.__setattr__(self, "s0", float(self.s0))

        if not isinstance(self.horizon, (int, np.integer)) or self.horizon < 1:
            raise InstanceError(f"Horizon must be an integer >= 1, got {self.horizon}.")
        if not self.levels:
            raise InstanceError("Grid must have at least one price level.")
        if any(not math.isfinite(level) for level in self.levels):
            raise InstanceError(f"Price levels must be finite: {self.levels}")
        if self.levels[0] < 0:
            raise InstanceError(f"Price levels must be nonnegative: {self.levels}")
        if any(b <= a for a, b in zip(self.levels, self.levels[1:])):
            raise InstanceError(f"Price levels must be strictly increasing: {self.levels}")
        if not self.levels[0] <= self.s0 <= self.levels[-1]:
            raise InstanceError(
                f"Initial price {self.s0} lies outside the grid [{self.levels[0]}, {self.levels[-1]}], "
                "so no martingale measure can exist.")
        if self.max_paths < 1:
            raise InstanceError(f"Path cap must be positive, got {self.max_paths}.")

    @property
    def level_count(self) -> int:
        return len(self.levels)

    @property
    def path_count(self) -> int:
        return self.level_count ** self.horizon

    @property
    def level_array(self) -> np.ndarray:
        return np.asarray(self.levels, dtype=float)

    def prefix_count(self, t: int) -> int:
        """Number of path prefixes ``(x_1, ..., x_t)`` of length t."""
        return self.level_count ** t

    def check_size(self):
        if self.path_count > self.max_paths:
            raise SizeLimit(self.path_count, self.max_paths)

    def level_index(self, x: float) -> int:
        """Locate x among the levels, raising :class:`InvalidPath` when it's off the grid."""
        i = int(np.searchsorted(self.level_array, x))
        for candidate in (i - 1, i):
            if 0 <= candidate < self.level_count and math.isclose(self.levels[candidate], x, rel_tol=0, abs_tol=1e-12):
                return candidate
        raise InvalidPath(f"Coordinate {x} is not a grid level of {self.levels}.")

    def with_levels(self, levels: Sequence[float]) -> Self:
        return PathGridModel(horizon=self.horizon, levels=tuple(levels), s0=self.s0, max_paths=self.max_paths)


@dataclass(frozen=True)
class GridPath():
    """One path ``(x_1, ..., x_T)`` of grid levels, ``x_0 = s0`` implied by the model."""

    coordinates: tuple[float, ...]

    def __len__(self):
        return len(self.coordinates)

    def __iter__(self):
        return iter(self.coordinates)


def enumerate_paths(model: PathGridModel) -> Iterator[GridPath]:
    """Yield all G**T grid paths in lexicographic order."""
    model.check_size()
    for coordinates in itertools.product(model.levels, repeat=model.horizon):
        yield GridPath(coordinates)


@lru_cache(maxsize=8)
def _level_digits(level_count: int, horizon: int) -> np.ndarray:
    digits = np.indices((level_count,) * horizon).reshape(horizon, -1).T
    digits.setflags(write=False)
    return digits


def path_digits(model: PathGridModel) -> np.ndarray:
    """Level indices of all paths, shape (G**T, T), rows in lexicographic order."""
    model.check_size()
    return _level_digits(model.level_count, model.horizon)


def path_array(model: PathGridModel) -> np.ndarray:
    """Price levels of all paths, shape (G**T, T), rows in lexicographic order."""
    return model.level_array[path_digits(model)]


def path_index(path: GridPath, model: PathGridModel) -> int:
    """Position of the given path in :func:`enumerate_paths` order."""
    index = 0
    for x in path:
        index = index * model.level_count + model.level_index(x)
    return index


def path_at(index: int, model: PathGridModel) -> GridPath:
    digits = []
    for _ in range(model.horizon):
        index, digit = divmod(index, model.level_count)
        digits.append(digit)
    return GridPath(tuple(model.levels[d] for d in reversed(digits)))


def prefix_indices(model: PathGridModel, t: int) -> np.ndarray:
    """For each path, the index of its length-t prefix among the G**t prefixes."""
    return np.arange(model.path_count) // model.level_count ** (model.horizon - t)


def with_initial_price(paths: np.ndarray, s0: float) -> np.ndarray:
    """Prepend the constant column ``x_0 = s0`` to a (n, T) block of paths."""
    return np.hstack([np.full((paths.shape[0], 1), s0), paths])


def entropy(x: np.ndarray) -> np.ndarray:
    """Elementwise ``x log x`` with the continuous extension 0 at 0."""
    x = np.asarray(x, dtype=float)
    positive = x > 0
    return np.where(positive, x * np.log(np.where(positive, x, 1.0)), 0.0)


@dataclass(frozen=True)
class Payoff(YamlData):
    """A payoff function on grid paths.

    Which fields matter depends on :attr:`kind`:

    ``call`` / ``put``
        ``(x_date - strike)_+`` / ``(strike - x_date)_+``
    ``power``
        ``x_date ** exponent`` with ``exponent > 1``
    ``entropy``
        ``x_date log x_date``, zero at level 0
    ``running_max``
        ``max(s0, x_1, ..., x_T)``
    ``spread``
        ``|x_date - x_start_date|``, where date 0 means ``s0``
    ``custom``
        a table of :attr:`values`, one per path in enumeration order
    ``constant``
        :attr:`value` on every path

    A missing :attr:`date` means the horizon ``T``.

    .. code-block:: json

        {"kind": "call", "strike": 1.0, "date": 2}
    """

    kind: str = "constant"
    strike: float = None
    date: int = None
    exponent: float = None
    start_date: int = None
    values: tuple[float, ...] = None
    value: float = None
    notional: float = None
    """Optional multiplier applied to the payoff, 1 when missing."""

    def __post_init__(self):
        if self.kind not in PAYOFF_KINDS:
            raise InstanceError(f"Unknown payoff kind '{self.kind}', expected one of {PAYOFF_KINDS}.")
        if self.kind in ("call", "put") and self.strike is None:
            raise InstanceError(f"Payoff '{self.kind}' needs a strike.")
        if self.kind == "power" and (self.exponent is None or self.exponent <= 1):
            raise InstanceError(f"Power payoff needs an exponent > 1, got {self.exponent}.")
        if self.kind == "custom":
            if self.values is None:
                raise InstanceError("Custom payoff needs a table of values.")
            values = tuple(float(v) for v in self.values)
            if not all(math.isfinite(v) for v in values):
                raise InstanceError("Custom payoff values must be finite.")
            object.__setattr__(self, "values", values)
        if self.kind == "constant":
            if self.value is None:
                object.__setattr__(self, "value", 0.0)
            elif not math.isfinite(self.value):
                raise InstanceError(f"Constant payoff must be finite, got {self.value}.")

    @classmethod
    def call(cls, strike: float, date: int = None) -> Self:
        return cls(kind="call", strike=strike, date=date)

    @classmethod
    def put(cls, strike: float, date: int = None) -> Self:
        return cls(kind="put", strike=strike, date=date)

    @classmethod
    def power(cls, exponent: float, date: int = None) -> Self:
        return cls(kind="power", exponent=exponent, date=date)

    @classmethod
    def entropy(cls, date: int = None) -> Self:
        return cls(kind="entropy", date=date)

    @classmethod
    def running_max(cls) -> Self:
        return cls(kind="running_max")

    @classmethod
    def spread(cls, start_date: int, date: int = None) -> Self:
        return cls(kind="spread", start_date=start_date, date=date)

    @classmethod
    def custom(cls, values: Sequence[float]) -> Self:
        return cls(kind="custom", values=tuple(values))

    @classmethod
    def constant(cls, value: float) -> Self:
        return cls(kind="constant", value=value)

    @classmethod
    def from_dict(cls, instance_dict) -> Self:
        """Accept flat ``{kind, strike, ...}`` or nested ``{kind, params: {...}}`` forms."""
        if not isinstance(instance_dict, dict) or "kind" not in instance_dict:
            raise InstanceError(f"Payoff must be a mapping with a 'kind', got: {instance_dict}")
        flat = {k: v for k, v in instance_dict.items() if k != "params"}
        flat.update(instance_dict.get("params") or {})
        unknown = set(flat) - set(cls.__dataclass_fields__)
        if unknown:
            raise InstanceError(f"Unknown payoff parameters for '{flat['kind']}': {sorted(unknown)}")
        return cls(**flat)

    def params(self) -> dict[str, Any]:
        return {k: plain_data(v) for k, v in self.to_dict().items() if k != "kind" and v is not None}

    def resolved_date(self, model: PathGridModel) -> int:
        date = model.horizon if self.date is None else self.date
        if not 1 <= date <= model.horizon:
            raise InstanceError(f"Payoff date {date} outside 1..{model.horizon}.")
        return date

    def is_terminal(self, model: PathGridModel) -> bool:
        """Is this a European payoff at the horizon, like the growth witness must be?"""
        return self.kind in ("call", "put", "power", "entropy") and self.resolved_date(model) == model.horizon

    def level_function(self, y: np.ndarray) -> np.ndarray:
        """The single-date payoff as a function of the price, for European kinds."""
        y = np.asarray(y, dtype=float)
        match self.kind:
            case "call":
                values = np.maximum(y - self.strike, 0.0)
            case "put":
                values = np.maximum(self.strike - y, 0.0)
            case "power":
                values = y ** self.exponent
            case "entropy":
                values = entropy(y)
            case "constant":
                values = np.full(y.shape, float(self.value))
            case _:
                raise InstanceError(f"Payoff '{self.kind}' is not a function of a single date.")
        return self._with_notional(values)

    def evaluate_rows(self, rows: np.ndarray, model: PathGridModel, first_index: int = 0) -> np.ndarray:
        """Evaluate on a (n, T) block of path coordinates.

        Custom tables are looked up by path index, starting from ``first_index``.
        """
        match self.kind:
            case "call" | "put" | "power" | "entropy":
                return self.level_function(rows[:, self.resolved_date(model) - 1])
            case "constant":
                return self.level_function(np.zeros(rows.shape[0]))
            case "running_max":
                values = np.maximum(rows.max(axis=1), model.s0)
            case "spread":
                full = with_initial_price(rows, model.s0)
                start = 0 if self.start_date is None else self.start_date
                if not 0 <= start <= model.horizon:
                    raise InstanceError(f"Spread start date {start} outside 0..{model.horizon}.")
                values = np.abs(full[:, self.resolved_date(model)] - full[:, start])
            case "custom":
                if len(self.values) != model.path_count:
                    raise InstanceError(f"Custom payoff has {len(self.values)} values, expected {model.path_count}.")
                values = np.asarray(self.values[first_index:first_index + rows.shape[0]], dtype=float)
        return self._with_notional(values)

    def _with_notional(self, values: np.ndarray) -> np.ndarray:
        return values if self.notional is None else self.notional * values


def payoff_values(payoff: Payoff, model: PathGridModel) -> np.ndarray:
    """Evaluate a payoff on every grid path, in enumeration order."""
    return payoff.evaluate_rows(path_array(model), model)


def validate_path(path: GridPath, model: PathGridModel):
    if len(path) != model.horizon:
        raise InvalidPath(f"Path has {len(path)} coordinates, expected {model.horizon}.")
    for x in path:
        model.level_index(x)


def evaluate(payoff: Payoff, path: GridPath, model: PathGridModel) -> float:
    """Evaluate a payoff on a single grid path."""
    validate_path(path, model)
    rows = np.asarray([path.coordinates], dtype=float)
    first_index = path_index(path, model) if payoff.kind == "custom" else 0
    return float(payoff.evaluate_rows(rows, model, first_index)[0])


@dataclass(frozen=True)
class Instrument(YamlData):
    """A traded option: a payoff, its quoted price at time 0, and which side of it may be traded.

    The normalized constraint function is ``payoff - price``, so that holding the
    option costs nothing at time 0.
    A ``two_sided`` instrument may be bought or sold, which is the same as including
    both ``+(payoff - price)`` and ``-(payoff - price)`` among the traded options.

    .. code-block:: json

        {"kind": "call", "params": {"strike": 1.0}, "price": 0.75, "side": "two_sided"}
    """

    payoff: Payoff = field(default_factory=Payoff)
    price: float = 0.0
    side: str = BUY_ONLY
    name: str = None

    def __post_init__(self):
        if self.side not in SIDES:
            raise InstanceError(f"Unknown instrument side '{self.side}', expected one of {SIDES}.")
        if not math.isfinite(self.price):
            raise InstanceError(f"Instrument price must be finite, got {self.price}.")
        object.__setattr__(self, "price", float(self.price))

    @property
    def two_sided(self) -> bool:
        return self.side == TWO_SIDED

    def label(self) -> str:
        if self.name:
            return self.name
        params = ", ".join(f"{k}={v}" for k, v in self.payoff.params().items() if k != "values")
        return f"{self.payoff.kind}({params})@{self.price:g}"

    def constraint_values(self, model: PathGridModel) -> np.ndarray:
        return payoff_values(self.payoff, model) - self.price

    def scaled(self, factor: float) -> Self:
        """The same instrument with payoff and price multiplied by a positive factor."""
        if factor <= 0:
            raise InstanceError(f"Scale factor must be positive, got {factor}.")
        notional = 1.0 if self.payoff.notional is None else self.payoff.notional
        return replace(self, payoff=replace(self.payoff, notional=notional * factor), price=self.price * factor)

    def to_dict(self) -> dict[str, Any]:
        return {
            "kind": self.payoff.kind,
            "params": self.payoff.params(),
            "price": self.price,
            "side": self.side,
            "name": self.name,
        }

    @classmethod
    def from_dict(cls, instance_dict) -> Self:
        if not isinstance(instance_dict, dict):
            raise InstanceError(f"Instrument must be a mapping, got: {instance_dict}")
        unknown = set(instance_dict) - {"kind", "params", "payoff", "price", "side", "name"}
        if unknown:
            raise InstanceError(f"Unknown instrument fields: {sorted(unknown)}")
        if "payoff" in instance_dict:
            payoff = instance_dict["payoff"]
            payoff = payoff if isinstance(payoff, Payoff) else Payoff.from_dict(payoff)
        else:
            payoff = Payoff.from_dict({"kind": instance_dict.get("kind"), "params": instance_dict.get("params")})
        return cls(
            payoff=payoff,
            price=instance_dict.get("price", 0.0),
            side=instance_dict.get("side", BUY_ONLY),
            name=instance_dict.get("name"),
        )


@dataclass(frozen=True)
class InstrumentSet(YamlData):
    """A finite list of traded instruments, a truncation of whatever the market really offers.

    Conclusions drawn from an instrument set apply to the truncated market only.
    """

    instruments: tuple[Instrument, ...] = ()

    growth_witness: int = None
    """Optional index of a super-linear ``power`` or ``entropy`` instrument at the horizon.

    On a finite grid the path space is compact and no growth condition is needed,
    so this is metadata only.
    """

    def __post_init__(self):
        instruments = tuple(i if isinstance(i, Instrument) else Instrument.from_dict(i) for i in self.instruments)
        object.__setattr__(self, "instruments", instruments)
        if self.growth_witness is not None:
            if not 0 <= self.growth_witness < len(instruments):
                raise InstanceError(f"Growth witness index {self.growth_witness} out of range.")
            if instruments[self.growth_witness].payoff.kind not in ("power", "entropy"):
                raise InstanceError("Growth witness must be a power or entropy option.")

    def __len__(self):
        return len(self.instruments)

    def __iter__(self):
        return iter(self.instruments)

    def __getitem__(self, index: int) -> Instrument:
        return self.instruments[index]

    def validate(self, model: PathGridModel):
        """Check every payoff evaluates on the model, and the growth witness sits at the horizon."""
        for instrument in self.instruments:
            if instrument.payoff.kind == "custom" and len(instrument.payoff.values) != model.path_count:
                raise InstanceError(f"Instrument {instrument.label()} has a custom table of the wrong size.")
            if instrument.payoff.date is not None:
                instrument.payoff.resolved_date(model)
        if self.growth_witness is not None and not self.instruments[self.growth_witness].payoff.is_terminal(model):
            raise InstanceError("Growth witness must pay off at the horizon.")

    def constraint_matrix(self, model: PathGridModel) -> np.ndarray:
        """Normalized values ``payoff - price`` of each instrument on each path, shape (k, G**T)."""
        if not self.instruments:
            return np.zeros((0, model.path_count))
        return np.vstack([instrument.constraint_values(model) for instrument in self.instruments])

    def extended(self, more: Sequence[Instrument]) -> Self:
        return InstrumentSet(instruments=self.instruments + tuple(more), growth_witness=self.growth_witness)

    def scaled(self, factor: float) -> Self:
        return InstrumentSet(instruments=tuple(i.scaled(factor) for i in self.instruments),
                             growth_witness=self.growth_witness)

    def to_dict(self) -> dict[str, Any]:
        return {
            "instruments": [i.to_dict() for i in self.instruments],
            "growth_witness": self.growth_witness,
        }


INSTANCE_FIELDS = {"description", "horizon", "levels", "s0", "instruments", "growth_witness", "marginals"}


@dataclass
class MarketInstance(YamlData):
    """Everything read from an instance file: the grid, the traded instruments, and optional marginals.

    .. code-block:: json

        {
          "description": "mispriced call",
          "horizon": 1,
          "levels": [0, 1, 2],
          "s0": 1,
          "instruments": [
            {"kind": "call", "params": {"strike": 1}, "price": 0.75, "side": "two_sided"}
          ]
        }

    Marginals, when given, are ``{"date": t, "masses": [...]}`` with one mass per level.
    """

    description: str = None
    horizon: int = 1
    levels: list[float] = field(default_factory=lambda: [1.0])
    s0: float = 1.0
    instruments: list[dict] = field(default_factory=list)
    growth_witness: int = None
    marginals: list[dict] = field(default_factory=list)

    def grid_model(self, max_paths: int = DEFAULT_MAX_PATHS) -> PathGridModel:
        return PathGridModel(horizon=self.horizon, levels=tuple(self.levels), s0=self.s0, max_paths=max_paths)

    def instrument_set(self) -> InstrumentSet:
        return InstrumentSet(instruments=tuple(self.instruments), growth_witness=self.growth_witness)

    @classmethod
    def from_dict(cls, instance_dict) -> Self:
        if not isinstance(instance_dict, dict):
            raise InstanceError(f"Instance must be a mapping, got: {type(instance_dict).__name__}")
        unknown = set(instance_dict) - INSTANCE_FIELDS
        if unknown:
            raise InstanceError(f"Unknown instance fields: {sorted(unknown)}")
        for required in ("horizon", "levels", "s0"):
            if required not in instance_dict:
                raise InstanceError(f"Instance is missing required field '{required}'.")
        return super().from_dict(instance_dict)


def read_instance(instance_file: str) -> MarketInstance:
    """Parse an instance file, JSON or YAML, and check that it describes a valid market."""
    logging.info(f"Reading instance from: {instance_file}")
    with open(instance_file) as f:
        text = f.read()
    try:
        parsed = yaml.safe_load(text)
    except yaml.YAMLError as error:
        raise InstanceError(f"Instance file {instance_file} is not valid JSON or YAML: {error}") from error
    instance = MarketInstance.from_dict(parsed)

    # Fail early on a bad grid or bad instruments.
    model = instance.grid_model()
    instance.instrument_set().validate(model)
    logging.info(f"Instance has {model.level_count} levels, horizon {model.horizon}, "
                 f"{len(instance.instruments)} instruments, {len(instance.marginals)} marginals.")
    return instance
