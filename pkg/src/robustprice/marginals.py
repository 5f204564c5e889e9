"""Marginal laws and call-price strips, and conversions between them.

A marginal ``nu`` on grid levels ``y_1 < ... < y_G`` and its call prices
``p(K) = sum_j nu_j (y_j - K)_+`` carry the same information.  With strikes equal
to the levels, write ``s_j = (p_{j+1} - p_j) / (K_{j+1} - K_j)`` for the slope of
the price curve between strikes j and j+1, and extend with ``s_0 = -1`` below the
first strike and ``s_G = 0`` above the last.  Then::

    nu_j = s_j - s_{j-1}

This is the divided second difference at interior strikes.  At the first strike it
uses total probability 1, and at the last it uses the fact that no mass sits above
the grid, so the top-strike price must be 0.  The barycenter is
``K_1 + p(K_1)``, which is the strike-0 price when ``K_1 = 0``.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Any, Self, Sequence

import numpy as np
import pandas as pd
import yaml

from robustprice.errors import InstanceError, NotConvex, StaticArbitrage
from robustprice.model import BUY_ONLY, TWO_SIDED, Instrument, InstrumentSet, Payoff, PathGridModel
from robustprice.yaml_data import YamlData


MASS_TOL = 1e-9
STRIP_TOL = 1e-10


@dataclass(frozen=True)
class Marginal(YamlData):
    """The law of the price at one date, as a probability vector over grid levels.

    .. code-block:: json

        {"date": 1, "levels": [0, 1, 2], "masses": [0.25, 0.5, 0.25]}
    """

    date: int = 1
    levels: tuple[float, ...] = (1.0,)
    masses: tuple[float, ...] = (1.0,)

    def __post_init__(self):
        object.__setattr__(self, "levels", tuple(float(level) for level in self.levels))
        object.__setattr__(self, "masses", tuple(float(mass) for mass in self.masses))
        if len(self.levels) != len(self.masses):
            raise InstanceError(f"Marginal has {len(self.masses)} masses for {len(self.levels)} levels.")
        if self.date < 1:
            raise InstanceError(f"Marginal date must be >= 1, got {self.date}.")
        if any(not math.isfinite(m) or m < -MASS_TOL for m in self.masses):
            raise InstanceError(f"Marginal masses must be finite and nonnegative: {self.masses}")
        if abs(sum(self.masses) - 1.0) > MASS_TOL:
            raise InstanceError(f"Marginal masses sum to {sum(self.masses)}, not 1.")

    @property
    def level_array(self) -> np.ndarray:
        return np.asarray(self.levels)

    @property
    def mass_array(self) -> np.ndarray:
        return np.asarray(self.masses)

    @property
    def barycenter(self) -> float:
        return float(self.mass_array @ self.level_array)

    def expectation(self, values: Sequence[float]) -> float:
        """Expected value of a function given by its values at the levels."""
        return float(self.mass_array @ np.asarray(values, dtype=float))

    @classmethod
    def dirac(cls, date: int, levels: Sequence[float], at: float) -> Self:
        masses = [1.0 if math.isclose(level, at, rel_tol=0, abs_tol=1e-12) else 0.0 for level in levels]
        if sum(masses) != 1.0:
            raise InstanceError(f"Dirac location {at} is not one of the levels {levels}.")
        return cls(date=date, levels=tuple(levels), masses=tuple(masses))

    @classmethod
    def uniform(cls, date: int, levels: Sequence[float]) -> Self:
        return cls(date=date, levels=tuple(levels), masses=(1.0 / len(levels),) * len(levels))


def marginal_from_dict(marginal_dict: dict[str, Any], model: PathGridModel) -> Marginal:
    """Read an instance-file marginal ``{date, masses}``, taking levels from the model."""
    if not isinstance(marginal_dict, dict):
        raise InstanceError(f"Marginal must be a mapping, got: {marginal_dict}")
    unknown = set(marginal_dict) - {"date", "masses", "levels"}
    if unknown:
        raise InstanceError(f"Unknown marginal fields: {sorted(unknown)}")
    levels = tuple(marginal_dict.get("levels", model.levels))
    if len(levels) != model.level_count or any(not math.isclose(a, b, abs_tol=1e-12) for a, b in zip(levels, model.levels)):
        raise InstanceError("Marginal levels must match the grid levels.")
    marginal = Marginal(date=marginal_dict.get("date", model.horizon), levels=model.levels,
                        masses=tuple(marginal_dict.get("masses", ())))
    if marginal.date > model.horizon:
        raise InstanceError(f"Marginal date {marginal.date} is beyond the horizon {model.horizon}.")
    return marginal


def read_marginals(marginals_file: str, model: PathGridModel) -> list[Marginal]:
    """Read a JSON (or YAML) list of marginals, or a single marginal."""
    logging.info(f"Reading marginals from: {marginals_file}")
    with open(marginals_file) as f:
        parsed = yaml.safe_load(f)
    if isinstance(parsed, dict):
        parsed = parsed.get("marginals", [parsed])
    return [marginal_from_dict(m, model) for m in parsed]


@dataclass(frozen=True)
class CallStrip(YamlData):
    """Quoted prices of calls ``(x_date - K_n)_+`` at increasing strikes, with optional weights.

    Weights ``alpha_n >= 0`` say how much of each call a super-linear payoff is built from.
    A finite strip can't have weights summing to infinity, so any continuum growth
    assumption on them becomes a note about truncation.

    .. code-block:: json

        {"date": 1, "strikes": [0, 1, 2], "prices": [1.0, 0.3333, 0.0]}
    """

    date: int = 1
    strikes: tuple[float, ...] = ()
    prices: tuple[float, ...] = ()
    weights: tuple[float, ...] = None
    note: str = None

    def __post_init__(self):
        object.__setattr__(self, "strikes", tuple(float(k) for k in self.strikes))
        object.__setattr__(self, "prices", tuple(float(p) for p in self.prices))
        if len(self.strikes) != len(self.prices):
            raise InstanceError(f"Call strip has {len(self.prices)} prices for {len(self.strikes)} strikes.")
        if any(b <= a for a, b in zip(self.strikes, self.strikes[1:])):
            raise InstanceError(f"Call strip strikes must be strictly increasing: {self.strikes}")
        if any(not math.isfinite(p) for p in self.prices):
            raise InstanceError("Call strip prices must be finite.")
        if self.weights is not None:
            weights = tuple(float(w) for w in self.weights)
            if len(weights) != len(self.strikes) or any(w < 0 for w in weights):
                raise InstanceError("Call strip weights must be nonnegative, one per strike.")
            object.__setattr__(self, "weights", weights)
            if self.note is None:
                object.__setattr__(self, "note", f"Finite truncation with {len(weights)} weights summing to {sum(weights):g}.")

    def slopes(self) -> np.ndarray:
        return np.diff(self.prices) / np.diff(self.strikes)

    def to_frame(self) -> pd.DataFrame:
        frame = pd.DataFrame({"strike": self.strikes, "price": self.prices})
        if self.weights is not None:
            frame["weight"] = self.weights
        return frame


def read_call_strip(csv_file: str, date: int) -> CallStrip:
    """Read a call strip from CSV with ``strike,price`` columns and an optional ``weight`` column."""
    logging.info(f"Reading call strip from: {csv_file}")
    frame = pd.read_csv(csv_file)
    missing = {"strike", "price"} - set(frame.columns)
    if missing:
        raise InstanceError(f"Call strip CSV {csv_file} is missing columns: {sorted(missing)}")
    frame = frame.sort_values("strike")
    weights = tuple(frame["weight"]) if "weight" in frame.columns else None
    return CallStrip(date=date, strikes=tuple(frame["strike"]), prices=tuple(frame["price"]), weights=weights)


def write_call_strip(strip: CallStrip, csv_file: str):
    logging.info(f"Writing call strip to: {csv_file}")
    strip.to_frame().to_csv(csv_file, index=False)


def marginal_to_calls(nu: Marginal, strikes: Sequence[float] = None) -> CallStrip:
    """Price calls at the given strikes (the marginal's levels by default) as ``E_nu (x - K)_+``."""
    strikes = nu.levels if strikes is None else tuple(strikes)
    payoffs = np.maximum(nu.level_array[None, :] - np.asarray(strikes, dtype=float)[:, None], 0.0)
    return CallStrip(date=nu.date, strikes=strikes, prices=tuple(payoffs @ nu.mass_array))


def validate_call_strip(strip: CallStrip, s0: float = None, tol: float = STRIP_TOL) -> list[str]:
    """List every static-arbitrage violation in a strip, or an empty list if there are none.

    Checks nonnegative prices, nonincreasing prices, slopes no steeper than -1,
    nonnegative butterflies, and, when ``s0`` is given, ``(s0 - K)_+ <= p(K) <= s0``.
    """
    violations = []
    prices = np.asarray(strip.prices)
    strikes = np.asarray(strip.strikes)
    for k, p in zip(strikes, prices):
        if p < -tol:
            violations.append(f"negative price {p:g} at strike {k:g}")
    slopes = strip.slopes()
    for j, slope in enumerate(slopes):
        if slope > tol:
            violations.append(f"price increases between strikes {strikes[j]:g} and {strikes[j + 1]:g}")
        if slope < -1.0 - tol:
            violations.append(f"price falls faster than the strike between {strikes[j]:g} and {strikes[j + 1]:g}")
    for j in range(1, slopes.size):
        if slopes[j] < slopes[j - 1] - tol:
            butterfly = (slopes[j] - slopes[j - 1]) * (strikes[j + 1] - strikes[j - 1])
            violations.append(f"negative butterfly {butterfly:.3g} centered at strike {strikes[j]:g}")
    if s0 is not None:
        for k, p in zip(strikes, prices):
            if p < max(s0 - k, 0.0) - tol:
                violations.append(f"price {p:g} below intrinsic value at strike {k:g}")
            if p > s0 + tol:
                violations.append(f"price {p:g} above the underlying price {s0:g} at strike {k:g}")
    return violations


def calls_to_marginal(strip: CallStrip, levels: Sequence[float], tol: float = STRIP_TOL) -> Marginal:
    """Recover the marginal from call prices quoted at every grid level.

    Raises :class:`StaticArbitrage` when the strip can't come from any law on the grid.
    """
    levels = tuple(float(level) for level in levels)
    if len(levels) != len(strip.strikes) or any(
            not math.isclose(k, y, rel_tol=0, abs_tol=1e-12) for k, y in zip(strip.strikes, levels)):
        raise InstanceError(f"Call strip strikes {strip.strikes} must coincide with the grid levels {levels}.")

    violations = validate_call_strip(strip, tol=tol)
    if abs(strip.prices[-1]) > tol:
        violations.append(f"top strike {levels[-1]:g} has price {strip.prices[-1]:g}, but no mass can sit above it")
    if violations:
        raise StaticArbitrage(violations)

    slopes = np.concatenate([[-1.0], strip.slopes(), [0.0]])
    masses = np.clip(np.diff(slopes), 0.0, None)
    return Marginal(date=strip.date, levels=levels, masses=tuple(masses / masses.sum()))


@dataclass
class CallStripDecomposition(YamlData):
    """``g(y) = c + beta * y + sum_n alpha_n (y - K_n)_+`` at every grid level."""

    c: float = 0.0
    beta: float = 0.0
    strikes: list[float] = field(default_factory=list)
    weights: list[float] = field(default_factory=list)

    def reconstruct(self, levels: Sequence[float]) -> np.ndarray:
        y = np.asarray(levels, dtype=float)
        values = self.c + self.beta * y
        for strike, weight in zip(self.strikes, self.weights):
            values = values + weight * np.maximum(y - strike, 0.0)
        return values

    def call_strip(self, date: int, prices: Sequence[float]) -> CallStrip:
        return CallStrip(date=date, strikes=tuple(self.strikes), prices=tuple(prices), weights=tuple(self.weights))


def call_strip_decompose(g: Payoff | Sequence[float], levels: Sequence[float], tol: float = 1e-12) -> CallStripDecomposition:
    """Write a payoff, convex along the levels, as cash plus underlying plus calls at interior levels.

    The call weight at each interior level is the slope increase of the piecewise-linear interpolant there.
    """
    y = np.asarray(levels, dtype=float)
    values = g.level_function(y) if isinstance(g, Payoff) else np.asarray(g, dtype=float)
    if values.shape != y.shape:
        raise InstanceError(f"Payoff has {values.size} values for {y.size} levels.")
    if y.size == 1:
        return CallStripDecomposition(c=float(values[0]))

    slopes = np.diff(values) / np.diff(y)
    kinks = np.diff(slopes)
    if np.any(kinks < -tol):
        bad = y[1:-1][kinks < -tol]
        raise NotConvex(f"Payoff slope decreases at levels {bad.tolist()}.")

    beta = float(slopes[0])
    keep = np.abs(kinks) > tol
    return CallStripDecomposition(
        c=float(values[0] - beta * y[0]),
        beta=beta,
        strikes=y[1:-1][keep].tolist(),
        weights=kinks[keep].tolist(),
    )


def marginal_instruments(nu: Marginal) -> InstrumentSet:
    """Two-sided calls at every level, priced under the marginal, which together pin the marginal."""
    strip = marginal_to_calls(nu)
    return strip_instruments(strip, side=TWO_SIDED)


def strip_instruments(strip: CallStrip, side: str = BUY_ONLY) -> InstrumentSet:
    """Turn a call strip into traded call instruments at the strip's date."""
    instruments = [
        Instrument(payoff=Payoff.call(strike, strip.date), price=price, side=side, name=f"call({strike:g})@t{strip.date}")
        for strike, price in zip(strip.strikes, strip.prices)
    ]
    return InstrumentSet(instruments=tuple(instruments))
