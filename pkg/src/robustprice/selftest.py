import logging
import time

import numpy as np
import pandas as pd

from robustprice.errors import NoAdmissibleMeasure
from robustprice.ftap import DynamicStrategy, certify_arbitrage, check, gains_expectation
from robustprice.lp_core import Tolerances
from robustprice.martingale_lp import build_constraints, verify_measure
from robustprice.model import (
    SIDES,
    Instrument,
    InstrumentSet,
    PathGridModel,
    Payoff,
    payoff_values,
)
from robustprice.superrep import price_bounds, verify_hedge


LEVEL_CHOICES = np.arange(0.0, 4.0 + 1e-9, 0.25)


def random_model(rng: np.random.Generator, max_levels: int = 8, max_horizon: int = 3) -> PathGridModel:
    """A small grid of quarter-unit levels with s0 somewhere between the extremes."""
    level_count = int(rng.integers(1, max_levels + 1))
    horizon = int(rng.integers(1, max_horizon + 1))
    levels = np.sort(rng.choice(LEVEL_CHOICES, level_count, replace=False))
    s0 = float(levels[0]) if level_count == 1 else float(np.round(rng.uniform(levels[0], levels[-1]), 2))
    return PathGridModel(horizon=horizon, levels=tuple(levels), s0=s0)


def random_payoff(rng: np.random.Generator, model: PathGridModel, path_dependent: bool = True) -> Payoff:
    kinds = ["call", "put", "power", "entropy"]
    if path_dependent:
        kinds += ["running_max", "spread", "custom"]
    kind = kinds[int(rng.integers(len(kinds)))]
    date = int(rng.integers(1, model.horizon + 1))
    match kind:
        case "call" | "put":
            return Payoff(kind=kind, strike=float(rng.choice(model.levels)), date=date)
        case "power":
            return Payoff.power(2.0, date)
        case "entropy":
            return Payoff.entropy(date)
        case "running_max":
            return Payoff.running_max()
        case "spread":
            return Payoff.spread(int(rng.integers(0, date)), date)
        case _:
            return Payoff.custom(np.round(rng.uniform(-1.0, 1.0, model.path_count), 3))


def random_instruments(rng: np.random.Generator, model: PathGridModel, max_instruments: int = 6) -> InstrumentSet:
    """Instruments priced near their average over paths, so some sets admit arbitrage and some don't."""
    instruments = []
    for _ in range(int(rng.integers(0, max_instruments + 1))):
        payoff = random_payoff(rng, model, path_dependent=False)
        values = payoff_values(payoff, model)
        spread = float(values.max() - values.min())
        price = float(np.round(values.mean() + rng.normal(0.0, 0.25) * spread, 3))
        side = SIDES[int(rng.integers(len(SIDES)))]
        instruments.append(Instrument(payoff=payoff, price=price, side=side))
    return InstrumentSet(instruments=tuple(instruments))


def dichotomy_suite(
    seed: int = 0,
    size: int = 200,
    tolerances: Tolerances = Tolerances(),
    check_tol: float = 1e-8,
    strategy_count: int = 20
) -> pd.DataFrame:
    """Decide arbitrage on random instances and recheck each verdict independently."""
    rng = np.random.default_rng(seed)
    rows = []
    for trial in range(size):
        model = random_model(rng)
        instruments = random_instruments(rng, model)
        start = time.monotonic()
        verdict = check(model, instruments, tolerances)
        elapsed = time.monotonic() - start

        if verdict.feasible:
            report = verify_measure(verdict.measure, build_constraints(model, instruments), check_tol)
            gains = max(
                (abs(gains_expectation(DynamicStrategy.random(model, rng), verdict.measure)) for _ in range(strategy_count)),
                default=0.0)
            passed = report.passed and gains <= 1e-9
            recheck = report.max_violation
        else:
            recheck = certify_arbitrage(verdict.certificate, model, instruments)
            gains = None
            passed = recheck > check_tol

        rows.append({
            "trial": trial,
            "levels": model.level_count,
            "horizon": model.horizon,
            "instruments": len(instruments),
            "branch": verdict.branch,
            "recheck": recheck,
            "max_gains_expectation": gains,
            "seconds": elapsed,
            "passed": passed,
        })
    return pd.DataFrame(rows)


def duality_suite(
    seed: int = 0,
    size: int = 100,
    tolerances: Tolerances = Tolerances(),
    gap_tol: float = 1e-7,
    slack_tol: float = 1e-9
) -> pd.DataFrame:
    """Price random payoffs on random arbitrage-free instances and recheck gaps and hedges."""
    rng = np.random.default_rng(seed)
    rows = []
    trial = 0
    while trial < size:
        model = random_model(rng, max_levels=6)
        instruments = random_instruments(rng, model, max_instruments=3)
        phi = random_payoff(rng, model)
        try:
            bounds = price_bounds(model, instruments, phi, tolerances)
        except NoAdmissibleMeasure:
            continue

        upper, lower = bounds.upper, bounds.lower
        upper_slack = verify_hedge(upper.hedge, phi, model, instruments, 1)
        lower_slack = verify_hedge(lower.hedge, phi, model, instruments, -1)
        weak = upper.measure.expectation(payoff_values(phi, model)) <= upper.hedge.cost + gap_tol
        rows.append({
            "trial": trial,
            "levels": model.level_count,
            "horizon": model.horizon,
            "instruments": len(instruments),
            "payoff": phi.kind,
            "lower": lower.value,
            "upper": upper.value,
            "gap": bounds.gap,
            "slack_min": min(upper_slack, lower_slack),
            "passed": bounds.gap <= gap_tol and min(upper_slack, lower_slack) >= -slack_tol and weak,
        })
        trial += 1
    return pd.DataFrame(rows)


def summarize_suite(name: str, results: pd.DataFrame) -> pd.DataFrame:
    """One row per branch (or payoff kind) with counts and pass rates."""
    key = "branch" if "branch" in results.columns else "payoff"
    summary = results.groupby(key).agg(count=("passed", "size"), passed=("passed", "sum")).reset_index()
    summary.insert(0, "suite", name)
    return summary.rename(columns={key: "group"})


def run_selftest(seed: int = 0, suite_size: int = None, tolerances: Tolerances = Tolerances()) -> tuple[pd.DataFrame, bool]:
    """Run the dichotomy and duality suites, returning a summary table and overall pass/fail."""
    dichotomy_size = suite_size or 200
    duality_size = suite_size or 100
    logging.info(f"Running dichotomy suite with {dichotomy_size} instances, seed {seed}.")
    dichotomy = dichotomy_suite(seed, dichotomy_size, tolerances)
    logging.info(f"Running duality suite with {duality_size} instances, seed {seed}.")
    duality = duality_suite(seed, duality_size, tolerances)

    summary = pd.concat([summarize_suite("dichotomy", dichotomy), summarize_suite("duality", duality)], ignore_index=True)
    all_passed = bool(dichotomy["passed"].all() and duality["passed"].all())
    for failed in pd.concat([dichotomy, duality]).query("not passed").itertuples():
        logging.error(f"Self test trial {failed.trial} failed.")
    return summary, all_passed
