import math
import time

import numpy as np
from pytest import approx, raises

from robustprice.errors import DomainError, InstanceError, NotAMartingale, NumericalFailure
from robustprice.martingale_lp import PathMeasure
from robustprice.model import GridPath, PathGridModel, Payoff, path_index
from robustprice import pathwise
from robustprice.pathwise import (
    DOOB_CONSTANT,
    DoobInstance,
    doob_hedge,
    doob_instruments,
    doob_lp_bound,
    doob_strategy,
    doob_tightness,
    doob_verify_all,
    induced_martingale_inequality,
)
from robustprice.superrep import verify_hedge


def test_doob_constant():
    assert DOOB_CONSTANT == approx(1.5819767068693265)


def test_hedge_value_on_one_path():
    model = PathGridModel(horizon=3, levels=(0.5, 1, 2), s0=1)
    hedge = doob_hedge(model, C=0.0)
    values = hedge.payoff(model, doob_instruments(0.0))
    path = path_index(GridPath((1.0, 2.0, 1.0)), model)
    assert values[path] == approx(2.2751, abs=1e-4)
    assert values[path] == approx(DOOB_CONSTANT + math.log(2))


def test_hedge_value_on_single_step():
    model = PathGridModel(horizon=1, levels=(0.5, 1, 2), s0=1)
    values = doob_hedge(model).payoff(model, doob_instruments(0.0))
    assert values[2] == approx(DOOB_CONSTANT * (2 * math.log(2) + 1))


def test_hedge_dominates_on_every_path():
    model = PathGridModel(horizon=3, levels=(0.5, 1, 2), s0=1)
    report = doob_verify_all(model, C=0.0)
    assert report.path_count == 27
    assert report.passed
    assert report.min_slack >= 0.0

    hedge = doob_hedge(model, C=0.0)
    assert hedge.slack_min == approx(report.min_slack)
    assert verify_hedge(hedge, Payoff.running_max(), model, doob_instruments(0.0)) >= 0.0


def test_constant_path_slack():
    model = PathGridModel(horizon=4, levels=(1,), s0=1)
    report = doob_verify_all(model)
    assert report.path_count == 1
    assert report.min_slack == approx(DOOB_CONSTANT - 1.0)
    assert report.argmin_path == [1.0, 1.0, 1.0, 1.0]


def test_hedge_with_entropy_price():
    model = PathGridModel(horizon=2, levels=(0, 0.5, 1, 2, 4), s0=1)
    for C in [0.0, 0.5, 1.0, 2.0]:
        assert doob_verify_all(model, C=C).passed


def test_smaller_cash_constant_fails():
    model = PathGridModel(horizon=2, levels=(0.5, 1, 2, 3), s0=1)
    instance = DoobInstance(model=model, C=0.0, cash_constant=1.0)
    report = doob_verify_all(instance)
    assert not report.passed
    assert report.min_slack == approx(DOOB_CONSTANT * 0.5 * math.log(0.5))
    assert report.argmin_path == [0.5, 0.5]

    # Up to 2 and back down to 0.5 also breaks it.
    values = doob_hedge(instance).payoff(model, doob_instruments(0.0))
    value = values[path_index(GridPath((2.0, 0.5)), model)]
    assert value == approx(1.0 + DOOB_CONSTANT * 0.5 * math.log(0.5) + 1.5 * math.log(2))
    assert value == approx(1.4914, abs=1e-3)
    assert value < 2.0


def test_doob_instance_checks():
    model = PathGridModel(horizon=1, levels=(0.5, 1, 2), s0=1)
    with raises(InstanceError):
        DoobInstance(model=model, C=-1.0)
    with raises(InstanceError):
        DoobInstance(model=model, eps=-0.1)
    with raises(InstanceError):
        DoobInstance(model=PathGridModel(horizon=1, levels=(0.5, 1, 2), s0=2))

    instance = DoobInstance(model=model, C=1.0, eps=0.25)
    assert instance.cash == approx(2 * DOOB_CONSTANT + 0.25)
    assert instance.analytic_bound == approx(2 * DOOB_CONSTANT)
    assert DoobInstance.from_dict(instance.to_dict()) == instance


def test_zero_running_max_has_no_log():
    model = PathGridModel(horizon=2, levels=(0, 1), s0=0)
    with raises(InstanceError):
        doob_verify_all(model)
    with raises(DomainError):
        doob_strategy(model)


def test_strategy_uses_running_max():
    model = PathGridModel(horizon=2, levels=(0.5, 1, 2), s0=1)
    strategy = doob_strategy(model)
    assert strategy.positions[0] == approx([0.0])
    assert strategy.positions[1] == approx([0.0, 0.0, -math.log(2)])


def test_lp_bound_examples():
    grid = PathGridModel(horizon=3, levels=(0.5, 1, 2), s0=1)
    previous = 0.0
    for C in [0.0, 0.5, 1.0, 2.0]:
        bound = doob_lp_bound(grid, C)
        assert 1.0 - 1e-9 <= bound <= DOOB_CONSTANT * (C + 1) + 1e-7
        assert bound >= previous - 1e-9
        previous = bound

    constant = PathGridModel(horizon=3, levels=(1,), s0=1)
    assert doob_lp_bound(constant, 0.0) == approx(1.0)


def test_lp_bound_grows_with_the_grid():
    coarse = PathGridModel(horizon=2, levels=(0.5, 1, 2), s0=1)
    fine = PathGridModel(horizon=2, levels=(0.25, 0.5, 1, 2, 4), s0=1)
    for C in [0.0, 1.0]:
        assert doob_lp_bound(fine, C) >= doob_lp_bound(coarse, C) - 1e-9


def test_lp_bound_agrees_with_vertex_enumeration(oracle):
    model = PathGridModel(horizon=2, levels=(0.25, 1, 4), s0=1)
    for C in [0.0, 0.5, 1.0, 2.0]:
        running_max = np.maximum(np.asarray([[a, b] for a in model.levels for b in model.levels]).max(axis=1), 1.0)
        entropy_row = doob_instruments(C).constraint_matrix(model)
        expected = oracle.bounds(model.levels, 1.0, 2, running_max, buy_only=entropy_row)
        assert doob_lp_bound(model, C) == approx(expected[1], abs=1e-7)


def test_induced_inequality_for_a_dirac():
    model = PathGridModel(horizon=2, levels=(0.5, 1, 2), s0=1)
    constant = PathMeasure.dirac(model, GridPath((1.0, 1.0)))
    induced = induced_martingale_inequality(model, constant)
    assert induced.lhs == approx(1.0)
    assert induced.rhs == approx(DOOB_CONSTANT)
    assert induced.holds


def test_induced_inequality_for_a_two_point_law():
    model = PathGridModel(horizon=1, levels=(0, 2), s0=1)
    induced = induced_martingale_inequality(model, PathMeasure(model=model, weights=[0.5, 0.5]))
    assert induced.lhs == approx(1.5)
    assert induced.rhs == approx(DOOB_CONSTANT * (math.log(2) + 1))
    assert induced.rhs == approx(2.6785, abs=1e-4)
    assert induced.gains_expectation == approx(0.0, abs=1e-15)
    assert induced.holds


def test_induced_inequality_needs_a_martingale():
    model = PathGridModel(horizon=1, levels=(0, 1, 3), s0=1)
    with raises(NotAMartingale):
        induced_martingale_inequality(model, PathMeasure(model=model, weights=np.full(3, 1 / 3)))


def test_tightness_table():
    table = doob_tightness(grids=[(0.5, 1, 2)], horizons=[1, 2], c_values=[0.0, 1.0])
    assert len(table) == 4
    assert table["pathwise_passed"].all()
    assert table["induced_holds"].all()
    assert (table["ratio"] <= 1.0 + 1e-7).all()
    assert (table["lp_bound"] <= table["analytic_bound"] + 1e-7).all()


def test_verify_all_on_a_large_grid():
    levels = tuple(0.25 * k for k in range(1, 13))
    model = PathGridModel(horizon=5, levels=levels, s0=1)
    start = time.monotonic()
    report = doob_verify_all(model, C=0.0)
    elapsed = time.monotonic() - start
    assert report.path_count == 12 ** 5
    assert report.passed
    assert elapsed < 10.0


def test_lp_bound_above_the_analytic_bound_fails(monkeypatch):
    model = PathGridModel(horizon=1, levels=(0.5, 1, 2), s0=1)
    bounds = pathwise.doob_bounds(model, 0.0)
    bounds.upper.value = DOOB_CONSTANT + 1e-3
    monkeypatch.setattr(pathwise, "doob_bounds", lambda *args, **kwargs: bounds)
    with raises(NumericalFailure):
        doob_lp_bound(model, 0.0)
