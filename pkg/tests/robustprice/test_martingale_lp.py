import numpy as np
from pytest import approx

from robustprice.ftap import check
from robustprice.marginals import Marginal
from robustprice.martingale_lp import PathMeasure, build_constraints, martingale_row_count, verify_measure
from robustprice.model import (
    BUY_ONLY,
    TWO_SIDED,
    GridPath,
    Instrument,
    InstrumentSet,
    PathGridModel,
    Payoff,
)


def test_two_level_grid_forces_the_measure():
    model = PathGridModel(horizon=1, levels=(0, 2), s0=1)
    verdict = check(model)
    assert verdict.feasible
    assert verdict.measure.weights == approx([0.5, 0.5])


def test_martingale_rows():
    model = PathGridModel(horizon=1, levels=(0, 2), s0=1)
    bundle = build_constraints(model)
    assert bundle.martingale.toarray().tolist() == [[-1.0, 1.0]]
    assert bundle.equality_rhs().tolist() == [1.0, 0.0]


def test_row_layout():
    model = PathGridModel(horizon=2, levels=(0, 1, 2), s0=1)
    instruments = InstrumentSet(instruments=(
        Instrument(payoff=Payoff.call(1), price=0.25, side=TWO_SIDED),
        Instrument(payoff=Payoff.entropy(), price=1.0, side=BUY_ONLY),
    ))
    marginal = Marginal.uniform(1, model.levels)
    bundle = build_constraints(model, instruments, [marginal])

    assert martingale_row_count(model) == 1 + 3
    assert bundle.variable_count == 9
    assert bundle.equality_matrix().shape == (1 + 4 + 1 + 3, 9)
    assert bundle.instrument_ub.shape == (1, 9)
    assert bundle.row_count == 10
    assert bundle.instrument_eq_index == [0]
    assert bundle.instrument_ub_index == [1]

    blocks = bundle.equality_blocks()
    assert blocks["probability"] == slice(0, 1)
    assert blocks["martingale"] == slice(1, 5)
    assert blocks["instrument_eq"] == slice(5, 6)
    assert blocks["marginal"] == slice(6, 9)
    assert bundle.equality_rhs()[blocks["marginal"]] == approx([1 / 3] * 3)

    lp = bundle.to_linear_program()
    assert lp.num_variables == 9
    assert lp.num_eq == 9
    assert lp.num_ub == 1
    assert lp.lower.tolist() == [0.0] * 9


def test_prefix_rows_only_touch_their_extensions():
    model = PathGridModel(horizon=2, levels=(0, 1, 2), s0=1)
    martingale = build_constraints(model).martingale.toarray()

    # Prefix x_1 = 2 covers paths 6, 7, 8, with increments x_2 - 2.
    assert martingale[3].tolist() == [0, 0, 0, 0, 0, 0, -2, -1, 0]
    assert martingale[0].tolist() == [-1, -1, -1, 0, 0, 0, 1, 1, 1]


def test_verify_uniform_against_mispriced_call():
    model = PathGridModel(horizon=1, levels=(0, 1, 2), s0=1)
    instruments = InstrumentSet(instruments=(Instrument(payoff=Payoff.call(1), price=0.75, side=TWO_SIDED),))
    bundle = build_constraints(model, instruments)
    uniform = PathMeasure(model=model, weights=np.full(3, 1 / 3))
    report = verify_measure(uniform, bundle)
    assert not report.passed
    assert report.martingale == approx(0.0, abs=1e-15)
    assert report.instruments == approx(abs(1 / 3 - 0.75))
    assert report.max_violation == approx(abs(1 / 3 - 0.75))


def test_verify_measure_missing_mass():
    model = PathGridModel(horizon=1, levels=(0, 1, 2), s0=1)
    report = verify_measure(PathMeasure(model=model, weights=[0.45, 0.0, 0.45]), build_constraints(model))
    assert not report.passed
    assert report.probability == approx(0.1)
    assert report.martingale == approx(0.0, abs=1e-15)


def test_verify_measure_negative_weight():
    model = PathGridModel(horizon=1, levels=(0, 1, 2), s0=1)
    report = verify_measure(PathMeasure(model=model, weights=[0.6, -0.2, 0.6]), build_constraints(model))
    assert not report.passed
    assert report.nonnegativity == approx(0.2)


def test_verify_measure_wrong_size():
    model = PathGridModel(horizon=1, levels=(0, 1, 2), s0=1)
    bundle = build_constraints(model)
    small = PathMeasure(model=PathGridModel(horizon=1, levels=(0, 2), s0=1), weights=[0.5, 0.5])
    report = verify_measure(small, bundle)
    assert not report.passed
    assert "expected 3" in report.message


def test_verify_buy_only_is_one_sided():
    model = PathGridModel(horizon=1, levels=(0, 1, 2), s0=1)
    cheap = InstrumentSet(instruments=(Instrument(payoff=Payoff.call(1), price=0.75, side=BUY_ONLY),))
    uniform = PathMeasure(model=model, weights=np.full(3, 1 / 3))
    assert verify_measure(uniform, build_constraints(model, cheap)).passed

    dear = InstrumentSet(instruments=(Instrument(payoff=Payoff.call(1), price=0.1, side=BUY_ONLY),))
    report = verify_measure(uniform, build_constraints(model, dear))
    assert report.instruments == approx(1 / 3 - 0.1)


def test_verify_marginals():
    model = PathGridModel(horizon=2, levels=(0, 1, 2), s0=1)
    constant = PathMeasure.dirac(model, GridPath((1.0, 1.0)))
    at_one = Marginal.dirac(2, model.levels, 1.0)
    assert verify_measure(constant, build_constraints(model, marginals=[at_one])).passed

    uniform = Marginal.uniform(2, model.levels)
    report = verify_measure(constant, build_constraints(model, marginals=[uniform]))
    assert report.marginals == approx(2 / 3)


def test_measure_dict_form():
    model = PathGridModel(horizon=2, levels=(0, 1, 2), s0=1)
    measure = PathMeasure(model=model, weights=[0.25, 0, 0.25, 0, 0, 0, 0, 0.5, 0])
    measure_dict = measure.to_dict()
    assert measure_dict["atoms"] == [
        {"path": [0.0, 0.0], "weight": 0.25},
        {"path": [0.0, 2.0], "weight": 0.25},
        {"path": [2.0, 1.0], "weight": 0.5},
    ]
    assert PathMeasure.from_dict(measure_dict).weights == approx(measure.weights)
    assert measure.marginal_masses(1) == approx([0.5, 0.0, 0.5])
    assert measure.marginal_masses(2) == approx([0.25, 0.5, 0.25])
    assert measure.total_mass == approx(1.0)
