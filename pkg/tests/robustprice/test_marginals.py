from pathlib import Path

import numpy as np
from pytest import approx, raises

from robustprice.errors import InstanceError, NotConvex, StaticArbitrage
from robustprice.marginals import (
    CallStrip,
    Marginal,
    call_strip_decompose,
    calls_to_marginal,
    marginal_from_dict,
    marginal_instruments,
    marginal_to_calls,
    read_call_strip,
    read_marginals,
    strip_instruments,
    validate_call_strip,
    write_call_strip,
)
from robustprice.model import BUY_ONLY, TWO_SIDED, PathGridModel, Payoff


def test_uniform_marginal_call_prices():
    nu = Marginal.uniform(1, (0, 1, 2))
    strip = marginal_to_calls(nu)
    assert strip.strikes == (0.0, 1.0, 2.0)
    assert strip.prices == approx((1.0, 1 / 3, 0.0))
    assert validate_call_strip(strip, s0=1.0) == []


def test_calls_back_to_marginal():
    strip = CallStrip(date=1, strikes=(0, 1, 2), prices=(1.0, 1 / 3, 0.0))
    nu = calls_to_marginal(strip, (0, 1, 2))
    assert nu.masses == approx((1 / 3, 1 / 3, 1 / 3))
    assert nu.barycenter == approx(1.0)


def test_dirac_marginal():
    nu = Marginal.dirac(2, (0, 1, 2), 1.0)
    assert nu.masses == (0.0, 1.0, 0.0)
    strip = marginal_to_calls(nu)
    assert strip.prices == approx((1.0, 0.0, 0.0))
    assert calls_to_marginal(strip, nu.levels).masses == approx(nu.masses)
    with raises(InstanceError):
        Marginal.dirac(2, (0, 1, 2), 0.5)


def test_random_marginals_survive_conversion():
    rng = np.random.default_rng(5)
    for _ in range(100):
        count = int(rng.integers(2, 9))
        levels = tuple(np.cumsum(rng.uniform(0.1, 1.0, count)) - 0.1)
        masses = rng.dirichlet(np.ones(count))
        nu = Marginal(date=1, levels=levels, masses=tuple(masses))
        back = calls_to_marginal(marginal_to_calls(nu), levels)
        assert np.abs(np.asarray(back.masses) - masses).max() <= 1e-12


def test_butterfly_violations_are_rejected():
    rng = np.random.default_rng(9)
    for _ in range(20):
        count = int(rng.integers(3, 8))
        levels = tuple(float(x) for x in range(count))
        nu = Marginal(date=1, levels=levels, masses=tuple(rng.dirichlet(np.ones(count))))
        prices = list(marginal_to_calls(nu).prices)
        j = int(rng.integers(1, count - 1))
        prices[j] = (prices[j - 1] + prices[j + 1]) / 2 + 1e-6
        strip = CallStrip(date=1, strikes=levels, prices=tuple(prices))
        assert any("butterfly" in violation for violation in validate_call_strip(strip))
        with raises(StaticArbitrage):
            calls_to_marginal(strip, levels)


def test_strip_with_mass_above_the_grid_is_rejected():
    # Linear decay from 1 at strike 0 would need mass beyond strike 2.
    strip = CallStrip(date=1, strikes=(0, 1, 2), prices=(1.0, 0.6, 0.3))
    assert validate_call_strip(strip) == []
    with raises(StaticArbitrage) as exception_info:
        calls_to_marginal(strip, (0, 1, 2))
    assert any("top strike" in violation for violation in exception_info.value.violations)


def test_strip_violations():
    rising = CallStrip(date=1, strikes=(0, 1, 2), prices=(0.5, 0.6, 0.0))
    assert any("increases" in v for v in validate_call_strip(rising))

    steep = CallStrip(date=1, strikes=(0, 1, 2), prices=(2.0, 0.5, 0.0))
    assert any("faster" in v for v in validate_call_strip(steep))

    negative = CallStrip(date=1, strikes=(0, 1), prices=(1.0, -0.1))
    assert any("negative price" in v for v in validate_call_strip(negative))

    uniform = CallStrip(date=1, strikes=(0, 1, 2), prices=(1.0, 1 / 3, 0.0))
    assert any("intrinsic" in v for v in validate_call_strip(uniform, s0=1.5))
    assert any("above the underlying" in v for v in validate_call_strip(uniform, s0=0.5))


def test_strikes_must_match_levels():
    strip = CallStrip(date=1, strikes=(0, 1, 2), prices=(1.0, 1 / 3, 0.0))
    with raises(InstanceError):
        calls_to_marginal(strip, (0, 1, 3))
    with raises(InstanceError):
        calls_to_marginal(strip, (0, 1))


def test_invalid_marginals():
    with raises(InstanceError):
        Marginal(date=1, levels=(0, 1), masses=(0.5, 0.6))
    with raises(InstanceError):
        Marginal(date=1, levels=(0, 1), masses=(1.5, -0.5))
    with raises(InstanceError):
        Marginal(date=0, levels=(0, 1), masses=(0.5, 0.5))
    with raises(InstanceError):
        Marginal(date=1, levels=(0, 1, 2), masses=(0.5, 0.5))


def test_marginal_from_instance_dict():
    model = PathGridModel(horizon=2, levels=(0, 1, 2), s0=1)
    nu = marginal_from_dict({"date": 1, "masses": [0.25, 0.5, 0.25]}, model)
    assert nu.levels == model.levels
    assert marginal_from_dict({"masses": [0, 1, 0]}, model).date == 2

    with raises(InstanceError):
        marginal_from_dict({"date": 3, "masses": [0, 1, 0]}, model)
    with raises(InstanceError):
        marginal_from_dict({"date": 1, "levels": [0, 1, 3], "masses": [0, 1, 0]}, model)
    with raises(InstanceError):
        marginal_from_dict({"date": 1, "weights": [0, 1, 0]}, model)


def test_read_marginals_from_instance(fixture_path):
    model = PathGridModel(horizon=2, levels=(0, 0.5, 1.5, 2), s0=1)
    marginals = read_marginals(Path(fixture_path, "instances", "marginal_instance.yaml").as_posix(), model)
    assert [nu.date for nu in marginals] == [1, 2]
    assert [nu.barycenter for nu in marginals] == approx([1.0, 1.0])


def test_decompose_square():
    decomposition = call_strip_decompose(Payoff.power(2.0), (0, 1, 2))
    assert decomposition.c == approx(0.0)
    assert decomposition.beta == approx(1.0)
    assert decomposition.strikes == [1.0]
    assert decomposition.weights == approx([2.0])
    assert decomposition.reconstruct((0, 1, 2)) == approx([0.0, 1.0, 4.0])


def test_decompose_call_and_affine():
    call = call_strip_decompose(Payoff.call(1.0), (0, 1, 2))
    assert (call.c, call.beta) == approx((0.0, 0.0))
    assert call.strikes == [1.0]
    assert call.weights == approx([1.0])

    affine = call_strip_decompose([2.0, 5.0, 8.0], (0, 1, 2))
    assert (affine.c, affine.beta) == approx((2.0, 3.0))
    assert affine.strikes == []


def test_decompose_entropy_reconstructs():
    levels = (0.0, 0.5, 1.0, 2.0, 4.0)
    decomposition = call_strip_decompose(Payoff.entropy(), levels)
    assert all(w > 0 for w in decomposition.weights)
    assert decomposition.reconstruct(levels) == approx(Payoff.entropy().level_function(np.asarray(levels)))


def test_decompose_rejects_concave():
    with raises(NotConvex):
        call_strip_decompose([0.0, -1.0, -4.0], (0, 1, 2))
    with raises(InstanceError):
        call_strip_decompose([0.0, 1.0], (0, 1, 2))


def test_marginal_instruments():
    nu = Marginal(date=2, levels=(0, 1, 2), masses=(0.25, 0.5, 0.25))
    instruments = marginal_instruments(nu)
    assert len(instruments) == 3
    assert all(instrument.side == TWO_SIDED for instrument in instruments)
    assert [instrument.payoff.date for instrument in instruments] == [2, 2, 2]
    assert [instrument.price for instrument in instruments] == approx([1.0, 0.25, 0.0])
    assert instruments[1].label() == "call(1)@t2"

    buy_only = strip_instruments(marginal_to_calls(nu))
    assert all(instrument.side == BUY_ONLY for instrument in buy_only)


def test_call_strip_csv(fixture_path, tmp_path):
    strip = read_call_strip(Path(fixture_path, "call_strips", "uniform.csv").as_posix(), date=1)
    assert strip.strikes == (0.0, 1.0, 2.0)
    assert strip.prices == approx((1.0, 1 / 3, 0.0))

    weighted = CallStrip(date=2, strikes=(0, 1), prices=(1.0, 0.25), weights=(0.5, 1.0))
    assert "2 weights" in weighted.note
    csv_file = Path(tmp_path, "weighted.csv").as_posix()
    write_call_strip(weighted, csv_file)
    read_back = read_call_strip(csv_file, date=2)
    assert read_back.prices == weighted.prices
    assert read_back.weights == weighted.weights


def test_call_strip_csv_needs_columns(tmp_path):
    csv_file = Path(tmp_path, "bad.csv").as_posix()
    with open(csv_file, "w") as f:
        f.write("strike,bid\n0,1\n")
    with raises(InstanceError):
        read_call_strip(csv_file, date=1)
