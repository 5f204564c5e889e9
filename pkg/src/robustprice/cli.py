import sys
import json
import logging
import yaml
from argparse import ArgumentParser
from typing import Any, Optional, Sequence
from robustprice.config_options import ConfigOptions, resolve_config_options
from robustprice.errors import NoAdmissibleMeasure, NumericalFailure, RobustPriceError, StaticArbitrage
from robustprice.ftap import check
from robustprice.lp_core import write_mps
from robustprice.martingale_lp import build_constraints
from robustprice.marginals import (
    Marginal,
    calls_to_marginal,
    marginal_from_dict,
    marginal_to_calls,
    read_call_strip,
    write_call_strip,
)
from robustprice.model import Payoff, read_instance
from robustprice.pathwise import DOOB_CONSTANT, doob_tightness
from robustprice.selftest import run_selftest
from robustprice.superrep import bounds_with_marginals, price_bounds
from robustprice.yaml_data import plain_data, remove_empty_values
from robustprice.__about__ import __version__ as robustprice_version

version_string = f"robustprice {robustprice_version}"

EXIT_OK = 0
EXIT_INPUT_ERROR = 1
EXIT_NUMERICAL_FAILURE = 2
EXIT_ARBITRAGE = 3


def set_up_logging(log_file: str = None):
    logging.root.handlers = []
    handlers = [
        logging.StreamHandler(sys.stderr)
    ]
    if log_file:
        handlers.append(logging.FileHandler(log_file))
    logging.basicConfig(
        level=logging.INFO,
        format="%(asctime)s [%(levelname)s] %(message)s",
        handlers=handlers
    )
    logging.info(version_string)


def write_report(report: dict[str, Any], config_options: ConfigOptions, table: str = None):
    """Write a report as JSON, or as YAML text with an optional table, to stdout or the output file."""
    if config_options.format.value == "json":
        text = json.dumps(plain_data(report), indent=2)
    else:
        text = yaml.safe_dump(remove_empty_values(plain_data(report)), sort_keys=False, width=1000)
        if table:
            text = f"{table}\n\n{text}"

    if config_options.output.value:
        logging.info(f"Writing report to: {config_options.output.value}")
        with open(config_options.output.value, "w") as f:
            f.write(text + "\n")
    else:
        print(text)


def load_market(config_options: ConfigOptions):
    """Read the instance, plus marginals from the instance and any call strip."""
    if not config_options.instance.value:
        raise RobustPriceError("This command needs an --instance file.")
    instance = read_instance(config_options.instance.value)
    model = instance.grid_model(config_options.max_paths.value)
    instruments = instance.instrument_set()
    marginals = [marginal_from_dict(m, model) for m in instance.marginals]

    if config_options.call_strip.value:
        date = config_options.strip_date.value or model.horizon
        strip = read_call_strip(config_options.call_strip.value, date)
        marginals.append(calls_to_marginal(strip, model.levels))
        logging.info(f"Converted call strip to a marginal at date {date}.")

    return model, instruments, marginals


def check_arbitrage(config_options: ConfigOptions) -> int:
    """Decide between a martingale measure and an arbitrage for "robustprice check-arbitrage ..."""
    model, instruments, marginals = load_market(config_options)
    if config_options.mps_file.value:
        write_mps(build_constraints(model, instruments, marginals).to_linear_program(), config_options.mps_file.value)
    verdict = check(model, instruments, config_options.tolerances(), marginals=marginals)
    report = {
        "command": "check-arbitrage",
        "verdict": verdict.to_dict(),
        "options": config_options.to_dict(),
    }
    write_report(report, config_options)
    return EXIT_OK if verdict.feasible else EXIT_ARBITRAGE


def price(config_options: ConfigOptions) -> int:
    """Compute robust price bounds and hedges for "robustprice price ..."""
    if not config_options.payoff.value:
        raise RobustPriceError("The price command needs a --payoff, for example: --payoff kind=running_max")
    phi = Payoff.from_dict(config_options.payoff.value)
    model, instruments, marginals = load_market(config_options)

    try:
        if marginals:
            bounds = bounds_with_marginals(model, marginals, phi, instruments, config_options.tolerances())
        else:
            bounds = price_bounds(model, instruments, phi, config_options.tolerances())
    except NoAdmissibleMeasure as error:
        logging.error(str(error))
        report = {
            "command": "price",
            "error": str(error),
            "verdict": error.verdict.to_dict() if error.verdict else None,
            "options": config_options.to_dict(),
        }
        write_report(report, config_options)
        return EXIT_ARBITRAGE

    report = {
        "command": "price",
        "payoff": phi.to_dict(),
        "upper": bounds.upper.value,
        "lower": bounds.lower.value,
        "gap": bounds.gap,
        "bounds": bounds.to_dict(),
        "options": config_options.to_dict(),
    }
    write_report(report, config_options)
    return EXIT_OK


def doob_demo(config_options: ConfigOptions) -> int:
    """Check the pathwise Doob hedge and compare LP and analytic bounds for "robustprice doob-demo ..."""
    tolerances = config_options.tolerances()
    table = doob_tightness(
        grids=[config_options.levels.value],
        horizons=[config_options.horizon.value],
        c_values=config_options.c_values.value,
        tolerances=tolerances,
        max_paths=config_options.max_paths.value,
    )
    bounded = table["lp_bound"] <= table["analytic_bound"] + tolerances.gap_tol
    passed = bool((table["pathwise_passed"] & table["induced_holds"] & bounded).all())
    report = {
        "command": "doob-demo",
        "constant": DOOB_CONSTANT,
        "passed": passed,
        "rows": table.to_dict(orient="records"),
        "options": config_options.to_dict(),
    }
    write_report(report, config_options, table=table.to_string(index=False))
    return EXIT_OK if passed else EXIT_NUMERICAL_FAILURE


def bl_convert(config_options: ConfigOptions) -> int:
    """Convert between call strips and marginals for "robustprice bl-convert ..."""
    if config_options.call_strip.value:
        strip = read_call_strip(config_options.call_strip.value, config_options.strip_date.value or 1)
        levels = strip.strikes
        if config_options.instance.value:
            levels = read_instance(config_options.instance.value).levels
        try:
            marginal = calls_to_marginal(strip, levels)
        except StaticArbitrage as error:
            logging.error(str(error))
            write_report({"command": "bl-convert", "violations": error.violations}, config_options)
            return EXIT_INPUT_ERROR
        write_report({"command": "bl-convert", "marginal": marginal.to_dict()}, config_options)
        return EXIT_OK

    if config_options.marginal.value:
        logging.info(f"Reading marginal from: {config_options.marginal.value}")
        with open(config_options.marginal.value) as f:
            marginal = Marginal.from_yaml(f.read())
        strip = marginal_to_calls(marginal)
        if config_options.output.value and config_options.output.value.endswith(".csv"):
            write_call_strip(strip, config_options.output.value)
        else:
            write_report({"command": "bl-convert", "call_strip": strip.to_dict()}, config_options,
                         table=strip.to_frame().to_string(index=False))
        return EXIT_OK

    raise RobustPriceError("The bl-convert command needs a --call-strip or a --marginal file.")


def selftest(config_options: ConfigOptions) -> int:
    """Run randomized dichotomy and duality suites for "robustprice selftest ..."""
    summary, passed = run_selftest(config_options.seed.value, config_options.suite_size.value, config_options.tolerances())
    report = {
        "command": "selftest",
        "passed": passed,
        "summary": summary.to_dict(orient="records"),
        "options": config_options.to_dict(),
    }
    write_report(report, config_options, table=summary.to_string(index=False))
    return EXIT_OK if passed else EXIT_NUMERICAL_FAILURE


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = ArgumentParser(description="Model-free option price bounds, hedges, and arbitrage checks on a path grid.")
    parser.add_argument("operation",
                        type=str,
                        choices=["check-arbitrage", "price", "doob-demo", "bl-convert", "selftest"],
                        help="operation to perform")
    parser.add_argument("--version", "-v", action="version", version=version_string)

    default_config_options = ConfigOptions()
    for option_name in default_config_options.option_names():
        config_option = default_config_options.config_option(option_name)
        parser.add_argument(
            *config_option.cli_names(),
            dest=option_name,
            **config_option.cli_kwargs()
        )

    # argparse exits with status 2 on usage errors, which here means numerical failure.
    try:
        cli_args = parser.parse_args(argv)
    except SystemExit as exit:
        return EXIT_OK if not exit.code else EXIT_INPUT_ERROR
    except RobustPriceError as error:
        print(f"Input error: {error}", file=sys.stderr)
        return EXIT_INPUT_ERROR

    try:
        set_up_logging(cli_args.log_file)

        preferred_options = vars(cli_args)
        config_options = resolve_config_options(preferred_options)
        logging.info(f"Effective options: {config_options.to_dict()}")

        match cli_args.operation:
            case "check-arbitrage":
                exit_code = check_arbitrage(config_options)
            case "price":
                exit_code = price(config_options)
            case "doob-demo":
                exit_code = doob_demo(config_options)
            case "bl-convert":
                exit_code = bl_convert(config_options)
            case "selftest":
                exit_code = selftest(config_options)
            case _:  # pragma: no cover
                # argparse should error before we get here.
                logging.error(f"Unsupported operation: {cli_args.operation}")
                exit_code = EXIT_INPUT_ERROR

    except NumericalFailure as error:
        logging.error(f"Numerical failure: {error}")
        exit_code = EXIT_NUMERICAL_FAILURE
    except (RobustPriceError, OSError, yaml.YAMLError, ValueError) as error:
        logging.error(f"Input error: {error}")
        exit_code = EXIT_INPUT_ERROR

    if exit_code == EXIT_OK:
        logging.info("OK.")
    elif exit_code == EXIT_ARBITRAGE:
        logging.info("Completed: no admissible martingale measure.")
    else:
        logging.error("Completed with errors.")

    return exit_code
