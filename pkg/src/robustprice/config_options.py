import logging
import yaml
from typing import Any
from pathlib import Path
from argparse import Action
from dataclasses import dataclass, field, fields

from robustprice.errors import InstanceError
from robustprice.lp_core import Tolerances


def parse_key_value_pairs(values: list[str], delimiter: str = "=", convert_values: bool = False):
    key_value_pairs = {}
    for kvp in values:
        if delimiter not in kvp:
            raise InstanceError(f"Expected key{delimiter}value, got: {kvp}")
        (k, v) = kvp.split(delimiter, 1)
        if convert_values:
            v = yaml.safe_load(v)
        key_value_pairs[k] = v
    return key_value_pairs


class ConvertingKeyValuePairsAction(Action):
    def __call__(self, parser, namespace, values, option_string=None):
        key_value_pairs = parse_key_value_pairs(values, convert_values=True)
        setattr(namespace, self.dest, key_value_pairs)


@dataclass
class ConfigOption():
    value: Any = None
    cli_long_name: str = None
    cli_short_name: str = None
    cli_nargs: str = None
    cli_type: type = str
    cli_action: Any = None
    cli_choices: list[str] = None
    cli_help: str = None
    cli_help_default: str = "%(default)s"

    def cli_help_with_default(self):
        return f"{self.cli_help} (default: {self.cli_help_default})"

    def cli_names(self) -> list[str]:
        return [name for name in (self.cli_long_name, self.cli_short_name) if name]

    def cli_kwargs(self) -> dict[str, Any]:
        kwargs = {
            "default": self.value,
            "action": self.cli_action,
            "help": self.cli_help_with_default(),
        }

        # Actions like "store_true" reject a type.
        if self.cli_type:
            kwargs["type"] = self.cli_type

        if self.cli_nargs:
            kwargs["nargs"] = self.cli_nargs

        if self.cli_choices:
            kwargs["choices"] = self.cli_choices

        return kwargs


@dataclass
class ConfigOptions():
    """Options for robustprice commands, each with a default and command line metadata.

    Any option can also be given by name in a YAML options file, for example:

    .. code-block:: yaml

        tol_feas: 1.0e-10
        max_paths: 100000
        format: json
    """

    user_options_file: ConfigOption = field(default_factory=lambda: ConfigOption(
        value="~/robustprice_options.yaml",
        cli_long_name="--user-options-file",
        cli_short_name="-u",
        cli_help="a user-level options file to search for",
    ))

    local_options_file: ConfigOption = field(default_factory=lambda: ConfigOption(
        value="./robustprice_options.yaml",
        cli_long_name="--local-options-file",
        cli_short_name="-l",
        cli_help="a local options file to search for",
    ))

    custom_options_file: ConfigOption = field(default_factory=lambda: ConfigOption(
        cli_long_name="--custom-options-file",
        cli_short_name="-o",
        cli_help="an arbitrary, custom options file to apply, for example: -o my_options.yaml",
    ))

    instance: ConfigOption = field(default_factory=lambda: ConfigOption(
        cli_long_name="--instance",
        cli_short_name="-i",
        cli_help="JSON or YAML instance file with the grid, instruments, and optional marginals",
        cli_help_default="none",
    ))

    payoff: ConfigOption = field(default_factory=lambda: ConfigOption(
        cli_long_name="--payoff",
        cli_short_name="-p",
        cli_nargs="+",
        cli_action=ConvertingKeyValuePairsAction,
        cli_type=None,
        cli_help="payoff to price as key=value pairs, for example: --payoff kind=call strike=1 date=2",
        cli_help_default="none",
    ))

    format: ConfigOption = field(default_factory=lambda: ConfigOption(
        value="text",
        cli_long_name="--format",
        cli_short_name="-f",
        cli_choices=["text", "json"],
        cli_help="report format written to stdout or --output",
    ))

    output: ConfigOption = field(default_factory=lambda: ConfigOption(
        cli_long_name="--output",
        cli_short_name="-O",
        cli_help="file to receive the report",
        cli_help_default="stdout",
    ))

    tol_feas: ConfigOption = field(default_factory=lambda: ConfigOption(
        value=1e-9,
        cli_long_name="--tol-feas",
        cli_type=float,
        cli_help="primal and dual feasibility tolerance",
    ))

    tol_gap: ConfigOption = field(default_factory=lambda: ConfigOption(
        value=1e-7,
        cli_long_name="--tol-gap",
        cli_type=float,
        cli_help="duality gap tolerance",
    ))

    tol_comp: ConfigOption = field(default_factory=lambda: ConfigOption(
        value=1e-7,
        cli_long_name="--tol-comp",
        cli_type=float,
        cli_help="complementary slackness tolerance",
    ))

    max_paths: ConfigOption = field(default_factory=lambda: ConfigOption(
        value=10_000_000,
        cli_long_name="--max-paths",
        cli_short_name="-m",
        cli_type=int,
        cli_help="largest number of grid paths to enumerate",
    ))

    seed: ConfigOption = field(default_factory=lambda: ConfigOption(
        value=0,
        cli_long_name="--seed",
        cli_short_name="-s",
        cli_type=int,
        cli_help="seed for randomized self-test suites",
    ))

    suite_size: ConfigOption = field(default_factory=lambda: ConfigOption(
        cli_long_name="--suite-size",
        cli_type=int,
        cli_help="instances per self-test suite",
        cli_help_default="200 for the dichotomy suite, 100 for the duality suite",
    ))

    levels: ConfigOption = field(default_factory=lambda: ConfigOption(
        value=[0.5, 1.0, 2.0],
        cli_long_name="--levels",
        cli_nargs="+",
        cli_type=float,
        cli_help="grid levels for doob-demo",
    ))

    horizon: ConfigOption = field(default_factory=lambda: ConfigOption(
        value=3,
        cli_long_name="--horizon",
        cli_type=int,
        cli_help="number of trading dates for doob-demo",
    ))

    c_values: ConfigOption = field(default_factory=lambda: ConfigOption(
        value=[0.0],
        cli_long_name="--c-values",
        cli_short_name="-C",
        cli_nargs="+",
        cli_type=float,
        cli_help="entropy option prices for doob-demo",
    ))

    call_strip: ConfigOption = field(default_factory=lambda: ConfigOption(
        cli_long_name="--call-strip",
        cli_short_name="-c",
        cli_help="CSV call strip with strike,price columns, converted to a marginal",
        cli_help_default="none",
    ))

    strip_date: ConfigOption = field(default_factory=lambda: ConfigOption(
        cli_long_name="--strip-date",
        cli_type=int,
        cli_help="date of the call strip",
        cli_help_default="the horizon",
    ))

    marginal: ConfigOption = field(default_factory=lambda: ConfigOption(
        cli_long_name="--marginal",
        cli_help="JSON marginal file, converted to a call strip by bl-convert",
        cli_help_default="none",
    ))

    log_file: ConfigOption = field(default_factory=lambda: ConfigOption(
        cli_long_name="--log-file",
        cli_help="file to receive log messages, in addition to stderr",
        cli_help_default="none",
    ))

    mps_file: ConfigOption = field(default_factory=lambda: ConfigOption(
        cli_long_name="--mps-file",
        cli_help="file to receive the check-arbitrage feasibility LP in MPS format, for cross-checking",
        cli_help_default="none",
    ))

    def option_names(self) -> list[str]:
        return [option.name for option in fields(self) if option.type == ConfigOption]

    def config_option(self, option_name: str) -> ConfigOption:
        return getattr(self, option_name)

    def get_value(self, option_name: str) -> Any:
        return self.config_option(option_name).value

    def set_value(self, option_name: str, value: Any):
        self.config_option(option_name).value = value

    def update_values(self, values: dict[str, Any]):
        """Overlay values that differ from the source defaults.

        Mapping options like ``payoff`` are merged key by key, so a command line
        ``--payoff date=2`` can amend a payoff given in an options file.
        """
        if not values:
            return

        defaults = ConfigOptions()
        for option_name in set(self.option_names()) & set(values):
            value = values[option_name]
            current = self.get_value(option_name)
            if isinstance(current, dict) and isinstance(value, dict):
                self.set_value(option_name, {**current, **value})
            elif value != defaults.get_value(option_name):
                self.set_value(option_name, value)

    def validate(self):
        """Check option values that argparse and YAML can't check on their own."""
        for option_name in ("tol_feas", "tol_gap", "tol_comp", "max_paths"):
            value = self.get_value(option_name)
            if not isinstance(value, (int, float)) or not value > 0:
                raise InstanceError(f"Option {option_name} must be positive, got {value}.")
        if self.format.value not in ("text", "json"):
            raise InstanceError(f"Option format must be text or json, got {self.format.value}.")
        if self.payoff.value is not None and not isinstance(self.payoff.value, dict):
            raise InstanceError(f"Option payoff must be a mapping, got {self.payoff.value}.")

    def tolerances(self) -> Tolerances:
        return Tolerances(feas_tol=self.tol_feas.value, gap_tol=self.tol_gap.value, comp_tol=self.tol_comp.value)

    def to_dict(self) -> dict[str, Any]:
        """Option names and values, without the argparse metadata."""
        return {option_name: self.get_value(option_name) for option_name in self.option_names()}


OPTIONS_FILE_OPTIONS = ("user_options_file", "local_options_file", "custom_options_file")


def resolve_config_options(preferred_options: dict[str, Any] = {}) -> ConfigOptions:
    """Combine options from defaults, options files, and the command line, then validate them.

    Later sources win:

    #. defaults in :class:`ConfigOptions`
    #. the user options file, ``~/robustprice_options.yaml`` unless overridden
    #. the local options file, ``./robustprice_options.yaml`` unless overridden
    #. a custom options file, for example ``robustprice price -o my_options.yaml ...``
    #. values given on the command line (see ``robustprice --help``)
    """
    config_options = ConfigOptions()
    for file_option in OPTIONS_FILE_OPTIONS:
        options_file = preferred_options.get(file_option, config_options.get_value(file_option))
        config_options.update_values(safe_load_config_options(options_file))

    config_options.update_values(preferred_options)
    config_options.validate()
    return config_options


def safe_load_config_options(options_file: str) -> dict[str, Any]:
    """Read one options file, or None when there is no such file.

    Parse errors and unknown option names raise, so nothing runs with options the user didn't mean.
    """
    if not options_file:
        return None

    options_path = Path(options_file).expanduser()
    if not options_path.is_file():
        logging.debug(f"No options file at: {options_file}")
        return None

    logging.info(f"Reading options from: {options_file}")
    with open(options_path) as f:
        options = yaml.safe_load(f.read())

    if options is None:
        return None
    if not isinstance(options, dict):
        raise InstanceError(f"Options file {options_file} must contain a mapping of option names to values.")

    unknown = set(options) - set(ConfigOptions().option_names())
    if unknown:
        raise InstanceError(f"Unknown options in {options_file}: {sorted(unknown)}")
    return options
