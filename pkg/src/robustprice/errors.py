class RobustPriceError(Exception):
    "Base class for errors raised by robustprice operations."
    pass


class InstanceError(RobustPriceError, ValueError):
    "Raised when an instance file, payoff, or options file is malformed."
    pass


class InvalidPath(RobustPriceError, ValueError):
    "Raised when a path has the wrong length or a coordinate off the price grid."
    pass


class SizeLimit(RobustPriceError):
    "Raised when the number of grid paths exceeds the configured cap."

    def __init__(self, path_count: int, max_paths: int):
        super().__init__(f"Grid has {path_count} paths, more than the limit of {max_paths}.")
        self.path_count = path_count
        self.max_paths = max_paths


class StaticArbitrage(RobustPriceError):
    "Raised when call prices violate monotonicity, convexity, or slope bounds in strike."

    def __init__(self, violations: list[str]):
        super().__init__("Call strip admits static arbitrage: " + "; ".join(violations))
        self.violations = violations


class NotConvex(RobustPriceError, ValueError):
    "Raised when a payoff expected to be convex along the levels has a slope decrease."
    pass


class DomainError(RobustPriceError, ValueError):
    "Raised when a formula is evaluated outside its domain, like log of a zero running max."
    pass


class NotAMartingale(RobustPriceError):
    "Raised when a measure fails verification against the pure martingale constraints."
    pass


class NoAdmissibleMeasure(RobustPriceError):
    "Raised when pricing is requested but no admissible martingale measure exists on the grid."

    def __init__(self, message: str, verdict=None):
        super().__init__(message)
        self.verdict = verdict


class NumericalFailure(RobustPriceError):
    "Raised when the LP solver cannot certify its answer within tolerance."
    pass
