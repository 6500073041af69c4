"""Exception types shared across the package.

Two families matter to callers: ConfigError (bad user input, CLI exit
code 2) and NumericalFailure (the computation itself went wrong, CLI
exit code 3).
"""


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending key."""


class NumericalFailure(RuntimeError):
    """Base class for runtime numerical problems."""


class TruncationError(NumericalFailure):
    """Fock cutoff too small for the requested state."""


class ImpossibleOutcomeError(NumericalFailure):
    """Conditioning on a measurement outcome of (near-)zero probability."""


class HistoryUnderflowError(NumericalFailure):
    """Cumulative history probability underflowed; use fewer repetitions."""


class NoDipError(NumericalFailure):
    """Rate profile has no interior local minimum to anchor the window."""


class ZeroRateError(NumericalFailure):
    """Detection attempted where the rate (or window mass) vanishes."""


class StepperError(NumericalFailure):
    """Density-matrix integrator violated hermiticity/positivity tolerances."""
