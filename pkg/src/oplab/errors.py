"""Exception taxonomy shared across the package.

The CLI maps these onto distinct exit codes (see cli.EXIT_CODES), so new
error conditions should subclass one of the three top branches.
"""


class OplabError(Exception):
    """Base class for all package errors."""


class ConfigurationError(OplabError):
    """A configuration value is invalid or inconsistent (caught before work starts)."""


class ResolutionError(ConfigurationError):
    """A spatial resolution is incompatible with the model or operation."""


class InfeasibleBudgetError(ConfigurationError):
    """A parameter budget cannot be met by any admissible architecture value."""


class ProfileError(ConfigurationError):
    """A stored hyperparameter profile is missing or malformed."""


class DataError(OplabError):
    """Dataset contents or dataset combinations violate a contract."""


class ShapeError(DataError):
    """Array shapes or channel counts do not match an operation's contract."""


class DegenerateSampleError(DataError):
    """A sample has zero target norm, making a relative error undefined."""


class NumericalError(OplabError):
    """A numerical routine failed to converge or produced non-finite values."""
