"""Exception hierarchy shared by all modules."""


class PhylodelayError(Exception):
    """Base class for every error raised by this package."""


class ConfigurationError(PhylodelayError, ValueError):
    """Invalid settings: bad grid bounds, empty inputs, unbounded intensities."""


class DomainError(PhylodelayError, ValueError):
    """A time or value falls outside the region an operation is defined on."""


class DataError(PhylodelayError, ValueError):
    """Input data are internally inconsistent."""


class AlignmentError(DataError):
    """Two artifacts that should share a grid do not."""


class DegenerateTreeError(DataError):
    """An operation would leave fewer than two tips."""


class InitializationError(PhylodelayError, RuntimeError):
    """The sampler could not start from a finite log-posterior."""


class NewickParseError(DataError):
    """Malformed Newick text. ``offset`` is the character position of the fault."""

    def __init__(self, message, offset=None):
        self.offset = offset
        if offset is not None:
            message = f"{message} (at character {offset})"
        super().__init__(message)


class UnbalancedParenthesesError(NewickParseError):
    pass


class MissingBranchLengthError(NewickParseError):
    pass


class NonBinaryNodeError(NewickParseError):
    pass


class DateParseError(NewickParseError):
    pass


class TieWarning(UserWarning):
    """Tied event times were perturbed to restore a strict ordering."""


class ConvergenceWarning(UserWarning):
    """MCMC diagnostics (R-hat, ESS) fall short of their thresholds."""
