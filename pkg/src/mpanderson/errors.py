"""Exception hierarchy shared by all modules."""


class MpAndersonError(Exception):
    """Base class for all package errors."""


class ConfigError(MpAndersonError):
    """Invalid configuration (bad key, bad type, violated invariant)."""

    def __init__(self, message, line=None, key=None):
        self.line = line
        self.key = key
        prefix = ""
        if line is not None:
            prefix += f"line {line}: "
        if key is not None:
            prefix += f"key '{key}': "
        super().__init__(prefix + message)


class CapacityError(MpAndersonError):
    """A requested computation exceeds a configured size cap."""


class CubeTooLargeError(CapacityError):
    """Cube site count exceeds the enumeration cap ("cube too large")."""


class ScaleOverflowError(CapacityError):
    """Scale recursion left the 64-bit range ("scale too deep")."""


class FieldCoverageError(MpAndersonError):
    """A potential lookup fell outside the sampled region."""


class ResonantEnergyError(MpAndersonError):
    """Linear solve at an energy too close to the spectrum."""


class EigensolveError(MpAndersonError):
    """Dense or iterative eigensolve failed to converge."""


class ConditionalUnavailableError(MpAndersonError):
    """Conditional mean/fluctuation independence only holds for Gaussian disorder."""
