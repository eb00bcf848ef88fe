"""Exception hierarchy shared across the package.

Every error that can abort a simulation maps onto one of these classes so
the command-line layer can translate it into a stable exit code.
"""


class CavmdError(Exception):
    """Base class for all package errors."""


class ConfigError(CavmdError):
    """Invalid or unparsable experiment configuration."""


class GeometryError(CavmdError):
    """Moving nucleus left the admissible domain between the fixed ions."""


class EigensolverError(CavmdError):
    """The dense eigensolver failed to converge."""


class ScfConvergenceError(CavmdError):
    """Self-consistent field iteration hit the sweep cap without converging."""


class StaleSolutionError(CavmdError):
    """An electronic solution was used with a state it was not solved for."""


class MissingObservableError(CavmdError):
    """A trajectory lacks the observable required by an analysis step."""


class SignalTooShortError(CavmdError):
    """Time series shorter than one spectral window."""


class PeaksNotFoundError(CavmdError):
    """No pair of peaks bracketing the cavity frequency was found."""


class ImaginaryFrequencyError(CavmdError):
    """A normal-mode eigenvalue came out negative (unphysical parameters)."""


class TrajectoryError(CavmdError):
    """A propagation step failed; carries the step index and partial data.

    Attributes
    ----------
    step : int
        Index of the MD step that failed.
    partial : Trajectory | None
        Records accumulated before the failure, if any.
    """

    def __init__(self, message, step, partial=None):
        super().__init__(message)
        self.step = step
        self.partial = partial
