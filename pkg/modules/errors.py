class PhaseBalancingError(Exception):
    "Base class for every domain error raised by the toolkit."


class DataError(PhaseBalancingError, ValueError):
    "Raised when load data cannot be read or violates the dataset rules."


class UncertaintySetError(PhaseBalancingError, ValueError):
    "Raised when an uncertainty set is empty, unbounded or malformed."


class FormulationError(PhaseBalancingError, ValueError):
    "Raised when builder inputs are inconsistent or a plan cannot be decoded."


class SolverError(PhaseBalancingError, RuntimeError):
    "Raised when a solve ends without a usable incumbent."
