"""Exception hierarchy shared by every module, with the CLI exit code for each family."""


class ClusteringError(Exception):
    """Root of every error raised by the package."""
    exit_code = 2


class DataError(ClusteringError):
    """Input data or derived results violate a documented contract."""
    exit_code = 2


class ParameterError(ClusteringError, ValueError):
    """A parameter lies outside its valid domain."""
    exit_code = 1


class NumericalError(ClusteringError):
    """A numerical routine could not produce a valid result."""
    exit_code = 3


# Data errors

class ZeroVarianceGene(DataError):
    def __init__(self, gene_id):
        super().__init__(f"gene '{gene_id}' has zero variance and cannot be standardized")
        self.gene_id = gene_id


class NonFiniteInput(DataError):
    pass


class EmptyResult(DataError):
    pass


class DimensionMismatch(DataError):
    pass


class LengthMismatch(DataError):
    pass


class BothEmpty(DataError):
    pass


class SingleClassTruth(DataError):
    pass


class SingleCluster(DataError):
    pass


class EmptyTrace(DataError):
    pass


class MissingTruth(DataError):
    pass


class InvalidOutcome(DataError):
    pass


class DegenerateRange(DataError):
    pass


class DegenerateClusterSizes(DataError):
    pass


# Parameter errors

class InvalidParameter(ParameterError):
    def __init__(self, field, message=None):
        super().__init__(message or f"invalid value for '{field}'")
        self.field = field


class InvalidDof(ParameterError):
    pass


class ConfigError(ParameterError):
    pass


# Numerical errors

class NotPositiveDefinite(NumericalError):
    pass


class NonConvergence(NumericalError):
    pass


class SeparationDetected(NumericalError):
    """Raised when a coefficient diverges; `value` holds the pseudo-R² at the last stable iterate."""

    def __init__(self, message, value):
        super().__init__(message)
        self.value = value


class AllWeightsNegInfinity(NumericalError):
    pass


class NoEvents(NumericalError):
    pass


class ConstantPredictor(NumericalError):
    pass
