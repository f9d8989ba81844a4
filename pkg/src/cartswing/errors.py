"""Exception hierarchy.

Two families map onto the CLI exit codes: ``InputError`` -> exit 1,
``NumericalError`` -> exit 2.
"""


class CartswingError(Exception):
    pass


class InputError(CartswingError):
    """Bad user input: files, schemas, references to missing elements."""


class CaseParseError(InputError):
    def __init__(self, message, path=None, line=None):
        locus = ""
        if path is not None:
            locus += f"{path}:"
        if line is not None:
            locus += f"{line}:"
        super().__init__(f"{locus} {message}" if locus else message)
        self.path = path
        self.line = line


class CaseValidationError(InputError):
    pass


class TopologyError(InputError):
    pass


class NumericalError(CartswingError):
    """Solver-level failure: divergence, singularity, projection failure."""


class StructuralError(NumericalError):
    """Structurally singular network (floating bus, all-zero row)."""


class SingularNetworkError(NumericalError):
    def __init__(self, message, null_direction=None):
        super().__init__(message)
        self.null_direction = null_direction


class PowerFlowError(NumericalError):
    def __init__(self, message, mismatch=None, iterations=None):
        super().__init__(message)
        self.mismatch = mismatch
        self.iterations = iterations


class EigenError(NumericalError):
    pass


class EmptyBasisError(NumericalError):
    pass


class ProjectionFailure(NumericalError):
    def __init__(self, message, f_residual=None, g_residual=None):
        super().__init__(message)
        self.f_residual = f_residual
        self.g_residual = g_residual


class NoAsymptoteError(NumericalError):
    pass


class NoEquilibriumError(NumericalError):
    pass


class ComparisonError(InputError):
    pass
