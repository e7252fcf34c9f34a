class TpsfemError(Exception):
    """Base class for all tpsfem errors"""


class ConfigurationError(TpsfemError, ValueError):
    """Error thrown when a configuration or domain description is invalid"""


class ContractViolationError(TpsfemError, ValueError):
    """Error thrown when a caller breaks the precondition of an operation"""


class MeshError(TpsfemError, Exception):
    """Error thrown when the mesh becomes internally inconsistent"""


class DataParseError(TpsfemError, ValueError):
    """Error thrown when a scattered data file has a malformed line"""


class EmptyDataError(TpsfemError, ValueError):
    """Error thrown when there are no data points to work with"""


class DomainError(TpsfemError, ValueError):
    """Error thrown when a point lies outside the domain"""


class AssemblyError(TpsfemError, Exception):
    """Error thrown when an element cannot be assembled"""


class SolverError(TpsfemError, Exception):
    """Error thrown when the saddle point system cannot be factorised or solved"""

    def __init__(self, message, alpha=None, m=None):
        super().__init__(message)
        self.alpha = alpha
        self.m = m


class MetricError(TpsfemError, ValueError):
    """Error thrown when a fit metric is undefined for the data"""


class GcvScoreError(TpsfemError, Exception):
    """Error thrown when the GCV score is degenerate"""


class IndicatorError(TpsfemError, Exception):
    """Error thrown when an error indicator cannot be evaluated on an edge"""

    def __init__(self, message, edge=None):
        super().__init__(message)
        self.edge = edge


class SelectionError(TpsfemError, Exception):
    """Error thrown when no control points survive selection"""


class FormatError(TpsfemError, ValueError):
    """Error thrown when an exported file is malformed or of an incompatible version"""


class RunAbortedError(TpsfemError, Exception):
    """Error thrown when a refinement run stops early, carrying the partial result"""

    def __init__(self, message, result=None):
        super().__init__(message)
        self.result = result


EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_RUNTIME = 2


def exit_status(error):
    """Maps an exception raised during a command to a process exit code"""
    if error is None:
        return EXIT_OK
    if isinstance(error, (ConfigurationError, DataParseError, EmptyDataError, FormatError)):
        return EXIT_CONFIG
    return EXIT_RUNTIME

