"""
Exception hierarchy for the detection app

Management commands catch DetectionError and re-raise it as CommandError,
so every subclass message should read well on a terminal.
"""


class DetectionError(Exception):
    """Base class for every error raised by the detection package"""


class ShapeError(DetectionError):
    """Operand shapes do not chain"""


class NonFiniteError(DetectionError):
    """A matrix would hold NaN or Inf"""


class TapeError(DetectionError):
    """Misuse of the gradient tape"""


class CovarianceError(DetectionError):
    """A mixture covariance stayed non positive definite after regularization"""

    def __init__(self, component, retries):
        self.component = component
        self.retries = retries
        super().__init__(
            f"covariance of mixture component {component} is not positive "
            f"definite after {retries} regularization retries"
        )


class GraphError(DetectionError):
    """Invalid neighbor graph request"""


class DatasetError(DetectionError):
    """Source data, recipe or split problems"""


class ConfigError(DetectionError):
    """Invalid run configuration"""

    def __init__(self, errors):
        self.errors = errors
        super().__init__(f"invalid configuration: {errors}")


class CheckpointError(DetectionError):
    """Unreadable or incompatible container file"""


class EvaluationError(DetectionError):
    """Scoring or metric computation cannot proceed"""


class NonFiniteLossError(DetectionError):
    """Loss is not finite; carries the per-term values for diagnostics"""

    def __init__(self, terms):
        self.terms = terms
        rendered = ", ".join(f"{name}={value!r}" for name, value in terms.items())
        super().__init__(f"non-finite loss ({rendered})")
