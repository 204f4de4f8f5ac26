"""Exception hierarchy shared across the package."""


class ImagineError(Exception):
    """Base class for every error raised by this package."""


class ShapeError(ImagineError, ValueError):
    pass


class DegenerateVectorError(ImagineError, ValueError):
    pass


class ContractError(ImagineError, ValueError):
    pass


class OptimizerError(ImagineError, FloatingPointError):
    pass


class LabelError(ImagineError, ValueError):
    pass


class ConfigError(ImagineError, ValueError):
    pass


class TrainingDataError(ImagineError, ValueError):
    pass


class DatasetError(ImagineError, ValueError):
    """Malformed, missing or inconsistent dataset files."""


class CoverageError(DatasetError):
    pass


class ReferentialIntegrityError(DatasetError):
    pass


class MetricError(ImagineError, ValueError):
    pass


class EvalError(ImagineError, ValueError):
    pass


class DivergenceError(ImagineError, FloatingPointError):
    pass
