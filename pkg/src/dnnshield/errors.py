"""Exception types shared across the toolkit."""


class DNNShieldError(Exception):
    """Base class for all toolkit errors."""


class ShapeMismatch(DNNShieldError):
    """Input or vector shape disagrees with what the operation expects."""


class NumericalError(DNNShieldError):
    """A non-finite value (NaN/Inf) was produced by an engine operation."""


class PlanMismatch(DNNShieldError):
    """A sparsity plan / rate vector / threshold table disagrees with the model."""


class UnsupportedLayer(DNNShieldError):
    """Model contains a layer without the required forward/backward rule."""


class DivergenceError(DNNShieldError):
    """Training loss became non-finite."""


class FormatError(DNNShieldError):
    """A serialized artifact failed magic/version/length validation."""


class EmptyFilter(DNNShieldError):
    """A filter with zero weights cannot be profiled."""


class TooFewClasses(DNNShieldError):
    """Confidence statistics need at least two logits."""


class DomainError(DNNShieldError):
    """Argument outside the mathematical domain of the function."""


class EmptyCorpus(DNNShieldError):
    """An operation over a corpus received no samples."""
