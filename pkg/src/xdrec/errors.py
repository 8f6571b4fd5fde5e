"""Exception types shared across the engine."""


class XdrecError(Exception):
    """Base class for all engine errors."""


class ParseError(XdrecError):
    """A data file line could not be parsed."""


class SchemaError(XdrecError):
    """A data file violates its declared schema."""


class ConfigError(XdrecError):
    """An invalid configuration value."""


class SplitError(XdrecError):
    """Train/valid/test split cannot be formed."""


class FormatError(XdrecError):
    """A binary file (embeddings, checkpoint) is malformed or inconsistent."""


class ShapeError(XdrecError):
    """Tensor shapes do not line up."""


class GraphError(XdrecError):
    """Autodiff misuse: non-scalar loss, fully masked softmax row, zero-norm
    vector, or a non-deterministic gradient-check closure."""


class EvalError(XdrecError):
    """A sequence cannot be evaluated or recommended for."""
