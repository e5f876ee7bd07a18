"""Exception hierarchy shared by every plasticnn module."""


class PlasticNNError(Exception):
    """Base class for all library errors."""


class ConstructionError(PlasticNNError, ValueError):
    """Invalid network layout (empty width list, zero width, bad activation list)."""


class DimensionError(PlasticNNError, ValueError):
    """Input, target or mask length does not match the network."""


class StaleStateError(DimensionError):
    """Shaped state (trace, gradients, optimizer buffers) predates a structural mutation."""


class NumericError(PlasticNNError, ArithmeticError):
    """NaN or Inf encountered where finite values are required."""


class PolicyError(PlasticNNError, ValueError):
    """A plasticity operation was asked to do something its policy forbids."""


class LayerCollapseError(PolicyError):
    """Pruning would leave a layer with no neurons."""


class CriterionMismatchError(PlasticNNError, TypeError):
    """Pruning statistics do not match the requested criterion."""


class NotEnoughHistoryError(PlasticNNError, ValueError):
    """A trigger needs more recorded epochs than are available."""


class IncompleteMatrixError(PlasticNNError, ValueError):
    """Accuracy matrix is missing entries required by a metric."""


class CheckpointError(PlasticNNError, ValueError):
    """Malformed checkpoint or mutation log file."""

    def __init__(self, message, line=None, field=None):
        self.line = line
        self.field = field
        where = []
        if line is not None:
            where.append(f"line {line}")
        if field is not None:
            where.append(f"field {field!r}")
        prefix = f"[{', '.join(where)}] " if where else ""
        super().__init__(prefix + message)


class ConfigError(PlasticNNError, ValueError):
    """Invalid run configuration; carries the offending key and line."""

    def __init__(self, message, key=None, line=None):
        self.key = key
        self.line = line
        where = []
        if line is not None:
            where.append(f"line {line}")
        if key is not None:
            where.append(f"key {key!r}")
        prefix = f"[{', '.join(where)}] " if where else ""
        super().__init__(prefix + message)


class DatasetError(PlasticNNError, ValueError):
    """Malformed dataset file; ``row`` is 1-based and counts the header."""

    def __init__(self, message, row=None):
        self.row = row
        prefix = f"[row {row}] " if row is not None else ""
        super().__init__(prefix + message)
