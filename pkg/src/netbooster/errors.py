"""Exception hierarchy shared across the package."""


class NetBoosterError(Exception):
    """Base class for every error raised by this package."""


class ShapeError(NetBoosterError, ValueError):
    """A tensor or layer has an extent that does not fit its neighbour."""

    def __init__(self, message, dim=None):
        super().__init__(message)
        self.dim = dim


class RangeError(NetBoosterError, ValueError):
    pass


class UsageError(NetBoosterError):
    pass


class ProvenanceError(UsageError):
    """An operation was applied to a model in the wrong pipeline phase."""


class ModelFormatError(NetBoosterError):
    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class VersionError(ModelFormatError):
    pass


class UnknownLayerKindError(NetBoosterError, ValueError):
    def __init__(self, kind):
        super().__init__(f"unknown layer kind {kind!r}")
        self.kind = kind


class ExpansionError(NetBoosterError):
    pass


class ReceptiveFieldError(ExpansionError):
    pass


class FusionError(NetBoosterError):
    pass


class ContractionError(FusionError):
    def __init__(self, message, node=None):
        super().__init__(message)
        self.node = node


class TrainingDiverged(NetBoosterError):
    pass


class ConfigError(NetBoosterError):
    def __init__(self, message, key=None, line=None):
        where = []
        if key is not None:
            where.append(f"key {key!r}")
        if line is not None:
            where.append(f"line {line}")
        if where:
            message = f"{message} ({', '.join(where)})"
        super().__init__(message)
        self.key = key
        self.line = line


class DataFormatError(NetBoosterError):
    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        super().__init__(message)
        self.offset = offset
