class ShapeError(ValueError):
    pass


class NumericError(ArithmeticError):
    """Raised when a computation produces NaN/Inf.

    ``partial`` carries whatever was computed before the failure (for the
    maximizer: a result holding the trace so far).
    """

    def __init__(self, message, partial=None):
        super().__init__(message)
        self.partial = partial


class DomainError(ValueError):
    pass


class FormatError(ValueError):
    def __init__(self, message, offset=None, path=None):
        where = []
        if path is not None:
            where.append(str(path))
        if offset is not None:
            where.append(f"byte {offset}")
        if where:
            message = f"{': '.join(where)}: {message}"
        super().__init__(message)
        self.offset = offset
        self.path = path


class SpecError(ValueError):
    """Invalid network description; the message names the offending layer."""

    def __init__(self, message, layer=None):
        if layer is not None:
            message = f"layer {layer!r}: {message}"
        super().__init__(message)
        self.layer = layer
