class InvalidParameterError(ValueError):
    pass


class InvalidIndexError(IndexError):
    pass


class ConfigError(ValueError):
    pass


class NumericalAbort(FloatingPointError):
    """Raised when a solver pass produces a NaN or infinite value."""

    def __init__(self, particle: int, pass_name: str, frame: int | None = None):
        self.particle = particle
        self.pass_name = pass_name
        self.frame = frame
        where = f" in frame {frame}" if frame is not None else ""
        super().__init__(
            f"non-finite value at particle {particle} after pass '{pass_name}'{where}"
        )
