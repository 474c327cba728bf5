"""Exception hierarchy. CLI exit codes hang off these classes."""


class OCPoseError(Exception):
    exit_code = 2


class UsageError(OCPoseError):
    exit_code = 1


class DataError(OCPoseError):
    """Input data is malformed or inconsistent."""

    exit_code = 2


class ParseError(DataError):
    def __init__(self, message: str, offset: int | None = None):
        super().__init__(message)
        self.offset = offset


class SchemaError(DataError):
    pass


class DataReferenceError(DataError):
    """An id refers to something that does not exist."""

    def __init__(self, message: str, offenders=()):
        super().__init__(message)
        self.offenders = list(offenders)


class ConfigError(DataError):
    pass


class DecodeError(DataError):
    pass


class GeometryError(DataError):
    pass


class GenerationError(OCPoseError):
    pass


class OracleLimitError(OCPoseError):
    pass
