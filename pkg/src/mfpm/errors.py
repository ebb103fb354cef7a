"""Exception hierarchy shared by all mfpm subsystems."""


class MfpmError(Exception):
    """Base class for all errors raised by mfpm."""


class RecipeSyntaxError(MfpmError):
    def __init__(self, message: str, line: int, column: int):
        super().__init__(f"{line}:{column}: {message}")
        self.line = line
        self.column = column


class EvalError(MfpmError):
    """Recipe evaluation failed (undefined name, type mismatch, bad derivation)."""

    def __init__(self, message: str, where: str = ""):
        super().__init__(f"{where}: {message}" if where else message)
        self.where = where


class TopLevelNotAttrs(MfpmError):
    pass


class StorePathError(MfpmError):
    pass


class UnknownPath(MfpmError):
    pass


class StoreWriteError(MfpmError):
    pass


class CorruptArchive(MfpmError):
    def __init__(self, offset: int, reason: str):
        super().__init__(f"corrupt archive at byte {offset}: {reason}")
        self.offset = offset
        self.reason = reason


class CycleDetected(MfpmError):
    pass


class MissingInput(MfpmError):
    pass


class UnknownOutput(MfpmError):
    pass


class BuildFailed(MfpmError):
    def __init__(self, drv_path, exit_code: int, log: str):
        super().__init__(f"builder for {drv_path} exited with {exit_code}")
        self.drv_path = drv_path
        self.exit_code = exit_code
        self.log = log


class FixedOutputHashMismatch(MfpmError):
    def __init__(self, expected: str, got: str):
        super().__init__(f"fixed-output hash mismatch: expected {expected}, got {got}")
        self.expected = expected
        self.got = got


class SubstituteCorrupt(MfpmError):
    pass


class DigestConflict(MfpmError):
    pass


class CorruptPayload(MfpmError):
    pass


class CorruptRecord(MfpmError):
    def __init__(self, line_number: int, reason: str):
        super().__init__(f"corrupt record at line {line_number}: {reason}")
        self.line_number = line_number


class MissingHistoricalRecord(MfpmError):
    pass


class JobNameError(MfpmError):
    """A rendered job name cannot be parsed back into an attribute path."""
