from typing import Optional


class ExitCode:
    OK = 0
    CHECK_FAILED = 1
    INPUT_ERROR = 2
    DIVERGED = 3


class HoopnetError(Exception):
    """Base class for every error raised on purpose by this package."""

    exit_code = ExitCode.INPUT_ERROR


class ShapeError(HoopnetError, ValueError):
    def __init__(self, message: str, *shapes):
        if shapes:
            message = f"{message}: " + " vs ".join(str(tuple(s)) for s in shapes)
        super().__init__(message)
        self.shapes = shapes


class DomainError(HoopnetError, ValueError):
    pass


class ParseError(DomainError):
    def __init__(self, message: str, line: Optional[int] = None):
        prefix = f"line {line}: " if line is not None else ""
        super().__init__(prefix + message)
        self.line = line


class SchemaError(DomainError):
    pass


class EvaluationError(HoopnetError, ValueError):
    pass


class OracleError(HoopnetError, RuntimeError):
    exit_code = ExitCode.CHECK_FAILED


class GenerationError(HoopnetError, RuntimeError):
    pass


class TrainingError(HoopnetError, RuntimeError):
    exit_code = ExitCode.DIVERGED

    def __init__(self, message: str, batch_id: Optional[int] = None, epoch: Optional[int] = None):
        where = []
        if epoch is not None:
            where.append(f"epoch {epoch}")
        if batch_id is not None:
            where.append(f"batch {batch_id}")
        suffix = f" ({', '.join(where)})" if where else ""
        super().__init__(message + suffix)
        self.batch_id = batch_id
        self.epoch = epoch
