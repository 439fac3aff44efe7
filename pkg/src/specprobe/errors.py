"""Exception types shared across the package."""


class SpecprobeError(Exception):
    """Base class for all errors raised by specprobe."""


class ValidationError(SpecprobeError, ValueError):
    """An argument violates a documented precondition."""


class FormatError(SpecprobeError):
    """A dataset or checkpoint file could not be parsed.

    ``offset`` is the byte offset at which parsing failed, when known.
    """

    def __init__(self, message, offset=None, path=None):
        self.offset = offset
        self.path = path
        where = []
        if path is not None:
            where.append(str(path))
        if offset is not None:
            where.append(f"byte {offset}")
        prefix = f"{': '.join(where)}: " if where else ""
        super().__init__(prefix + message)


class TrainingDivergedError(SpecprobeError):
    """The training loss became non-finite."""

    def __init__(self, epoch, batch, loss):
        self.epoch = epoch
        self.batch = batch
        self.loss = loss
        super().__init__(f"non-finite loss {loss!r} at epoch {epoch}, batch {batch}")
