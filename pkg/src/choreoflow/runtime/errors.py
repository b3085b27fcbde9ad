class RuntimeFailure(Exception):
    """Base class for failures while executing plans."""


class BindError(RuntimeFailure):
    pass


class HandshakeTimeout(RuntimeFailure):
    pass


class EncodeError(RuntimeFailure, TypeError):
    pass


class DecodeError(RuntimeFailure, ValueError):
    pass


class ChannelClosed(RuntimeFailure):
    """A peer went away before sending end-of-stream."""


class WorkerFailed(RuntimeFailure):
    def __init__(self, instance: str, cause: BaseException | str):
        self.instance = instance
        self.cause = cause
        super().__init__(f"{instance}: {cause}")
