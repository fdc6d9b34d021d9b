class InvalidParameter(ValueError):
    """A parameter lies outside its documented range."""


class ContractViolation(RuntimeError):
    """A caller broke an ordering or state precondition."""


class UndefinedQBER(ArithmeticError):
    """QBER requested over an empty comparison set."""


class ProtocolAbort(RuntimeError):
    """The classical exchange was aborted by either endpoint."""

    def __init__(self, reason, remote=False):
        super().__init__(reason)
        self.reason = reason
        self.remote = remote
