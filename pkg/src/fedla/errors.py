"""Exception types shared across the package."""


class FedLAError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(FedLAError, ValueError):
    """Invalid configuration: bad dimensions, out-of-range values, unknown keys."""

    def __init__(self, message, key=None):
        self.key = key
        super().__init__(f"{key}: {message}" if key else message)


class InvalidInputError(FedLAError, ValueError):
    pass


class DegenerateInputError(FedLAError, ValueError):
    """Inputs are well-formed but carry no information (e.g. all-zero counts)."""


class ProtocolError(FedLAError):
    """Client updates and aggregation weights do not describe the same client set."""


class NumericalError(FedLAError, ArithmeticError):
    """A non-finite value appeared during training or aggregation."""

    def __init__(self, message, *, round_index=None, client_id=None, fold=None):
        self.round_index = round_index
        self.client_id = client_id
        self.fold = fold
        ctx = [
            f"{name}={value}"
            for name, value in (("fold", fold), ("round", round_index), ("client", client_id))
            if value is not None
        ]
        super().__init__(f"{message} ({', '.join(ctx)})" if ctx else message)

    def with_context(self, **ctx):
        merged = {
            "round_index": self.round_index,
            "client_id": self.client_id,
            "fold": self.fold,
        }
        merged.update({k: v for k, v in ctx.items() if v is not None})
        base = str(self).split(" (", 1)[0]
        return NumericalError(base, **merged)
