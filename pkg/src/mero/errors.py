"""Exception types shared across the package."""


class BudgetExhausted(RuntimeError):
    """Raised when an oracle is asked for more samples than its budget allows."""

    def __init__(self, index, requested, remaining):
        self.index = index
        self.requested = requested
        self.remaining = remaining
        super().__init__(
            f"distribution {index}: requested {requested} samples, "
            f"only {remaining} remain in budget"
        )


class ConfigError(ValueError):
    """Invalid run configuration; ``field`` names the offending key when known."""

    def __init__(self, message, field=None):
        self.field = field
        super().__init__(f"{field}: {message}" if field else message)


class SchemaError(ValueError):
    """Encoded data does not match the versioned encoding map."""

    def __init__(self, message, diff=None):
        self.diff = diff or ""
        super().__init__(message)
