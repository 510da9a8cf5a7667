class BudgetExhausted(RuntimeError):
    """The query ledger cannot cover the requested queries."""


class ArtifactError(ValueError):
    """A saved artifact or tensor file is malformed."""


class ConfigError(ValueError):
    """A run configuration could not be parsed or validated."""
