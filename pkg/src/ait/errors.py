"""Exception types shared across the package."""


class DimensionError(ValueError):
    """Operand shapes violate an operation's contract."""


class ContractError(ValueError):
    """A non-shape precondition of an operation is violated."""


class EmptyRowError(ValueError):
    """A softmax row has no unmasked entries and the caller did not opt in
    to the zero-row convention."""


class ConfigError(ValueError):
    """A configuration value is missing, unknown, or out of range."""


class ParseError(ValueError):
    """A dataset or config file could not be parsed."""


class ValidationError(ValueError):
    """Parsed data violates a structural invariant."""
