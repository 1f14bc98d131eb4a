"""Exception hierarchy shared across the package.

The CLI maps these onto distinct exit codes, so raising the right class
matters: configuration problems, missing/bad data, and violated call
contracts are reported separately.
"""


class ConfigError(ValueError):
    """Invalid configuration: unknown keys, bad values, malformed plans."""


class DataError(RuntimeError):
    """Missing or unreadable datasets, checkpoints, or output collisions."""


class ContractError(ValueError):
    """A call violated a documented precondition."""


class DimensionError(ContractError):
    """Operand shapes are incompatible; the message names both shapes."""
