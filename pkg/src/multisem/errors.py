"""Exception hierarchy shared by all modules."""


class MultisemError(Exception):
    """Base class for errors raised by this package."""


class ConfigurationError(MultisemError, ValueError):
    """Invalid configuration, shapes or arguments."""


class DataError(MultisemError, ValueError):
    """Malformed or inconsistent input data (files, datasets, checkpoints)."""


class ContractError(MultisemError, RuntimeError):
    """An internal call contract was violated (stale cache, shape drift, ...)."""
