"""Exception types shared across the package."""


class FusionBankError(Exception):
    """Base class for all package errors."""


class DimensionError(FusionBankError):
    """Tensor shapes are incompatible for the requested operation."""


class ConfigurationError(FusionBankError):
    """Invalid module configuration or flag combination."""


class ContractError(FusionBankError):
    """An operation's calling contract was violated."""


class DatasetError(FusionBankError):
    """Dataset files are missing, corrupt, or fail validation."""
