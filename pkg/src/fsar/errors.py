"""Exception taxonomy shared across the package."""


class FsarError(Exception):
    """Base class for every error this package raises on purpose."""


class ShapeError(FsarError):
    """Operand shapes are incompatible with the requested operation."""


class ConfigError(FsarError):
    """Invalid, unknown, or inconsistent configuration value."""


class FormatError(FsarError):
    """A container file is malformed (bad magic, version, or framing)."""


class IntegrityError(FsarError):
    """Container contents disagree with the manifest or with themselves."""


class DataError(FsarError):
    """A record holds invalid values (non-finite, wrong count)."""


class UnknownClassError(FsarError):
    """A class id is not present in the store or manifest."""


class SamplingError(FsarError):
    """An episode cannot be drawn from the requested split."""


class ContractError(FsarError):
    """A caller violated an operation precondition."""


class NumericError(FsarError):
    """A numeric quantity became undefined or non-finite."""
