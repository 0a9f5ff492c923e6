"""Exception types shared across the package."""


class UdlflowError(Exception):
    pass


class DimensionError(UdlflowError, ValueError):
    """Operand shapes are incompatible."""


class ContractError(UdlflowError, ValueError):
    """A documented precondition was violated by the caller."""


class FormatError(UdlflowError, ValueError):
    """An external file (IDX, CSV, property file) is malformed."""


class SchemaError(UdlflowError, ValueError):
    """A model file violates the interchange schema."""


class VersionError(SchemaError):
    """A model file declares an unsupported format version."""


class NonMonotonicProfileError(ContractError):
    """The radial profile is not strictly decreasing, so density level
    sets are shells rather than balls and no single radius describes them."""
