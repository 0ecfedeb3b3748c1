"""Exception types shared across voxpano.

Every error carries a stable ``code`` string so the CLI can print a
single machine-parseable diagnostic line and pick an exit status.
"""


class VoxpanoError(Exception):
    code = "E_VOXPANO"
    exit_status = 1

    def diagnostic(self) -> str:
        msg = " ".join(str(self).split())
        return f"{self.code}: {msg}"


class ContractError(VoxpanoError, ValueError):
    """A caller broke an operation's precondition."""

    code = "E_CONTRACT"


class ValidationError(VoxpanoError, ValueError):
    code = "E_VALIDATION"


class ShapeError(ValidationError):
    code = "E_SHAPE"


class TaxonomyError(ValidationError):
    code = "E_TAXONOMY"


class EncodingError(ValidationError):
    code = "E_ENCODING"


class CapacityError(VoxpanoError, RuntimeError):
    """Scene generation could not place the requested instances."""

    code = "E_CAPACITY"


class ArrayFormatError(VoxpanoError, OSError):
    """Malformed, truncated or unsupported array file."""

    code = "E_ARRAY_FORMAT"
    exit_status = 2
