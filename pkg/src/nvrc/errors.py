"""Exception hierarchy shared across the package.

The CLI maps these onto process exit codes: input problems exit 2,
numerical failures exit 3, corrupt compressed files exit 4.
"""


class NvrcError(Exception):
    """Base class for all package errors."""


class InputError(NvrcError):
    """Bad user input: missing files, size mismatches, invalid configs."""


class NumericsError(NvrcError):
    """Training produced a non-finite loss or gradient."""


class CodecError(NvrcError):
    """Base class for compressed-file problems."""


class BadMagicError(CodecError):
    """Stream does not start with the NVRC magic."""


class UnsupportedVersionError(CodecError):
    """Format version is newer than this reader understands."""


class TruncatedStreamError(CodecError):
    """Stream ended before the declared payload and checksum."""


class CrcMismatchError(CodecError):
    """Payload checksum does not match; the file is corrupt."""
