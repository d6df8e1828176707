class McmrError(Exception):
    """ """


class TensorFormatError(McmrError):
    """
    Malformed MCMR tensor file.
    """


class BadMagicError(TensorFormatError):
    """ """


class UnsupportedVersionError(TensorFormatError):
    """ """


class UnsupportedDtypeError(TensorFormatError):
    """ """


class TruncatedPayloadError(TensorFormatError):
    """
    Declared dims need more payload bytes than the file holds.
    """


class TrailingBytesError(TensorFormatError):
    """
    The file holds bytes past the payload its dims declare.
    """


class ConfigError(McmrError):
    """ """


class SolverDivergedError(McmrError):
    """
    Non-finite values showed up in a CG iterate.
    """


class NonFiniteError(McmrError):
    """ """


class GradientCheckError(McmrError):
    """
    Unrolled gradient disagrees with central finite differences.
    """
