"""Exception types raised across the package."""


class MimoEstError(Exception):
    """Base class for all package errors."""


class NotPositiveDefinite(MimoEstError):
    pass


class RankDeficient(MimoEstError):
    pass


class ZeroColumn(MimoEstError):
    pass


class RejectionOverflow(MimoEstError):
    pass


class NonScalarOutput(MimoEstError):
    pass


class DivergedLoss(MimoEstError):
    pass


class KinkCrossed(MimoEstError):
    pass


class BundleError(MimoEstError):
    pass


class PayloadLengthMismatch(BundleError):
    pass


class SchemaVersionMismatch(BundleError):
    pass


class ConfigError(MimoEstError):
    pass
