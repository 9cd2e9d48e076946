"""Exception types raised across the package."""


class RgbHsiError(Exception):
    """Base class for all package errors."""


class BadCrop(RgbHsiError):
    pass


class ShapeMismatch(RgbHsiError):
    pass


class DegeneratePolygon(RgbHsiError):
    pass


class DegenerateData(RgbHsiError):
    pass


class BadRank(RgbHsiError):
    pass


class DegenerateFit(RgbHsiError):
    pass


class ImplausibleTransform(RgbHsiError):
    pass


class BadQuery(RgbHsiError):
    pass


class MissingMatches(RgbHsiError):
    pass


class ParseError(RgbHsiError):
    pass


class Undefined(RgbHsiError):
    """Raised when a metric has no defined value (e.g. mIoU with no present classes)."""


class TransferFailed(RgbHsiError):
    """Whole-image transfer failure. Carries the partial report collected so far."""

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


class ConfigError(RgbHsiError):
    pass
