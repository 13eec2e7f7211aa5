"""Shared exception types."""


class RouteTreeError(Exception):
    pass


class BadMagic(RouteTreeError):
    pass


class UnsupportedVersion(RouteTreeError):
    pass


class TruncatedPayload(RouteTreeError):
    pass


class EmptySplit(RouteTreeError):
    pass


class OutOfRange(RouteTreeError):
    pass


class LevelMismatch(RouteTreeError):
    pass


class DimMismatch(RouteTreeError):
    pass


class ShapeMismatch(RouteTreeError):
    pass


class NonFinite(RouteTreeError):
    pass


class BatchTooSmall(RouteTreeError):
    pass


class MissingLevel(RouteTreeError):
    pass


class LevelOutOfRange(RouteTreeError):
    pass


class MetricMismatch(RouteTreeError):
    pass


class MissingGt(RouteTreeError):
    pass


class TooFewContexts(RouteTreeError):
    pass


class WrongKind(RouteTreeError):
    pass


class NoNodeEmbeddings(RouteTreeError):
    pass


class EmptySubtree(RouteTreeError):
    pass


class ConfigInvalid(RouteTreeError):
    pass


class SpecInvalid(RouteTreeError):
    pass
