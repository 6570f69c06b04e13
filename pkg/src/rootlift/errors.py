"""Exception hierarchy shared by the library and the CLI."""


class RootliftError(Exception):
    pass


class NonPositiveDepth(RootliftError, ValueError):
    """A point to be projected lies on or behind the camera plane."""


class DegenerateGeometry(RootliftError, ValueError):
    """The weighted normal matrix is singular or too ill-conditioned."""


class TooFewCorrespondences(DegenerateGeometry):
    pass


class ShapeMismatch(RootliftError, ValueError):
    pass


class InvalidConfig(RootliftError, ValueError):
    pass


class DidNotConverge(RootliftError, RuntimeError):
    pass


class SchemaError(RootliftError, ValueError):
    """A scene or result document failed validation."""
