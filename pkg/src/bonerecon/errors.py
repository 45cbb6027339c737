"""Exception hierarchy. Every error carries a short category used by the CLI."""


class ReconError(Exception):
    category = "error"


class ParseError(ReconError):
    category = "parse"


class FormatError(ReconError):
    category = "format"


class DegenerateGeometryError(ReconError):
    category = "degenerate-geometry"


class ConfigurationError(ReconError, ValueError):
    category = "configuration"


class ShapeError(ReconError, ValueError):
    category = "shape"


class PreconditionError(ReconError):
    category = "precondition"


class InputError(ReconError, ValueError):
    category = "input"


class SizeError(ReconError, ValueError):
    category = "size"


class TrainingError(ReconError):
    category = "training"


class GenerationError(ReconError):
    category = "generation"


class LabelLookupError(ReconError, KeyError):
    category = "lookup"

    def __str__(self):
        return Exception.__str__(self)
