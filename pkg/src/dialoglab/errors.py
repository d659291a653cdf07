"""Exception hierarchy.  Every error carries a short machine-readable ``code``."""


class DialogLabError(Exception):
    code = "error"


class DimensionError(DialogLabError, ValueError):
    code = "dimension"


class ConfigError(DialogLabError, ValueError):
    code = "config"


class ValidationError(DialogLabError, ValueError):
    code = "validation"


class ParseError(DialogLabError, ValueError):
    code = "parse"

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class VocabLookupError(DialogLabError, IndexError):
    code = "lookup"


class GraphError(DialogLabError, RuntimeError):
    code = "graph"


class MissingAnnotationError(DialogLabError, ValueError):
    code = "missing-annotation"


class CompatibilityError(DialogLabError, ValueError):
    code = "compatibility"


class CheckpointError(DialogLabError, ValueError):
    code = "checkpoint"
