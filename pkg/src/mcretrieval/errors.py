"""Error types shared across the package.

The CLI maps these onto exit codes: ValidationError -> 2, ParseError -> 3,
anything else derived from McRetrievalError -> 4.
"""


class McRetrievalError(Exception):
    pass


class ValidationError(McRetrievalError):
    """Bad configuration or arguments, detected before any real work."""


class ShapeError(ValidationError):
    """Tensor shape or dimension mismatch."""


class ContractError(McRetrievalError):
    """An operation precondition was violated at call time."""


class MiningError(McRetrievalError):
    """Triplet mining cannot proceed (degenerate labels, missing negatives)."""


class SamplingError(McRetrievalError):
    """Batch sampling cannot satisfy the requested P/K layout."""

    def __init__(self, msg, deficient_classes=None):
        super().__init__(msg)
        self.deficient_classes = list(deficient_classes or [])


class DivergenceError(McRetrievalError):
    """Training produced a non-finite gradient or parameter."""


class ParseError(McRetrievalError):
    """A file could not be parsed; carries the offending line number."""

    def __init__(self, msg, path=None, line=None):
        loc = f"{path or '<input>'}:{line}" if line is not None else (path or "<input>")
        super().__init__(f"{loc}: {msg}")
        self.path = path
        self.line = line
