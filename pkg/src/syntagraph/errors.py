"""Exception hierarchy shared by the ingestion, graph and encoder layers."""


class SyntagraphError(Exception):
    pass


class ParseError(SyntagraphError):
    """A document could not be read (bad syntax, missing file, wrong field types)."""


class ValidationError(SyntagraphError):
    """A document was readable but violates a structural invariant."""


class TreeViolationError(ValidationError):
    """A dependency parse is not a single rooted tree."""


class NumericalError(SyntagraphError):
    """Non-finite values appeared in a forward or backward pass."""
