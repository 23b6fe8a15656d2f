"""Exception types shared across the pipeline."""


class IdxFormatError(ValueError):
    """Bad magic number or truncated header in an IDX file."""


class ConsistencyError(ValueError):
    """Aligned structures disagree (counts, lengths, image ids)."""


class InsufficientDataError(ValueError):
    """Not enough images to build even a single example grid."""


class DivergenceError(RuntimeError):
    """Training produced a non-finite loss."""
