"""Exception hierarchy shared across the package."""


class EmolabError(Exception):
    """Base class for all package errors."""


class InvalidInputError(EmolabError, ValueError):
    """Non-finite values, out-of-range indices or malformed arguments."""


class DimensionError(InvalidInputError):
    """Array shapes that do not agree."""


class DegenerateEmbeddingError(InvalidInputError):
    def __init__(self, index, norm):
        self.index = index
        self.norm = norm
        super().__init__(f"embedding for token {index} has norm {norm:.3g}, cannot form cosine cost")


class InvariantError(EmolabError, RuntimeError):
    """An internal invariant was violated (should not happen on valid input)."""


class DivergenceError(EmolabError, RuntimeError):
    def __init__(self, epoch, batch, value):
        self.epoch = epoch
        self.batch = batch
        self.value = value
        super().__init__(f"non-finite training loss {value!r} at epoch {epoch}, batch {batch}")


class ZeroProbabilityError(EmolabError, ArithmeticError):
    """Oracle assigns zero probability to a scored token, perplexity overflows."""

    def __init__(self, sequence, position, token):
        self.sequence = sequence
        self.position = position
        self.token = token
        super().__init__(
            f"oracle perplexity overflow: token {token} at position {position} "
            f"of sample {sequence} has zero oracle probability"
        )


class ConfigError(EmolabError, ValueError):
    """Invalid configuration document or CLI arguments."""
