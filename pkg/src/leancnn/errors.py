"""Exception hierarchy for the engine.

Every error raised on purpose derives from EngineError so the CLI can map
failures to its documented exit codes (usage=1, data=2, divergence=3).
"""


class EngineError(Exception):
    """Base class for all engine-raised errors."""


class ShapeError(EngineError):
    """Tensor shapes or geometry do not conform to an operation's contract."""


class ConfigError(EngineError):
    """Invalid configuration value or combination."""


class ValidationError(EngineError):
    """Input data violates an operation's precondition (bad labels, etc.)."""


class DataError(EngineError):
    """Dataset problem: missing path, undecodable image, empty class."""


class FormatError(EngineError):
    """Malformed checkpoint or artifact file."""


class DivergenceError(EngineError):
    """Training loss became non-finite."""

    def __init__(self, epoch, batch, last_finite_loss):
        self.epoch = epoch
        self.batch = batch
        self.last_finite_loss = last_finite_loss
        super().__init__(
            f"non-finite loss at epoch {epoch}, batch {batch}; "
            f"last finite loss {last_finite_loss}"
        )
