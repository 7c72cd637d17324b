"""Exception hierarchy. Every error carries a short machine-parseable category
used by the CLI for its one-line failure output."""


class ScmixError(Exception):
    category = "error"


class ShapeError(ScmixError):
    category = "shape"


class ContractError(ScmixError):
    category = "contract"


class NumericError(ScmixError):
    category = "numeric"


class LengthError(ScmixError):
    category = "length"


class TokenizeError(ScmixError):
    category = "tokenize"

    def __init__(self, message, position=None):
        super().__init__(message)
        self.position = position


class ConfigError(ScmixError):
    category = "config"


class CheckpointError(ScmixError):
    category = "checkpoint"


class DataError(ScmixError):
    category = "data"
