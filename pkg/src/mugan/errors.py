"""Exception types shared across the package."""


class MuganError(Exception):
    """Base class for all errors raised by this package."""


class ContractViolation(MuganError, ValueError):
    """An argument broke a runtime contract (wrong shape, empty batch, bad range)."""


class ConfigurationError(MuganError, ValueError):
    """A model, variant, or run was wired together inconsistently."""


class ParseError(MuganError, ValueError):
    """A data file does not match the expected on-disk format."""

    def __init__(self, path, line, message):
        self.path = str(path)
        self.line = line
        super().__init__(f"{path}:{line}: {message}")


class CheckpointError(MuganError, RuntimeError):
    """Base class for checkpoint read/write failures."""


class CheckpointCorruptError(CheckpointError):
    """Checkpoint bytes are damaged or were not written by this package."""


class CheckpointVersionError(CheckpointError):
    """Checkpoint was written by an incompatible format version."""


class NonFiniteLossError(MuganError, RuntimeError):
    """A loss term became NaN or infinite during training."""

    def __init__(self, step, component, value):
        self.step = step
        self.component = component
        self.value = value
        super().__init__(
            f"non-finite loss at step {step}: {component} = {value!r}"
        )
