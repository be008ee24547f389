"""Exception types shared across the toolkit."""


class DimensionError(ValueError):
    """Shape mismatch between connected tensors; carries the offending layer."""

    def __init__(self, message, layer_index=None):
        super().__init__(message)
        self.layer_index = layer_index


class IdxFormatError(ValueError):
    """Malformed IDX file; ``offset`` is the byte position of the problem."""

    def __init__(self, message, offset=None):
        super().__init__(message)
        self.offset = offset


class DivergenceError(RuntimeError):
    """Training loss became non-finite at ``iteration``."""

    def __init__(self, message, iteration=None):
        super().__init__(message)
        self.iteration = iteration


class NumericalInstabilityError(RuntimeError):
    """Recursive inverse hit a vanishing denominator at update ``step``."""

    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


class LayerExhaustedError(RuntimeError):
    """No prunable parameter is left in the layer."""


class ReplayError(RuntimeError):
    """Decision log does not match the model it is applied to."""


class ConfigError(ValueError):
    """Invalid or unknown experiment configuration entry."""


class PhaseError(RuntimeError):
    """A pipeline phase failed; ``phase`` names it, partial artifacts remain."""

    def __init__(self, message, phase):
        super().__init__(message)
        self.phase = phase
