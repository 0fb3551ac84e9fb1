"""Exception types shared across the package."""


class InputError(ValueError):
    """Malformed or out-of-range input."""


class NumericalError(ArithmeticError):
    """A factorization or iteration broke down numerically."""


class ConstructionError(RuntimeError):
    """A randomized constructor ran out of retries."""


class StateError(RuntimeError):
    """An agent or rollout was used out of order."""


class InvariantViolation(AssertionError):
    """A runtime audit found a violated identity or inequality."""


class SpectrumAccuracyError(NumericalError):
    """Two independent quadrature routes disagree."""
