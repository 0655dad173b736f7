"""Exception types shared across the package.

The CLI maps :class:`InputError` (and its subclasses) to exit code 2 and
:class:`NonConvergenceError` to exit code 3.
"""


class InputError(ValueError):
    """Bad names, shapes, files or configuration."""


class ValidityError(InputError):
    """A state or operator violates its invariants beyond tolerance."""


class ResolutionError(InputError):
    """Grid too coarse for the requested mode."""


class DarkProjectionError(InputError):
    """A projection carries (numerically) zero probability."""


class NonConvergenceError(RuntimeError):
    """An optimizer failed in every restart.

    The best candidate seen is kept on ``best`` so callers can still report it.
    """

    def __init__(self, message, best=None, grad_norm=None):
        super().__init__(message)
        self.best = best
        self.grad_norm = grad_norm
