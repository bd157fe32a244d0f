"""Exception types shared across the package."""


class DimensionError(ValueError):
    """Operands live on incompatible grids or have mismatched shapes."""


class UnsupportedOperation(ValueError):
    """Operator not defined for the field's dimension."""


class ConfigurationError(ValueError):
    """Invalid model or experiment parameters."""


class BlowUpError(RuntimeError):
    """A time stepper produced a non-finite state.

    Carries the offending particle index, the time of the failed step, the
    pre-step energy of that particle and, when raised by a driver loop, the
    partial path computed so far.
    """

    def __init__(self, particle: int, time: float, energy: float | None = None,
                 partial=None):
        self.particle = int(particle)
        self.time = float(time)
        self.energy = energy
        self.partial = partial
        msg = f"non-finite state for particle {self.particle} at t={self.time:.6g}"
        if energy is not None:
            msg += f" (pre-step energy {energy:.6g})"
        super().__init__(msg)
