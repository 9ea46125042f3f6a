"""Exception types shared across the package."""


class ScatteringError(RuntimeError):
    pass


class TrappedRay(ScatteringError):
    """A ray did not leave the exit sphere within the time budget."""

    def __init__(self, y, t_max):
        self.y = tuple(float(v) for v in y)
        self.t_max = t_max
        super().__init__(f"ray launched at y={self.y} still inside after s={t_max:g}")


class EnergyDrift(ScatteringError):
    def __init__(self, y, drift, tol):
        self.y = tuple(float(v) for v in y)
        self.drift = drift
        super().__init__(f"energy drift {drift:.3g} > {tol:.1g} on ray y={self.y}")


class DegenerateCaustic(ScatteringError):
    pass


class NonregularDirection(ScatteringError):
    pass


class BranchUncertain(ScatteringError):
    pass


class OrbitingDetected(ScatteringError):
    pass


class MatchFailure(ScatteringError):
    pass


class TailNotConverged(ScatteringError):
    pass


class QuadratureUnderResolved(ScatteringError):
    pass


class ConfigError(ValueError):
    pass
