"""Exception types shared across the package."""


class ValtreeError(Exception):
    """Base class for all package-specific errors."""


class IntegrationDivergedError(ValtreeError):
    """An integration step produced a non-finite state."""


class InvalidParameterError(ValtreeError, ValueError):
    """A system or config parameter is outside its allowed range."""


class WeightSchemaError(ValtreeError, ValueError):
    """An MLP weight file violates the documented schema."""


class WeightDimensionError(WeightSchemaError):
    """Layer dimensions in an MLP weight file do not chain."""


class OutOfBoundsError(ValtreeError, ValueError):
    """A state lies outside the system's state bounds."""


class InfeasibleEdgeError(ValtreeError):
    """A proposed edge fails the one-step dynamic feasibility check.

    Carries the measured replay residual so callers can report it.
    """

    def __init__(self, residual: float, eps: float):
        self.residual = float(residual)
        self.eps = float(eps)
        super().__init__(
            f"edge replay residual {residual:.9g} >= eps_connect {eps:.9g}"
        )


class StoreFormatError(ValtreeError, ValueError):
    """A store or constraint file is corrupt or structurally invalid."""


class StoreVersionError(StoreFormatError):
    """A store file declares an unsupported format version."""


class ControllerStarvedError(ValtreeError):
    """No probed control led to a state with finite interpolated value.

    Carries the list of probed controls for diagnosis.
    """

    def __init__(self, probed):
        self.probed = list(probed)
        super().__init__(
            f"no finite-value vertex reachable from any of {len(self.probed)} "
            "probed controls"
        )
