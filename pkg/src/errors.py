"""Exception hierarchy shared by the simulator modules."""


class CFCError(Exception):
    """Base class for numerical failures of the simulator."""


class NonConvergence(CFCError):
    """Steady-state fixed-point iteration hit its iteration cap."""


class DegenerateArgument(CFCError):
    """An angle was requested for a vanishing complex amplitude."""


class SingularAt(CFCError):
    """The frequency-domain system matrix is numerically singular."""

    def __init__(self, omega: float, condition: float):
        self.omega = omega
        self.condition = condition
        super().__init__(
            f"System matrix singular at omega={omega:.6e} rad/s (cond={condition:.3e})"
        )


class IntegrationFailure(CFCError):
    """Adaptive quadrature exhausted its budget before meeting tolerance."""


class UndefinedHomodynePhase(CFCError):
    """The mean output field vanishes, so the homodyne phase is undefined."""


class ContourAmbiguous(CFCError):
    """A zero lies on or too close to the argument-principle contour."""


class NoStableRegion(CFCError):
    """A coarse pre-scan found no stable point inside the bounds."""


class FitDiverged(CFCError):
    """A least-squares fit failed to decrease its residual or had no signal."""


class BasinEscape(CFCError):
    """A fitted parameter ended on its bound."""


class SingularCovariance(CFCError):
    """The fit Jacobian does not yield an invertible curvature matrix."""
