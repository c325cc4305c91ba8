"""Exception hierarchy shared by the solver modules."""


class VemError(Exception):
    """Base class for all errors raised by this package."""


class NonFiniteState(VemError, FloatingPointError):
    """An integration stage or evaluator produced NaN/inf."""

    def __init__(self, t, component, where=""):
        self.t = t
        self.component = component
        msg = f"non-finite value at t={t!r}, component {component}"
        if where:
            msg += f" ({where})"
        super().__init__(msg)


class StepSizeUnderflow(VemError):
    """Adaptive step fell below the relative floor of the integration span."""

    def __init__(self, t, h):
        self.t = t
        self.h = h
        super().__init__(f"step size underflow at tau={t!r} (h={h:.3e})")


class IndexOutOfRange(VemError, IndexError):
    pass


class OutOfDomain(VemError, ValueError):
    pass


class GridMismatch(VemError, ValueError):
    pass


class BoundaryViolation(VemError, ValueError):
    pass


class ModeError(VemError, ValueError):
    """Operation not defined for the problem's terminal-time mode."""


class FeasibilityLost(VemError):
    """Coupled-mode state drifted too far from the simulated trajectory."""

    def __init__(self, tau, defect, limit):
        self.tau = tau
        self.defect = defect
        self.limit = limit
        super().__init__(
            f"feasibility defect {defect:.3e} exceeds {limit:.3e} at tau={tau:.4g}"
        )


class DerivativeMismatch(VemError):
    """An analytic derivative evaluator disagrees with finite differences."""

    def __init__(self, evaluator, sample, magnitude, rel_tol):
        self.evaluator = evaluator
        self.sample = sample
        self.magnitude = magnitude
        super().__init__(
            f"{evaluator}: relative error {magnitude:.3e} > {rel_tol:.1e} "
            f"at sample {sample}"
        )
