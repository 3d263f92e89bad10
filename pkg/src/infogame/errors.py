"""Exception hierarchy shared across the solver suite.

Two top-level families matter for the command line front end: input /
configuration problems (``ValidationError``, exit code 2) and numerical
failures detected at run time (``NumericalError``, exit code 3).
"""

from __future__ import annotations


class InfogameError(Exception):
    """Base class for everything raised deliberately by this package."""


class ValidationError(InfogameError):
    """Invalid input data: malformed configs, broken invariants, bad shapes."""


class NumericalError(InfogameError):
    """A numerical method failed: CFL violation, blow-up, non-convergence."""


class SingularSigmaError(NumericalError):
    """Diffusion matrix is (numerically) singular at a probed point."""

    def __init__(self, smallest_sv: float, floor: float, where: str = ""):
        self.smallest_sv = smallest_sv
        self.floor = floor
        msg = f"smallest singular value {smallest_sv:.3e} below floor {floor:.3e}"
        if where:
            msg += f" at {where}"
        super().__init__(msg)


class CflError(NumericalError):
    """Explicit finite-difference step would violate its stability bound."""


class BlowUpError(NumericalError):
    """Non-finite values appeared during a solve."""


class NonConvergenceError(NumericalError):
    """An iterative method exhausted its budget without meeting tolerance."""
