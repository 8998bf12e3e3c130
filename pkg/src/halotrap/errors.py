"""Exception hierarchy shared by all halotrap modules."""


class HaloTrapError(Exception):
    """Base class for every error raised by halotrap."""


class NumericalError(HaloTrapError):
    """A numerical procedure failed (maps to CLI exit code 3)."""


# geometry
class NonPositiveSpacing(HaloTrapError, ValueError):
    pass


class DomainTooSmall(HaloTrapError, ValueError):
    pass


# field solver
class NoConvergence(NumericalError):
    def __init__(self, iterations, residual=None):
        self.iterations = iterations
        self.residual = residual
        msg = f"solver did not converge after {iterations} iterations"
        if residual is not None:
            msg += f" (residual {residual:.3e})"
        super().__init__(msg)


class GridMismatch(HaloTrapError, ValueError):
    pass


class OutOfDomain(HaloTrapError, ValueError):
    pass


# fitting
class NoNodeFound(NumericalError):
    pass


class DegenerateFit(NumericalError):
    pass


class EmptyRegion(HaloTrapError, ValueError):
    pass


# pseudopotential
class SaddleNotFound(NumericalError):
    pass


class Unstable(NumericalError):
    pass


# optimizer
class NoSolution(NumericalError):
    pass


class InfeasibleStart(NumericalError):
    pass


# crystal
class InvalidTrap(HaloTrapError, ValueError):
    pass


class Singularity(HaloTrapError, ValueError):
    pass


class CoincidentIons(HaloTrapError, ValueError):
    pass
