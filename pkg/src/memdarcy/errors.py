"""Exception hierarchy shared by all solver modules."""


class MemDarcyError(Exception):
    """Base class for all package errors."""


class HoleTouchesBoundary(MemDarcyError):
    pass


class DegenerateMesh(MemDarcyError):
    pass


class NonPositiveSlip(MemDarcyError):
    pass


class AssemblyFailure(MemDarcyError):
    pass


class SolveFailure(MemDarcyError):
    pass


class NoSteadyState(MemDarcyError):
    pass


class NoHole(MemDarcyError):
    pass


class GridMismatch(MemDarcyError):
    pass


class NoDecay(MemDarcyError):
    pass


class InvalidSpec(MemDarcyError):
    pass


class SingularOperator(MemDarcyError):
    pass


class KernelHorizonExceeded(MemDarcyError):
    pass


class NotComputed(MemDarcyError):
    pass


class NonSeparableInitialData(MemDarcyError):
    pass


class CFLViolation(MemDarcyError):
    pass


class ConfigMismatch(MemDarcyError):
    pass


class ProvenanceMismatch(MemDarcyError):
    pass


class ConfigError(MemDarcyError):
    pass
