"""Exception types raised by the solver and optimizer."""


class IfeError(Exception):
    """Base class for all package errors."""


class InvalidArgument(IfeError, ValueError):
    pass


class GeometryError(IfeError):
    """The curve cannot be used with the current mesh (rejected trial point)."""


class DegenerateGeometryError(GeometryError):
    """Curve passes through (or too close to) a mesh vertex, or P = Q."""


class MeshTooCoarseError(GeometryError):
    """An edge is crossed more than once, or an element has an odd cut count."""


class TangencyError(GeometryError):
    """The curve is tangent to a mesh edge at an intersection point."""


class SelfIntersectionError(GeometryError):
    pass


class CurveOutsideDomainError(GeometryError):
    pass


class UnisolvencyError(IfeError):
    pass


class SolverError(IfeError):
    pass


class ContractViolation(IfeError):
    pass


class StaleStateError(ContractViolation):
    pass
