"""Exception types shared across the package.

Every error raised on invariant violation derives from :class:`DislohomError`
so the CLI can map them to exit code 1 with a machine-readable record.
"""

from __future__ import annotations


class DislohomError(Exception):
    """Base class for all invariant and validation failures."""

    def record(self) -> dict:
        """Machine-readable error record for CLI output."""
        return {"error": type(self).__name__, "message": str(self)}


# ---------------------------------------------------------------------------
# cone_mesh

class MeshError(DislohomError):
    pass


class TriangleInequalityViolation(MeshError):
    def __init__(self, triangle: int, lengths):
        self.triangle = triangle
        self.lengths = tuple(lengths)
        super().__init__(
            f"triangle {triangle} violates the strict triangle inequality: "
            f"lengths {self.lengths}"
        )


class NonManifoldEdge(MeshError):
    pass


class NonManifoldVertex(MeshError):
    pass


class InconsistentOrientation(MeshError):
    pass


class BoundaryVertex(MeshError):
    """Cone deficit requested at an ordinary boundary vertex."""


class InvalidSlit(MeshError):
    """Core slit data inconsistent with the mesh combinatorics or lengths."""


class PathError(DislohomError):
    pass


class OpenCircuit(PathError):
    pass


class PathThroughSingularVertex(PathError):
    pass


# ---------------------------------------------------------------------------
# dislocation_builder

class BuilderError(DislohomError):
    pass


class WedgeDoesNotFit(BuilderError):
    pass


class AnglesDontSumToPi(BuilderError):
    pass


class InconsistentClosureGap(BuilderError):
    pass


class CoreTouchesBoundary(BuilderError):
    pass


class VertexAngleDefect(BuilderError):
    def __init__(self, vertex: int, residual: float):
        self.vertex = vertex
        self.residual = residual
        super().__init__(
            f"angles around vertex {vertex} miss 2*pi by {residual:.3e}"
        )


class EdgeLengthMismatch(BuilderError):
    pass


# ---------------------------------------------------------------------------
# weitzenbock_field

class FieldError(DislohomError):
    pass


class OutOfDomain(FieldError):
    pass


class LeftDomain(FieldError):
    def __init__(self, t_exit: float):
        self.t_exit = t_exit
        super().__init__(f"geodesic left the chart domain at t = {t_exit:.6g}")


class ShootingDiverged(FieldError):
    pass


class QualityBoundViolated(FieldError):
    def __init__(self, triangle, which: str):
        self.triangle = triangle
        self.which = which
        super().__init__(f"triangle {triangle} violates the {which} bound")


# ---------------------------------------------------------------------------
# constitutive / elastic_energy

class ArchetypeError(DislohomError):
    pass


class InconclusiveSamples(ArchetypeError):
    """Symmetry sweep holds on some sample matrices only."""


class HolonomyObstruction(DislohomError):
    def __init__(self, edge, residual: float):
        self.edge = edge
        self.residual = residual
        super().__init__(
            f"frame transport around edge {edge} is inconsistent "
            f"(residual {residual:.3e}); mesh is not a valid dislocated body"
        )


class NonSmoothPoint(DislohomError):
    pass


class LineSearchFailed(DislohomError):
    def __init__(self, message, result=None):
        self.result = result
        super().__init__(message)


class MaxIterations(DislohomError):
    def __init__(self, message, result=None):
        self.result = result
        super().__init__(message)
