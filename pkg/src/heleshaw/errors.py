"""Exception types shared across the package."""


class GeometryError(ValueError):
    """Invalid interface geometry (self-intersection, wrong orientation,
    non-star-shaped radial graph, degenerate edges)."""


class ConfigError(ValueError):
    """Invalid or inconsistent run configuration."""


class MeshQualityError(RuntimeError):
    """Mesh generation could not reach the requested element quality."""

    def __init__(self, message, achieved_min_angle_deg=None):
        super().__init__(message)
        self.achieved_min_angle_deg = achieved_min_angle_deg


class TriangleInversionError(RuntimeError):
    """A triangle inverted during vertex transport (time step too large
    or remeshing overdue)."""

    def __init__(self, message, triangle_index=None):
        super().__init__(message)
        self.triangle_index = triangle_index


class SolverFailure(RuntimeError):
    """Sparse factorization failed or the computed solution did not meet
    the residual tolerance."""

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


class NewtonDivergenceError(RuntimeError):
    """Inner iteration did not converge within the iteration cap."""

    def __init__(self, message, increment_history=()):
        super().__init__(message)
        self.increment_history = list(increment_history)


class DeterminantSignError(RuntimeError):
    """The deformation map lost invertibility (non-positive Jacobian
    determinant at a quadrature point)."""


class FitError(ValueError):
    """Growth-rate fit rejected its input series."""


class SimulationFailure(RuntimeError):
    """A time step failed; carries the step index and the last good mesh."""

    def __init__(self, message, step_index=None, mesh=None):
        super().__init__(message)
        self.step_index = step_index
        self.mesh = mesh
