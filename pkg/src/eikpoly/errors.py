"""Exception types shared across the package."""

from __future__ import annotations


class EikError(Exception):
    """Base class for structural and numerical failures."""


class DimensionMismatch(EikError):
    pass


class NotPositiveDefinite(EikError):
    """Cholesky factorization of the diffusion matrix failed at a point."""

    def __init__(self, point, message=""):
        self.point = tuple(float(c) for c in point)
        super().__init__(message or f"matrix not positive definite at {self.point}")


class NoRealRoot(EikError):
    """The scalar eikonal equation at a node has no real solution."""

    def __init__(self, node, discriminant):
        self.node = node
        self.discriminant = discriminant
        super().__init__(f"negative discriminant {discriminant:g} at node {node}")


class DegenerateBasis(EikError):
    """A node shares a coordinate with a predecessor, so its basis factor vanishes."""

    def __init__(self, node):
        self.node = node
        super().__init__(f"basis factor vanishes at node {node}")


class SingularEnforcement(EikError):
    """The coefficient being solved for does not appear in the evaluated equation."""

    def __init__(self, beta, node, coefficient):
        self.beta = beta
        self.node = node
        self.coefficient = coefficient
        super().__init__(
            f"linear coefficient {coefficient:.3e} too small for beta={beta} at node {node}"
        )


class NotDiagonal(EikError):
    """An off-diagonal entry of the diffusion matrix is not the zero polynomial."""


class LeftDomain(EikError):
    """A trajectory exited the declared domain box."""

    def __init__(self, point, t=None):
        self.point = tuple(float(c) for c in point)
        self.t = t
        super().__init__(f"trajectory left domain at {self.point}" + (f" (t={t:g})" if t is not None else ""))


class NoConvergence(EikError):
    """No multistart branch of the boundary-value solver converged."""


class NonPositiveCoefficient(EikError):
    """The 1D diffusion coefficient is not positive on the integration interval."""


class CharacteristicEscape(EikError):
    """A characteristic curve left the evaluation domain."""

    def __init__(self, point):
        self.point = tuple(float(c) for c in point)
        super().__init__(f"characteristic left domain at {self.point}")


class StallNearBasePoint(EikError):
    """Characteristic integration stalled before reaching the base-point sphere."""


class GridTooCoarse(EikError):
    """A finite-difference stencil left the sampled grid."""


class InsufficientBuildOrder(EikError):
    """The approximant was built with too low a derivative-enforcement order."""

    def __init__(self, required, actual):
        self.required = required
        self.actual = actual
        super().__init__(f"needs enforcement order m >= {required}, approximant has m = {actual}")


class ConfigInvalid(EikError):
    """A run configuration failed validation; `field` names the offending entry."""

    def __init__(self, field, message):
        self.field = field
        super().__init__(f"{field}: {message}")


class IoFailure(EikError):
    pass
