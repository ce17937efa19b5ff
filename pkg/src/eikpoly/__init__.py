"""Polynomial approximation of squared geodesic distance via eikonal enforcement."""

from .approximant import Approximant, CorrectionTerm, ResidualReport, quadratic_leading, residual_report
from .construction import (
    BuildSpec,
    NodeSet,
    build_hsp,
    build_lp,
    enforced_set,
    equispaced_nodes,
    explicit_nodes,
    jittered_nodes,
    leja_order,
)
from .errors import (
    CharacteristicEscape,
    ConfigInvalid,
    DegenerateBasis,
    DimensionMismatch,
    EikError,
    GridTooCoarse,
    InsufficientBuildOrder,
    IoFailure,
    LeftDomain,
    NoConvergence,
    NonPositiveCoefficient,
    NoRealRoot,
    NotDiagonal,
    NotPositiveDefinite,
    SingularEnforcement,
    StallNearBasePoint,
)
from .metric import (
    CATALOG,
    MetricField,
    constant_metric,
    curved1d_metric,
    halfplane_metric,
    perturbed2d_metric,
    symmetrize,
)
from .polynomials import MPoly, MultiIndex, enumerate_multiindices, mi_decrement

__version__ = "0.1.0"
