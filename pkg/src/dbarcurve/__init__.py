"""dbarcurve: d-bar solvers, Faddeev-type Green functions and EIT
reconstruction on affine algebraic plane curves."""

from .curve import (
    CurvePoint,
    HeferPair,
    HolomorphicBasis,
    PlaneCurve,
    hefer_decomposition,
    holomorphic_basis,
    monodromy_circle,
    sheets_at,
    validate_curve,
)

__all__ = [
    "CurvePoint",
    "HeferPair",
    "HolomorphicBasis",
    "PlaneCurve",
    "hefer_decomposition",
    "holomorphic_basis",
    "monodromy_circle",
    "sheets_at",
    "validate_curve",
]

__version__ = "0.1.0"
