"""Point equivalence transformations of generalized Burgers and potential Burgers equations."""

from .classes import Equation, Family, Jet2, Subclass, classify, conserved_current_check, decompose_quadratic
from .errors import PburgError
from .groupoid import admissible, check_classifying_equations, decide_equivalence, verify_admissible
from .maps import linearize_p3, potentialize_C, potentialize_L, triangle_check
from .transforms import Group, PointTransformation, build, compose, identity

__all__ = [
    "Equation", "Family", "Jet2", "Subclass", "classify", "conserved_current_check", "decompose_quadratic",
    "PburgError", "admissible", "check_classifying_equations", "decide_equivalence", "verify_admissible",
    "linearize_p3", "potentialize_C", "potentialize_L", "triangle_check",
    "Group", "PointTransformation", "build", "compose", "identity",
]
