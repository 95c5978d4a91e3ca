"""Minimal graphs over marked polygons and their conjugate saddle towers.

The pipeline: build a convex polygon with unit edges marked alternately
+1/-1 (polygon), triangulate it with boundary grading (meshing), solve
the capped minimal graph problem with cap continuation (jssolver),
integrate the conjugate one-forms into the conjugate function and
surface (conjugate), and study degenerating families for divergence
lines and limit tags (limits).  analytic holds the closed-form graph
used as the accuracy oracle, cli runs config-driven experiments.
"""

from .polygon import (
    MarkedPolygon,
    classify_limit,
    from_turning_angles,
    from_vertices,
    is_special,
    near_special_hexagon,
    parity_distance_condition,
    regular_polygon,
    split_rectangle,
    unit_square,
)
from .meshing import TriMesh, refine, triangulate
from .jssolver import (
    GraphSolution,
    NoStabilization,
    last_capped,
    solve_capped,
    solve_js,
)
from .conjugate import (
    ConjugateField,
    ConjugateSurface,
    conjugate_function,
    conjugate_surface,
    edge_flux_report,
    flux,
    saddle_tower_piece,
)
from .limits import (
    SequenceExperiment,
    detect_divergence,
    divergence_candidates,
    normalized_limit,
    rhombus_decomposition,
    solve_sequence,
)
from .analytic import ScherkSquare, scherk_gradient, scherk_value

__all__ = [
    "MarkedPolygon", "classify_limit", "from_turning_angles", "from_vertices",
    "is_special", "near_special_hexagon", "parity_distance_condition",
    "regular_polygon", "split_rectangle", "unit_square",
    "TriMesh", "refine", "triangulate",
    "GraphSolution", "NoStabilization", "last_capped", "solve_capped", "solve_js",
    "ConjugateField", "ConjugateSurface", "conjugate_function",
    "conjugate_surface", "edge_flux_report", "flux", "saddle_tower_piece",
    "SequenceExperiment", "detect_divergence", "divergence_candidates",
    "normalized_limit", "rhombus_decomposition", "solve_sequence",
    "ScherkSquare", "scherk_gradient", "scherk_value",
]
