from .bvh import Bvh
from .extract import extract_mesh
from .kernels import BACKEND
from .mesh import TriangleMesh, largest_component, load_mesh, save_mesh
from .metrics import (
    DEFAULT_SPACING,
    DEFAULT_THRESHOLD,
    MetricsReport,
    f_score,
    minimal_enclosing_sphere,
    normalize_pair,
    precision_recall,
    recall_visible,
)
from .sampling import SurfaceSamples, resample_surface, sample_on_triangles
from .shading import fibonacci_sphere_views, render_eval_view
from .visibility import mark_visible, select_unobserved_eval_views, triangle_id_buffer

__all__ = [
    "BACKEND", "Bvh", "TriangleMesh", "largest_component", "load_mesh", "save_mesh",
    "extract_mesh", "DEFAULT_SPACING", "DEFAULT_THRESHOLD", "MetricsReport", "f_score",
    "minimal_enclosing_sphere", "normalize_pair", "precision_recall", "recall_visible",
    "SurfaceSamples", "resample_surface", "sample_on_triangles",
    "fibonacci_sphere_views", "render_eval_view",
    "mark_visible", "select_unobserved_eval_views", "triangle_id_buffer",
]
