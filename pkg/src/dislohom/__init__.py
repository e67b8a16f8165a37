"""Edge-dislocation cone meshes, frame fields with torsion, and
homogenization of hyperelastic energies between them."""

from .cone_mesh import (
    CoreSlit,
    DiscretePath,
    IntrinsicMesh,
    build_mesh,
    burgers_vector,
    concat_loops,
    cone_deficit,
    corner_angle,
    load_mesh,
    save_mesh,
    transport_along,
)
from .constitutive import (
    Archetype,
    composite_cubic,
    get_archetype,
    intrinsic_metric_from_implants,
    material_connection_from_implants,
    qw_cubic,
    qw_iso,
    signed_singular_values,
    symmetry_probe,
    w_cubic,
    w_iso,
)
from .dislocation_builder import (
    AssembledBody,
    DislocatedTriangle,
    TriangulationData,
    assemble,
    burgers_magnitude,
    closure_gap,
    dislocated_triangle,
    select_core_parameters,
    single_dislocation_plane,
)
from .elastic import (
    ChartMesh,
    MeshFrame,
    MinimizeOptions,
    PLMap,
    el_residual,
    energy,
    energy_gradient,
    minimize,
    minimize_smooth,
    propagate_frame,
    smooth_energy,
)
from .homogenize import (
    BodyApproximation,
    ConvergenceReport,
    build_approximation,
    build_sequence,
    frame_deviation,
    gamma_study,
)
from .weitzenbock import (
    FrameField,
    GeodesicTriangulation,
    geodesic_connect,
    geodesic_shoot,
    get_field,
    metric_at,
    torsion_at,
    torsion_from_loops,
    triangulate,
)

__version__ = "0.1.0"
