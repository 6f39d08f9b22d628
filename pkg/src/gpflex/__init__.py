"""Exact aggregate EV charging flexibility under distribution-feeder limits.

Device and population flexibility sets are carried as generalized
polymatroids (a supermodular lower and submodular upper set function over
period subsets), which stay closed under Minkowski summation and box
intersection. Linear cost optimization runs as a greedy chain construction;
optimal aggregates disaggregate into per-EV schedules by convex vertex
decomposition and order replay.
"""

from .model import (
    EPS_FEAS,
    EvSpec,
    FeederSpec,
    SamplerConfig,
    Scenario,
    TimeHorizon,
    Violation,
    device_violation,
    is_device_feasible,
    sample_population,
    soc_from_profile,
    validate_scenario,
)
from .setfn import (
    SetFunction,
    CurvatureReport,
    check_curvature,
    device_lower,
    device_upper,
    full_mask,
    mask_from_periods,
    modular_from_vector,
    negate_function,
    periods_from_mask,
    sum_functions,
)
from .sfm import (
    SfmBackend,
    SfmConvergenceError,
    SfmError,
    SfmResult,
    maximize_supermodular,
    minimize_exhaustive,
    minimize_min_norm,
    solve_min,
)
from .gpoly import (
    GPolymatroid,
    GPolymatroidError,
    InfeasibleIntersectionError,
    LinearOptResult,
    OrderedSplit,
    PowerBox,
    check_intersection_feasible,
    contains,
    cross_inequality_holds,
    derive_box,
    from_device,
    intersect_box,
    minkowski_sum,
    optimize_linear,
    vertex_by_order,
    zero_gpolymatroid,
)
from .disagg import (
    ConvergenceError,
    DecompositionEntry,
    DisaggregationError,
    DisaggregationResult,
    MembershipError,
    VertexDecomposition,
    decompose,
    disaggregate,
    disaggregate_tree,
    reduce_caratheodory,
    split_vertex,
)
from .network import (
    FeederNode,
    NetworkStructureError,
    aggregate_network,
    aggregate_node,
    build_forest,
)

__version__ = "0.1.0"
