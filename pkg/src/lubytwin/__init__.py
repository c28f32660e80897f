"""Simulator and analytical digital twin for multi-hop networks under
weighted Luby contention, with gradient-based link-priority tuning."""

from .analytic import (
    ContentionMatrix,
    ModelOutput,
    conditional_cdf,
    model_duty_cycles,
    survival_update,
    win_probability,
)
from .ndt import NdtConfig, NdtTrace, initial_duty_cycles, overload_index, predict_duty_cycles
from .netgen import (
    ConflictGraph,
    ConnectivityGraph,
    Flow,
    FlowSet,
    Instance,
    RoutingMatrix,
    build_conflict_graph,
    generate_topology,
    incidence_matrix,
    instance_from_json,
    instance_to_json,
    make_instance,
    sample_flows,
    sample_link_rates,
    shortest_path_routing,
    validate_instance,
)
from .optimizer import OptimizerConfig, PolicyBundle, gradient, loss, optimize_priorities
from .simulator import (
    GatingPolicy,
    SimResult,
    empirical_contention,
    luby_schedule,
    run_simulation,
    windowed_duty_cycle,
)

__version__ = "0.1.0"
