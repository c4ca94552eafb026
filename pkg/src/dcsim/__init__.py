"""dcsim: a discrete-time data-center simulator with pluggable VM schedulers.

The package models a fleet of heterogeneous physical machines serving a
stream of VM requests with per-tick demand traces.  Placement policies
range from round-robin baselines to a consolidation policy that scores
machines by resource-shape similarity and rebalances around utilization
thresholds; the engine measures energy, SLA violations and migration churn
so policies can be compared on identical inputs.
"""

from .engine import (
    FleetMachine,
    Simulation,
    SimulationConfig,
    SimulationReport,
    SlaViolationEvent,
    proportional_delivery,
    run_simulation,
)
from .model import (
    DEFAULT_RV,
    BreachSide,
    MachineCapacity,
    MachineState,
    NoHistoryError,
    PhysicalMachine,
    PowerModel,
    ResourceVector,
    UtilizationWeights,
    VirtualMachine,
    machine_free,
    machine_rv,
    power_draw,
    rescale_rv,
    resource_vector_of_vm,
    unified_utilization,
)
from .policies import (
    PlacementDecision,
    PolicyConfig,
    RebalanceAction,
    SchedulerPolicy,
    SimilarityMethod,
    SimilarityPolicy,
    build_policy,
    cosine_similarity,
    score_candidate,
)
from .workload import (
    DemandSample,
    VmRequest,
    WorkloadProfile,
    WorkloadSpec,
    generate_workload,
    load_trace_files,
    save_trace_files,
)

__version__ = "0.1.0"

__all__ = [
    "BreachSide",
    "DEFAULT_RV",
    "DemandSample",
    "FleetMachine",
    "MachineCapacity",
    "MachineState",
    "NoHistoryError",
    "PhysicalMachine",
    "PlacementDecision",
    "PolicyConfig",
    "PowerModel",
    "RebalanceAction",
    "ResourceVector",
    "SchedulerPolicy",
    "SimilarityMethod",
    "SimilarityPolicy",
    "Simulation",
    "SimulationConfig",
    "SimulationReport",
    "SlaViolationEvent",
    "UtilizationWeights",
    "VirtualMachine",
    "VmRequest",
    "WorkloadProfile",
    "WorkloadSpec",
    "build_policy",
    "cosine_similarity",
    "generate_workload",
    "load_trace_files",
    "machine_free",
    "machine_rv",
    "power_draw",
    "proportional_delivery",
    "rescale_rv",
    "resource_vector_of_vm",
    "run_simulation",
    "save_trace_files",
    "score_candidate",
    "unified_utilization",
    "__version__",
]
