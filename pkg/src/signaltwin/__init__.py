"""Deterministic grid-traffic microsimulation with adaptive signal control.

The package simulates a grid of signalized intersections at one-second
resolution, drives one subject intersection with a pluggable control
algorithm (density baseline, or the delay-based dt1/dt2 rules), and can
periodically re-select that algorithm by racing candidates in parallel
seeded simulations under forecast demand.
"""

from .controllers import (
    ALGORITHMS,
    Decision,
    DecisionInput,
    approach_density,
    baseline_decide,
    dt1_decide,
    dt2_decide,
)
from .delay import (
    DelayLedger,
    average_approach_delay,
    on_approach_transition,
    segment_delay,
    update_waiting,
    vehicle_delay_dt1,
    vehicle_delay_dt2,
)
from .metrics import (
    aasd,
    compare,
    control_delay_summary,
    dsd_histogram,
    los_from_control_delay,
)
from .network import (
    ApproachSegment,
    Movement,
    Network,
    build_grid,
    load_network,
    save_network,
    shortest_path,
    upstream_approach,
)
from .signals import ControllerTimer, phase_for_movement
from .traffic import (
    DemandScenario,
    Flow,
    SimClock,
    Simulation,
    SimulationResult,
    VehicleParams,
    generate_departures,
    scenario_catalog,
)
from .twin import (
    DemandEstimate,
    DemandPhase,
    SimulationJob,
    TwinSettings,
    forecast_demands,
    live_loop,
    match_demand,
    run_parallel,
    select_controller,
)

__version__ = "0.1.0"

__all__ = [
    "ALGORITHMS",
    "ApproachSegment",
    "ControllerTimer",
    "Decision",
    "DecisionInput",
    "DelayLedger",
    "DemandEstimate",
    "DemandPhase",
    "DemandScenario",
    "Flow",
    "Movement",
    "Network",
    "SimClock",
    "Simulation",
    "SimulationJob",
    "SimulationResult",
    "TwinSettings",
    "VehicleParams",
    "aasd",
    "approach_density",
    "average_approach_delay",
    "baseline_decide",
    "build_grid",
    "compare",
    "control_delay_summary",
    "dsd_histogram",
    "dt1_decide",
    "dt2_decide",
    "forecast_demands",
    "generate_departures",
    "live_loop",
    "load_network",
    "los_from_control_delay",
    "match_demand",
    "on_approach_transition",
    "phase_for_movement",
    "run_parallel",
    "save_network",
    "scenario_catalog",
    "segment_delay",
    "select_controller",
    "shortest_path",
    "update_waiting",
    "upstream_approach",
    "vehicle_delay_dt1",
    "vehicle_delay_dt2",
]
