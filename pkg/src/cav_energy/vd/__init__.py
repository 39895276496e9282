from .coordinator import (
    CrossingPlan,
    QueueEntry,
    RearEndReport,
    ZoneQueue,
    assign_entry_time,
    register_vehicle,
    schedule_crossing,
    verify_rear_end,
)
from .trajectory import (
    Arc,
    ArcKind,
    BoundaryConditions,
    CubicTrajectory,
    Limits,
    evaluate,
    piece_arcs,
    solve_unconstrained,
    trajectory_cost,
    write_trajectory_csv,
)
