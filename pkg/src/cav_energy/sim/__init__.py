from .cycles import (
    STANDARD_CYCLES,
    DriveCycle,
    TraceResult,
    combined_cycle,
    load_drive_cycle,
    read_cycle_csv,
    stitch_cycles,
    trace_drive_cycle,
)
from .metrics import Aggregates, collect_metrics
from .scenario import ControllerCase, ScenarioConfig, SimResult, VehicleRecord, run_scenario
from .traffic import TRAFFIC_LEVELS, Arrival, flows_for_level, spawn_traffic
