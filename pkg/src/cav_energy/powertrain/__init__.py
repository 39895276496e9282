from .maps import MapSpec, PowertrainMaps, load_maps, save_maps, synthesize_default_maps
from .model import (
    PowertrainResult,
    baseline_split,
    battery_step,
    engine_fuel_rate,
    gear_select,
    motor_electrical_power,
    mpge,
    road_load,
    shaft_state,
    simulate_powertrain,
)
from .params import (
    Battery,
    Driveline,
    Mode,
    PowertrainConfig,
    SplitPolicy,
    VehicleParams,
)
