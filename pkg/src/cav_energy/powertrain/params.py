"""Vehicle, driveline and battery parameters of the plug-in hybrid."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

from ..errors import InvalidInput

G = 9.81
AIR_DENSITY = 1.225  # kg/m^3
LHV_GASOLINE = 43.4e6  # J/kg
GASOLINE_KG_PER_GAL = 2.819  # 0.745 kg/L
GAL_TO_CO2 = 8.887e-3  # t CO2 per gallon
KWH_TO_CO2 = 7.44e-4  # t CO2 per kWh
EPA_KWH_PER_GAL = 33.7
LB = 0.45359237
MILE = 1609.344


@dataclass(frozen=True)
class VehicleParams:
    mass: float = 3616 * LB + 75.0
    rolling_coeff: float = 0.010
    frontal_area: float = 56.1 * 0.0254 * 60 * 0.0254
    drag_coeff: float = 0.32
    traction_efficiency: float = 0.96
    traction_torque_loss_factor: float = 0.95
    max_brake_force: float = 12000.0
    # tire 225/60 R16: rim radius plus sidewall height
    wheel_radius: float = (16 * 25.4 / 2 + 0.60 * 225) / 1000.0

    def __post_init__(self):
        for name in ("mass", "rolling_coeff", "frontal_area", "drag_coeff",
                     "max_brake_force", "wheel_radius"):
            if not getattr(self, name) > 0:
                raise InvalidInput(f"vehicle parameter {name} must be positive")
        for name in ("traction_efficiency", "traction_torque_loss_factor"):
            if not 0 < getattr(self, name) <= 1:
                raise InvalidInput(f"vehicle parameter {name} must lie in (0, 1]")


@dataclass(frozen=True)
class Driveline:
    gear_ratios: tuple[float, ...] = (3.50, 2.77, 1.85, 1.02, 1.02, 0.84)
    gear_efficiencies: tuple[float, ...] = (0.98,) * 6
    gear_inertias: tuple[float, ...] = (0.0,) * 6  # not used by the quasi-static model
    final_drive_ratio: float = 3.75
    final_drive_efficiency: float = 0.966
    shift_rpm_low: float = 1000.0
    shift_rpm_high: float = 5500.0
    downshift_hysteresis: float = 1.5 * 0.44704  # m/s

    def __post_init__(self):
        if len(self.gear_ratios) != len(self.gear_efficiencies) or not self.gear_ratios:
            raise InvalidInput("one efficiency per gear ratio required")
        if any(r <= 0 for r in self.gear_ratios) or self.final_drive_ratio <= 0:
            raise InvalidInput("gear ratios must be positive")
        effs = (*self.gear_efficiencies, self.final_drive_efficiency)
        if any(not 0 < e <= 1 for e in effs):
            raise InvalidInput("driveline efficiencies must lie in (0, 1]")

    @property
    def n_gears(self) -> int:
        return len(self.gear_ratios)


@dataclass(frozen=True)
class Battery:
    capacity_kwh: float = 8.8
    cells_per_module: int = 12
    modules: int = 8
    v_cell_max: float = 4.2
    v_cell_min: float = 2.1
    max_power: float = 75e3
    soc: float = 0.6
    hold_band: float = 0.02
    clamped: bool = False

    def __post_init__(self):
        if not 0 <= self.soc <= 1:
            raise InvalidInput(f"soc {self.soc} outside [0, 1]")
        if self.capacity_kwh <= 0 or self.max_power <= 0:
            raise InvalidInput("battery capacity and power must be positive")

    @property
    def capacity_j(self) -> float:
        return self.capacity_kwh * 3.6e6


class Mode(enum.Enum):
    EV = "ev"
    CHARGE_BATTERY = "charge"
    HOLD_BATTERY = "hold"
    HYBRID = "hybrid"


@dataclass(frozen=True)
class SplitPolicy:
    """Tuning of the rule-based split and of the online Pareto dispatch."""

    hold_gain: float = 40.0  # N*m of correction torque at one band of SOC error
    charge_torque: float = 30.0
    charge_ceiling: float = 0.9
    hybrid_threshold: float = 80.0  # N*m; motor alone below this demand
    soc_floor: float = 0.15  # Pareto dispatch falls back to the engine below this
    mode: Mode = Mode.HOLD_BATTERY


@dataclass(frozen=True)
class PowertrainConfig:
    vehicle: VehicleParams = field(default_factory=VehicleParams)
    driveline: Driveline = field(default_factory=Driveline)
    battery: Battery = field(default_factory=Battery)
    policy: SplitPolicy = field(default_factory=SplitPolicy)
    kwh_per_gallon: float = GAL_TO_CO2 / KWH_TO_CO2
