"""Offline engine/motor efficiency trade-off table and its online lookup.

For a shaft speed ``N`` and demand ``D`` every propulsion split
``T_eng + T_mot = D`` on the torque grid is scored by the scalarized
objective ``alpha * eta_eng + (1 - alpha) * eta_mot``.  An actuator carrying
no torque is lossless and scores 1 (an open clutch burns no fuel, an idle
motor draws no current).  Sweeping ``alpha`` over [0, 1] traces the
efficiency trade-off set; the table stores the split of one fixed ``alpha``
(0.5 by default) so the online policy is a plain lookup.

Ties are broken towards the lowest engine torque, so builds are
deterministic.
"""

from __future__ import annotations

import hashlib
import io
import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from .errors import (
    BadSpec,
    EmptyFeasibleSet,
    FingerprintMismatch,
    InfeasibleCell,
    InvalidInput,
    OutOfRange,
)
from .powertrain.maps import PowertrainMaps, synthesize_default_maps
from .powertrain.model import _hold_batch
from .powertrain.params import Battery, SplitPolicy

__all__ = [
    "ParetoGridSpec",
    "ParetoTable",
    "build_pareto_table",
    "alpha_sweep",
    "lookup_split",
    "brute_force_split",
    "save_table",
    "load_table",
    "ParetoSplitController",
]

FORMAT_VERSION = 1
_EPS = 1e-9


@dataclass(frozen=True)
class ParetoGridSpec:
    torque_step: float = 10.0  # N*m
    speed_step: float = 100.0  # rpm
    alpha_step: float = 0.05
    demand_max: float = 550.0  # engine 250 + motor 300
    speed_max: float = 6000.0
    alpha: float = 0.5  # scalarization persisted in the table

    def validate(self, maps: PowertrainMaps | None = None) -> None:
        if min(self.torque_step, self.speed_step, self.alpha_step) <= 0:
            raise BadSpec("grid steps must be positive")
        if self.alpha_step > 1 or not 0 <= self.alpha <= 1:
            raise BadSpec("alpha and its step must lie in [0, 1]")
        if self.demand_max <= 0 or self.speed_max <= 0:
            raise BadSpec("grid ranges must be positive")
        for value, step in ((self.demand_max, self.torque_step), (self.speed_max, self.speed_step)):
            if abs(value / step - round(value / step)) > 1e-9:
                raise BadSpec("range must be a whole number of steps")
        k = self.alpha / self.alpha_step
        if abs(k - round(k)) > 1e-9:
            raise BadSpec("stored alpha must lie on the alpha grid")
        if maps is not None:
            s = maps.spec
            if self.demand_max > s.engine_max_torque + s.motor_max_torque + _EPS:
                raise BadSpec(f"demand range {self.demand_max} exceeds combined actuator torque")
            if self.speed_max > s.motor_speed_max + _EPS:
                raise BadSpec(f"speed range {self.speed_max} exceeds the map envelope")

    @property
    def speeds(self) -> np.ndarray:
        return np.arange(round(self.speed_max / self.speed_step) + 1) * self.speed_step

    @property
    def demands(self) -> np.ndarray:
        return np.arange(round(self.demand_max / self.torque_step) + 1) * self.torque_step

    @property
    def alphas(self) -> np.ndarray:
        n = int(np.floor(1.0 / self.alpha_step + 1e-9))
        return np.round(np.arange(n + 1) * self.alpha_step, 12)


@dataclass
class ParetoTable:
    """Splits per (speed bucket, demand bucket); infeasible cells are NaN."""

    spec: ParetoGridSpec
    maps_fingerprint: str
    t_eng: np.ndarray
    t_mot: np.ndarray
    objective: np.ndarray
    feasible: np.ndarray

    @property
    def shape(self):
        return self.t_eng.shape

    @property
    def n_cells(self) -> int:
        return int(self.t_eng.size)

    @property
    def n_infeasible(self) -> int:
        return int((~self.feasible).sum())

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(f"# cav-energy pareto table v{FORMAT_VERSION}\n")
        buf.write(f"# maps_fingerprint: {self.maps_fingerprint}\n")
        buf.write(f"# spec: {json.dumps(asdict(self.spec), sort_keys=True)}\n")
        buf.write("speed_rpm,demand_nm,feasible,t_eng,t_mot,objective\n")
        for i, n in enumerate(self.spec.speeds):
            for j, d in enumerate(self.spec.demands):
                if self.feasible[i, j]:
                    vals = f"1,{self.t_eng[i, j]:.17g},{self.t_mot[i, j]:.17g},{self.objective[i, j]:.17g}"
                else:
                    vals = "0,,,"
                buf.write(f"{n:g},{d:g},{vals}\n")
        return buf.getvalue()

    def digest(self) -> str:
        return hashlib.sha256(self.to_csv().encode()).hexdigest()


# ------------------------------------------------------------------ build


def _capabilities(maps: PowertrainMaps, speeds):
    return maps.engine_max_torque(speeds), maps.motor_max_torque(speeds)


def _efficiency_terms(maps: PowertrainMaps, speeds, demands, t_eng):
    """Engine/motor efficiency terms over (speed, demand, T_eng) and feasibility."""
    S = speeds[:, None, None]
    D = demands[None, :, None]
    E = t_eng[None, None, :]
    te_max, tm_max = _capabilities(maps, speeds)
    TM = D - E
    ok = (E <= D + _EPS) & (E <= te_max[:, None, None] + _EPS) & (TM <= tm_max[:, None, None] + _EPS)
    S_b, E_b, TM_b = np.broadcast_arrays(S, E, TM)
    eta_e = np.where(E_b == 0, 1.0, maps.engine_efficiency(S_b, E_b))
    eta_m = np.where(TM_b == 0, 1.0, maps.motor_efficiency(S_b, TM_b))
    return eta_e, eta_m, ok


def alpha_sweep(maps: PowertrainMaps, spec: ParetoGridSpec | None = None):
    """Engine torque chosen for every alpha: array (alphas, speeds, demands).

    Infeasible cells hold NaN.  This is the full trade-off set behind the
    table, kept for export and plotting.
    """
    spec = spec or ParetoGridSpec()
    spec.validate(maps)
    speeds, demands = spec.speeds, spec.demands
    cand = np.arange(int(np.floor(maps.spec.engine_max_torque / spec.torque_step + 1e-9)) + 1) * spec.torque_step
    eta_e, eta_m, ok = _efficiency_terms(maps, speeds, demands, cand)
    out = np.full((spec.alphas.size, speeds.size, demands.size), np.nan)
    any_ok = ok.any(axis=2)
    for k, a in enumerate(spec.alphas):
        f = np.where(ok, a * eta_e + (1 - a) * eta_m, -np.inf)
        out[k] = np.where(any_ok, cand[np.argmax(f, axis=2)], np.nan)
    return out


def build_pareto_table(maps: PowertrainMaps, spec: ParetoGridSpec | None = None) -> ParetoTable:
    """Enumerate grid splits per cell and keep the best at ``spec.alpha``.

    ``argmax`` returns the first maximum along ascending engine torque,
    which is the lowest-engine-torque tie-break.
    """
    spec = spec or ParetoGridSpec()
    spec.validate(maps)
    speeds, demands = spec.speeds, spec.demands
    cand = np.arange(int(np.floor(maps.spec.engine_max_torque / spec.torque_step + 1e-9)) + 1) * spec.torque_step
    eta_e, eta_m, ok = _efficiency_terms(maps, speeds, demands, cand)
    a = spec.alpha
    f = np.where(ok, a * eta_e + (1 - a) * eta_m, -np.inf)
    k = np.argmax(f, axis=2)
    feasible = ok.any(axis=2)
    best = np.take_along_axis(f, k[..., None], axis=2)[..., 0]
    t_eng = np.where(feasible, cand[k], np.nan)
    t_mot = np.where(feasible, demands[None, :] - cand[k], np.nan)
    objective = np.where(feasible, best, np.nan)
    return ParetoTable(spec, maps.fingerprint(), t_eng, t_mot, objective, feasible)


def brute_force_split(maps: PowertrainMaps, speed: float, demand: float, alpha: float,
                      granularity: float = 1.0):
    """Scan every split ``T_eng = k * granularity`` one at a time (reference oracle)."""
    if not 0 <= alpha <= 1:
        raise InvalidInput("alpha must lie in [0, 1]")
    if demand < 0 or speed < 0:
        raise InvalidInput("speed and demand must be non-negative")
    te_max = float(maps.engine_max_torque(speed))
    tm_max = float(maps.motor_max_torque(speed))
    best = None
    k = 0
    while k * granularity <= min(demand, te_max) + _EPS:
        te = float(k * granularity)
        tm = demand - te
        k += 1
        if tm > tm_max + _EPS:
            continue
        f1 = 1.0 if te == 0 else float(maps.engine_efficiency(speed, te))
        f2 = 1.0 if tm == 0 else float(maps.motor_efficiency(speed, tm))
        value = alpha * f1 + (1 - alpha) * f2
        if best is None or value > best[2]:
            best = (te, tm, value)
    if best is None:
        raise EmptyFeasibleSet(f"{demand:.1f} N*m not reachable at {speed:.0f} rpm")
    return best


# ------------------------------------------------------------------ lookup


def _cell_index(table: ParetoTable, speed, demand):
    spec = table.spec
    speed = np.asarray(speed, dtype=float)
    demand = np.asarray(demand, dtype=float)
    if np.any(speed < -_EPS) or np.any(speed > spec.speed_max + _EPS):
        raise OutOfRange(f"speed outside [0, {spec.speed_max}] rpm")
    if np.any(demand < -_EPS) or np.any(demand > spec.demand_max + _EPS):
        raise OutOfRange(f"demand outside [0, {spec.demand_max}] N*m")
    i = np.rint(speed / spec.speed_step).astype(int)
    j = np.rint(demand / spec.torque_step).astype(int)
    # the zero bucket has no split ratio; borrow the first positive bucket
    j = np.where((j == 0) & (demand > 0), 1, j)
    return i, j, demand


def _rescale(table, i, j, demand):
    d_cell = table.spec.demands[j]
    ratio = np.divide(table.t_eng[i, j], d_cell, out=np.zeros_like(demand), where=d_cell > 0)
    te = ratio * demand
    return te, demand - te


def lookup_split(table: ParetoTable, speed: float, demand: float):
    """Nearest-cell split, rescaled so the parts sum to ``demand``."""
    i, j, d = _cell_index(table, speed, demand)
    if not table.feasible[i, j]:
        raise InfeasibleCell(f"no feasible split stored near ({speed} rpm, {demand} N*m)")
    te, tm = _rescale(table, i, j, d)
    return float(te), float(tm)


# ------------------------------------------------------------------ files


def save_table(table: ParetoTable, path) -> Path:
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    p.write_text(table.to_csv())
    return p


def load_table(path, maps: PowertrainMaps | None = None) -> ParetoTable:
    """Read a table; with ``maps`` the stored fingerprint must match."""
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(f"table not found: {p}")
    lines = p.read_text().splitlines()
    try:
        if not lines[0].startswith("# cav-energy pareto table v"):
            raise ValueError("missing table header")
        version = int(lines[0].rsplit("v", 1)[1])
        if version != FORMAT_VERSION:
            raise ValueError(f"unsupported table version {version}")
        fingerprint = lines[1].split(":", 1)[1].strip()
        spec = ParetoGridSpec(**json.loads(lines[2].split(":", 1)[1]))
        shape = (spec.speeds.size, spec.demands.size)
        t_eng = np.full(shape, np.nan)
        t_mot = np.full(shape, np.nan)
        obj = np.full(shape, np.nan)
        feasible = np.zeros(shape, dtype=bool)
        rows = lines[4:]
        if len(rows) != shape[0] * shape[1]:
            raise ValueError(f"expected {shape[0] * shape[1]} rows, found {len(rows)}")
        for lineno, row in enumerate(rows, start=5):
            parts = row.split(",")
            try:
                i = int(round(float(parts[0]) / spec.speed_step))
                j = int(round(float(parts[1]) / spec.torque_step))
                if parts[2] == "1":
                    feasible[i, j] = True
                    t_eng[i, j], t_mot[i, j], obj[i, j] = (float(x) for x in parts[3:6])
            except (ValueError, IndexError) as exc:
                raise ValueError(f"line {lineno}: {exc}") from None
    except (ValueError, IndexError, TypeError, json.JSONDecodeError) as exc:
        raise InvalidInput(f"{p}: malformed table ({exc})") from None
    if maps is not None and maps.fingerprint() != fingerprint:
        raise FingerprintMismatch("table was built for different efficiency maps")
    return ParetoTable(spec, fingerprint, t_eng, t_mot, obj, feasible)


# ------------------------------------------------------------------ estimator


class ParetoSplitController(BaseEstimator):
    """Torque-split policy fitted on efficiency maps.

    ``fit`` builds the table; ``predict`` maps rows of ``[speed_rpm,
    demand_nm]`` to ``[T_eng, T_mot]``.  ``splitter`` adapts the fitted
    policy to the powertrain simulator, falling back to the charge-holding
    rule when the battery reaches ``soc_floor`` or a cell is infeasible.
    """

    def __init__(self, torque_step=10.0, speed_step=100.0, alpha_step=0.05, alpha=0.5,
                 demand_max=550.0, speed_max=6000.0, soc_floor=0.15):
        self.torque_step = torque_step
        self.speed_step = speed_step
        self.alpha_step = alpha_step
        self.alpha = alpha
        self.demand_max = demand_max
        self.speed_max = speed_max
        self.soc_floor = soc_floor

    def _grid_spec(self) -> ParetoGridSpec:
        return ParetoGridSpec(self.torque_step, self.speed_step, self.alpha_step,
                              self.demand_max, self.speed_max, self.alpha)

    def fit(self, X=None, y=None, maps: PowertrainMaps | None = None):
        """Build the table. ``X`` and ``y`` are ignored."""
        self.maps_ = maps or synthesize_default_maps()
        self.table_ = build_pareto_table(self.maps_, self._grid_spec())
        return self

    @classmethod
    def from_table(cls, table: ParetoTable, maps: PowertrainMaps, soc_floor: float = 0.15):
        if table.maps_fingerprint != maps.fingerprint():
            raise FingerprintMismatch("table was built for different efficiency maps")
        s = table.spec
        est = cls(s.torque_step, s.speed_step, s.alpha_step, s.alpha, s.demand_max,
                  s.speed_max, soc_floor)
        est.maps_, est.table_ = maps, table
        return est

    def predict(self, X):
        check_is_fitted(self, "table_")
        X = check_array(X, dtype=float)
        if X.shape[1] != 2:
            raise InvalidInput("expected columns [speed_rpm, demand_nm]")
        i, j, d = _cell_index(self.table_, X[:, 0], X[:, 1])
        if not np.all(self.table_.feasible[i, j]):
            raise InfeasibleCell("query hits an infeasible cell")
        te, tm = _rescale(self.table_, i, j, d)
        return np.column_stack([te, tm])

    def splitter(self, battery: Battery | None = None, policy: SplitPolicy | None = None):
        """Vectorized ``(n, t, soc) -> (T_eng, T_mot)`` for the powertrain runner."""
        check_is_fitted(self, "table_")
        table, maps = self.table_, self.maps_
        batt = battery or Battery()
        pol = policy or SplitPolicy()
        spec = table.spec

        def split(n, t, soc):
            n_c = np.clip(n, 0.0, spec.speed_max)
            t_c = np.clip(t, 0.0, spec.demand_max)
            i, j, d = _cell_index(table, n_c, t_c)
            te, tm = _rescale(table, i, j, d)
            # keep the rescaled split inside the envelopes at the exact speed
            te_max, tm_max = _capabilities(maps, n)
            tm = np.minimum(tm, tm_max)
            te = t - tm
            # charge-sustaining fallback holds the SOC just above the floor
            ref = self.soc_floor + batt.hold_band
            hold_te, hold_tm = _hold_batch(n, t, soc, ref, batt.hold_band, maps, pol)
            fallback = (~table.feasible[i, j]) | (te > te_max + _EPS) | (soc <= self.soc_floor)
            return np.where(fallback, hold_te, te), np.where(fallback, hold_tm, tm)

        return split
