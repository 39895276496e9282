"""Energy-optimal crossing trajectories for a double integrator.

Minimizes ``integral of u^2 / 2`` over a fixed horizon subject to
``p' = v, v' = u``, fixed initial state, fixed final position and either a
fixed or a free final speed, with box limits on speed and acceleration.

Each arc stores coefficients in its *local* time ``tau = t - t_start``::

    u = a*tau + b
    v = a*tau**2/2 + b*tau + c
    p = a*tau**3/6 + b*tau**2/2 + c*tau + d

Constrained arcs are the same cubic with the pinned quantity held fixed
(``a = 0`` and ``b`` at the bound for control arcs, ``a = b = 0`` for speed
arcs).
"""

from __future__ import annotations

import csv
import enum
import io
import math
from bisect import bisect_right
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable

import numpy as np
from scipy.optimize import brentq

from ..errors import (
    Infeasible,
    InvalidInput,
    NoConvergence,
    SingularSystem,
    TimeOutOfRange,
)

__all__ = [
    "ArcKind",
    "Arc",
    "CubicTrajectory",
    "BoundaryConditions",
    "Limits",
    "solve_unconstrained",
    "piece_arcs",
    "evaluate",
    "trajectory_cost",
    "write_trajectory_csv",
]

MIN_HORIZON = 1e-6
BOUND_TOL = 1e-9
JUNCTION_XTOL = 1e-8
MAX_ROOT_ITER = 200


class ArcKind(enum.Enum):
    UNCONSTRAINED = "unconstrained"
    VMAX = "vmax"
    VMIN = "vmin"
    UMAX = "umax"
    UMIN = "umin"


@dataclass(frozen=True)
class Arc:
    t_start: float
    t_end: float
    kind: ArcKind
    a: float
    b: float
    c: float
    d: float

    @property
    def duration(self) -> float:
        return self.t_end - self.t_start

    def state(self, t):
        tau = t - self.t_start
        u = self.a * tau + self.b
        v = (0.5 * self.a * tau + self.b) * tau + self.c
        p = ((self.a * tau / 6.0 + 0.5 * self.b) * tau + self.c) * tau + self.d
        return p, v, u

    def cost(self) -> float:
        h = self.duration
        a, b = self.a, self.b
        return 0.5 * (a * a * h**3 / 3.0 + a * b * h * h + b * b * h)


@dataclass(frozen=True)
class CubicTrajectory:
    arcs: tuple[Arc, ...]

    @property
    def t0(self) -> float:
        return self.arcs[0].t_start

    @property
    def tf(self) -> float:
        return self.arcs[-1].t_end

    # duck-typed "track" interface shared with simulator paths
    t_start = t0
    t_end = tf

    def _arc_index(self, t: float) -> int:
        starts = [arc.t_start for arc in self.arcs]
        return max(0, bisect_right(starts, t) - 1)

    def evaluate(self, t: float) -> tuple[float, float, float]:
        span = self.tf - self.t0
        eps = 1e-12 * max(1.0, abs(self.tf))
        if t < self.t0 - eps or t > self.tf + eps or span < 0:
            raise TimeOutOfRange(f"t={t} outside [{self.t0}, {self.tf}]")
        arc = self.arcs[self._arc_index(t)]
        p, v, u = arc.state(t)
        return float(p), float(v), float(u)

    def sample(self, ts) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Vectorized evaluation; times outside the span are clamped."""
        ts = np.clip(np.asarray(ts, dtype=float), self.t0, self.tf)
        starts = np.array([arc.t_start for arc in self.arcs])
        idx = np.clip(np.searchsorted(starts, ts, side="right") - 1, 0, len(self.arcs) - 1)
        coef = np.array([[arc.a, arc.b, arc.c, arc.d] for arc in self.arcs])[idx]
        tau = ts - starts[idx]
        a, b, c, d = coef.T
        u = a * tau + b
        v = (0.5 * a * tau + b) * tau + c
        p = ((a * tau / 6.0 + 0.5 * b) * tau + c) * tau + d
        return p, v, u

    def cost(self) -> float:
        return sum(arc.cost() for arc in self.arcs)

    def shifted(self, dp: float = 0.0, dt: float = 0.0) -> "CubicTrajectory":
        return CubicTrajectory(tuple(
            replace(arc, t_start=arc.t_start + dt, t_end=arc.t_end + dt, d=arc.d + dp)
            for arc in self.arcs
        ))

    def with_cruise(self, t_until: float) -> "CubicTrajectory":
        """Extend at the final speed with zero acceleration up to ``t_until``."""
        if t_until <= self.tf:
            return self
        p, v, _ = self.arcs[-1].state(self.tf)
        tail = Arc(self.tf, t_until, ArcKind.UNCONSTRAINED, 0.0, 0.0, float(v), float(p))
        return CubicTrajectory(self.arcs + (tail,))

    def junctions(self) -> list[float]:
        return [arc.t_start for arc in self.arcs[1:]]


@dataclass(frozen=True)
class BoundaryConditions:
    t0: float
    p0: float
    v0: float
    tf: float
    pf: float
    vf: float | None = None  # None means free terminal speed

    @property
    def horizon(self) -> float:
        return self.tf - self.t0

    @property
    def distance(self) -> float:
        return self.pf - self.p0


@dataclass(frozen=True)
class Limits:
    u_min: float = -3.0
    u_max: float = 1.5
    v_min: float = 1.0
    v_max: float = 17.8816

    @classmethod
    def from_corridor(cls, corridor) -> "Limits":
        return cls(corridor.u_min, corridor.u_max, corridor.v_min, corridor.v_max)


def evaluate(traj: CubicTrajectory, t: float) -> tuple[float, float, float]:
    return traj.evaluate(t)


def trajectory_cost(traj: CubicTrajectory) -> float:
    return traj.cost()


# ---------------------------------------------------------------- building


def _chain(t0: float, p0: float, v0: float,
           pieces: Iterable[tuple[float, ArcKind, float, float]]) -> CubicTrajectory:
    """Assemble arcs from (duration, kind, a, b) pieces with continuous p, v."""
    arcs = []
    t, p, v = t0, p0, v0
    for h, kind, a, b in pieces:
        if h <= 1e-12:
            continue
        arc = Arc(t, t + h, kind, a, b, v, p)
        arcs.append(arc)
        p, v, _ = arc.state(t + h)
        t = t + h
    if not arcs:
        raise SingularSystem("empty trajectory")
    # pin the last end time exactly to avoid drift from summed durations
    return CubicTrajectory(tuple(arcs))


def solve_unconstrained(bc: BoundaryConditions) -> CubicTrajectory:
    """Single-arc optimum ignoring speed and acceleration limits."""
    T = bc.horizon
    if not T > MIN_HORIZON:
        raise SingularSystem(f"horizon {T} s is too short")
    fixed = bc.vf is not None
    A = np.array([
        [0.0, 0.0, 0.0, 1.0],
        [0.0, 0.0, 1.0, 0.0],
        [T**3 / 6.0, T**2 / 2.0, T, 1.0],
        [T**2 / 2.0, T, 1.0, 0.0] if fixed else [T, 1.0, 0.0, 0.0],
    ])
    rhs = np.array([bc.p0, bc.v0, bc.pf, bc.vf if fixed else 0.0])
    coef = np.linalg.solve(A, rhs)
    # one step of iterative refinement keeps the residual at round-off level
    coef += np.linalg.solve(A, rhs - A @ coef)
    a, b, c, d = (float(x) for x in coef)
    return CubicTrajectory((Arc(bc.t0, bc.tf, ArcKind.UNCONSTRAINED, a, b, c, d),))


def _violation(traj: CubicTrajectory, lim: Limits, tol: float = BOUND_TOL) -> ArcKind | None:
    """First bound violated by ``traj`` (control bounds reported first)."""
    worst_u = None
    worst_v = None
    for arc in traj.arcs:
        h = arc.duration
        for u in (arc.b, arc.a * h + arc.b):
            if u > lim.u_max + tol:
                worst_u = ArcKind.UMAX
            elif u < lim.u_min - tol:
                worst_u = ArcKind.UMIN
        vs = [arc.c, arc.state(arc.t_end)[1]]
        if arc.a != 0.0:
            tau = -arc.b / arc.a
            if 0.0 < tau < h:
                vs.append(arc.state(arc.t_start + tau)[1])
        for v in vs:
            if v > lim.v_max + tol:
                worst_v = ArcKind.VMAX
            elif v < lim.v_min - tol:
                worst_v = ArcKind.VMIN
    return worst_u or worst_v


# ----------------------------------------------------------- feasibility


def _distance_bounds(bc: BoundaryConditions, lim: Limits) -> tuple[float, float]:
    """Smallest and largest distance coverable in the horizon (bang profiles)."""
    T, v0, vf = bc.horizon, bc.v0, bc.vf
    up, dn = lim.u_max, -lim.u_min

    if vf is None:
        ta = (lim.v_max - v0) / up
        dmax = v0 * T + 0.5 * up * T * T if ta >= T else (
            0.5 * (v0 + lim.v_max) * ta + lim.v_max * (T - ta))
        td = (v0 - lim.v_min) / dn
        dmin = v0 * T - 0.5 * dn * T * T if td >= T else (
            0.5 * (v0 + lim.v_min) * td + lim.v_min * (T - td))
        return dmin, dmax

    need = (vf - v0) / up if vf >= v0 else (v0 - vf) / dn
    if need > T + 1e-12:
        raise Infeasible(f"speed change {v0:.3f}->{vf:.3f} needs {need:.3f} s > {T:.3f} s")

    ta, td = (lim.v_max - v0) / up, (lim.v_max - vf) / dn
    if ta + td <= T:
        dmax = 0.5 * (v0 + lim.v_max) * ta + lim.v_max * (T - ta - td) + 0.5 * (lim.v_max + vf) * td
    else:
        vp = (T + v0 / up + vf / dn) / (1.0 / up + 1.0 / dn)
        ta, td = (vp - v0) / up, (vp - vf) / dn
        dmax = 0.5 * (v0 + vp) * ta + 0.5 * (vp + vf) * td

    td, ta = (v0 - lim.v_min) / dn, (vf - lim.v_min) / up
    if ta + td <= T:
        dmin = 0.5 * (v0 + lim.v_min) * td + lim.v_min * (T - ta - td) + 0.5 * (lim.v_min + vf) * ta
    else:
        vt = (v0 / dn + vf / up - T) / (1.0 / up + 1.0 / dn)
        td, ta = (v0 - vt) / dn, (vf - vt) / up
        dmin = 0.5 * (v0 + vt) * td + 0.5 * (vt + vf) * ta
    return dmin, dmax


def _check_inputs(bc: BoundaryConditions, lim: Limits) -> None:
    if not bc.horizon > MIN_HORIZON:
        raise SingularSystem(f"horizon {bc.horizon} s is too short")
    if not bc.pf > bc.p0:
        raise InvalidInput("final position must lie ahead of the initial one")
    for name, v in (("v0", bc.v0), ("vf", bc.vf)):
        if v is not None and not (lim.v_min - BOUND_TOL <= v <= lim.v_max + BOUND_TOL):
            raise InvalidInput(f"{name}={v} outside [{lim.v_min}, {lim.v_max}]")


# ------------------------------------------------- control-saturated arcs


def _sat_moments(a: float, b: float, T: float, lo: float, hi: float):
    """Integrals over [0, T] of sat(a*tau + b) and its convex antiderivative.

    Returns (m0, m1, phi, hess) with m0 = int sat, m1 = int tau*sat,
    phi = int S(a*tau+b) where S' = sat, hess = Hessian of phi in (a, b).
    """
    cuts = [0.0, T]
    if a != 0.0:
        for level in (lo, hi):
            tau = (level - b) / a
            if 0.0 < tau < T:
                cuts.append(tau)
    cuts.sort()
    m0 = m1 = phi = 0.0
    hess = np.zeros((2, 2))
    for t1, t2 in zip(cuts[:-1], cuts[1:]):
        h = t2 - t1
        if h <= 0.0:
            continue
        s1, s2, s3 = h, (t2**2 - t1**2) / 2.0, (t2**3 - t1**3) / 3.0
        y = a * (t1 + t2) / 2.0 + b
        lin = a * s2 + b * s1  # int (a*tau + b)
        if y > hi or y < lo:
            U = hi if y > hi else lo
            m0 += U * s1
            m1 += U * s2
            phi += U * lin - 0.5 * U * U * s1
        else:
            m0 += lin
            m1 += a * s3 + b * s2
            phi += 0.5 * (a * a * s3 + 2.0 * a * b * s2 + b * b * s1)
            hess += np.array([[s3, s2], [s2, s1]])
    return m0, m1, phi, hess


def _saturated_pieces(a: float, b: float, T: float, lim: Limits):
    """Split u = sat(a*tau + b) on [0, T] into arc pieces."""
    cuts = [0.0, T]
    if a != 0.0:
        for level in (lim.u_min, lim.u_max):
            tau = (level - b) / a
            if 0.0 < tau < T:
                cuts.append(tau)
    cuts.sort()
    pieces = []
    for t1, t2 in zip(cuts[:-1], cuts[1:]):
        y = a * (t1 + t2) / 2.0 + b
        if y > lim.u_max:
            pieces.append((t2 - t1, ArcKind.UMAX, 0.0, lim.u_max))
        elif y < lim.u_min:
            pieces.append((t2 - t1, ArcKind.UMIN, 0.0, lim.u_min))
        else:
            pieces.append((t2 - t1, ArcKind.UNCONSTRAINED, a, a * t1 + b))
    return pieces


def _solve_saturated(bc: BoundaryConditions, lim: Limits, a0: float, b0: float) -> CubicTrajectory:
    T = bc.horizon
    gap = bc.distance - bc.v0 * T  # int (T - tau) u
    lo, hi = lim.u_min, lim.u_max

    if bc.vf is None:
        # transversality: u = sat(lam * (T - tau))
        def resid(lam):
            m0, m1, _, _ = _sat_moments(-lam, lam * T, T, lo, hi)
            return T * m0 - m1 - gap

        lam0 = 3.0 * gap / T**3
        span = max(abs(lam0), 1e-3)
        lo_b, hi_b = lam0 - span, lam0 + span
        for _ in range(200):
            if resid(lo_b) <= 0.0:
                break
            lo_b -= (span := span * 2.0)
        for _ in range(200):
            if resid(hi_b) >= 0.0:
                break
            hi_b += (span := span * 2.0)
        lam = brentq(resid, lo_b, hi_b, xtol=1e-15, rtol=4 * np.finfo(float).eps,
                     maxiter=MAX_ROOT_ITER)
        a, b = -lam, lam * T
    else:
        # Newton on the concave dual: find (a, b) with matching moments
        target = np.array([T * (bc.vf - bc.v0) - gap, bc.vf - bc.v0])
        x = np.array([a0, b0])

        def dual(x):
            m0, m1, phi, hess = _sat_moments(x[0], x[1], T, lo, hi)
            return phi - x @ target, np.array([m1, m0]) - target, hess

        f, g, H = dual(x)
        scale = 1.0 + np.abs(target).max()
        for _ in range(MAX_ROOT_ITER):
            if np.abs(g).max() < 1e-13 * scale:
                break
            reg = 1e-12 * (1.0 + np.trace(H))
            try:
                step = -np.linalg.solve(H + reg * np.eye(2), g)
            except np.linalg.LinAlgError:
                step = -g
            t = 1.0
            while t > 1e-12:
                fn, gn, Hn = dual(x + t * step)
                if fn <= f + 1e-4 * t * (g @ step) or np.abs(gn).max() < np.abs(g).max():
                    break
                t *= 0.5
            x = x + t * step
            f, g, H = fn, gn, Hn
        else:
            raise NoConvergence("control-saturated solve did not converge")
        if np.abs(g).max() > 1e-7 * scale:
            raise NoConvergence(f"control-saturated solve stalled, residual {g}")
        a, b = float(x[0]), float(x[1])

    return _chain(bc.t0, bc.p0, bc.v0, _saturated_pieces(a, b, T, lim))


# -------------------------------------------------- state-constrained arc


def _ramp(k: float, dv: float, ubound: float) -> tuple[float, float]:
    """Ramp where |u| grows as k*s and saturates at ``ubound`` until the speed
    has changed by ``dv`` >= 0.

    Returns the ramp duration and the integral over the ramp of the
    accumulated speed change (the distance lost relative to the bound speed).
    """
    if dv <= 0.0:
        return 0.0, 0.0
    s_sat = ubound / k
    if dv <= 0.5 * ubound * s_sat:
        L = math.sqrt(2.0 * dv / k)
        return L, k * L**3 / 6.0
    L = dv / ubound + 0.5 * s_sat
    r = L - s_sat
    return L, k * s_sat**3 / 6.0 + 0.5 * ubound * s_sat * r + 0.5 * ubound * r * r


def _solve_state_arc(bc: BoundaryConditions, lim: Limits, kind: ArcKind) -> CubicTrajectory:
    """Optimum with one arc riding a speed bound.

    Outside the arc the acceleration is a saturated linear function whose
    slope is the same on both sides; both ends join the arc with zero
    acceleration.  The single unknown slope is found by bracketed root
    finding on the distance balance.
    """
    T, D = bc.horizon, bc.distance
    upper = kind is ArcKind.VMAX
    vb = lim.v_max if upper else lim.v_min
    sign = 1.0 if upper else -1.0  # +1: ramps sit below the bound
    dv_l = sign * (vb - bc.v0)
    u_left = lim.u_max if upper else -lim.u_min
    u_right = -lim.u_min if upper else lim.u_max
    dv_r = 0.0 if bc.vf is None else sign * (vb - bc.vf)
    dv_l, dv_r = max(dv_l, 0.0), max(dv_r, 0.0)

    def ramps(k):
        L, A_l = _ramp(k, dv_l, u_left)
        R, A_r = _ramp(k, dv_r, u_right)
        return L, R, A_l + A_r

    def span_excess(logk):
        L, R, _ = ramps(math.exp(logk))
        return L + R - T

    def dist_resid(logk):
        _, _, A = ramps(math.exp(logk))
        return sign * (vb * T - sign * A - D)

    if dv_l == 0.0 and dv_r == 0.0:
        if abs(vb * T - D) > 1e-9 * max(1.0, D):
            raise NoConvergence("bound arc spans the horizon but distance does not match")
        return _chain(bc.t0, bc.p0, bc.v0, [(T, kind, 0.0, 0.0)])

    # bang limit of the ramps decides feasibility
    t_bang = dv_l / u_left + dv_r / u_right
    if t_bang >= T:
        raise Infeasible("no room for a bound arc within the horizon")
    lo_k, hi_k = math.log(1e-12), math.log(1e12)
    if span_excess(lo_k) < 0.0:
        lo_k_min = lo_k
    else:
        lo_k_min = brentq(span_excess, lo_k, hi_k, xtol=1e-14, maxiter=MAX_ROOT_ITER)
    r_lo, r_hi = dist_resid(lo_k_min), dist_resid(hi_k)
    if r_lo > 1e-9 * max(1.0, D):
        raise NoConvergence("bound arc is not consistent with the boundary data")
    if r_hi < 0.0:
        if r_hi < -1e-9 * max(1.0, D):
            raise Infeasible("distance beyond what the bound arc allows")
        logk = hi_k
    elif r_lo >= 0.0:
        logk = lo_k_min
    else:
        logk = brentq(dist_resid, lo_k_min, hi_k, xtol=1e-15,
                      rtol=4 * np.finfo(float).eps, maxiter=MAX_ROOT_ITER)
    k = math.exp(logk)
    L, R, _ = ramps(k)
    arc_len = max(T - L - R, 0.0)

    pieces = []
    sl = sign  # left ramp acceleration sign
    s_sat_l = u_left / k
    if L > s_sat_l:
        pieces.append((L - s_sat_l, ArcKind.UMAX if upper else ArcKind.UMIN, 0.0, sl * u_left))
        pieces.append((s_sat_l, ArcKind.UNCONSTRAINED, -sl * k, sl * k * s_sat_l))
    else:
        pieces.append((L, ArcKind.UNCONSTRAINED, -sl * k, sl * k * L))
    pieces.append((arc_len, kind, 0.0, 0.0))
    sr = -sign
    s_sat_r = u_right / k
    if R > s_sat_r:
        pieces.append((s_sat_r, ArcKind.UNCONSTRAINED, sr * k, 0.0))
        pieces.append((R - s_sat_r, ArcKind.UMIN if upper else ArcKind.UMAX, 0.0, sr * u_right))
    else:
        pieces.append((R, ArcKind.UNCONSTRAINED, sr * k, 0.0))
    traj = _chain(bc.t0, bc.p0, bc.v0, pieces)
    # speed on the bound arc is exactly the bound
    return CubicTrajectory(tuple(
        replace(arc, c=vb) if arc.kind is kind else arc for arc in traj.arcs
    ))


def piece_arcs(bc: BoundaryConditions, limits: Limits) -> CubicTrajectory:
    """Constrained optimum built by joining arcs at violated bounds.

    Starts from the unconstrained cubic.  A violated acceleration bound is
    replaced by saturated arcs; a violated speed bound then adds an arc on
    that bound.  The result is checked against every bound.
    """
    _check_inputs(bc, limits)
    dmin, dmax = _distance_bounds(bc, limits)
    tol = 1e-9 * max(1.0, bc.distance)
    if bc.distance > dmax + tol or bc.distance < dmin - tol:
        raise Infeasible(
            f"distance {bc.distance:.4f} m outside reachable [{dmin:.4f}, {dmax:.4f}] "
            f"in {bc.horizon:.4f} s"
        )
    traj = solve_unconstrained(bc)
    viol = _violation(traj, limits)
    if viol in (ArcKind.UMAX, ArcKind.UMIN):
        arc = traj.arcs[0]
        traj = _solve_saturated(bc, limits, arc.a, arc.b)
        viol = _violation(traj, limits)
    if viol in (ArcKind.VMAX, ArcKind.VMIN):
        traj = _solve_state_arc(bc, limits, viol)
        viol = _violation(traj, limits, tol=1e-7)
    if viol is not None:
        raise NoConvergence(f"arc piecing left a {viol.value} violation")
    return traj


# ------------------------------------------------------------------- export


def write_trajectory_csv(traj, dest, step: float = 0.1) -> str:
    """Write (t, p, v, u) samples to ``dest`` (path or file); returns the text."""
    if step <= 0:
        raise InvalidInput("sample step must be positive")
    n = int(math.floor((traj.t_end - traj.t_start) / step + 1e-9))
    ts = traj.t_start + step * np.arange(n + 1)
    if ts[-1] < traj.t_end - 1e-9:
        ts = np.append(ts, traj.t_end)
    p, v, u = traj.sample(ts)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["t", "p", "v", "u"])
    for row in zip(ts, p, v, u):
        writer.writerow([f"{x:.9g}" for x in row])
    text = buf.getvalue()
    if isinstance(dest, (str, Path)):
        Path(dest).write_text(text)
    elif dest is not None:
        dest.write(text)
    return text
