import io

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from numpy.polynomial import polynomial as P

from cav_energy.corridor import MPH, SafetyParams, VehicleState
from cav_energy.errors import (
    DisjointTimeSpans,
    Infeasible,
    OutOfOrderArrival,
    PredecessorUnassigned,
    SingularSystem,
    TimeOutOfRange,
    ZeroPredecessorSpeed,
)
from cav_energy.vd import (
    ArcKind,
    BoundaryConditions,
    CubicTrajectory,
    Limits,
    ZoneQueue,
    assign_entry_time,
    evaluate,
    piece_arcs,
    register_vehicle,
    schedule_crossing,
    solve_unconstrained,
    verify_rear_end,
    write_trajectory_csv,
)
from oracles import collocation_cost

V_MAX = 17.8816

# instances whose optimum uses every kind of constrained arc
CONSTRAINED_SUITE = [
    BoundaryConditions(0, 0, 15.0, 9.4, 160.0, 15.0),  # grazes v_max
    BoundaryConditions(0, 0, 11.3, 23.1, 57.0, 2.1),  # rides v_min
    BoundaryConditions(0, 0, 2.8, 14.1, 123.0, 2.7),  # u_max then u_min
    BoundaryConditions(0, 0, 8.1, 28.3, 78.0, 11.7),  # u_min, v_min, u_max
    BoundaryConditions(0, 0, 12.0, 32.1, 122.0, None),  # v_min to the end
    BoundaryConditions(0, 0, 2.9, 12.0, 99.0, 16.3),  # ends on u_max
    BoundaryConditions(0, 0, 16.5, 11.5, 127.0, 16.6),  # u_min then u_max
    BoundaryConditions(0, 0, 14.0, 34.7, 68.0, None),  # u_min into v_min
    BoundaryConditions(0, 0, 12.7, 10.1, 155.0, 8.9),  # u_max, v_max, u_min
    BoundaryConditions(0, 0, 6.3, 12.8, 184.0, None),  # u_max into v_max
]


def _boundary_residual(traj, bc):
    p0, v0, _ = traj.evaluate(bc.t0)
    pf, vf, uf = traj.evaluate(bc.tf)
    res = [p0 - bc.p0, v0 - bc.v0, pf - bc.pf]
    res.append(vf - bc.vf if bc.vf is not None else uf)
    return max(abs(r) for r in res)


def random_bc(rng, free=None):
    T = rng.uniform(2.0, 30.0)
    v0 = rng.uniform(1.0, V_MAX)
    free = rng.random() < 0.3 if free is None else free
    return BoundaryConditions(
        t0=rng.uniform(0, 100), p0=0.0, v0=v0, tf=None or 0.0, pf=rng.uniform(20, 200),
        vf=None if free else rng.uniform(1.0, V_MAX),
    ), T


def make_bc(rng, free=None):
    bc, T = random_bc(rng, free)
    return BoundaryConditions(bc.t0, bc.p0, bc.v0, bc.t0 + T, bc.pf, bc.vf)


# ------------------------------------------------------------ unconstrained


def test_constant_speed_solution():
    traj = solve_unconstrained(BoundaryConditions(0, 0, 10, 10, 100, 10))
    (arc,) = traj.arcs
    assert (arc.a, arc.b, arc.c, arc.d) == pytest.approx((0, 0, 10, 0), abs=1e-12)
    assert evaluate(traj, 5.0) == pytest.approx((50.0, 10.0, 0.0), abs=1e-12)


def test_free_terminal_speed_matches_linear_solve():
    bc = BoundaryConditions(0, 0, 5, 10, 100, None)
    traj = solve_unconstrained(bc)
    # closed form: u = lam*(T - t), lam = 3*(D - v0*T)/T^3
    lam = 3 * (100 - 50) / 1000
    arc = traj.arcs[0]
    assert arc.a == pytest.approx(-lam, abs=1e-12)
    assert arc.b == pytest.approx(lam * 10, abs=1e-12)
    assert traj.evaluate(10.0)[2] == pytest.approx(0.0, abs=1e-12)


def test_srz_style_boundary():
    vf = 18.6 * MPH
    traj = solve_unconstrained(BoundaryConditions(0, 0, 10, 10, 50, vf))
    assert traj.evaluate(10.0)[1] == pytest.approx(vf, abs=1e-9)
    assert traj.evaluate(10.0)[0] == pytest.approx(50.0, abs=1e-9)


def test_short_horizon_is_singular():
    with pytest.raises(SingularSystem):
        solve_unconstrained(BoundaryConditions(0, 0, 10, 1e-7, 1e-6, 10))


def test_boundary_residuals_random():
    rng = np.random.default_rng(7)
    for _ in range(100):
        bc = make_bc(rng)
        assert _boundary_residual(solve_unconstrained(bc), bc) <= 1e-9


def _poly_cost(coeffs, T):
    u = P.polyder(coeffs, 2)
    return 0.5 * P.polyval(T, P.polyint(P.polymul(u, u))) - 0.5 * P.polyval(0.0, P.polyint(P.polymul(u, u)))


def quintic_costs(bc, rng, n):
    """Costs of random quintics meeting the same boundary data (local time)."""
    T = bc.horizon
    arc = solve_unconstrained(bc).arcs[0]
    base = np.array([arc.d, arc.c, arc.b / 2, arc.a / 6, 0.0, 0.0])
    t2 = P.polypow([0, 1], 2)
    if bc.vf is None:
        # vanishes with its slope at 0, vanishes at T, slope at T free
        carrier = P.polymul(t2, [-T, 1])
        qs = rng.normal(size=(n, 3))
    else:
        carrier = P.polymul(t2, P.polypow([-T, 1], 2))
        qs = rng.normal(size=(n, 2))
    costs = []
    for q in qs:
        h = P.polymul(carrier, q * (10.0 / T**4))
        p = base.copy()
        p[: len(h)] += h
        costs.append(_poly_cost(p, T))
    return np.array(costs), _poly_cost(base, T)


def test_cubic_beats_random_quintics():
    rng = np.random.default_rng(11)
    checked = 0
    while checked < 20:
        bc = make_bc(rng)
        traj = solve_unconstrained(bc)
        if piece_arcs_is_cubic(bc):
            costs, base = quintic_costs(bc, rng, 1000)
            assert base == pytest.approx(traj.cost(), rel=1e-9, abs=1e-12)
            assert np.all(costs > base)
            checked += 1


def piece_arcs_is_cubic(bc):
    try:
        return len(piece_arcs(bc, Limits()).arcs) == 1
    except Infeasible:
        return False


# ------------------------------------------------------------- arc piecing


def test_inactive_constraints_give_unconstrained_solution(limits):
    bc = BoundaryConditions(0, 0, 12.0, 10.0, 130.0, 12.0)
    traj = piece_arcs(bc, limits)
    peak = max(traj.sample(np.linspace(0, 10, 1001))[1])
    assert peak < 0.95 * limits.v_max
    assert traj == solve_unconstrained(bc)


def test_vmax_graze_three_arcs(limits):
    bc = BoundaryConditions(0, 0, 15.0, 9.4, 160.0, 15.0)
    assert solve_unconstrained(bc).sample(np.linspace(0, 9.4, 101))[1].max() > limits.v_max
    traj = piece_arcs(bc, limits)
    assert [a.kind for a in traj.arcs] == [ArcKind.UNCONSTRAINED, ArcKind.VMAX, ArcKind.UNCONSTRAINED]
    for t in traj.junctions():
        left = traj.arcs[traj._arc_index(t) - 1].state(t)
        right = traj.evaluate(t)
        assert left == pytest.approx(right, abs=1e-9)
        assert right[2] == pytest.approx(0.0, abs=1e-9)
    oracle, _ = collocation_cost(bc, limits)
    assert traj.cost() == pytest.approx(oracle, rel=1e-3)


def test_leading_umax_arc(limits):
    bc = BoundaryConditions(0, 0, 2.9, 15.9, 176.0, None)
    assert solve_unconstrained(bc).arcs[0].b > limits.u_max
    traj = piece_arcs(bc, limits)
    assert traj.arcs[0].kind is ArcKind.UMAX
    assert traj.evaluate(0.0)[2] == limits.u_max
    oracle, _ = collocation_cost(bc, limits)
    assert traj.cost() == pytest.approx(oracle, rel=1e-3)


@pytest.mark.parametrize("bc", CONSTRAINED_SUITE, ids=range(len(CONSTRAINED_SUITE)))
def test_constrained_suite_matches_collocation(bc, limits):
    traj = piece_arcs(bc, limits)
    assert len(traj.arcs) > 1
    oracle, _ = collocation_cost(bc, limits)
    assert abs(traj.cost() - oracle) <= 1e-3 * oracle
    assert _boundary_residual(traj, bc) < 1e-7


def test_infeasible_horizon(limits):
    with pytest.raises(Infeasible):
        piece_arcs(BoundaryConditions(0, 0, 5.0, 3.0, 100.0, 10.0), limits)


@settings(max_examples=60, deadline=None)
@given(
    v0=st.floats(1.0, V_MAX), T=st.floats(2.0, 40.0), D=st.floats(10.0, 250.0),
    vf=st.one_of(st.none(), st.floats(1.0, V_MAX)),
)
def test_piece_arcs_invariants(v0, T, D, vf):
    lim = Limits()
    bc = BoundaryConditions(0.0, 0.0, v0, T, D, vf)
    try:
        traj = piece_arcs(bc, lim)
    except Infeasible:
        return
    # arcs tile the horizon
    assert traj.t0 == 0.0 and traj.tf == pytest.approx(T, abs=1e-9)
    for a, b in zip(traj.arcs[:-1], traj.arcs[1:]):
        assert a.t_end == b.t_start
        assert a.state(a.t_end)[:2] == pytest.approx(b.state(b.t_start)[:2], abs=1e-9)
    ts = np.linspace(0, traj.tf, 2001)
    p, v, u = traj.sample(ts)
    assert v.min() >= lim.v_min - 1e-6 and v.max() <= lim.v_max + 1e-6
    assert u.min() >= lim.u_min - 1e-9 and u.max() <= lim.u_max + 1e-9
    assert _boundary_residual(traj, bc) < 1e-6


def test_evaluate_out_of_range():
    traj = solve_unconstrained(BoundaryConditions(0, 0, 10, 10, 100, 10))
    assert evaluate(traj, 0.0) == pytest.approx((0.0, 10.0, 0.0))
    with pytest.raises(TimeOutOfRange):
        evaluate(traj, 10.5)


def test_csv_export():
    traj = solve_unconstrained(BoundaryConditions(0, 0, 10, 10, 100, 10))
    buf = io.StringIO()
    text = write_trajectory_csv(traj, buf, step=0.5)
    lines = text.strip().splitlines()
    assert lines[0] == "t,p,v,u" and len(lines) == 22
    assert lines[-1].split(",")[:2] == ["10", "100"]


# ----------------------------------------------------------- rear-end check


def _constant(p0, v, t0=0.0, tf=10.0):
    return CubicTrajectory(solve_unconstrained(BoundaryConditions(t0, 0, v, tf, v * (tf - t0), v)).arcs).shifted(dp=p0)


def test_offset_profiles_margin(safety):
    rep = verify_rear_end(_constant(20.0, 10.0), _constant(0.0, 10.0), safety, 0.1)
    assert rep.ok and rep.min_margin == pytest.approx(6.0, abs=1e-9)


def test_standstill_equality_passes(safety):
    rep = verify_rear_end(_standing(2.0), _standing(0.0), safety, 0.1)
    assert rep.ok and rep.min_margin == pytest.approx(0.0, abs=1e-12)


def _standing(p):
    from cav_energy.vd import Arc

    return CubicTrajectory((Arc(0.0, 10.0, ArcKind.VMIN, 0.0, 0.0, 0.0, p),))


def test_violation_reports_first_time(safety):
    rep = verify_rear_end(_constant(10.0, 10.0, 2.0, 8.0), _constant(0.0, 10.0), safety, 0.1)
    assert not rep.ok
    assert rep.first_violation == pytest.approx(2.0)
    assert rep.min_margin < 0
    with pytest.raises(DisjointTimeSpans):
        verify_rear_end(_constant(0, 10, 20, 30), _constant(0, 10), safety, 0.1)


# --------------------------------------------------------------- the queue


def _veh(i, v):
    return VehicleState(id=i, v=v)


def test_register_fifo():
    q = ZoneQueue(zone=1)
    q, ident = register_vehicle(q, _veh(7, 10), 10.0)
    assert ident == 1 and q.count == 1
    q, ident = register_vehicle(q, _veh(8, 10), 10.0)
    assert ident == 2
    with pytest.raises(OutOfOrderArrival):
        register_vehicle(q, _veh(9, 10), 9.9)


def test_entry_time_head_of_queue(corridor, safety, limits):
    zone = corridor.zone(1)
    q = ZoneQueue(zone=1)
    register_vehicle(q, _veh(1, V_MAX), 0.0)
    tz = assign_entry_time(q, _veh(1, V_MAX), zone, safety, limits)
    assert tz == 100.0 / V_MAX
    assert tz == pytest.approx(5.5923, abs=1e-4)


def test_entry_time_with_predecessor(corridor, safety, limits):
    zone = corridor.zone(1)
    q = ZoneQueue(zone=1)
    register_vehicle(q, _veh(1, 10.0), 0.0)
    q.entries[0].tz, q.entries[0].v_at_tz = 5.0, 10.0
    register_vehicle(q, _veh(2, 10.0), 0.5)
    tz = assign_entry_time(q, _veh(2, 10.0), zone, safety, limits)
    # scripted evaluation of the formula
    headway = 5.0 + (2.0 + 1.2 * 10.0) / 10.0
    expected = max(min(headway, 0.5 + 100.0 / 1.0), 0.5 + 100.0 / 10.0, 0.5 + 100.0 / V_MAX)
    assert headway == pytest.approx(6.4)
    assert tz == expected == 10.5


def test_entry_time_errors(corridor, safety, limits):
    zone = corridor.zone(1)
    q = ZoneQueue(zone=1)
    register_vehicle(q, _veh(1, 10.0), 0.0)
    register_vehicle(q, _veh(2, 10.0), 1.0)
    with pytest.raises(PredecessorUnassigned):
        assign_entry_time(q, _veh(2, 10.0), zone, safety, limits)
    q.entries[0].tz, q.entries[0].v_at_tz = 5.0, 0.0
    with pytest.raises(ZeroPredecessorSpeed):
        assign_entry_time(q, _veh(2, 10.0), zone, safety, limits)


def test_free_flow_offset_scales_with_length(corridor, safety, limits):
    from dataclasses import replace

    offsets = []
    for L in (100.0, 200.0):
        zone = replace(corridor.zone(1), cz_length=L)
        q = ZoneQueue(zone=1)
        register_vehicle(q, _veh(1, V_MAX), 0.0)
        offsets.append(assign_entry_time(q, _veh(1, V_MAX), zone, safety, limits))
    assert offsets[1] == 2 * offsets[0]


def test_entry_times_monotone_over_seeded_arrivals(corridor, safety, limits):
    rng = np.random.default_rng(3)
    zone = corridor.zone(3)
    q = ZoneQueue(zone=3)
    t = 0.0
    tzs = []
    for i in range(1000):
        t += rng.exponential(3.0)
        v = rng.uniform(limits.v_min, limits.v_max)
        register_vehicle(q, _veh(i, v), t)
        tzs.append(assign_entry_time(q, _veh(i, v), zone, safety, limits))
    assert np.all(np.diff(tzs) >= 0)


def test_scheduled_crossings_keep_rear_end_margin(corridor, safety, limits):
    rng = np.random.default_rng(5)
    zone = corridor.zone(1)
    q = ZoneQueue(zone=1)
    t, prev = 0.0, None
    tzs = []
    for i in range(40):
        t += rng.exponential(2.5)
        v = rng.uniform(8.0, limits.v_max)
        ahead = [prev.with_cruise(t + 200.0)] if prev is not None else []
        # arrivals respect the safe distance at the control-zone entry and,
        # as upstream car-following would, do not close fast on a near leader
        while ahead and ahead[0].sample([t])[0][0] < safety.gamma + safety.rho * v:
            t += 0.1
        if ahead:
            p_lead, v_lead, _ = ahead[0].sample([t])
            if p_lead[0] < 60.0:
                v = min(v, float(v_lead[0]))
        register_vehicle(q, _veh(i, v), t)
        plan = schedule_crossing(q, _veh(i, v), zone, safety, limits, ahead)
        if prev is not None:
            rep = verify_rear_end(prev.with_cruise(plan.tz), plan.trajectory, safety, 0.05)
            assert rep.min_margin >= -1e-9
        tzs.append(plan.tz)
        prev = plan.trajectory
    assert np.all(np.diff(tzs) >= 0)
