"""Demand generation and engine dynamics."""

import hashlib

import numpy as np
import pytest

from signaltwin.network import build_grid
from signaltwin.traffic import (
    Departure,
    DemandScenario,
    Flow,
    SimClock,
    Simulation,
    VehicleParams,
    generate_departures,
    scenario_catalog,
    stream_seed,
)


@pytest.fixture(scope="module")
def grid3():
    return build_grid(3, 3, 500.0, 2, 80.0, 13.89)


# -- departures ----------------------------------------------------------


def test_uniform_departures_spacing():
    flow = Flow("a", "b", 360.0)
    deps = generate_departures(flow, 600.0, seed=1, mode="uniform")
    assert len(deps) == 60
    times = [d.time for d in deps]
    assert times == [i * 10.0 for i in range(60)]


def test_zero_demand_empty():
    assert generate_departures(Flow("a", "b", 0.0), 600.0, seed=1) == []


def test_poisson_departures_replay_oracle():
    # Independent replay of the derived stream pins the exact schedule.
    flow = Flow("a", "b", 720.0)
    deps = generate_departures(flow, 3600.0, seed=7, mode="poisson")
    assert 620 <= len(deps) <= 820

    digest = hashlib.sha256("flow:a->b".encode()).digest()
    rng = np.random.default_rng(
        np.random.SeedSequence([7, int.from_bytes(digest[:8], "big")])
    )
    expected = []
    t = rng.exponential(3600.0 / 720.0)
    while t < 3600.0:
        expected.append(t)
        t += rng.exponential(3600.0 / 720.0)
    assert [d.time for d in deps] == expected


def test_departures_deterministic_per_flow_and_seed():
    flow = Flow("o1", "d1", 200.0)
    a = generate_departures(flow, 1800.0, seed=5)
    b = generate_departures(flow, 1800.0, seed=5)
    c = generate_departures(flow, 1800.0, seed=6)
    other = generate_departures(Flow("o2", "d2", 200.0), 1800.0, seed=5)
    assert a == b
    assert [d.time for d in a] != [d.time for d in c]
    assert [d.time for d in a] != [d.time for d in other]


def test_departures_carry_route(grid3):
    flow = Flow("bw-1:n1-0", "n1-2:be-1", 100.0)
    deps = generate_departures(flow, 600.0, seed=1, network=grid3)
    assert deps[0].route == ("bw-1:n1-0", "n1-0:n1-1", "n1-1:n1-2", "n1-2:be-1")


def test_generate_departures_validation():
    with pytest.raises(ValueError):
        generate_departures(Flow("a", "b", 10.0), 0.0, seed=1)
    with pytest.raises(ValueError):
        generate_departures(Flow("a", "b", 10.0), 100.0, seed=1, mode="weird")
    with pytest.raises(ValueError):
        Flow("a", "b", -1.0)


# -- scenario catalog ------------------------------------------------------


def test_scenario_ladder_arithmetic():
    cat = scenario_catalog(100.0, 0.5, [("a", "b")])
    assert cat[0].flows[0].vph == 100.0
    assert cat[10].flows[0].vph == 600.0
    assert len(cat) == 11


def test_scenario_class_mapping():
    cat = scenario_catalog(100.0, 0.5, [("a", "b")])
    assert cat[4].demand_class == "moderate"
    assert [cat[k - 1].demand_class for k in (1, 2, 3)] == ["low"] * 3
    assert [cat[k - 1].demand_class for k in (8, 9, 10, 11)] == ["high"] * 4


def test_scenario_monotone_ordering():
    cat = scenario_catalog(40.0, 0.25, [("a", "b"), ("c", "d")])
    for prev, nxt in zip(cat, cat[1:]):
        assert all(p.vph < n.vph for p, n in zip(prev.flows, nxt.flows))


def test_scenario_validation():
    with pytest.raises(ValueError):
        scenario_catalog(0.0, 0.5, [("a", "b")])
    with pytest.raises(ValueError):
        DemandScenario(12, ())


# -- engine dynamics -------------------------------------------------------


def test_single_vehicle_kinematics_oracle():
    # One vehicle on an empty approach with permanent green: traversal
    # time equals the accelerate-then-cruise closed form within one step.
    net = build_grid(1, 1, 500.0, 1, 50.0, 13.89)
    # South->north through keeps phase 0 green for the whole run.
    flow = Flow("bs-0:n0-0", "n0-0:bn-0", 1.0)
    schedule = [(0.0, 0, flow.origin, flow.destination, 0.0)]
    sim = Simulation(
        net,
        schedule=schedule,
        algorithm="baseline",
        clock=SimClock(dt=1.0, horizon=120.0, warmup=0.0, cooldown=1.0),
    )
    params = VehicleParams()
    sim.run()
    assert len(sim._control_delays) == 1
    t_out, measured_delay = sim._control_delays[0]

    # Closed-form oracle for distance from the insertion front position
    # to the stop line, with bounded acceleration and a speed cap.
    distance = 500.0 - params.length
    v, a = 13.89, params.max_accel
    t_accel = v / a
    d_accel = v * v / (2 * a)
    closed_form = t_accel + (distance - d_accel) / v
    assert abs(t_out - closed_form) <= 1.0
    assert measured_delay == pytest.approx(t_out - 500.0 / 13.89)


def test_speed_never_exceeds_free_flow():
    net = build_grid(1, 1, 400.0, 1, 50.0, 13.89)
    schedule = [(0.0, 0, "bs-0:n0-0", "n0-0:bn-0", 0.0)]
    sim = Simulation(
        net, schedule=schedule,
        clock=SimClock(dt=1.0, horizon=60.0, warmup=0.0, cooldown=0.0),
    )
    peak = 0.0
    for _ in range(60):
        sim.step()
        for veh in sim.iter_vehicles():
            assert 0.0 <= veh.speed <= 13.89 + 1e-12
            peak = max(peak, veh.speed)
    assert peak == pytest.approx(13.89)


def test_red_stop_keeps_vehicle_before_line():
    # A continuous NS stream holds the green, so an eastbound vehicle
    # faces red and must come to rest short of the stop line.
    net = build_grid(1, 1, 300.0, 1, 50.0, 13.89)
    schedule = [(float(k), 0, "bs-0:n0-0", "n0-0:bn-0", 13.89) for k in range(0, 120, 2)]
    schedule.append((0.0, 1, "bw-0:n0-0", "n0-0:be-0", 0.0))
    sim = Simulation(
        net, schedule=schedule, algorithm="baseline",
        clock=SimClock(dt=1.0, horizon=120.0, warmup=0.0, cooldown=0.0),
    )
    sim.run_until(100.0)
    eastbound = [v for v in sim.iter_vehicles() if v.vid == "f1.0"]
    assert eastbound, "vehicle left the network under red"
    veh = eastbound[0]
    assert veh.speed == 0.0
    assert veh.position < 300.0


def test_conservation_every_step(grid3):
    flows = tuple(Flow(o, d, 150.0) for o, d in grid3.straight_od_pairs())
    sim = Simulation(
        grid3, flows=flows, seed=3,
        clock=SimClock(dt=1.0, horizon=400.0, warmup=0.0, cooldown=0.0),
    )
    for _ in range(400):
        sim.step()
        assert sim.inserted - sim.exited == sim.vehicles_on_network()


def test_no_collisions_under_congestion(grid3):
    params = VehicleParams()
    flows = tuple(Flow(o, d, 500.0) for o, d in grid3.straight_od_pairs())
    sim = Simulation(
        grid3, flows=flows, seed=1,
        clock=SimClock(dt=1.0, horizon=300.0, warmup=0.0, cooldown=0.0),
    )
    for _ in range(300):
        sim.step()
        for state in sim._state_list:
            lanes = list(state.lanes)
            if state.pocket is not None:
                lanes.append(state.pocket)
            for lane in lanes:
                for leader, follower in zip(lane, lane[1:]):
                    gap = (leader.position - leader.length) - follower.position
                    assert gap >= params.min_gap - 1e-9


def test_determinism_bit_identical_logs(grid3):
    flows = tuple(Flow(o, d, 200.0) for o, d in grid3.straight_od_pairs())

    def run():
        rows = []
        sim = Simulation(
            grid3, flows=flows, algorithm="dt1", seed=11,
            clock=SimClock(dt=1.0, horizon=600.0, warmup=0.0, cooldown=0.0),
            trajectory_sink=rows.append,
        )
        result = sim.run()
        return rows, list(sim.signal_log), result.to_dict()

    rows_a, signals_a, result_a = run()
    rows_b, signals_b, result_b = run()
    assert rows_a == rows_b
    assert signals_a == signals_b
    assert result_a == result_b


def test_metrics_window_excludes_warmup_and_cooldown(grid3):
    flows = tuple(Flow(o, d, 250.0) for o, d in grid3.straight_od_pairs())
    clock = SimClock(dt=1.0, horizon=3600.0, warmup=600.0, cooldown=600.0)
    assert clock.window == (600.0, 3000.0)
    sim = Simulation(grid3, flows=flows, seed=2, clock=clock)
    result = sim.run()
    assert result.window == (600.0, 3000.0)
    assert all(600.0 <= t <= 3000.0 for t, _ in result.control_delays)
    for rows in result.movement_stopped_delays.values():
        assert all(600.0 <= t <= 3000.0 for t, _ in rows)
    # Raw engine records extend outside the window.
    assert any(t < 600.0 or t > 3000.0 for t, _ in sim._control_delays)


def test_deferred_insertion_retries():
    # A short single-lane entry at an absurd rate forces deferrals.
    net = build_grid(1, 1, 120.0, 1, 30.0, 13.89)
    flows = (Flow("bw-0:n0-0", "n0-0:be-0", 7200.0),)
    sim = Simulation(
        net, flows=flows, seed=4,
        clock=SimClock(dt=1.0, horizon=120.0, warmup=0.0, cooldown=0.0),
    )
    deferred_seen = False
    for _ in range(120):
        events = sim.step()
        due = sum(
            1 for q in sim._pending.values() for p in q if p.depart_time <= sim.t - 1.0
        )
        if due:
            deferred_seen = True
        assert sim.inserted - sim.exited == sim.vehicles_on_network()
    assert deferred_seen
    result = sim.result()
    assert result.mean_depart_delay > 0.0


def test_left_turners_use_pocket(grid3):
    # A left-turning route through the subject must commit to the pocket.
    flow = Flow("bw-1:n1-0", "n2-1:bn-1", 300.0)
    sim = Simulation(
        grid3, flows=(flow,), algorithm="dt1", seed=5,
        clock=SimClock(dt=1.0, horizon=600.0, warmup=0.0, cooldown=0.0),
    )
    pocket_seen = False
    for _ in range(600):
        sim.step()
        state = sim._states["n1-0:n1-1"]
        if state.pocket:
            pocket_seen = True
            for veh in state.pocket:
                assert veh.in_pocket
                assert veh.position >= state.pocket_start - 1e-9
    assert pocket_seen
    result = sim.result()
    assert result.exited > 0 or sim.vehicles_on_network() > 0


def test_step_events_report_insertions_and_arrivals(grid3):
    flows = (Flow("bw-1:n1-0", "n1-2:be-1", 600.0),)
    sim = Simulation(
        grid3, flows=flows, seed=6,
        clock=SimClock(dt=1.0, horizon=400.0, warmup=0.0, cooldown=0.0),
    )
    inserted, arrived = [], []
    for _ in range(400):
        events = sim.step()
        inserted += events.inserted
        arrived += events.arrived
    assert len(inserted) == sim.inserted
    assert len(arrived) == sim.exited
    assert arrived and set(arrived) <= set(inserted)


def test_spillback_blocks_crossing_on_green():
    # Saturate the short middle segment of a 1x2 grid: upstream vehicles
    # must hold at the line even on green, without ever overlapping.
    net = build_grid(1, 2, 150.0, 1, 40.0, 13.89)
    flows = (
        Flow("bw-0:n0-0", "n0-1:be-0", 2400.0),
        Flow("bs-1:n0-1", "n0-1:bn-1", 1600.0),  # steals the subject's green
    )
    sim = Simulation(
        net, flows=flows, algorithm="baseline", seed=8,
        clock=SimClock(dt=1.0, horizon=300.0, warmup=0.0, cooldown=0.0),
    )
    blocked_on_green = False
    for _ in range(300):
        sim.step()
        assert sim.inserted - sim.exited == sim.vehicles_on_network()
        entry = sim._states["bw-0:n0-0"]
        display = sim._displays.get("n0-0")
        if display is None:
            continue
        from signaltwin.network import Movement
        from signaltwin.traffic import A_GREEN

        lane = entry.lanes[0]
        if lane and display[Movement.EBT] == A_GREEN:
            front = lane[0]
            if front.position > entry.length - 2.0 and front.speed == 0.0:
                blocked_on_green = True
    assert blocked_on_green, "expected green-blocked spillback at the entry"


def test_engine_runs_with_fractional_dt(grid3):
    flows = (Flow("bw-1:n1-0", "n1-2:be-1", 300.0),)
    sim = Simulation(
        grid3, flows=flows, algorithm="dt1", seed=2,
        clock=SimClock(dt=0.5, horizon=300.0, warmup=50.0, cooldown=50.0),
    )
    result = sim.run()
    assert result.exited > 0
    assert sim.inserted - sim.exited == sim.vehicles_on_network()
    # Subject transitions stay exact: yellows 2 s = 4 steps of 0.5 s.
    rows = [
        (t, phase, stage)
        for t, node, phase, stage, _ in sim.signal_log
        if node == "n1-1"
    ]
    runs = []
    for t, phase, stage in rows:
        if runs and runs[-1][1:] == [phase, stage]:
            runs[-1][0] += 1
        else:
            runs.append([1, phase, stage])
    yellow_lengths = {n for n, _, stage in runs[:-1] if stage == "yellow"}
    red_lengths = {n for n, _, stage in runs[:-1] if stage == "all_red"}
    assert yellow_lengths <= {4}
    assert red_lengths <= {2}


def test_out_of_order_signal_crossed_at_half_speed():
    # A malfunctioning signal flashes yellow; vehicles yield at half the
    # free-flow speed near the junction but keep moving through it.
    net = build_grid(1, 1, 400.0, 1, 50.0, 13.89)
    schedule = [(0.0, 0, "bw-0:n0-0", "n0-0:be-0", 0.0)]
    sim = Simulation(
        net, schedule=schedule,
        clock=SimClock(dt=1.0, horizon=120.0, warmup=0.0, cooldown=0.0),
    )
    sim._subject_timer.set_out_of_order()
    # Steps that begin inside the 50 m yield zone are speed-capped; a
    # vehicle whose new position is past 365 m must have started > 350 m.
    near_junction_speeds = []
    for _ in range(120):
        sim.step()
        for veh in sim.iter_vehicles():
            if veh.route_index == 0 and veh.position > 365.0:
                near_junction_speeds.append(veh.speed)
    assert sim.exited == 1, "vehicle should clear the flashing junction"
    assert near_junction_speeds
    assert all(v <= 13.89 / 2 + 1e-9 for v in near_junction_speeds)


def test_clock_validation():
    with pytest.raises(ValueError):
        SimClock(dt=0.3)
    with pytest.raises(ValueError):
        SimClock(dt=1.0, horizon=100.0, warmup=80.0, cooldown=40.0)
    with pytest.raises(ValueError):
        SimClock(dt=-1.0)


def test_simulation_rejects_flow_and_schedule_mix(grid3):
    with pytest.raises(ValueError):
        Simulation(
            grid3,
            flows=(Flow("bw-1:n1-0", "n1-2:be-1", 10.0),),
            schedule=[(0.0, 0, "bw-1:n1-0", "n1-2:be-1", 0.0)],
        )
