"""Discrete-time vehicle dynamics, demand generation and the simulation engine.

Vehicles follow a simplified safe-speed rule: each step the new speed is
the most permissive value allowed by bounded acceleration, the segment
free-flow speed, the gap to the leader at the start of the step, and the
stop line when the signal requires a stop.  Positions integrate the new
speed.  Intersection crossing happens within the step in which a vehicle
reaches the segment end, provided its movement shows green (or a yellow
it cannot stop for) and the receiving segment has space; otherwise it
waits at the line and spillback propagates upstream.

A simulation instance owns all of its mutable state, so independently
seeded instances can run concurrently without any sharing.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, NamedTuple, Sequence

import numpy as np

from .controllers import (
    DECIDE_BY_ALGORITHM,
    DecisionInput,
    approach_density,
    meters_to_miles,
    validate_algorithm,
)
from .delay import DelayLedger, on_approach_transition, segment_delay, update_waiting
from .network import (
    ALL_MOVEMENTS,
    Movement,
    Network,
    left_movement,
    shortest_path,
    through_movement,
    turn_of,
)
from .signals import ControllerTimer, PHASE_TABLE

# Aspect codes used in the hot loop.
A_GREEN, A_YELLOW, A_RED, A_FLASH = 0, 1, 2, 3
_ASPECT_CODE = {"G": A_GREEN, "Y": A_YELLOW, "R": A_RED}

# Phase -> movement -> aspect code, protected (exact table) and with
# permissive lefts (a left movement follows its parallel through).
_ASPECTS_PROTECTED: dict[int, dict[Movement, int]] = {
    phase: {m: _ASPECT_CODE[state] for m, state in row.items()}
    for phase, row in PHASE_TABLE.items()
}
_ASPECTS_PERMISSIVE: dict[int, dict[Movement, int]] = {
    phase: {
        m: _ASPECT_CODE[row[m.through if m.is_left else m]] for m in row
    }
    for phase, row in PHASE_TABLE.items()
}
_ASPECTS_FLASHING: dict[Movement, int] = {m: A_FLASH for m in Movement}

SCENARIO_CLASS_BY_ID = {
    1: "low", 2: "low", 3: "low",
    4: "moderate", 5: "moderate", 6: "moderate", 7: "moderate",
    8: "high", 9: "high", 10: "high", 11: "high",
}

# Distance to the stop line at which a stopping vehicle comes to rest.
STOP_LINE_MARGIN = 1.0

# Signal aspects are consulted within this distance of the stop line (or
# within braking range, whichever is longer); also the yield zone where a
# flashing signal caps speed at half free flow.
SIGNAL_LOOKAHEAD = 50.0


@dataclass(frozen=True)
class Flow:
    """Constant-rate demand between two peripheral segments."""

    origin: str
    destination: str
    vph: float
    depart_speed: float = 0.0

    def __post_init__(self) -> None:
        if self.vph < 0.0:
            raise ValueError(f"vph must be >= 0, got {self.vph}")


@dataclass(frozen=True)
class DemandScenario:
    """One of the eleven demand levels."""

    scenario_id: int
    flows: tuple[Flow, ...]

    def __post_init__(self) -> None:
        if self.scenario_id not in SCENARIO_CLASS_BY_ID:
            raise ValueError(f"scenario_id must be 1..11, got {self.scenario_id}")

    @property
    def demand_class(self) -> str:
        return SCENARIO_CLASS_BY_ID[self.scenario_id]


@dataclass(frozen=True)
class SimClock:
    """Fixed-step clock with warm-up and cool-down margins."""

    dt: float = 1.0
    horizon: float = 3600.0
    warmup: float = 600.0
    cooldown: float = 600.0

    def __post_init__(self) -> None:
        if self.dt <= 0.0:
            raise ValueError("dt must be positive")
        per_second = 1.0 / self.dt
        if abs(per_second - round(per_second)) > 1e-9:
            raise ValueError(f"dt ({self.dt}) must divide one second cleanly")
        if self.warmup < 0.0 or self.cooldown < 0.0:
            raise ValueError("warmup and cooldown must be >= 0")
        if self.horizon < self.warmup + self.cooldown:
            raise ValueError("horizon must cover warmup + cooldown")

    @property
    def n_steps(self) -> int:
        return round(self.horizon / self.dt)

    @property
    def window(self) -> tuple[float, float]:
        """Inclusive interval over which metrics accumulate."""
        return (self.warmup, self.horizon - self.cooldown)


@dataclass(frozen=True)
class VehicleParams:
    length: float = 5.0
    max_accel: float = 2.6
    max_decel: float = 4.5
    min_gap: float = 2.5
    depart_speed: float = 0.0

    def __post_init__(self) -> None:
        if min(self.length, self.max_accel, self.max_decel) <= 0.0:
            raise ValueError("length, max_accel and max_decel must be positive")
        if self.min_gap < 0.0 or self.depart_speed < 0.0:
            raise ValueError("min_gap and depart_speed must be >= 0")


class Departure(NamedTuple):
    time: float
    origin: str
    destination: str
    route: tuple[str, ...] | None


def stream_seed(seed: int, label: str) -> np.random.SeedSequence:
    """Derive an independent random stream from a root seed and a label.

    Adding new labelled streams never perturbs existing ones.
    """
    digest = hashlib.sha256(label.encode()).digest()
    return np.random.SeedSequence([seed, int.from_bytes(digest[:8], "big")])


def generate_departures(
    flow: Flow,
    horizon: float,
    seed: int,
    mode: str = "poisson",
    network: Network | None = None,
) -> list[Departure]:
    """Departure schedule for one flow over [0, horizon).

    Uniform mode spaces floor(vph * horizon / 3600) departures evenly
    from time 0; poisson mode draws exponential headways from the stream
    derived from (seed, flow), so identical inputs give identical
    schedules.
    """
    if horizon <= 0.0:
        raise ValueError("horizon must be positive")
    route = None
    if network is not None:
        route = shortest_path(network, flow.origin, flow.destination)
    if flow.vph == 0.0:
        return []
    times: list[float]
    if mode == "uniform":
        count = math.floor(flow.vph * horizon / 3600.0)
        spacing = 3600.0 / flow.vph
        times = [i * spacing for i in range(count)]
    elif mode == "poisson":
        rng = np.random.default_rng(
            stream_seed(seed, f"flow:{flow.origin}->{flow.destination}")
        )
        scale = 3600.0 / flow.vph
        times = []
        t = rng.exponential(scale)
        while t < horizon:
            times.append(t)
            t += rng.exponential(scale)
    else:
        raise ValueError(f"unknown departure mode {mode!r}")
    return [Departure(t, flow.origin, flow.destination, route) for t in times]


def scenario_catalog(
    base_vph: float,
    ladder_factor: float,
    od_pairs: Sequence[tuple[str, str]],
    depart_speed: float = 0.0,
) -> list[DemandScenario]:
    """The eleven-step demand ladder over a fixed set of OD pairs.

    Scenario k assigns base_vph * (1 + (k - 1) * ladder_factor) to every
    flow, so demand rises monotonically from scenario 1 to 11.
    """
    if base_vph <= 0.0 or ladder_factor <= 0.0:
        raise ValueError("base_vph and ladder_factor must be positive")
    scenarios = []
    for k in range(1, 12):
        vph = base_vph * (1.0 + (k - 1) * ladder_factor)
        flows = tuple(Flow(o, d, vph, depart_speed) for o, d in od_pairs)
        scenarios.append(DemandScenario(k, flows))
    return scenarios


class Vehicle:
    """Mutable per-vehicle state; lives inside exactly one lane list."""

    __slots__ = (
        "vid", "route", "route_index", "position", "speed", "length",
        "max_accel", "max_decel", "ledger", "entry_time", "depart_time",
        "turns", "stop_movements", "in_pocket", "moved_step",
    )

    def __init__(
        self,
        vid: str,
        route: tuple[str, ...],
        turns: tuple[str, ...],
        stop_movements: tuple[Movement, ...],
        params: VehicleParams,
        depart_time: float,
        depart_speed: float,
    ) -> None:
        self.vid = vid
        self.route = route
        self.route_index = 0
        self.position = params.length
        self.speed = depart_speed
        self.length = params.length
        self.max_accel = params.max_accel
        self.max_decel = params.max_decel
        self.ledger = DelayLedger()
        self.entry_time = depart_time
        self.depart_time = depart_time
        self.turns = turns
        self.stop_movements = stop_movements
        self.in_pocket = False
        self.moved_step = -1


class _SegmentState:
    """Runtime occupancy of one segment: through lanes plus a pocket."""

    __slots__ = (
        "seg_id", "length", "vff", "half_vff", "lane_count", "pocket_start",
        "to_node", "at_subject", "lanes", "pocket",
    )

    def __init__(self, seg, subject: str) -> None:
        self.seg_id = seg.id
        self.length = seg.length
        self.vff = seg.free_flow_speed
        self.half_vff = 0.5 * seg.free_flow_speed
        self.lane_count = seg.lane_count
        self.pocket_start = seg.pocket_start
        self.to_node = seg.to_node
        self.at_subject = seg.to_node == subject
        self.lanes: list[list[Vehicle]] = [[] for _ in range(seg.lane_count)]
        self.pocket: list[Vehicle] | None = [] if seg.has_pocket else None

    def vehicle_count(self) -> int:
        n = sum(len(lane) for lane in self.lanes)
        if self.pocket is not None:
            n += len(self.pocket)
        return n


class StepEvents(NamedTuple):
    inserted: list[str]
    arrived: list[str]
    pending: int


@dataclass
class SimulationResult:
    """Aggregated outcome of one simulation job."""

    algorithm: str
    seed: int
    scenario_id: int | None
    window: tuple[float, float]
    inserted: int = 0
    exited: int = 0
    deferred_insertions: int = 0
    mean_depart_delay: float = 0.0
    mean_control_delay: float = 0.0
    measured_traversals: int = 0
    control_delays: list[tuple[float, float]] = field(default_factory=list)
    movement_stopped_delays: dict[str, list[tuple[float, float]]] = field(default_factory=dict)
    error: str | None = None

    def movement_delay_values(self, movement: str) -> list[float]:
        return [v for _, v in self.movement_stopped_delays.get(movement, [])]

    def control_delay_values(self) -> list[float]:
        return [v for _, v in self.control_delays]

    def to_dict(self) -> dict:
        return {
            "algorithm": self.algorithm,
            "seed": self.seed,
            "scenario_id": self.scenario_id,
            "window": list(self.window),
            "inserted": self.inserted,
            "exited": self.exited,
            "deferred_insertions": self.deferred_insertions,
            "mean_depart_delay": self.mean_depart_delay,
            "mean_control_delay": self.mean_control_delay,
            "measured_traversals": self.measured_traversals,
            "control_delays": [[t, v] for t, v in self.control_delays],
            "movement_stopped_delays": {
                m: [[t, v] for t, v in rows]
                for m, rows in sorted(self.movement_stopped_delays.items())
            },
            "error": self.error,
        }


class _PendingVehicle(NamedTuple):
    depart_time: float
    flow_index: int
    vid: str
    route: tuple[str, ...]
    depart_speed: float


class Simulation:
    """One deterministic microsimulation run on an immutable network."""

    def __init__(
        self,
        network: Network,
        flows: Sequence[Flow] | None = None,
        *,
        schedule: Sequence[tuple[float, int, str, str, float]] | None = None,
        algorithm: str = "baseline",
        seed: int = 0,
        clock: SimClock | None = None,
        vehicle: VehicleParams | None = None,
        departure_mode: str = "poisson",
        carryover_turns: bool = True,
        scenario_id: int | None = None,
        fixed_split: float = 30.0,
        trajectory_sink: Callable[[str], None] | None = None,
    ) -> None:
        self.network = network
        self.algorithm = validate_algorithm(algorithm)
        self.seed = seed
        self.clock = clock or SimClock()
        self.params = vehicle or VehicleParams()
        self.carryover_turns = carryover_turns
        self.scenario_id = scenario_id
        self._traj_sink = trajectory_sink

        self.dt = self.clock.dt
        self._step_index = 0
        self.t = 0.0

        subject = network.subject_intersection
        self._states: dict[str, _SegmentState] = {
            seg_id: _SegmentState(network.segments[seg_id], subject)
            for seg_id in sorted(network.segments)
        }
        self._state_list = list(self._states.values())

        # Signals: the subject intersection runs the adaptive nine-phase
        # plan; every other intersection runs a fixed-time two-phase plan
        # with permissive lefts.
        self._timers: dict[str, ControllerTimer] = {}
        self._decision_sources: dict[str, Callable[[], int | None]] = {}
        self._node_list = sorted(network.nodes)
        fixed_steps = round(2 * fixed_split / self.dt)
        half_fixed = round(fixed_split / self.dt)
        for node in self._node_list:
            timer = ControllerTimer(self.dt)
            self._timers[node] = timer
            if node == subject:
                self._decision_sources[node] = self._subject_decision
            else:
                self._decision_sources[node] = self._make_fixed_source(fixed_steps, half_fixed)
        self._subject_timer = self._timers[subject]
        self._subject_node = subject
        self._subject_states = [
            self._states[s] for s in network.incoming(subject)
        ]
        self._displays: dict[str, dict[Movement, int]] = {}

        # Demand: explicit schedule or flows expanded per departure mode.
        self.flows: tuple[Flow, ...] = tuple(flows) if flows else ()
        rows: list[tuple[float, int, str, str, float]] = []
        if schedule is not None:
            if flows:
                raise ValueError("pass either flows or an explicit schedule, not both")
            rows = sorted(schedule, key=lambda r: (r[0], r[1]))
        else:
            for idx, flow in enumerate(self.flows):
                for dep in generate_departures(
                    flow, self.clock.horizon, seed, departure_mode
                ):
                    rows.append((dep.time, idx, flow.origin, flow.destination, flow.depart_speed))
            rows.sort(key=lambda r: (r[0], r[1]))

        self._route_meta: dict[tuple[str, str], tuple] = {}
        self._pending: dict[str, list[_PendingVehicle]] = {}
        self.departure_schedule: list[tuple[str, float, str, str, tuple[str, ...]]] = []
        counters: dict[int, int] = {}
        n_flows = 0
        for time, idx, origin, destination, depart_speed in rows:
            n_flows = max(n_flows, idx + 1)
            n = counters.get(idx, 0)
            counters[idx] = n + 1
            vid = f"f{idx}.{n}"
            route, turns, stop_movements = self._route_for(origin, destination)
            self.departure_schedule.append((vid, time, origin, destination, route))
            self._pending.setdefault(origin, []).append(
                _PendingVehicle(time, idx, vid, route, depart_speed)
            )
        for queue in self._pending.values():
            queue.reverse()  # pop from the end = earliest departure first
        self._pending_count = sum(len(q) for q in self._pending.values())
        self.flow_insertions: list[list[float]] = [[] for _ in range(max(n_flows, len(self.flows)))]

        # Counters and measurement records.
        self.inserted = 0
        self.exited = 0
        self._depart_delay_sum = 0.0
        self._control_delays: list[tuple[float, float]] = []
        self._movement_stops: dict[Movement, list[tuple[float, float]]] = {
            m: [] for m in ALL_MOVEMENTS
        }
        self.signal_log: list[tuple[float, str, int, str, float]] = []
        self.swap_events: list[dict] = []
        self._pending_algorithm: tuple[str, str] | None = None

    # -- demand plumbing ---------------------------------------------------

    def _route_for(self, origin: str, destination: str) -> tuple:
        key = (origin, destination)
        meta = self._route_meta.get(key)
        if meta is None:
            route = shortest_path(self.network, origin, destination)
            turns = []
            stop_movements = []
            for i, seg_id in enumerate(route):
                direction = self.network.segments[seg_id].movement.direction
                if i + 1 < len(route):
                    nxt = self.network.segments[route[i + 1]].movement.direction
                    turn = turn_of(direction, nxt)
                else:
                    turn = "exit"
                turns.append(turn)
                if turn == "left":
                    stop_movements.append(left_movement(direction))
                else:
                    stop_movements.append(through_movement(direction))
            meta = (route, tuple(turns), tuple(stop_movements))
            self._route_meta[key] = meta
        return meta

    def _make_fixed_source(self, period_steps: int, half_steps: int) -> Callable[[], int]:
        def fixed_decision() -> int:
            return 0 if (self._step_index % period_steps) < half_steps else 2

        return fixed_decision

    # -- adaptive control ----------------------------------------------------

    def set_algorithm(self, token: str, tag: str = "") -> None:
        """Schedule a controller swap at the next green-stage decision point."""
        self._pending_algorithm = (validate_algorithm(token), tag)

    def _subject_decision(self) -> int | None:
        if self._pending_algorithm is not None:
            token, tag = self._pending_algorithm
            self._pending_algorithm = None
            if token != self.algorithm:
                self.swap_events.append(
                    {
                        "time": self.t,
                        "from": self.algorithm,
                        "to": token,
                        "tag": tag,
                    }
                )
                self.algorithm = token
        decision = DECIDE_BY_ALGORITHM[self.algorithm](self._decision_input())
        if decision.out_of_order:  # pragma: no cover - guarded unreachable
            self._subject_timer.set_out_of_order()
            return None
        return decision.proposed_phase

    def _decision_input(self) -> DecisionInput:
        values: dict[Movement, float] = {}
        if self.algorithm == "baseline":
            for st in self._subject_states:
                seg = self.network.segments[st.seg_id]
                n_through = sum(len(lane) for lane in st.lanes)
                values[seg.movement] = approach_density(
                    n_through, st.lane_count, meters_to_miles(st.length)
                )
                left = seg.left_movement
                if st.pocket is not None:
                    values[left] = approach_density(
                        len(st.pocket), 1, meters_to_miles(st.length - st.pocket_start)
                    )
                else:
                    values[left] = 0.0
        else:
            use_carry = self.algorithm == "dt2"
            for st in self._subject_states:
                seg = self.network.segments[st.seg_id]
                total = 0.0
                count = 0
                for lane in st.lanes:
                    for veh in lane:
                        led = veh.ledger
                        d = led.accumulated - led.entry_accumulated
                        if use_carry:
                            d += led.carried_over
                        total += d
                        count += 1
                values[seg.movement] = total / count if count else 0.0
                total = 0.0
                count = 0
                if st.pocket:
                    for veh in st.pocket:
                        led = veh.ledger
                        d = led.accumulated - led.entry_accumulated
                        if use_carry:
                            d += led.carried_over
                        total += d
                        count += 1
                values[seg.left_movement] = total / count if count else 0.0
        return DecisionInput(values=values, intersection=self._subject_node, time=self.t)

    # -- stepping ------------------------------------------------------------

    def run(self) -> SimulationResult:
        self.run_until(self.clock.horizon)
        return self.result()

    def run_until(self, until: float) -> None:
        n_until = min(round(until / self.dt), self.clock.n_steps)
        while self._step_index < n_until:
            self.step()

    def step(self) -> StepEvents:
        k = self._step_index
        t = k * self.dt
        self.t = t
        inserted = self._insert_departures(t)
        if self._traj_sink is not None:
            self._log_trajectory(t)
        self._tick_signals(k, t)
        arrived = self._advance_vehicles(t)
        self._step_index = k + 1
        self.t = (k + 1) * self.dt
        return StepEvents(inserted, arrived, self._pending_count)

    # -- insertion -----------------------------------------------------------

    def _insert_departures(self, t: float) -> list[str]:
        inserted: list[str] = []
        params = self.params
        min_entry = params.length + params.min_gap
        for origin, queue in self._pending.items():
            st = self._states[origin]
            while queue and queue[-1].depart_time <= t + 1e-9:
                best_lane = None
                best_rear = -1.0
                for lane in st.lanes:
                    rear = lane[-1].position - lane[-1].length if lane else st.length + 1e9
                    if rear > best_rear:
                        best_rear = rear
                        best_lane = lane
                if best_rear < min_entry:
                    break  # blocked; retry next step, keep flow order
                pend = queue.pop()
                veh = Vehicle(
                    vid=pend.vid,
                    route=pend.route,
                    turns=self._turns_for(pend.route),
                    stop_movements=self._stops_for(pend.route),
                    params=params,
                    depart_time=t,
                    depart_speed=min(pend.depart_speed, st.vff),
                )
                best_lane.append(veh)
                self.inserted += 1
                self._pending_count -= 1
                self._depart_delay_sum += t - pend.depart_time
                self.flow_insertions[pend.flow_index].append(t)
                inserted.append(pend.vid)
        return inserted

    def _turns_for(self, route: tuple[str, ...]) -> tuple[str, ...]:
        return self._route_meta[(route[0], route[-1])][1]

    def _stops_for(self, route: tuple[str, ...]) -> tuple[Movement, ...]:
        return self._route_meta[(route[0], route[-1])][2]

    # -- signals ---------------------------------------------------------------

    def _tick_signals(self, k: int, t: float) -> None:
        displays = self._displays
        log = self.signal_log
        for node in self._node_list:
            timer = self._timers[node]
            phase = timer.tick(k, self._decision_sources[node])
            log.append((t, node, phase, timer.stage, timer.green_elapsed))
            if timer.status == "out_of_order":
                displays[node] = _ASPECTS_FLASHING
            elif node == self._subject_node:
                displays[node] = _ASPECTS_PROTECTED[phase]
            else:
                displays[node] = _ASPECTS_PERMISSIVE[phase]

    # -- vehicle dynamics --------------------------------------------------------

    def _advance_vehicles(self, t: float) -> list[str]:
        arrived: list[str] = []
        dt = self.dt
        t_out = t + dt
        min_gap = self.params.min_gap
        for st in self._state_list:
            if st.pocket:
                self._advance_lane(st, st.pocket, t_out, min_gap, dt, arrived)
            for lane in st.lanes:
                if lane:
                    self._advance_lane(st, lane, t_out, min_gap, dt, arrived)
        return arrived

    def _advance_lane(
        self,
        st: _SegmentState,
        lane: list[Vehicle],
        t_out: float,
        min_gap: float,
        dt: float,
        arrived: list[str],
    ) -> None:
        k = self._step_index
        vff = st.vff
        seg_len = st.length
        displays = self._displays.get(st.to_node)
        i = 0
        prev_rear = None
        while i < len(lane):
            veh = lane[i]
            if veh.moved_step == k:
                prev_rear = veh.position - veh.length
                i += 1
                continue
            veh.moved_step = k
            old_pos = veh.position
            old_speed = veh.speed
            v = old_speed + veh.max_accel * dt
            if v > vff:
                v = vff
            may_cross = False
            if prev_rear is not None:
                allowed = (prev_rear - old_pos - min_gap) / dt
                if v > allowed:
                    v = allowed if allowed > 0.0 else 0.0
            else:
                # Front vehicle: signal obedience and crossing rules.
                dist = seg_len - old_pos
                reach = v * dt + old_speed * old_speed / (2.0 * veh.max_decel) + 5.0
                if reach < SIGNAL_LOOKAHEAD:
                    reach = SIGNAL_LOOKAHEAD
                if displays is None:
                    may_cross = True  # exit stub, no junction ahead
                elif dist <= reach:
                    aspect = displays[veh.stop_movements[veh.route_index]]
                    if aspect == A_GREEN:
                        may_cross = True
                    elif aspect == A_FLASH:
                        may_cross = True
                        if v > st.half_vff:
                            v = st.half_vff
                    else:
                        stop = True
                        if aspect == A_YELLOW:
                            brake = old_speed * old_speed / (2.0 * veh.max_decel)
                            if brake > dist - STOP_LINE_MARGIN:
                                stop = False  # cannot stop comfortably; proceed
                                may_cross = True
                        if stop:
                            room = dist - STOP_LINE_MARGIN
                            if room <= 0.0:
                                v = 0.0
                            else:
                                allowed = room / dt
                                brake_v = math.sqrt(2.0 * veh.max_decel * room)
                                if brake_v < allowed:
                                    allowed = brake_v
                                if v > allowed:
                                    v = allowed

            # Left-turners queue into the pocket; a full pocket acts as a
            # virtual leader so the through lane backs up realistically.
            if (
                st.pocket is not None
                and not veh.in_pocket
                and veh.turns[veh.route_index] == "left"
            ):
                pocket = st.pocket
                if pocket:
                    tail_rear = pocket[-1].position - pocket[-1].length
                    if tail_rear > old_pos:
                        allowed = (tail_rear - old_pos - min_gap) / dt
                        if v > allowed:
                            v = allowed if allowed > 0.0 else 0.0

            new_pos = old_pos + v * dt

            if may_cross and new_pos >= seg_len - 1e-9:
                overflow = new_pos - seg_len
                if self._cross(veh, st, overflow, v, t_out, arrived):
                    lane.pop(i)
                    continue
                # Receiving segment blocked: hold at the line.
                new_pos = min(new_pos, seg_len - 0.01)
                if new_pos < old_pos:
                    new_pos = old_pos
                v = (new_pos - old_pos) / dt

            veh.position = new_pos
            veh.speed = v
            update_waiting(veh.ledger, v, dt)

            if (
                st.pocket is not None
                and not veh.in_pocket
                and lane is not st.pocket
                and veh.turns[veh.route_index] == "left"
                and new_pos >= st.pocket_start
            ):
                pocket = st.pocket
                tail_rear = pocket[-1].position - pocket[-1].length if pocket else st.length + 1e9
                if tail_rear - min_gap >= new_pos:
                    lane.pop(i)
                    pocket.append(veh)
                    veh.in_pocket = True
                    continue

            prev_rear = new_pos - veh.length
            i += 1

    def _cross(
        self,
        veh: Vehicle,
        st: _SegmentState,
        overflow: float,
        v: float,
        t_out: float,
        arrived: list[str],
    ) -> bool:
        """Move a vehicle past the end of its segment; False if blocked."""
        idx = veh.route_index
        turn = veh.turns[idx]
        entry_front = overflow

        if turn != "exit":
            next_st = self._states[veh.route[idx + 1]]
            best_lane = None
            best_rear = -1e18
            for lane in next_st.lanes:
                rear = lane[-1].position - lane[-1].length if lane else next_st.length + 1e9
                if rear > best_rear:
                    best_rear = rear
                    best_lane = lane
            limit = best_rear - self.params.min_gap
            if limit < 0.0:
                return False
            if entry_front > limit:
                entry_front = limit

        # Stopped delay incurred on the approach being left.
        ledger = veh.ledger
        if st.at_subject:
            stopped = ledger.accumulated - ledger.entry_accumulated
            self._movement_stops[veh.stop_movements[idx]].append((t_out, stopped))
            self._control_delays.append(
                (t_out, segment_delay(veh.entry_time, t_out, st.length, st.vff))
            )
        on_approach_transition(ledger)
        if not self.carryover_turns and turn != "straight":
            ledger.carried_over = 0.0

        if turn == "exit":
            self.exited += 1
            arrived.append(veh.vid)
            return True

        veh.route_index = idx + 1
        veh.position = entry_front
        veh.speed = min(v, next_st.vff)
        veh.entry_time = t_out
        veh.in_pocket = False
        update_waiting(ledger, veh.speed, self.dt)
        best_lane.append(veh)
        return True

    # -- logging and results -----------------------------------------------------

    def _log_trajectory(self, t: float) -> None:
        sink = self._traj_sink
        tr = repr(t)
        for st in self._state_list:
            seg_id = st.seg_id
            lanes = st.lanes if st.pocket is None else [st.pocket, *st.lanes]
            for lane in lanes:
                for veh in lane:
                    led = veh.ledger
                    sink(
                        f"{tr},{veh.vid},{seg_id},{veh.position!r},{veh.speed!r},"
                        f"{led.waiting!r},{led.accumulated!r}\n"
                    )

    def vehicles_on_network(self) -> int:
        return sum(st.vehicle_count() for st in self._state_list)

    def iter_vehicles(self) -> Iterable[Vehicle]:
        for st in self._state_list:
            if st.pocket:
                yield from st.pocket
            for lane in st.lanes:
                yield from lane

    def result(self) -> SimulationResult:
        lo, hi = self.clock.window
        control = [(t, v) for t, v in self._control_delays if lo <= t <= hi]
        movements = {
            m.value: [(t, v) for t, v in rows if lo <= t <= hi]
            for m, rows in self._movement_stops.items()
        }
        mean_control = (
            sum(v for _, v in control) / len(control) if control else 0.0
        )
        return SimulationResult(
            algorithm=self.algorithm,
            seed=self.seed,
            scenario_id=self.scenario_id,
            window=(lo, hi),
            inserted=self.inserted,
            exited=self.exited,
            deferred_insertions=self._pending_count,
            mean_depart_delay=self._depart_delay_sum / self.inserted if self.inserted else 0.0,
            mean_control_delay=mean_control,
            measured_traversals=len(control),
            control_delays=control,
            movement_stopped_delays=movements,
        )
