"""Candidate-demand forecasting, parallel evaluation and live selection.

On a fixed cadence the live simulation's recent demand is estimated,
scaled into a small set of candidate forecasts, and every candidate is
simulated once per control algorithm in mutually independent, seeded
jobs.  The candidate closest to the measured demand decides which job
scores count, and the best-scoring algorithm becomes the live controller
at the next green-stage decision point.  Everything is reproducible from
(network, demand program, settings, seed).
"""

from __future__ import annotations

import hashlib
import math
from bisect import bisect_left
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Callable, Sequence

from .controllers import ALGORITHMS
from .metrics import los_from_control_delay
from .network import Network
from .traffic import (
    Flow,
    SimClock,
    Simulation,
    SimulationResult,
    VehicleParams,
    generate_departures,
)

# The nine descriptive dimensions recorded in every run manifest:
# physical entities, digital shadow, data, models, simulation, traffic
# demand prediction, control algorithms, applications, and the
# communication gateway.
TWIN_DIMENSION_KEYS = ("PE", "DS", "DD", "MO", "SI", "TP", "CA", "AP", "CG")


def default_dimensions() -> dict[str, str]:
    return {
        "PE": "live road network state owned by signaltwin.traffic.Simulation",
        "DS": "per-step vehicle and signal state mirrored into logs and the demand estimator",
        "DD": "run artifacts: departures.csv, trajectory.csv, signals.csv, summary.json",
        "MO": "signaltwin.traffic safe-speed vehicle dynamics and demand models",
        "SI": "signaltwin.twin.run_parallel candidate simulations",
        "TP": "signaltwin.twin.forecast_demands scaling-factor demand forecaster",
        "CA": "signaltwin.signals.ControllerTimer nine-phase machine",
        "AP": "signaltwin.controllers algorithms: baseline, dt1, dt2",
        "CG": "signaltwin.cli commands and JSON/CSV file interfaces",
    }


@dataclass(frozen=True)
class DemandEstimate:
    """Measured per-flow demand over a trailing window."""

    window_length: float
    vph: tuple[float, ...]

    def __post_init__(self) -> None:
        if self.window_length <= 0.0:
            raise ValueError("window_length must be positive")
        if any(v < 0.0 for v in self.vph):
            raise ValueError("measured vph must be >= 0")


@dataclass(frozen=True)
class SimulationJob:
    """One independent (demand candidate, algorithm) evaluation."""

    job_id: str
    flows: tuple[Flow, ...]
    algorithm: str
    seed: int
    horizon: float
    warmup: float
    cooldown: float = 0.0
    dt: float = 1.0
    candidate_index: int | None = None


@dataclass(frozen=True)
class TwinSelection:
    """Ranked outcomes for the matched demand and the chosen algorithm."""

    scored: tuple[tuple[str, str, float, str], ...]  # job_id, algorithm, score, los
    chosen_algorithm: str
    matched_demand: int


@dataclass(frozen=True)
class DemandPhase:
    """Demand level active from ``start`` until the next phase begins."""

    start: float
    flows: tuple[Flow, ...]


@dataclass(frozen=True)
class TwinSettings:
    factors: tuple[float, ...] = (0.8, 1.0, 1.2)
    period: float = 300.0
    job_horizon: float = 900.0
    job_warmup: float = 300.0
    job_cooldown: float = 0.0
    estimate_window: float = 300.0
    initial_algorithm: str = "baseline"
    parallelism: int = 1
    departure_mode: str = "poisson"

    def __post_init__(self) -> None:
        if not self.factors or any(f <= 0.0 for f in self.factors):
            raise ValueError("factors must be a nonempty list of positive scalars")
        if self.period <= 0.0:
            raise ValueError("period must be positive")


def forecast_demands(
    estimate: DemandEstimate, factors: Sequence[float]
) -> list[tuple[float, ...]]:
    """One candidate demand vector per scaling factor."""
    if not factors or any(f <= 0.0 for f in factors):
        raise ValueError("factors must be a nonempty list of positive scalars")
    return [tuple(v * f for v in estimate.vph) for f in factors]


def match_demand(measured: Sequence[float], candidates: Sequence[Sequence[float]]) -> int:
    """Index of the candidate nearest to the measured demand (Euclidean)."""
    if not candidates:
        raise ValueError("candidates must be nonempty")
    best_index = 0
    best_dist = math.inf
    for i, cand in enumerate(candidates):
        if len(cand) != len(measured):
            raise ValueError(
                f"candidate {i} has dimension {len(cand)}, expected {len(measured)}"
            )
        dist = math.sqrt(sum((m - c) ** 2 for m, c in zip(measured, cand)))
        if dist < best_dist:
            best_dist = dist
            best_index = i
    return best_index


def _job_seed(seed: int, label: str) -> int:
    digest = hashlib.sha256(f"{seed}:{label}".encode()).digest()
    return int.from_bytes(digest[:8], "big") % (2**63)


def _execute_job(
    network: Network,
    job: SimulationJob,
    vehicle: VehicleParams | None,
    carryover_turns: bool,
) -> SimulationResult:
    try:
        sim = Simulation(
            network,
            flows=job.flows,
            algorithm=job.algorithm,
            seed=job.seed,
            clock=SimClock(
                dt=job.dt,
                horizon=job.horizon,
                warmup=job.warmup,
                cooldown=job.cooldown,
            ),
            vehicle=vehicle,
            carryover_turns=carryover_turns,
        )
        return sim.run()
    except Exception as exc:  # capture in the result slot, do not propagate
        return SimulationResult(
            algorithm=job.algorithm,
            seed=job.seed,
            scenario_id=None,
            window=(job.warmup, job.horizon - job.cooldown),
            error=f"{type(exc).__name__}: {exc}",
        )


def run_parallel(
    network: Network,
    jobs: Sequence[SimulationJob],
    parallelism: int = 1,
    vehicle: VehicleParams | None = None,
    carryover_turns: bool = True,
) -> list[SimulationResult]:
    """Run independent jobs and return results sorted by job id.

    Output is invariant to the degree of parallelism: each job is a pure
    function of its own seed and inputs, and a failure is captured in
    that job's result slot without affecting the others.
    """
    ordered = sorted(jobs, key=lambda j: j.job_id)
    if parallelism <= 1 or len(ordered) <= 1:
        return [_execute_job(network, job, vehicle, carryover_turns) for job in ordered]
    with ProcessPoolExecutor(max_workers=parallelism) as pool:
        futures = [
            pool.submit(_execute_job, network, job, vehicle, carryover_turns)
            for job in ordered
        ]
        return [f.result() for f in futures]


def select_controller(
    results: Sequence[tuple[SimulationJob, SimulationResult]],
    matched_demand: int,
    metric: str = "mean_control_delay",
) -> TwinSelection:
    """Pick the algorithm with the lowest score for the matched demand.

    Ties break by algorithm registration order (baseline, dt1, dt2).
    """
    if metric != "mean_control_delay":
        raise ValueError(f"unsupported selection metric {metric!r}")
    if not results:
        raise ValueError("select_controller needs at least one result")
    scored = []
    for job, res in results:
        score = res.mean_control_delay
        scored.append((job.job_id, job.algorithm, score, los_from_control_delay(score).grade))
    chosen = min(scored, key=lambda row: (row[2], ALGORITHMS.index(row[1])))
    return TwinSelection(tuple(scored), chosen[1], matched_demand)


# -- the live loop -----------------------------------------------------------


def build_live_schedule(
    demand_program: Sequence[DemandPhase],
    horizon: float,
    seed: int,
    departure_mode: str = "poisson",
) -> list[tuple[float, int, str, str, float]]:
    """Expand a piecewise-constant demand program into a departure schedule.

    Every phase draws from its own derived stream, so editing one phase
    never perturbs the others.
    """
    phases = sorted(demand_program, key=lambda p: p.start)
    ods = [(f.origin, f.destination) for f in phases[0].flows]
    for phase in phases:
        if [(f.origin, f.destination) for f in phase.flows] != ods:
            raise ValueError("all demand phases must share the same ordered OD list")
    schedule: list[tuple[float, int, str, str, float]] = []
    for i, phase in enumerate(phases):
        end = phases[i + 1].start if i + 1 < len(phases) else horizon
        duration = end - phase.start
        if duration <= 0.0:
            continue
        phase_seed = _job_seed(seed, f"live-phase:{i}")
        for j, flow in enumerate(phase.flows):
            for dep in generate_departures(flow, duration, phase_seed, departure_mode):
                schedule.append(
                    (phase.start + dep.time, j, flow.origin, flow.destination, flow.depart_speed)
                )
    schedule.sort(key=lambda r: (r[0], r[1]))
    return schedule


def estimate_demand(
    flow_insertions: Sequence[Sequence[float]], now: float, window: float
) -> DemandEstimate:
    """Trailing-window arrival rates from observed insertion times."""
    lo = max(0.0, now - window)
    span = now - lo
    vph = []
    for times in flow_insertions:
        n = bisect_left(times, now) - bisect_left(times, lo)
        vph.append(n * 3600.0 / span if span > 0 else 0.0)
    return DemandEstimate(window_length=window, vph=tuple(vph))


def live_loop(
    network: Network,
    demand_program: Sequence[DemandPhase],
    settings: TwinSettings,
    *,
    seed: int,
    clock: SimClock | None = None,
    vehicle: VehicleParams | None = None,
    carryover_turns: bool = True,
    trajectory_sink: Callable[[str], None] | None = None,
) -> tuple[dict, SimulationResult, Simulation]:
    """Run the live simulation, re-selecting its controller every period.

    Returns the manifest (dimensions, per-period evidence, swap events),
    the live run's aggregated result, and the live simulation itself.
    """
    clock = clock or SimClock()
    schedule = build_live_schedule(
        demand_program, clock.horizon, seed, settings.departure_mode
    )
    ods = [(f.origin, f.destination) for f in demand_program[0].flows]
    depart_speeds = [f.depart_speed for f in demand_program[0].flows]
    sim = Simulation(
        network,
        schedule=schedule,
        algorithm=settings.initial_algorithm,
        seed=seed,
        clock=clock,
        vehicle=vehicle,
        carryover_turns=carryover_turns,
        trajectory_sink=trajectory_sink,
    )

    n_periods = max(0, math.floor(clock.horizon / settings.period) - 1)
    eval_times = [settings.period * (i + 1) for i in range(n_periods)]
    current_token = settings.initial_algorithm
    period_records: list[dict] = []

    for p, t_eval in enumerate(eval_times):
        sim.run_until(t_eval)
        estimate = estimate_demand(sim.flow_insertions, t_eval, settings.estimate_window)
        candidates = forecast_demands(estimate, settings.factors)
        jobs = []
        for c, cand in enumerate(candidates):
            flows = tuple(
                Flow(o, d, v, s) for (o, d), v, s in zip(ods, cand, depart_speeds)
            )
            for algo in ALGORITHMS:
                jobs.append(
                    SimulationJob(
                        job_id=f"p{p:03d}-c{c}-{algo}",
                        flows=flows,
                        algorithm=algo,
                        seed=_job_seed(seed, f"twin:p{p}:c{c}:{algo}"),
                        horizon=settings.job_horizon,
                        warmup=settings.job_warmup,
                        cooldown=settings.job_cooldown,
                        dt=clock.dt,
                        candidate_index=c,
                    )
                )
        results = run_parallel(
            network, jobs, settings.parallelism, vehicle, carryover_turns
        )
        paired = list(zip(sorted(jobs, key=lambda j: j.job_id), results))
        degraded = any(res.error for _, res in paired)
        matched = match_demand(estimate.vph, candidates)
        record = {
            "period": p,
            "time": t_eval,
            "measured_vph": list(estimate.vph),
            "candidates": [list(c) for c in candidates],
            "matched_index": matched,
            "degraded": degraded,
            "jobs": [
                {
                    "job_id": job.job_id,
                    "candidate": job.candidate_index,
                    "algorithm": job.algorithm,
                    "seed": job.seed,
                    "score": res.mean_control_delay,
                    "error": res.error,
                }
                for job, res in paired
            ],
            "selection": None,
        }
        if not degraded:
            matched_results = [
                (job, res) for job, res in paired if job.candidate_index == matched
            ]
            selection = select_controller(matched_results, matched)
            record["selection"] = {
                "algorithm": selection.chosen_algorithm,
                "scored": [list(row) for row in selection.scored],
            }
            if selection.chosen_algorithm != current_token:
                sim.set_algorithm(selection.chosen_algorithm, tag=f"period-{p}")
                current_token = selection.chosen_algorithm
        period_records.append(record)

    sim.run_until(clock.horizon)
    result = sim.result()
    manifest = {
        "schema_version": 1,
        "dimensions": default_dimensions(),
        "seed": seed,
        "settings": {
            "factors": list(settings.factors),
            "period": settings.period,
            "job_horizon": settings.job_horizon,
            "job_warmup": settings.job_warmup,
            "job_cooldown": settings.job_cooldown,
            "estimate_window": settings.estimate_window,
            "initial_algorithm": settings.initial_algorithm,
            "parallelism": settings.parallelism,
            "departure_mode": settings.departure_mode,
        },
        "periods": period_records,
        "swap_events": list(sim.swap_events),
        "live_summary": {
            "final_algorithm": sim.algorithm,
            "mean_control_delay": result.mean_control_delay,
            "los": los_from_control_delay(result.mean_control_delay).grade,
            "inserted": result.inserted,
            "exited": result.exited,
        },
    }
    return manifest, result, sim
