"""Phase-choice algorithms: density baseline, dt1 and dt2.

All three share the same selection rule: take the maximum over the
eight per-movement observation values and walk a fixed if/else chain of
movement pairs (NS through, EW through, EW left, NS left); the first
pair containing a movement that attains the maximum wins and its green
phase is proposed.  The algorithms differ only in what the observations
are: vehicles per lane per mile for the baseline, average stopped delay
on the approach for dt1, and the same plus the delay carried over from
the previous approach for dt2.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping

from .network import METERS_PER_MILE, Movement
from .signals import PHASE_MOVEMENTS

# Registration order; also the tie-break order when scores are equal.
ALGORITHMS = ("baseline", "dt1", "dt2")


@dataclass(frozen=True)
class DecisionInput:
    """Per-movement observations at one intersection and instant."""

    values: Mapping[Movement, float]
    intersection: str = ""
    time: float = 0.0

    def __post_init__(self) -> None:
        missing = [m for m in Movement if m not in self.values]
        if missing:
            raise ValueError(f"missing movements in decision input: {missing}")
        for movement, value in self.values.items():
            if not math.isfinite(value) or value < 0.0:
                raise ValueError(
                    f"decision value for {movement.value} must be finite and >= 0, got {value}"
                )


@dataclass(frozen=True)
class Decision:
    """Outcome of one phase-choice evaluation."""

    proposed_phase: int | None
    winning_movement: Movement | None
    winning_value: float
    out_of_order: bool = field(default=False)


def approach_density(vehicle_count: int, lane_count: int, lane_length_miles: float) -> float:
    """Vehicles per lane per mile on one approach."""
    if lane_count < 1:
        raise ValueError(f"lane_count must be >= 1, got {lane_count}")
    if lane_length_miles <= 0.0:
        raise ValueError(f"lane_length_miles must be positive, got {lane_length_miles}")
    return vehicle_count / (lane_count * lane_length_miles)


def meters_to_miles(length_m: float) -> float:
    return length_m / METERS_PER_MILE


def _decide_by_chain(decision_input: DecisionInput) -> Decision:
    values = decision_input.values
    best = max(values[m] for m in Movement)
    for phase, pair in PHASE_MOVEMENTS.items():
        for movement in pair:
            if values[movement] == best:
                return Decision(phase, movement, best)
    # Unreachable for valid finite inputs; kept as the out-of-order guard.
    return Decision(None, None, best, out_of_order=True)


def baseline_decide(decision_input: DecisionInput) -> Decision:
    """Choose the phase serving the densest approach (veh/lane/mile)."""
    return _decide_by_chain(decision_input)


def dt1_decide(decision_input: DecisionInput) -> Decision:
    """Choose the phase serving the approach with the highest average
    stopped delay, where each vehicle counts its delay on the current
    approach only."""
    return _decide_by_chain(decision_input)


def dt2_decide(decision_input: DecisionInput) -> Decision:
    """Like dt1, but each vehicle's delay additionally includes the
    stopped delay carried over from its previous approach."""
    return _decide_by_chain(decision_input)


DECIDE_BY_ALGORITHM = {
    "baseline": baseline_decide,
    "dt1": dt1_decide,
    "dt2": dt2_decide,
}


def validate_algorithm(token: str) -> str:
    if token not in ALGORITHMS:
        raise ValueError(
            f"unknown algorithm {token!r}; valid tokens: {', '.join(ALGORITHMS)}"
        )
    return token
