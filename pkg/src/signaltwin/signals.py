"""Nine-phase signal state machine with yellow/all-red interlocks.

Phases 0/2/4/6 are green-serving (NS through, EW through, EW left,
NS left), odd phases are the matching yellows, and phase 8 is all-red.
A phase change always runs green -> yellow (2 s) -> all-red (1 s) ->
new green, and the change decision is only consulted on the 5-second
cadence once the green has run strictly longer than the 5 s minimum.
"""

from __future__ import annotations

from typing import Callable

from .network import Movement

GREEN_PHASES = (0, 2, 4, 6)
ALL_RED_PHASE = 8

YELLOW_DURATION = 2.0
ALL_RED_DURATION = 1.0
MIN_GREEN = 5.0
DECISION_PERIOD = 5.0

STAGE_GREEN = "green"
STAGE_YELLOW = "yellow"
STAGE_ALL_RED = "all_red"

STATUS_OK = "ok"
STATUS_OUT_OF_ORDER = "out_of_order"

# Movement pairs served by each green phase, in decision-chain order.
PHASE_MOVEMENTS: dict[int, tuple[Movement, Movement]] = {
    0: (Movement.NBT, Movement.SBT),
    2: (Movement.WBT, Movement.EBT),
    4: (Movement.WBL, Movement.EBL),
    6: (Movement.NBL, Movement.SBL),
}

GREEN_PHASE_FOR_MOVEMENT: dict[Movement, int] = {
    movement: phase for phase, pair in PHASE_MOVEMENTS.items() for movement in pair
}

# Full phase/state table: phase index -> movement -> G/Y/R.
PHASE_TABLE: dict[int, dict[Movement, str]] = {}
for _green, _pair in PHASE_MOVEMENTS.items():
    PHASE_TABLE[_green] = {m: ("G" if m in _pair else "R") for m in Movement}
    PHASE_TABLE[_green + 1] = {m: ("Y" if m in _pair else "R") for m in Movement}
PHASE_TABLE[ALL_RED_PHASE] = {m: "R" for m in Movement}

FLASHING_YELLOW = "FY"


def phase_for_movement(phase: int, movement: Movement) -> str:
    """State (G, Y or R) shown to a movement in the given phase."""
    try:
        return PHASE_TABLE[phase][movement]
    except KeyError:
        raise ValueError(f"unknown phase {phase!r}") from None


class PhaseChangeRejected(RuntimeError):
    """A phase change was requested while a transition was in progress."""


class ControllerTimer:
    """Signal timer for one intersection.

    Internally counts whole simulation steps so stage boundaries stay
    exact for any step length that divides one second cleanly.
    ``tick`` must be called exactly once per simulation step.
    """

    def __init__(
        self,
        dt: float = 1.0,
        initial_phase: int = 0,
        min_green: float = MIN_GREEN,
        decision_period: float = DECISION_PERIOD,
        yellow: float = YELLOW_DURATION,
        all_red: float = ALL_RED_DURATION,
    ) -> None:
        if initial_phase not in GREEN_PHASES:
            raise ValueError(f"initial phase must be green-serving, got {initial_phase}")
        self.dt = dt
        self._yellow_steps = _exact_steps(yellow, dt, "yellow")
        self._all_red_steps = _exact_steps(all_red, dt, "all_red")
        self._min_green_steps = _exact_steps(min_green, dt, "min_green")
        self._decision_steps = _exact_steps(decision_period, dt, "decision_period")
        self.current_phase = initial_phase
        self.stage = STAGE_GREEN
        self.pending_target: int | None = None
        self.status = STATUS_OK
        self._stage_steps = 0
        self._green_steps = 0

    @property
    def stage_elapsed(self) -> float:
        return self._stage_steps * self.dt

    @property
    def green_elapsed(self) -> float:
        return self._green_steps * self.dt

    def request_phase(self, proposed: int) -> "ControllerTimer":
        """Begin a transition toward ``proposed``; no-op if already there."""
        if proposed not in GREEN_PHASES:
            raise ValueError(f"proposed phase must be one of {GREEN_PHASES}, got {proposed}")
        if self.stage != STAGE_GREEN:
            raise PhaseChangeRejected(
                f"phase change to {proposed} rejected during {self.stage} stage"
            )
        if proposed == self.current_phase:
            return self
        self.pending_target = proposed
        self.current_phase += 1  # the matching yellow phase
        self.stage = STAGE_YELLOW
        self._stage_steps = 0
        return self

    def set_out_of_order(self) -> "ControllerTimer":
        """Flag the signal as malfunctioning; all movements flash yellow."""
        self.status = STATUS_OUT_OF_ORDER
        return self

    def tick(self, step_index: int, decision_source: Callable[[], int | None] | None = None) -> int:
        """Advance one step and return the phase displayed for it.

        ``decision_source`` is consulted only in a green stage, on the
        decision cadence, and once the green has displayed strictly
        longer than the minimum green time.
        """
        # Stage rollovers that fall due exactly now.
        if self.stage == STAGE_YELLOW and self._stage_steps >= self._yellow_steps:
            self.stage = STAGE_ALL_RED
            self.current_phase = ALL_RED_PHASE
            self._stage_steps = 0
        elif self.stage == STAGE_ALL_RED and self._stage_steps >= self._all_red_steps:
            assert self.pending_target is not None
            self.stage = STAGE_GREEN
            self.current_phase = self.pending_target
            self.pending_target = None
            self._stage_steps = 0
            self._green_steps = 0

        if (
            decision_source is not None
            and self.status == STATUS_OK
            and self.stage == STAGE_GREEN
            and step_index % self._decision_steps == 0
            and self._green_steps > self._min_green_steps
        ):
            proposed = decision_source()
            if proposed is not None and proposed != self.current_phase:
                self.request_phase(proposed)

        phase = self.current_phase
        self._stage_steps += 1
        if self.stage == STAGE_GREEN:
            self._green_steps += 1
        return phase

    def display(self, movement: Movement, permissive_lefts: bool = False) -> str:
        """Aspect currently shown to a movement: G, Y, R or FY.

        With ``permissive_lefts`` a left movement follows its parallel
        through movement's aspect, which keeps left turns serviceable at
        intersections running a two-phase plan.
        """
        if self.status == STATUS_OUT_OF_ORDER:
            return FLASHING_YELLOW
        if permissive_lefts and movement.is_left:
            movement = movement.through
        return PHASE_TABLE[self.current_phase][movement]


def _exact_steps(duration: float, dt: float, name: str) -> int:
    steps = round(duration / dt)
    if steps <= 0 or abs(steps * dt - duration) > 1e-9:
        raise ValueError(f"{name} ({duration}s) must be a positive multiple of dt ({dt}s)")
    return steps
