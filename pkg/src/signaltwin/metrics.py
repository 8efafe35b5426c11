"""Evaluation layer: LOS grading, stopped-delay summaries and comparisons.

Control delay is approximated by segment delay (travel time over an
approach minus its free-flow time) for every vehicle clearing the
subject intersection inside the measured window.  The letter grade
follows the standard signalized-intersection thresholds, with boundary
values belonging to the lower grade.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

from .network import ALL_MOVEMENTS, Network, turn_of
from .delay import segment_delay
from .traffic import SimulationResult

# Upper control-delay bound (s/veh) per grade; above the last bound is F.
LOS_BOUNDS: tuple[tuple[float, str], ...] = (
    (10.0, "A"),
    (20.0, "B"),
    (35.0, "C"),
    (55.0, "D"),
    (80.0, "E"),
)

DEFAULT_BIN_WIDTH = 10.0


@dataclass(frozen=True)
class LosGrade:
    grade: str
    control_delay: float


@dataclass(frozen=True)
class DelayHistogram:
    """Right-open bins [k*w, (k+1)*w) of per-vehicle stopped delays."""

    bin_width: float
    counts: tuple[int, ...]
    movement: str = ""
    algorithm: str = ""

    @property
    def total(self) -> int:
        return sum(self.counts)


@dataclass
class ComparisonReport:
    """Cross-algorithm metrics for runs sharing network, demand and seed."""

    algorithms: list[str]
    mean_control_delay: dict[str, float]
    los: dict[str, str]
    aasd: dict[str, dict[str, float]]
    dsd: dict[str, dict[str, DelayHistogram]]
    reduction_pct: dict[str, float | None]
    bin_width: float = DEFAULT_BIN_WIDTH
    scenario_id: int | None = None
    seed: int | None = None
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "algorithms": self.algorithms,
            "scenario_id": self.scenario_id,
            "seed": self.seed,
            "bin_width": self.bin_width,
            "mean_control_delay": self.mean_control_delay,
            "los": self.los,
            "aasd": self.aasd,
            "reduction_pct": self.reduction_pct,
            "dsd": {
                algo: {m: list(h.counts) for m, h in by_movement.items()}
                for algo, by_movement in self.dsd.items()
            },
        }


def los_from_control_delay(d: float) -> LosGrade:
    """Letter grade for an average control delay in seconds per vehicle."""
    if d < 0.0 or not math.isfinite(d):
        raise ValueError(f"control delay must be finite and >= 0, got {d}")
    for bound, grade in LOS_BOUNDS:
        if d <= bound:
            return LosGrade(grade, d)
    return LosGrade("F", d)


def aasd(delays: Sequence[float]) -> float:
    """Mean stopped delay per vehicle for one movement; 0 with no traversals."""
    return sum(delays) / len(delays) if delays else 0.0


def dsd_histogram(
    delays: Sequence[float],
    bin_width: float = DEFAULT_BIN_WIDTH,
    movement: str = "",
    algorithm: str = "",
) -> DelayHistogram:
    """Frequency of per-vehicle stopped delays in fixed-width bins."""
    if bin_width <= 0.0:
        raise ValueError("bin_width must be positive")
    if not delays:
        return DelayHistogram(bin_width, (), movement, algorithm)
    counts = [0] * (int(max(delays) // bin_width) + 1)
    for d in delays:
        counts[int(d // bin_width)] += 1
    return DelayHistogram(bin_width, tuple(counts), movement, algorithm)


def sample_skewness(values: Sequence[float]) -> float:
    """Third standardized moment; 0 for degenerate samples."""
    n = len(values)
    if n < 3:
        return 0.0
    mean = sum(values) / n
    m2 = sum((v - mean) ** 2 for v in values) / n
    if m2 <= 0.0:
        return 0.0
    m3 = sum((v - mean) ** 3 for v in values) / n
    return m3 / m2**1.5


def control_delay_summary(control_delays: Sequence[float]) -> tuple[float, LosGrade]:
    """Mean control delay over subject traversals plus its letter grade."""
    mean = sum(control_delays) / len(control_delays) if control_delays else 0.0
    return mean, los_from_control_delay(mean)


def reduction_vs_baseline(base: float, alt: float) -> float | None:
    """Percent reduction of ``alt`` relative to ``base``; None when base <= 0."""
    if base <= 0.0:
        return None
    return (base - alt) / base * 100.0


def compare(
    results: Mapping[str, SimulationResult],
    bin_width: float = DEFAULT_BIN_WIDTH,
) -> ComparisonReport:
    """Side-by-side report of every algorithm against the baseline run."""
    if "baseline" not in results:
        raise ValueError("comparison requires a baseline result")
    algorithms = sorted(results, key=lambda a: (a != "baseline", a))
    mean_delay: dict[str, float] = {}
    los: dict[str, str] = {}
    per_movement: dict[str, dict[str, float]] = {}
    dsd: dict[str, dict[str, DelayHistogram]] = {}
    for algo in algorithms:
        res = results[algo]
        mean, grade = control_delay_summary(res.control_delay_values())
        mean_delay[algo] = mean
        los[algo] = grade.grade
        per_movement[algo] = {
            m.value: aasd(res.movement_delay_values(m.value)) for m in ALL_MOVEMENTS
        }
        dsd[algo] = {
            m.value: dsd_histogram(
                res.movement_delay_values(m.value), bin_width, m.value, algo
            )
            for m in ALL_MOVEMENTS
        }
    base = mean_delay["baseline"]
    reductions = {
        algo: (0.0 if algo == "baseline" else reduction_vs_baseline(base, mean_delay[algo]))
        for algo in algorithms
    }
    first = next(iter(results.values()))
    return ComparisonReport(
        algorithms=algorithms,
        mean_control_delay=mean_delay,
        los=los,
        aasd=per_movement,
        dsd=dsd,
        reduction_pct=reductions,
        bin_width=bin_width,
        scenario_id=first.scenario_id,
        seed=first.seed,
    )


# -- artifact writers ------------------------------------------------------

COMPARISON_COLUMNS = (
    ["algorithm", "mean_control_delay", "los", "reduction_vs_baseline_pct"]
    + [f"aasd_{m.value}" for m in ALL_MOVEMENTS]
)


def write_comparison_csv(report: ComparisonReport, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(COMPARISON_COLUMNS)
        for algo in report.algorithms:
            reduction = report.reduction_pct[algo]
            writer.writerow(
                [
                    algo,
                    repr(report.mean_control_delay[algo]),
                    report.los[algo],
                    "" if reduction is None else repr(reduction),
                ]
                + [repr(report.aasd[algo][m.value]) for m in ALL_MOVEMENTS]
            )


def write_dsd_csvs(report: ComparisonReport, out_dir: str | Path) -> list[Path]:
    """One histogram file per movement: bin bounds plus per-algorithm counts."""
    out = Path(out_dir)
    written = []
    for movement in ALL_MOVEMENTS:
        hists = {a: report.dsd[a][movement.value] for a in report.algorithms}
        n_bins = max((len(h.counts) for h in hists.values()), default=0)
        path = out / f"dsd_{movement.value}.csv"
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["bin_start", "bin_end"] + [f"count_{a}" for a in report.algorithms])
            for b in range(n_bins):
                row = [repr(b * report.bin_width), repr((b + 1) * report.bin_width)]
                for algo in report.algorithms:
                    counts = hists[algo].counts
                    row.append(str(counts[b] if b < len(counts) else 0))
                writer.writerow(row)
        written.append(path)
    return written


def write_comparison_json(report: ComparisonReport, path: str | Path) -> None:
    Path(path).write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True))


# -- recomputation from raw trajectory logs ---------------------------------


def recompute_from_trajectory(
    rows: Sequence[tuple[float, str, str, float, float, float, float]],
    network: Network,
    window: tuple[float, float],
    dt: float,
) -> tuple[list[float], dict[str, list[float]]]:
    """Re-derive subject control delays and per-movement stopped delays
    from raw trajectory rows (t, vehicle, segment, position, speed,
    waiting, accumulated).

    A vehicle leaves a segment one step after its last logged row there;
    the stopped delay on a visit is the accumulated-waiting difference
    between its last row and the last row of the previous visit.  Subject
    approaches always continue onto another segment, so a completed
    traversal is detectable by the following visit; exact parity with the
    engine therefore needs a cool-down of at least one step.
    """
    subject = network.subject_intersection
    by_vehicle: dict[str, list[tuple[float, str, float]]] = {}
    for t, vid, seg_id, _pos, _speed, _wait, acc in rows:
        by_vehicle.setdefault(vid, []).append((t, seg_id, acc))

    lo, hi = window
    control: list[float] = []
    movement_delays: dict[str, list[float]] = {m.value: [] for m in ALL_MOVEMENTS}
    for vid in sorted(by_vehicle):
        trace = by_vehicle[vid]
        trace.sort(key=lambda r: r[0])
        visits: list[tuple[str, float, float, float]] = []  # seg, t_in, t_last, acc_last
        for t, seg_id, acc in trace:
            if visits and visits[-1][0] == seg_id:
                seg, t_in, _, _ = visits[-1]
                visits[-1] = (seg, t_in, t, acc)
            else:
                visits.append((seg_id, t, t, acc))
        prev_acc = 0.0
        for i, (seg_id, t_in, t_last, acc_last) in enumerate(visits):
            seg = network.segments[seg_id]
            t_out = t_last + dt
            if i + 1 < len(visits) and seg.to_node == subject and lo <= t_out <= hi:
                control.append(segment_delay(t_in, t_out, seg.length, seg.free_flow_speed))
                nxt_dir = network.segments[visits[i + 1][0]].movement.direction
                turn = turn_of(seg.movement.direction, nxt_dir)
                movement = seg.left_movement if turn == "left" else seg.movement
                movement_delays[movement.value].append(acc_last - prev_acc)
            prev_acc = acc_last
    return control, movement_delays
