"""Event-log parsing, trajectory reconstruction, and waiting-time removal.

Recorded inter-activity durations mix execution time with queueing time.
Per-transition medians and MADs flag durations whose modified z-score
exceeds a threshold ``k``; those are clamped back to the conformance bound,
leaving an execution-time estimate for every step.

Note on "MAD": the deviation statistic here is the median absolute
deviation about the median. The 0.6745 / 1.4826 constants are the standard
normal-consistency factors for that estimator, so a mean-based deviation
would not be coherent with them.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from datetime import datetime
from pathlib import Path
from typing import IO, Iterable, Union

import numpy as np

ARRIVAL = "arrival"
TRIAGE = "triage"
VITALSIGN = "vitalsign"
MED_DISPENSE = "med_dispense"
MED_ADMIN = "med_admin"
LAB_TEST = "lab_test"
IMAGING_TEST = "imaging_test"
DISCHARGE = "discharge"

ACTIVITIES = (
    ARRIVAL,
    TRIAGE,
    VITALSIGN,
    MED_DISPENSE,
    MED_ADMIN,
    LAB_TEST,
    IMAGING_TEST,
    DISCHARGE,
)
_ACTIVITY_SET = frozenset(ACTIVITIES)

EVENT_LOG_HEADER = ("stay_id", "activity", "timestamp")
CLEANED_HEADER = ("stay_id", "step_index", "activity", "duration_min")

#: Default modified z-score threshold for flagging a temporal deviation.
DEFAULT_Z_THRESHOLD = 3.0

#: Normal-consistency constants linking the MAD to a standard deviation.
MAD_Z_FACTOR = 0.6745
MAD_SIGMA_FACTOR = 1.4826


class EventLogError(ValueError):
    """Malformed event-log content or a violated trajectory precondition."""


@dataclass(frozen=True)
class StayEvent:
    """One recorded activity for one ED stay, minute-resolution timestamp."""

    stay_id: str
    activity: str
    timestamp: datetime


class TrajectoryStep:
    """(activity, duration-in-minutes) pair; duration covers the transition
    from the previous activity to this one."""

    __slots__ = ("activity", "duration")

    def __init__(self, activity: str, duration: float):
        self.activity = activity
        self.duration = duration

    def __iter__(self):
        return iter((self.activity, self.duration))

    def __eq__(self, other):
        return (
            isinstance(other, TrajectoryStep)
            and self.activity == other.activity
            and self.duration == other.duration
        )

    def __repr__(self):
        return f"TrajectoryStep({self.activity!r}, {self.duration!r})"


@dataclass(frozen=True)
class RawTrajectory:
    """Chronological activity steps for one stay, recorded durations.

    ``steps`` excludes the arrival event itself (arrival anchors t=0 and
    carries no duration); the final step is always the discharge.
    """

    stay_id: str
    steps: tuple[TrajectoryStep, ...]

    def duration_total(self) -> float:
        return sum(step.duration for step in self.steps)


@dataclass(frozen=True)
class CleanTrajectory:
    """Trajectory whose step durations are execution-time estimates."""

    stay_id: str
    steps: tuple[TrajectoryStep, ...]

    def duration_total(self) -> float:
        return sum(step.duration for step in self.steps)


@dataclass(frozen=True)
class PairStats:
    median: float
    mad: float
    support: int


class TransitionStats:
    """Per-(predecessor, activity) duration statistics."""

    def __init__(self, pairs: dict[tuple[str, str], PairStats]):
        self._pairs = dict(pairs)

    def get(self, pair: tuple[str, str]) -> PairStats | None:
        return self._pairs.get(pair)

    def require(self, pair: tuple[str, str]) -> PairStats:
        stats = self._pairs.get(pair)
        if stats is None:
            raise EventLogError(f"no transition statistics for pair {pair[0]!r} -> {pair[1]!r}")
        return stats

    def items(self):
        return self._pairs.items()

    def __len__(self):
        return len(self._pairs)

    def __contains__(self, pair):
        return pair in self._pairs


Source = Union[str, Path, IO[bytes], IO[str]]


def _open_text(source: Source):
    """Return (text-file, should_close) for a path, text stream, or byte stream."""
    if isinstance(source, (str, Path)):
        return open(source, "r", encoding="utf-8", newline=""), True
    if isinstance(source, io.TextIOBase):
        return source, False
    if hasattr(source, "read"):
        return io.TextIOWrapper(source, encoding="utf-8", newline=""), False
    raise TypeError(f"unsupported event-log source: {type(source)!r}")


def _parse_timestamp(raw: str, line_no: int) -> datetime:
    try:
        ts = datetime.fromisoformat(raw.strip())
    except ValueError:
        raise EventLogError(f"line {line_no}: field 'timestamp' is not ISO-8601: {raw!r}") from None
    # Minute-grain data; sub-minute input is floored.
    return ts.replace(second=0, microsecond=0)


def parse_event_log(source: Source) -> list[StayEvent]:
    """Parse an event-log CSV (``stay_id,activity,timestamp``) into events.

    Row order is preserved. Lines starting with ``#`` are ignored.
    Raises EventLogError naming the line and field for malformed rows,
    unknown activities, and duplicate arrivals within a stay.
    """
    handle, should_close = _open_text(source)
    try:
        events: list[StayEvent] = []
        arrivals_seen: set[str] = set()
        reader = csv.reader(line for line in handle if not line.startswith("#"))
        header = next(reader, None)
        if header is None:
            raise EventLogError("empty event log: missing header row")
        if tuple(h.strip() for h in header) != EVENT_LOG_HEADER:
            raise EventLogError(
                f"bad header {header!r}; expected {','.join(EVENT_LOG_HEADER)}"
            )
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 3:
                raise EventLogError(f"line {line_no}: expected 3 fields, got {len(row)}")
            stay_id, activity, ts_raw = (field.strip() for field in row)
            if not stay_id:
                raise EventLogError(f"line {line_no}: field 'stay_id' is empty")
            if activity not in _ACTIVITY_SET:
                raise EventLogError(
                    f"line {line_no}: unknown activity {activity!r}; "
                    f"allowed: {', '.join(ACTIVITIES)}"
                )
            timestamp = _parse_timestamp(ts_raw, line_no)
            if activity == ARRIVAL:
                if stay_id in arrivals_seen:
                    raise EventLogError(f"line {line_no}: duplicate arrival for stay {stay_id!r}")
                arrivals_seen.add(stay_id)
            events.append(StayEvent(stay_id, activity, timestamp))
        return events
    finally:
        if should_close:
            handle.close()


def extract_trajectories(events: Iterable[StayEvent]) -> list[RawTrajectory]:
    """Group events per stay, order them chronologically, and difference
    consecutive timestamps into recorded step durations.

    Timestamp ties are broken by input order. The arrival must be the
    earliest event and the discharge the latest, exactly one of each.
    Trajectories are returned in order of each stay's first appearance.
    """
    by_stay: dict[str, list[StayEvent]] = {}
    for event in events:
        by_stay.setdefault(event.stay_id, []).append(event)

    trajectories = []
    for stay_id, stay_events in by_stay.items():
        n_arrivals = sum(1 for e in stay_events if e.activity == ARRIVAL)
        n_discharges = sum(1 for e in stay_events if e.activity == DISCHARGE)
        if n_arrivals != 1 or n_discharges != 1:
            raise EventLogError(
                f"stay {stay_id!r}: expected exactly one arrival and one discharge, "
                f"got {n_arrivals} and {n_discharges}"
            )
        ordered = sorted(stay_events, key=lambda e: e.timestamp)  # stable: ties keep input order
        if ordered[0].activity != ARRIVAL or ordered[-1].activity != DISCHARGE:
            raise EventLogError(
                f"stay {stay_id!r}: non-monotone timestamps "
                "(an event precedes the arrival or follows the discharge)"
            )
        steps = []
        for prev, cur in zip(ordered, ordered[1:]):
            minutes = (cur.timestamp - prev.timestamp).total_seconds() / 60.0
            steps.append(TrajectoryStep(cur.activity, minutes))
        trajectories.append(RawTrajectory(stay_id, tuple(steps)))
    return trajectories


def transition_pairs(trajectory: RawTrajectory | CleanTrajectory):
    """Yield ((predecessor, activity), step) for every step; the first step's
    predecessor is the arrival."""
    prev = ARRIVAL
    for step in trajectory.steps:
        yield (prev, step.activity), step
        prev = step.activity


def compute_transition_stats(trajectories: Iterable[RawTrajectory]) -> TransitionStats:
    """Median, MAD, and support of recorded durations per transition pair.

    One statistic per (predecessor, activity) pair regardless of where in a
    stay the transition occurs.
    """
    samples: dict[tuple[str, str], list[float]] = {}
    empty = True
    for trajectory in trajectories:
        empty = False
        for pair, step in transition_pairs(trajectory):
            samples.setdefault(pair, []).append(step.duration)
    if empty:
        raise EventLogError("cannot compute transition statistics from an empty trajectory set")

    pairs = {}
    for pair, values in samples.items():
        arr = np.asarray(values, dtype=float)
        median = float(np.median(arr))
        mad = float(np.median(np.abs(arr - median)))
        pairs[pair] = PairStats(median=median, mad=mad, support=len(values))
    return TransitionStats(pairs)


def modified_zscore(tau: float, mdn: float, mad: float) -> float:
    """Modified z-score 0.6745*(tau - mdn)/mad of a recorded duration.

    With mad == 0 any tau != mdn counts as a deviation, so the score
    degenerates to +inf (0 at tau == mdn).
    """
    if mad < 0:
        raise ValueError(f"MAD must be non-negative, got {mad}")
    if mad == 0:
        return 0.0 if tau == mdn else math.inf
    return MAD_Z_FACTOR * (tau - mdn) / mad


def clamp_duration(tau: float, mdn: float, mad: float, k: float) -> float:
    """Piecewise conformance rule for one recorded duration."""
    if modified_zscore(tau, mdn, mad) > k:
        return mdn + k * (MAD_SIGMA_FACTOR * mad)
    return tau


def remove_waiting_times(
    raw: RawTrajectory,
    stats: TransitionStats,
    k: float = DEFAULT_Z_THRESHOLD,
) -> CleanTrajectory:
    """Clamp temporally-deviating durations to the conformance bound.

    Steps and their order are unchanged; conforming durations (z <= k) pass
    through bit-identical. Every pair in ``raw`` must exist in ``stats``.
    """
    steps = []
    for pair, step in transition_pairs(raw):
        pair_stats = stats.require(pair)
        duration = clamp_duration(step.duration, pair_stats.median, pair_stats.mad, k)
        steps.append(TrajectoryStep(step.activity, duration))
    return CleanTrajectory(raw.stay_id, tuple(steps))


# -- file I/O ---------------------------------------------------------------


def write_event_log(path: str | Path, events: Iterable[StayEvent], header_comment: str | None = None) -> None:
    with open(path, "w", encoding="utf-8", newline="") as handle:
        if header_comment:
            handle.write(f"# {header_comment}\n")
        writer = csv.writer(handle)
        writer.writerow(EVENT_LOG_HEADER)
        for event in events:
            writer.writerow([event.stay_id, event.activity, event.timestamp.strftime("%Y-%m-%dT%H:%M")])


def write_clean_trajectories(
    path: str | Path,
    trajectories: Iterable[CleanTrajectory],
    header_comment: str | None = None,
) -> None:
    with open(path, "w", encoding="utf-8", newline="") as handle:
        if header_comment:
            handle.write(f"# {header_comment}\n")
        writer = csv.writer(handle)
        writer.writerow(CLEANED_HEADER)
        # repr keeps the float round-trip exact; conforming durations must
        # survive the file boundary bit-identical.
        for trajectory in trajectories:
            for index, step in enumerate(trajectory.steps):
                writer.writerow([trajectory.stay_id, index, step.activity, repr(step.duration)])


def read_clean_trajectories(path: str | Path) -> list[CleanTrajectory]:
    with open(path, "r", encoding="utf-8", newline="") as handle:
        reader = csv.reader(line for line in handle if not line.startswith("#"))
        header = next(reader, None)
        if header is None or tuple(header) != CLEANED_HEADER:
            raise EventLogError(f"bad cleaned-trajectory header {header!r}")
        steps_by_stay: dict[str, list[tuple[int, TrajectoryStep]]] = {}
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 4:
                raise EventLogError(f"line {line_no}: expected 4 fields, got {len(row)}")
            stay_id, index_raw, activity, duration_raw = row
            if activity not in _ACTIVITY_SET:
                raise EventLogError(f"line {line_no}: unknown activity {activity!r}")
            try:
                index = int(index_raw)
                duration = float(duration_raw)
            except ValueError:
                raise EventLogError(f"line {line_no}: bad step_index/duration") from None
            steps_by_stay.setdefault(stay_id, []).append((index, TrajectoryStep(activity, duration)))
    trajectories = []
    for stay_id, numbered in steps_by_stay.items():
        numbered.sort(key=lambda pair: pair[0])
        trajectories.append(CleanTrajectory(stay_id, tuple(step for _, step in numbered)))
    return trajectories


def write_transition_stats(path: str | Path, stats: TransitionStats, header_comment: str | None = None) -> None:
    with open(path, "w", encoding="utf-8", newline="") as handle:
        if header_comment:
            handle.write(f"# {header_comment}\n")
        writer = csv.writer(handle)
        writer.writerow(["from_activity", "to_activity", "median_min", "mad_min", "support"])
        for (src, dst), pair_stats in sorted(stats.items()):
            writer.writerow([src, dst, repr(pair_stats.median), repr(pair_stats.mad), pair_stats.support])
