"""Discrete-time ED simulation with beds, clinicians, and imaging contention.

The clock advances in one-minute ticks. Each tick runs three phases in order:
new arrivals are drawn from an hourly Poisson rate table, free beds go to the
highest-acuity waiting patients, and bedded patients progress through their
cleaned activity trajectories. Activities that need a busy resource wait, and
every minute spent waiting (for a bed or a resource) is tracked separately
from execution. Length of stay is not sampled from any distribution: it is
whatever the queues produce.

Within a tick, activity completions are processed in exact time order, so a
slot freed mid-tick can be granted mid-tick and execution times keep their
fractional precision.
"""

from __future__ import annotations

import csv
import heapq
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from . import eventlog as ev
from .eventlog import TrajectoryStep
from .patients import PatientPool, PatientRecord, sample_patient

CLINICIAN = "clinician"
IMAGING = "imaging"

# Which resource an activity occupies while it executes. Lab tests run in a
# side lab and occupy nobody; their turnaround can be stretched through
# workflow_delays instead.
RESOURCE_FOR: dict[str, str | None] = {
    ev.TRIAGE: CLINICIAN,
    ev.VITALSIGN: CLINICIAN,
    ev.MED_DISPENSE: CLINICIAN,
    ev.MED_ADMIN: CLINICIAN,
    ev.LAB_TEST: None,
    ev.IMAGING_TEST: IMAGING,
    ev.DISCHARGE: None,
}

# Arrivals per hour, midnight first; overnight trough, late-morning and
# evening peaks. Sums to 144 (mean 6/h).
DEFAULT_ARRIVAL_RATES: tuple[float, ...] = (
    3.0, 3.0, 2.5, 2.5, 3.0, 3.0, 4.0, 5.0, 6.5, 7.5, 8.0, 8.5,
    8.5, 8.0, 8.0, 7.5, 7.5, 8.0, 8.5, 8.0, 7.5, 6.5, 5.0, 4.5,
)

DATASET_HEADER = (
    "run_id",
    "sim_id",
    "source_patient_id",
    "arrival_time",
    "discharge_time",
    "simulated_los_hours",
    "simulated_label",
    "acuity",
    "disposition",
    "total_wait_min",
)

# startup transient discarded before any measurement window
DEFAULT_WARMUP_MINUTES = 2 * 1440


class SimulationError(ValueError):
    pass


@dataclass(frozen=True)
class EDEnvironmentParams:
    """Static capacities, the hourly arrival-rate table, and workflow delays."""

    n_beds: int = 50
    n_clinicians: int = 22
    n_imaging: int = 8
    arrival_rates: tuple[float, ...] = DEFAULT_ARRIVAL_RATES
    workflow_delays: Mapping[str, float] = field(default_factory=dict)
    tick_minutes: int = 1

    def __post_init__(self) -> None:
        if min(self.n_beds, self.n_clinicians, self.n_imaging) < 1:
            raise SimulationError("all capacities must be at least 1")
        if len(self.arrival_rates) != 24:
            raise SimulationError("arrival_rates needs one entry per hour of day")
        if any(r < 0 for r in self.arrival_rates):
            raise SimulationError("arrival rates must be non-negative")
        if self.tick_minutes < 1:
            raise SimulationError("tick_minutes must be a positive integer")
        for activity, delay in self.workflow_delays.items():
            if activity not in RESOURCE_FOR:
                raise SimulationError(f"workflow delay for unknown activity {activity!r}")
            if delay < 0:
                raise SimulationError("workflow delays must be non-negative")

    def capacity(self, resource: str) -> int:
        if resource == CLINICIAN:
            return self.n_clinicians
        if resource == IMAGING:
            return self.n_imaging
        raise SimulationError(f"unknown resource {resource!r}")


@dataclass(frozen=True)
class ParamsTimeline:
    """Baseline parameters plus time-bounded overrides ([start, end) minutes)."""

    baseline: EDEnvironmentParams
    windows: tuple[tuple[float, float, EDEnvironmentParams], ...] = ()

    def params_at(self, time_min: float) -> EDEnvironmentParams:
        for start, end, params in self.windows:
            if start <= time_min < end:
                return params
        return self.baseline


def as_timeline(params: EDEnvironmentParams | ParamsTimeline) -> ParamsTimeline:
    if isinstance(params, ParamsTimeline):
        return params
    return ParamsTimeline(baseline=params)


@dataclass
class SimPatient:
    """One simulated stay in flight."""

    sim_id: int
    record: PatientRecord
    steps: tuple[TrajectoryStep, ...]
    arrival_min: int
    bed_min: float | None = None
    ready_since: float = 0.0
    cursor: int = 0
    wait_min: float = 0.0
    holding: str | None = None
    step_waits: list[float] = field(default_factory=list)


@dataclass(frozen=True)
class SyntheticStay:
    run_id: int
    sim_id: int
    source_patient_id: str
    arrival_min: int
    discharge_min: float
    los_hours: float
    label: bool
    acuity: int
    disposition: str
    total_wait_min: float
    # diagnostics, not serialized: wait before the bed and before each step
    bed_wait_min: float = 0.0
    step_waits: tuple[float, ...] = ()


@dataclass(frozen=True)
class TickStats:
    t: int
    arrived: int
    discharged: int
    queued: int
    bedded: int
    busy_clinician: int
    busy_imaging: int


class SimulationState:
    """Mutable queues and counters; the three phase functions drive it."""

    def __init__(self, timeline: ParamsTimeline, rng: np.random.Generator, pool: PatientPool | None = None):
        self.timeline = timeline
        self.rng = rng
        self.pool = pool
        self.bed_queue: list[tuple[int, int, int, SimPatient]] = []
        self.waiters: dict[str, list[tuple[int, float, int, SimPatient]]] = {CLINICIAN: [], IMAGING: []}
        self.completions: list[tuple[float, int, SimPatient]] = []
        self.busy: dict[str, int] = {CLINICIAN: 0, IMAGING: 0}
        self.beds_in_use = 0
        self.arrived = 0
        self.discharged = 0
        self._seq = 0

    def params_at(self, time_min: float) -> EDEnvironmentParams:
        return self.timeline.params_at(time_min)

    def in_system(self) -> int:
        return self.arrived - self.discharged

    def add_patient(self, record: PatientRecord, steps: Sequence[TrajectoryStep], arrival_min: int) -> SimPatient:
        patient = SimPatient(self._seq, record, tuple(steps), arrival_min)
        self._seq += 1
        self.arrived += 1
        heapq.heappush(self.bed_queue, (record.acuity, arrival_min, patient.sim_id, patient))
        return patient

    # -- internal mechanics -------------------------------------------------

    def _start_activity(self, patient: SimPatient, now: float) -> None:
        step = patient.steps[patient.cursor]
        params = self.params_at(now)
        duration = step.duration + float(params.workflow_delays.get(step.activity, 0.0))
        patient.wait_min += now - patient.ready_since
        patient.step_waits.append(now - patient.ready_since)
        resource = RESOURCE_FOR[step.activity]
        patient.holding = resource
        if resource is not None:
            self.busy[resource] += 1
        heapq.heappush(self.completions, (now + duration, patient.sim_id, patient))

    def _request_next(self, patient: SimPatient, now: float) -> None:
        resource = RESOURCE_FOR[patient.steps[patient.cursor].activity]
        if resource is None:
            self._start_activity(patient, now)
        else:
            heapq.heappush(
                self.waiters[resource],
                (patient.record.acuity, patient.bed_min or 0.0, patient.sim_id, patient),
            )

    def _drain_resources(self, now: float) -> None:
        params = self.params_at(now)
        for resource, queue in self.waiters.items():
            capacity = params.capacity(resource)
            while queue and self.busy[resource] < capacity:
                _, _, _, patient = heapq.heappop(queue)
                self._start_activity(patient, now)


def generate_arrivals(params: EDEnvironmentParams, clock_hour: int, rng: np.random.Generator) -> int:
    """Phase 1 draw: Poisson count with mean rate[hour] * tick / 60."""
    if not 0 <= clock_hour <= 23:
        raise SimulationError(f"clock_hour {clock_hour} outside 0..23")
    rate = params.arrival_rates[clock_hour]
    return int(rng.poisson(rate * params.tick_minutes / 60.0))


def admit_arrivals(state: SimulationState, t: int) -> list[SimPatient]:
    """Phase 1: draw the count for this tick, then sample the pool per arrival."""
    params = state.params_at(float(t))
    count = generate_arrivals(params, (t // 60) % 24, state.rng)
    created = []
    for _ in range(count):
        record, trajectory = sample_patient(state.pool, state.rng)
        created.append(state.add_patient(record, trajectory.steps, t))
    return created


def assign_beds(state: SimulationState, t: int) -> list[SimPatient]:
    """Phase 2: free beds to waiting patients, highest acuity first."""
    params = state.params_at(float(t))
    bedded = []
    while state.bed_queue and state.beds_in_use < params.n_beds:
        _, _, _, patient = heapq.heappop(state.bed_queue)
        state.beds_in_use += 1
        patient.bed_min = float(t)
        patient.wait_min += t - patient.arrival_min
        patient.ready_since = float(t)
        bedded.append(patient)
        state._request_next(patient, float(t))
    # drain even with no new bedding: a capacity window closing at t frees
    # slots without any completion event
    state._drain_resources(float(t))
    return bedded


def progress_treatment(
    state: SimulationState,
    t: int,
    *,
    run_id: int = 0,
    los_threshold: float = 4.0,
) -> list[SyntheticStay]:
    """Phase 3: play out completions through the end of the tick."""
    tick_end = t + state.params_at(float(t)).tick_minutes
    finished = []
    while state.completions and state.completions[0][0] <= tick_end:
        now, _, patient = heapq.heappop(state.completions)
        if patient.holding is not None:
            state.busy[patient.holding] -= 1
            patient.holding = None
        patient.cursor += 1
        if patient.cursor == len(patient.steps):
            state.beds_in_use -= 1
            state.discharged += 1
            los_hours = (now - patient.arrival_min) / 60.0
            bed_wait = (patient.bed_min or 0.0) - patient.arrival_min
            finished.append(
                SyntheticStay(
                    run_id=run_id,
                    sim_id=patient.sim_id,
                    source_patient_id=patient.record.patient_id,
                    arrival_min=patient.arrival_min,
                    discharge_min=now,
                    los_hours=los_hours,
                    label=los_hours > los_threshold,
                    acuity=patient.record.acuity,
                    disposition=patient.record.disposition,
                    total_wait_min=patient.wait_min,
                    bed_wait_min=bed_wait,
                    step_waits=tuple(patient.step_waits),
                )
            )
        else:
            patient.ready_since = now
            state._request_next(patient, now)
        state._drain_resources(now)
    return finished


@dataclass(frozen=True)
class SimulationResult:
    stays: tuple[SyntheticStay, ...]
    telemetry: tuple[TickStats, ...]


def run_simulation(
    params: EDEnvironmentParams | ParamsTimeline,
    pool: PatientPool,
    horizon_minutes: int,
    *,
    seed: int | np.random.Generator = 0,
    warmup_minutes: int = 0,
    run_id: int = 0,
    los_threshold: float = 4.0,
    collect_telemetry: bool = False,
) -> SimulationResult:
    """Run arrivals over [0, horizon), then drain the department empty.

    Stays arriving before warmup_minutes are simulated (they load the
    queues) but dropped from the result.
    """
    timeline = as_timeline(params)
    if horizon_minutes < 0 or warmup_minutes < 0:
        raise SimulationError("horizon and warmup must be non-negative")
    if warmup_minutes > horizon_minutes:
        raise SimulationError("warmup cannot exceed the horizon")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    state = SimulationState(timeline, rng, pool)
    tick = timeline.baseline.tick_minutes
    stays: list[SyntheticStay] = []
    telemetry: list[TickStats] = []
    drain_limit = horizon_minutes + 60 * 24 * 60  # sixty days of slack
    t = 0
    while t < horizon_minutes or state.in_system() > 0:
        if t < horizon_minutes:
            admit_arrivals(state, t)
        assign_beds(state, t)
        done = progress_treatment(state, t, run_id=run_id, los_threshold=los_threshold)
        for stay in done:
            if stay.arrival_min >= warmup_minutes:
                stays.append(stay)
        if collect_telemetry:
            telemetry.append(
                TickStats(
                    t=t,
                    arrived=state.arrived,
                    discharged=state.discharged,
                    queued=len(state.bed_queue),
                    bedded=state.beds_in_use,
                    busy_clinician=state.busy[CLINICIAN],
                    busy_imaging=state.busy[IMAGING],
                )
            )
        t += tick
        if t > drain_limit:
            raise SimulationError("department failed to drain; check capacities")
    return SimulationResult(tuple(stays), tuple(telemetry))


# ---------------------------------------------------------------------------
# dataset CSV
# ---------------------------------------------------------------------------


def write_dataset(
    path: str | Path,
    stays: Iterable[SyntheticStay],
    header_comment: str | None = None,
) -> None:
    with open(path, "w", encoding="utf-8", newline="") as handle:
        if header_comment:
            handle.write(f"# {header_comment}\n")
        writer = csv.writer(handle)
        writer.writerow(DATASET_HEADER)
        for s in stays:
            writer.writerow(
                [
                    s.run_id,
                    s.sim_id,
                    s.source_patient_id,
                    s.arrival_min,
                    repr(s.discharge_min),
                    repr(s.los_hours),
                    int(s.label),
                    s.acuity,
                    s.disposition,
                    repr(s.total_wait_min),
                ]
            )


def read_dataset(path: str | Path) -> list[SyntheticStay]:
    with open(path, "r", encoding="utf-8", newline="") as handle:
        reader = csv.reader(line for line in handle if not line.startswith("#"))
        header = next(reader, None)
        if header is None or tuple(header) != DATASET_HEADER:
            raise SimulationError(f"bad dataset header {header!r}")
        stays = []
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(DATASET_HEADER):
                raise SimulationError(f"line {line_no}: expected {len(DATASET_HEADER)} fields")
            try:
                stays.append(
                    SyntheticStay(
                        run_id=int(row[0]),
                        sim_id=int(row[1]),
                        source_patient_id=row[2],
                        arrival_min=int(row[3]),
                        discharge_min=float(row[4]),
                        los_hours=float(row[5]),
                        label=bool(int(row[6])),
                        acuity=int(row[7]),
                        disposition=row[8],
                        total_wait_min=float(row[9]),
                    )
                )
            except ValueError:
                raise SimulationError(f"line {line_no}: malformed row") from None
    return stays
