"""Synthetic reference corpus with known per-step ground truth.

Generates a population of ED stays whose event log looks like a real export:
acuity-specific activity templates, lognormal service times rounded to whole
minutes, and waiting time injected into a random subset of transitions. The
generator records exactly how much of every inter-event gap is execution and
how much is wait, so downstream cleaning and simulation can be scored against
truth instead of against another estimate.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from datetime import datetime, timedelta
from math import log
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from . import eventlog as ev
from .patients import DISPOSITIONS, VITAL_NAMES, PatientRecord, write_features

COMPLAINT_CODES = tuple(f"C{i:02d}" for i in range(1, 21))
COMORBIDITY_CODES = tuple(f"M{i:02d}" for i in range(1, 16))

# Activities per acuity level, highest (1) to lowest (5). More acute patients
# get strictly longer workups.
ACUITY_TEMPLATES: dict[int, tuple[str, ...]] = {
    1: (
        ev.TRIAGE, ev.VITALSIGN, ev.LAB_TEST, ev.IMAGING_TEST, ev.MED_DISPENSE,
        ev.MED_ADMIN, ev.LAB_TEST, ev.VITALSIGN, ev.MED_DISPENSE, ev.MED_ADMIN,
        ev.DISCHARGE,
    ),
    2: (
        ev.TRIAGE, ev.VITALSIGN, ev.LAB_TEST, ev.IMAGING_TEST, ev.MED_DISPENSE,
        ev.MED_ADMIN, ev.LAB_TEST, ev.VITALSIGN, ev.DISCHARGE,
    ),
    3: (
        ev.TRIAGE, ev.VITALSIGN, ev.LAB_TEST, ev.IMAGING_TEST, ev.MED_DISPENSE,
        ev.MED_ADMIN, ev.VITALSIGN, ev.DISCHARGE,
    ),
    4: (ev.TRIAGE, ev.VITALSIGN, ev.LAB_TEST, ev.MED_DISPENSE, ev.DISCHARGE),
    5: (ev.TRIAGE, ev.VITALSIGN, ev.DISCHARGE),
}


@dataclass(frozen=True)
class ActivityTime:
    """Lognormal service time: target mean in minutes, sigma in log space."""

    mean_min: float
    log_sigma: float


DEFAULT_SERVICE_TIMES: dict[str, ActivityTime] = {
    ev.TRIAGE: ActivityTime(15.0, 0.30),
    ev.VITALSIGN: ActivityTime(25.0, 0.35),
    ev.LAB_TEST: ActivityTime(75.0, 0.40),
    ev.IMAGING_TEST: ActivityTime(60.0, 0.40),
    ev.MED_DISPENSE: ActivityTime(25.0, 0.40),
    ev.MED_ADMIN: ActivityTime(65.0, 0.45),
    ev.DISCHARGE: ActivityTime(30.0, 0.35),
}

GROUND_TRUTH_HEADER = ("stay_id", "step_index", "activity", "exec_min", "wait_min")


class CorpusError(ValueError):
    pass


@dataclass(frozen=True)
class CorpusSpec:
    n_stays: int = 500
    seed: int = 0
    acuity_mix: tuple[float, float, float, float, float] = (0.03, 0.25, 0.45, 0.22, 0.05)
    disposition_mix: tuple[float, float, float] = (0.62, 0.30, 0.08)
    service_times: Mapping[str, ActivityTime] = field(
        default_factory=lambda: dict(DEFAULT_SERVICE_TIMES)
    )
    wait_probability: float = 0.18
    wait_mean_min: float = 45.0
    wait_log_sigma: float = 0.6
    start: datetime = datetime(2025, 1, 6)
    arrival_days: float = 30.0

    def __post_init__(self) -> None:
        if self.n_stays < 1:
            raise CorpusError("n_stays must be positive")
        for name, mix in (("acuity_mix", self.acuity_mix), ("disposition_mix", self.disposition_mix)):
            if any(p < 0 for p in mix) or abs(sum(mix) - 1.0) > 1e-9:
                raise CorpusError(f"{name} must be non-negative and sum to 1")
        if not 0.0 <= self.wait_probability <= 1.0:
            raise CorpusError("wait_probability outside [0, 1]")
        if self.wait_mean_min <= 0 or self.wait_log_sigma < 0:
            raise CorpusError("wait magnitude parameters must be positive")
        needed = {act for steps in ACUITY_TEMPLATES.values() for act in steps}
        missing = needed - set(self.service_times)
        if missing:
            raise CorpusError(f"service_times missing {sorted(missing)}")


@dataclass(frozen=True)
class StepTruth:
    activity: str
    exec_min: int
    wait_min: int


@dataclass(frozen=True)
class GeneratedStay:
    record: PatientRecord
    arrival: datetime
    truth: tuple[StepTruth, ...]

    def events(self) -> list[ev.StayEvent]:
        rows = [ev.StayEvent(self.record.patient_id, ev.ARRIVAL, self.arrival)]
        at = self.arrival
        for step in self.truth:
            at = at + timedelta(minutes=step.exec_min + step.wait_min)
            rows.append(ev.StayEvent(self.record.patient_id, step.activity, at))
        return rows

    def exec_total_min(self) -> int:
        return sum(s.exec_min for s in self.truth)

    def wait_total_min(self) -> int:
        return sum(s.wait_min for s in self.truth)


def _lognormal_minutes(rng: np.random.Generator, mean_min: float, log_sigma: float) -> int:
    mu = log(mean_min) - 0.5 * log_sigma * log_sigma
    return max(1, round(float(rng.lognormal(mu, log_sigma))))


def generate_corpus(spec: CorpusSpec) -> list[GeneratedStay]:
    """Draw the whole corpus from one seeded generator, in a fixed order."""
    rng = np.random.default_rng(spec.seed)
    width = max(5, len(str(spec.n_stays)))
    stays: list[GeneratedStay] = []
    for i in range(spec.n_stays):
        acuity = int(rng.choice(5, p=spec.acuity_mix)) + 1
        disposition = DISPOSITIONS[int(rng.choice(3, p=spec.disposition_mix))]
        severity = (5 - acuity) / 4.0
        age = int(np.clip(round(float(rng.normal(55.0, 18.0))), 18, 95))
        past_admissions = int(rng.poisson(1.0))
        vitals = (
            round(float(rng.normal(74.0 + 26.0 * severity, 9.0)), 1),
            round(float(np.clip(rng.normal(14.0 + 6.0 * severity, 2.0), 8.0, None)), 1),
            round(float(np.clip(rng.normal(128.0 - 20.0 * severity, 12.0), 70.0, None)), 1),
            round(float(rng.normal(36.8 + 0.9 * severity, 0.4)), 1),
            round(float(np.clip(rng.normal(97.5 - 4.5 * severity, 1.3), 80.0, 100.0)), 1),
        )
        n_complaints = 1 + int(rng.binomial(2, 0.35))
        complaints = tuple(sorted(str(c) for c in rng.choice(COMPLAINT_CODES, size=n_complaints, replace=False)))
        n_comorb = min(int(rng.poisson(0.9 + age / 50.0)), 6)
        comorbidities = tuple(
            sorted(str(c) for c in rng.choice(COMORBIDITY_CODES, size=n_comorb, replace=False))
        )
        offset = int(rng.integers(0, max(1, int(spec.arrival_days * 1440))))
        arrival = spec.start + timedelta(minutes=offset)
        truth = []
        for activity in ACUITY_TEMPLATES[acuity]:
            timing = spec.service_times[activity]
            exec_min = _lognormal_minutes(rng, timing.mean_min, timing.log_sigma)
            wait_min = 0
            if rng.random() < spec.wait_probability:
                wait_min = max(
                    1, round(float(rng.lognormal(log(spec.wait_mean_min), spec.wait_log_sigma)))
                )
            truth.append(StepTruth(activity, exec_min, wait_min))
        total_min = sum(s.exec_min + s.wait_min for s in truth)
        record = PatientRecord(
            patient_id=f"pat{i:0{width}d}",
            age=age,
            acuity=acuity,
            disposition=disposition,
            past_admissions=past_admissions,
            vitals=vitals,
            complaint_codes=complaints,
            comorbidity_codes=comorbidities,
            true_los_hours=total_min / 60.0,
        )
        stays.append(GeneratedStay(record, arrival, tuple(truth)))
    return stays


def corpus_events(stays: Iterable[GeneratedStay]) -> list[ev.StayEvent]:
    """All events, globally chronological; same-minute events keep stay order."""
    rows: list[ev.StayEvent] = []
    for stay in stays:
        rows.extend(stay.events())
    rows.sort(key=lambda event: event.timestamp)
    return rows


def write_ground_truth(
    path: str | Path, stays: Iterable[GeneratedStay], header_comment: str | None = None
) -> None:
    with open(path, "w", encoding="utf-8", newline="") as handle:
        if header_comment:
            handle.write(f"# {header_comment}\n")
        writer = csv.writer(handle)
        writer.writerow(GROUND_TRUTH_HEADER)
        for stay in stays:
            for index, step in enumerate(stay.truth):
                writer.writerow([stay.record.patient_id, index, step.activity, step.exec_min, step.wait_min])


def read_ground_truth(path: str | Path) -> dict[str, list[StepTruth]]:
    with open(path, "r", encoding="utf-8", newline="") as handle:
        reader = csv.reader(line for line in handle if not line.startswith("#"))
        header = next(reader, None)
        if header is None or tuple(header) != GROUND_TRUTH_HEADER:
            raise CorpusError(f"bad ground-truth header {header!r}")
        out: dict[str, list[StepTruth]] = {}
        for row in reader:
            if not row:
                continue
            stay_id, _, activity, exec_min, wait_min = row
            out.setdefault(stay_id, []).append(StepTruth(activity, int(exec_min), int(wait_min)))
    return out


def write_corpus(
    stays: Sequence[GeneratedStay],
    out_dir: str | Path,
    header_comment: str | None = None,
) -> dict[str, Path]:
    """Write the three corpus files; returns their paths keyed by role."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "event_log": out / "event_log.csv",
        "features": out / "features.csv",
        "ground_truth": out / "ground_truth.csv",
    }
    ev.write_event_log(paths["event_log"], corpus_events(stays), header_comment=header_comment)
    write_features(
        paths["features"],
        [stay.record for stay in stays],
        vital_names=VITAL_NAMES,
        header_comment=header_comment,
    )
    write_ground_truth(paths["ground_truth"], stays, header_comment=header_comment)
    return paths
