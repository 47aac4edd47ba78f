"""Patient feature records, the resampling pool, and the features CSV format.

The pool joins one feature record per patient with that patient's cleaned
trajectory. Sampling is two-stage: first an (acuity, disposition) cell drawn
by its empirical joint frequency, then a uniform draw with replacement among
the records in that cell. Feature values are never perturbed.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .eventlog import CleanTrajectory

VITAL_NAMES = ("heart_rate", "resp_rate", "sbp", "temperature", "o2sat")
DISPOSITIONS = ("home", "ward", "icu")

_HEADER_PREFIX = ("patient_id", "age", "acuity", "disposition", "past_admissions")
_HEADER_SUFFIX = ("complaint_codes", "comorbidity_codes", "true_los_hours")


class PatientPoolError(ValueError):
    """Raised for malformed feature files or inconsistent pool inputs."""


@dataclass(frozen=True)
class PatientRecord:
    """One historical patient: static features plus the recorded LOS."""

    patient_id: str
    age: int
    acuity: int
    disposition: str
    past_admissions: int
    vitals: tuple[float, ...]
    complaint_codes: tuple[str, ...]
    comorbidity_codes: tuple[str, ...]
    true_los_hours: float


class PatientPool:
    """Records plus cleaned trajectories, indexed by (acuity, disposition)."""

    def __init__(
        self,
        records: Sequence[PatientRecord],
        trajectories: Mapping[str, CleanTrajectory],
    ) -> None:
        self.records = tuple(records)
        self.trajectories = dict(trajectories)
        cells: dict[tuple[int, str], list[int]] = {}
        for index, record in enumerate(self.records):
            cells.setdefault((record.acuity, record.disposition), []).append(index)
        self._cell_keys = sorted(cells)
        self._cell_indices = [np.asarray(cells[key], dtype=np.int64) for key in self._cell_keys]
        counts = np.asarray([len(cells[key]) for key in self._cell_keys], dtype=np.float64)
        self._cell_weights = counts / counts.sum()

    def __len__(self) -> int:
        return len(self.records)

    def joint_distribution(self) -> dict[tuple[int, str], float]:
        return {key: float(w) for key, w in zip(self._cell_keys, self._cell_weights)}

    def trajectory_for(self, record: PatientRecord) -> CleanTrajectory:
        return self.trajectories[record.patient_id]


def build_pool(
    records: Sequence[PatientRecord],
    trajectories: Iterable[CleanTrajectory],
) -> PatientPool:
    """Join records to trajectories by id; both sides must match exactly."""
    if not records:
        raise PatientPoolError("cannot build a pool from zero records")
    by_id: dict[str, CleanTrajectory] = {}
    for trajectory in trajectories:
        if trajectory.stay_id in by_id:
            raise PatientPoolError(f"duplicate trajectory for {trajectory.stay_id!r}")
        by_id[trajectory.stay_id] = trajectory
    record_ids = [r.patient_id for r in records]
    missing = [pid for pid in record_ids if pid not in by_id]
    if missing:
        raise PatientPoolError(f"records without a trajectory: {', '.join(sorted(missing))}")
    orphans = sorted(set(by_id) - set(record_ids))
    if orphans:
        raise PatientPoolError(f"trajectories without a record: {', '.join(orphans)}")
    return PatientPool(records, by_id)


def sample_patient(pool: PatientPool, rng: np.random.Generator) -> tuple[PatientRecord, CleanTrajectory]:
    """Draw one patient: joint cell first, then uniform within the cell."""
    cell = int(rng.choice(len(pool._cell_weights), p=pool._cell_weights))
    indices = pool._cell_indices[cell]
    record = pool.records[int(indices[rng.integers(0, len(indices))])]
    return record, pool.trajectories[record.patient_id]


# ---------------------------------------------------------------------------
# features CSV
# ---------------------------------------------------------------------------


def features_header(vital_names: Sequence[str] = VITAL_NAMES) -> tuple[str, ...]:
    return _HEADER_PREFIX + tuple(vital_names) + _HEADER_SUFFIX


def write_features(
    path: str | Path,
    records: Iterable[PatientRecord],
    vital_names: Sequence[str] = VITAL_NAMES,
    header_comment: str | None = None,
) -> None:
    with open(path, "w", encoding="utf-8", newline="") as handle:
        if header_comment:
            handle.write(f"# {header_comment}\n")
        writer = csv.writer(handle)
        writer.writerow(features_header(vital_names))
        for record in records:
            if len(record.vitals) != len(vital_names):
                raise PatientPoolError(
                    f"{record.patient_id}: {len(record.vitals)} vitals, header has {len(vital_names)}"
                )
            writer.writerow(
                [
                    record.patient_id,
                    record.age,
                    record.acuity,
                    record.disposition,
                    record.past_admissions,
                    *[repr(v) for v in record.vitals],
                    ";".join(record.complaint_codes),
                    ";".join(record.comorbidity_codes),
                    repr(record.true_los_hours),
                ]
            )


def read_features(path: str | Path) -> tuple[list[PatientRecord], tuple[str, ...]]:
    """Load records; returns them with the vital column names found in the header."""
    with open(path, "r", encoding="utf-8", newline="") as handle:
        reader = csv.reader(line for line in handle if not line.startswith("#"))
        header = next(reader, None)
        if header is None or len(header) < len(_HEADER_PREFIX) + len(_HEADER_SUFFIX):
            raise PatientPoolError(f"bad features header {header!r}")
        if tuple(header[:5]) != _HEADER_PREFIX or tuple(header[-3:]) != _HEADER_SUFFIX:
            raise PatientPoolError(f"bad features header {header!r}")
        vital_names = tuple(header[5:-3])
        records: list[PatientRecord] = []
        seen: set[str] = set()
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise PatientPoolError(f"line {line_no}: expected {len(header)} fields, got {len(row)}")
            pid = row[0]
            if pid in seen:
                raise PatientPoolError(f"line {line_no}: duplicate patient_id {pid!r}")
            seen.add(pid)
            try:
                age = int(row[1])
                acuity = int(row[2])
                past = int(row[4])
                vitals = tuple(float(v) for v in row[5:-3])
                los = float(row[-1])
            except ValueError:
                raise PatientPoolError(f"line {line_no}: non-numeric field") from None
            disposition = row[3]
            if not 1 <= acuity <= 5:
                raise PatientPoolError(f"line {line_no}: acuity {acuity} outside 1..5")
            if age < 0 or past < 0 or los < 0:
                raise PatientPoolError(f"line {line_no}: negative value")
            records.append(
                PatientRecord(
                    patient_id=pid,
                    age=age,
                    acuity=acuity,
                    disposition=disposition,
                    past_admissions=past,
                    vitals=vitals,
                    complaint_codes=tuple(c for c in row[-3].split(";") if c),
                    comorbidity_codes=tuple(c for c in row[-2].split(";") if c),
                    true_los_hours=los,
                )
            )
    return records, vital_names
