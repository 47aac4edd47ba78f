"""Feature extraction from the patient features CSV.

The features file carries one row per historical patient: the five fixed
leading columns (patient_id, age, acuity, disposition, past_admissions), a
variable block of vital-sign columns named in the header, then the two
`;`-joined code lists and true_los_hours. The harness turns those rows into a
dense numeric matrix: age, acuity, past_admissions, the vitals, and one
multi-hot column per complaint and comorbidity code seen at training time.
Disposition is excluded: it records the stay outcome, which a predictor of
that outcome must not see.

Missing numeric feature fields are legal in the file and are imputed with the
training-set column median, so an encoded matrix never contains NaN. Codes
absent from the training schema contribute no column at predict time; they
are reported as warnings rather than errors.
"""

from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

DEFAULT_LOS_THRESHOLD_HOURS = 4.0

_HEADER_PREFIX = ("patient_id", "age", "acuity", "disposition", "past_admissions")
_HEADER_SUFFIX = ("complaint_codes", "comorbidity_codes", "true_los_hours")
_BASE_COLUMNS = ("age", "acuity", "past_admissions")


class HarnessError(ValueError):
    """Raised for malformed input files or inconsistent harness inputs."""


@dataclass(frozen=True)
class PatientRow:
    """One parsed features row; None marks a numeric field left blank."""

    patient_id: str
    age: float | None
    acuity: float | None
    past_admissions: float | None
    vitals: tuple[float | None, ...]
    complaint_codes: tuple[str, ...]
    comorbidity_codes: tuple[str, ...]
    true_los_hours: float


def _parse_optional(raw: str, where: str) -> float | None:
    if raw == "":
        return None
    try:
        value = float(raw)
    except ValueError:
        raise HarnessError(f"{where}: non-numeric value {raw!r}") from None
    if not np.isfinite(value):
        raise HarnessError(f"{where}: non-finite value {raw!r}")
    return value


def read_patient_rows(path: str | Path) -> tuple[list[PatientRow], tuple[str, ...]]:
    """Load feature rows; returns them with the vital names from the header."""
    with open(path, "r", encoding="utf-8", newline="") as handle:
        reader = csv.reader(line for line in handle if not line.startswith("#"))
        header = next(reader, None)
        if header is None or len(header) < len(_HEADER_PREFIX) + len(_HEADER_SUFFIX):
            raise HarnessError(f"{path}: bad features header {header!r}")
        if tuple(header[:5]) != _HEADER_PREFIX or tuple(header[-3:]) != _HEADER_SUFFIX:
            raise HarnessError(f"{path}: bad features header {header!r}")
        vital_names = tuple(header[5:-3])
        rows: list[PatientRow] = []
        seen: set[str] = set()
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise HarnessError(f"{path}:{line_no}: expected {len(header)} fields, got {len(row)}")
            pid = row[0]
            if not pid:
                raise HarnessError(f"{path}:{line_no}: empty patient_id")
            if pid in seen:
                raise HarnessError(f"{path}:{line_no}: duplicate patient_id {pid!r}")
            seen.add(pid)
            where = f"{path}:{line_no}"
            los = _parse_optional(row[-1], where)
            if los is None:
                raise HarnessError(f"{where}: missing true_los_hours")
            if los < 0:
                raise HarnessError(f"{where}: negative true_los_hours")
            rows.append(
                PatientRow(
                    patient_id=pid,
                    age=_parse_optional(row[1], where),
                    acuity=_parse_optional(row[2], where),
                    past_admissions=_parse_optional(row[4], where),
                    vitals=tuple(_parse_optional(v, where) for v in row[5:-3]),
                    complaint_codes=tuple(c for c in row[-3].split(";") if c),
                    comorbidity_codes=tuple(c for c in row[-2].split(";") if c),
                    true_los_hours=los,
                )
            )
    if not rows:
        raise HarnessError(f"{path}: no patient rows")
    return rows, vital_names


@dataclass(frozen=True)
class FeatureSchema:
    """Column layout plus per-column imputation values, fixed at training."""

    vital_names: tuple[str, ...]
    complaint_codes: tuple[str, ...]
    comorbidity_codes: tuple[str, ...]
    fill_values: tuple[float, ...]

    def __post_init__(self) -> None:
        if len(self.fill_values) != len(self.columns):
            raise HarnessError(
                f"{len(self.fill_values)} fill values for {len(self.columns)} columns"
            )

    @property
    def columns(self) -> tuple[str, ...]:
        return (
            _BASE_COLUMNS
            + self.vital_names
            + tuple(f"complaint={c}" for c in self.complaint_codes)
            + tuple(f"comorbidity={c}" for c in self.comorbidity_codes)
        )

    @property
    def hash(self) -> str:
        payload = [[name, repr(fill)] for name, fill in zip(self.columns, self.fill_values)]
        blob = json.dumps(payload, separators=(",", ":")).encode("utf-8")
        return hashlib.sha256(blob).hexdigest()[:16]


def _column_median(values: list[float]) -> float:
    return float(np.median(values)) if values else 0.0


def build_schema(rows: Sequence[PatientRow], vital_names: Sequence[str]) -> FeatureSchema:
    """Derive the column layout and imputation medians from training rows."""
    if not rows:
        raise HarnessError("cannot build a schema from zero rows")
    for row in rows:
        if len(row.vitals) != len(vital_names):
            raise HarnessError(
                f"{row.patient_id}: {len(row.vitals)} vitals, header has {len(vital_names)}"
            )
    complaint_codes = tuple(sorted({c for row in rows for c in row.complaint_codes}))
    comorbidity_codes = tuple(sorted({c for row in rows for c in row.comorbidity_codes}))
    fills = [
        _column_median([row.age for row in rows if row.age is not None]),
        _column_median([row.acuity for row in rows if row.acuity is not None]),
        _column_median([row.past_admissions for row in rows if row.past_admissions is not None]),
    ]
    for slot in range(len(vital_names)):
        fills.append(_column_median([row.vitals[slot] for row in rows if row.vitals[slot] is not None]))
    fills.extend([0.0] * (len(complaint_codes) + len(comorbidity_codes)))
    return FeatureSchema(
        vital_names=tuple(vital_names),
        complaint_codes=complaint_codes,
        comorbidity_codes=comorbidity_codes,
        fill_values=tuple(fills),
    )


def encode(rows: Sequence[PatientRow], schema: FeatureSchema) -> tuple[np.ndarray, list[str]]:
    """Encode rows against a schema; returns (matrix, unseen-code warnings)."""
    n_numeric = len(_BASE_COLUMNS) + len(schema.vital_names)
    complaint_slot = {c: n_numeric + i for i, c in enumerate(schema.complaint_codes)}
    comorbidity_slot = {
        c: n_numeric + len(schema.complaint_codes) + i for i, c in enumerate(schema.comorbidity_codes)
    }
    matrix = np.zeros((len(rows), len(schema.columns)), dtype=np.float64)
    unseen: set[str] = set()
    for r, row in enumerate(rows):
        if len(row.vitals) != len(schema.vital_names):
            raise HarnessError(
                f"{row.patient_id}: {len(row.vitals)} vitals, schema has {len(schema.vital_names)}"
            )
        numeric = (row.age, row.acuity, row.past_admissions, *row.vitals)
        for c, value in enumerate(numeric):
            matrix[r, c] = schema.fill_values[c] if value is None else value
        for code in row.complaint_codes:
            slot = complaint_slot.get(code)
            if slot is None:
                unseen.add(f"complaint code {code!r} not in schema; contributes no feature")
            else:
                matrix[r, slot] = 1.0
        for code in row.comorbidity_codes:
            slot = comorbidity_slot.get(code)
            if slot is None:
                unseen.add(f"comorbidity code {code!r} not in schema; contributes no feature")
            else:
                matrix[r, slot] = 1.0
    if not np.isfinite(matrix).all():
        raise HarnessError("encoded matrix contains non-finite values")
    return matrix, sorted(unseen)


def labels(rows: Sequence[PatientRow], threshold: float = DEFAULT_LOS_THRESHOLD_HOURS) -> np.ndarray:
    """Binary long-stay labels: 1 when the recorded LOS exceeds the threshold."""
    return np.asarray([1 if row.true_los_hours > threshold else 0 for row in rows], dtype=np.int64)


@dataclass(frozen=True)
class FeatureMatrix:
    """Encoded training material: ids, dense matrix, labels, and the schema."""

    ids: tuple[str, ...]
    X: np.ndarray
    y: np.ndarray
    schema: FeatureSchema


def featurize(
    path: str | Path, threshold: float = DEFAULT_LOS_THRESHOLD_HOURS
) -> FeatureMatrix:
    """Read a features file and encode it against its own derived schema."""
    rows, vital_names = read_patient_rows(path)
    schema = build_schema(rows, vital_names)
    # the schema comes from these same rows, so no code can be unseen
    matrix, _ = encode(rows, schema)
    return FeatureMatrix(
        ids=tuple(row.patient_id for row in rows),
        X=matrix,
        y=labels(rows, threshold),
        schema=schema,
    )


# ---------------------------------------------------------------------------
# synthetic dataset CSV (stay index only; everything else stays in the file)
# ---------------------------------------------------------------------------

_REQUIRED_DATASET_COLUMNS = ("run_id", "sim_id", "source_patient_id")


def read_stay_index(path: str | Path) -> list[tuple[str, str]]:
    """List (stay id, source patient id) pairs from a synthetic dataset CSV.

    The stay id is "run_id:sim_id", the key the scorer uses to join
    predictions back to the dataset.
    """
    with open(path, "r", encoding="utf-8", newline="") as handle:
        reader = csv.reader(line for line in handle if not line.startswith("#"))
        header = next(reader, None)
        if header is None:
            raise HarnessError(f"{path}: empty dataset file")
        try:
            slots = [header.index(name) for name in _REQUIRED_DATASET_COLUMNS]
        except ValueError:
            raise HarnessError(
                f"{path}: dataset header {header!r} lacks {', '.join(_REQUIRED_DATASET_COLUMNS)}"
            ) from None
        width = len(header)
        pairs: list[tuple[str, str]] = []
        seen: set[str] = set()
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != width:
                raise HarnessError(f"{path}:{line_no}: expected {width} fields, got {len(row)}")
            run_id, sim_id, source = (row[s] for s in slots)
            stay_id = f"{run_id}:{sim_id}"
            if stay_id in seen:
                raise HarnessError(f"{path}:{line_no}: duplicate stay id {stay_id!r}")
            seen.add(stay_id)
            pairs.append((stay_id, source))
    if not pairs:
        raise HarnessError(f"{path}: no stays")
    return pairs
