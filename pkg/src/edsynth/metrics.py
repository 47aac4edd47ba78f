"""Distribution fidelity, coverage, and prediction-robustness metrics.

Everything here is a pure function over in-memory values. Distances and
rates are computed exactly: the 1-D Wasserstein distance integrates the gap
between empirical quantile functions (no binning, no sampling), and the
classification metrics are plain confusion-matrix arithmetic.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .patients import PatientRecord
from .simulation import SyntheticStay


class MetricsError(ValueError):
    pass


@dataclass(frozen=True)
class SummaryStat:
    """Median with interquartile range."""

    median: float
    iqr_low: float
    iqr_high: float


@dataclass(frozen=True)
class MeanSpread:
    """Mean with a two-standard-deviation band."""

    mean: float
    two_sd: float


def _summary(values: Sequence[float]) -> SummaryStat:
    arr = np.asarray(values, dtype=np.float64)
    low, mid, high = np.quantile(arr, [0.25, 0.5, 0.75])
    return SummaryStat(float(mid), float(low), float(high))


def _spread(values: Sequence[float]) -> MeanSpread:
    arr = np.asarray(values, dtype=np.float64)
    return MeanSpread(float(arr.mean()), float(2.0 * arr.std(ddof=0)))


# ---------------------------------------------------------------------------
# Wasserstein distance
# ---------------------------------------------------------------------------


def wasserstein_1d(a: Sequence[float], b: Sequence[float]) -> float:
    """Exact W1 between empirical distributions of two samples.

    Integrates |Qa(u) - Qb(u)| du over u in (0, 1), where Q is the empirical
    quantile (inverse CDF) step function. For equal-size samples this equals
    the mean absolute difference of the sorted values.
    """
    xs = np.sort(np.asarray(a, dtype=np.float64))
    ys = np.sort(np.asarray(b, dtype=np.float64))
    if xs.size == 0 or ys.size == 0:
        raise MetricsError("wasserstein_1d needs nonempty samples")
    n, m = xs.size, ys.size
    cuts = np.union1d(np.arange(1, n) / n, np.arange(1, m) / m)
    edges = np.concatenate(([0.0], cuts, [1.0]))
    widths = np.diff(edges)
    mids = (edges[:-1] + edges[1:]) / 2.0
    ax = xs[np.minimum((mids * n).astype(np.int64), n - 1)]
    bx = ys[np.minimum((mids * m).astype(np.int64), m - 1)]
    return float(np.sum(widths * np.abs(ax - bx)))


# ---------------------------------------------------------------------------
# LOS summaries (per-run median / exceed fraction)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LosSummary:
    median: SummaryStat
    fraction_over: SummaryStat
    threshold: float
    n_runs: int
    n_skipped: int


def los_summary(runs: Sequence[Sequence[float]], threshold: float = 4.0) -> LosSummary:
    """Per-run median and exceed fraction, each summarized across runs."""
    if not runs:
        raise MetricsError("los_summary needs at least one run")
    medians, fractions, skipped = [], [], 0
    for index, run in enumerate(runs):
        arr = np.asarray(run, dtype=np.float64)
        if arr.size == 0:
            warnings.warn(f"run {index} has no stays; excluded from summary", stacklevel=2)
            skipped += 1
            continue
        medians.append(float(np.median(arr)))
        fractions.append(float((arr > threshold).mean()))
    if not medians:
        raise MetricsError("all runs empty")
    return LosSummary(
        median=_summary(medians),
        fraction_over=_summary(fractions),
        threshold=threshold,
        n_runs=len(medians),
        n_skipped=skipped,
    )


# ---------------------------------------------------------------------------
# fidelity (real vs simulated LOS distributions, by group)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FidelityRow:
    group: str
    n_real: int
    real_median: float
    sim_median: SummaryStat
    wasserstein: SummaryStat
    n_runs: int


@dataclass(frozen=True)
class FidelityReport:
    rows: tuple[FidelityRow, ...]

    def row(self, group: str) -> FidelityRow:
        for row in self.rows:
            if row.group == group:
                return row
        raise MetricsError(f"no fidelity row for group {group!r}")


def _group_keys(record_like) -> tuple[str, ...]:
    return ("overall", f"acuity_{record_like.acuity}", f"disposition_{record_like.disposition}")


def fidelity_report(
    records: Sequence[PatientRecord],
    runs: Sequence[Sequence[SyntheticStay]],
) -> FidelityReport:
    """Table of real vs simulated LOS per group (overall, acuity, disposition)."""
    if not records or not runs:
        raise MetricsError("fidelity_report needs records and at least one run")
    real_by_group: dict[str, list[float]] = {}
    for record in records:
        for key in _group_keys(record):
            real_by_group.setdefault(key, []).append(record.true_los_hours)
    rows = []
    for group, real_values in real_by_group.items():
        sim_medians, distances = [], []
        for run in runs:
            sim_values = [s.los_hours for s in run if group in _group_keys(s)]
            if not sim_values:
                continue
            sim_medians.append(float(np.median(sim_values)))
            distances.append(wasserstein_1d(real_values, sim_values))
        if not sim_medians:
            continue
        rows.append(
            FidelityRow(
                group=group,
                n_real=len(real_values),
                real_median=float(np.median(real_values)),
                sim_median=_summary(sim_medians),
                wasserstein=_summary(distances),
                n_runs=len(sim_medians),
            )
        )
    order = {"overall": 0}
    rows.sort(key=lambda r: (order.get(r.group, 1), r.group))
    return FidelityReport(tuple(rows))


# ---------------------------------------------------------------------------
# coverage / width
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CoverageReport:
    group: str
    coverage: float
    n_covered: int
    n_considered: int
    n_skipped: int
    width: SummaryStat


def coverage_width(
    real: Mapping[str, float],
    sims: Sequence[Mapping[str, Sequence[float]]],
    *,
    interval: tuple[float, float] | None = None,
    group: str = "overall",
) -> CoverageReport:
    """Coverage of true LOS by each patient's simulated-LOS interval.

    sims maps, per run, patient id to that run's simulated LOS values. The
    interval is [min, max] over every instance in every run, or a percentile
    pair like (2.5, 97.5) when requested. Patients who were never sampled
    are skipped and counted.
    """
    if not real:
        raise MetricsError("coverage_width needs at least one real patient")
    pooled: dict[str, list[float]] = {pid: [] for pid in real}
    for run in sims:
        for pid, values in run.items():
            if pid in pooled:
                pooled[pid].extend(values)
    covered = 0
    widths = []
    skipped = 0
    for pid, true_los in real.items():
        values = pooled[pid]
        if not values:
            skipped += 1
            continue
        arr = np.asarray(values, dtype=np.float64)
        if interval is None:
            low, high = float(arr.min()), float(arr.max())
        else:
            low, high = (float(x) for x in np.percentile(arr, interval))
        if low <= true_los <= high:
            covered += 1
        widths.append(high - low)
    considered = len(real) - skipped
    if considered == 0:
        raise MetricsError("no patient had any simulated instance")
    return CoverageReport(
        group=group,
        coverage=covered / considered,
        n_covered=covered,
        n_considered=considered,
        n_skipped=skipped,
        width=_summary(widths),
    )


def coverage_report(
    records: Sequence[PatientRecord],
    runs: Sequence[Sequence[SyntheticStay]],
    *,
    interval: tuple[float, float] | None = None,
) -> list[CoverageReport]:
    """coverage_width per group, pooling instances across runs."""
    reports = []
    groups: dict[str, list[PatientRecord]] = {}
    for record in records:
        for key in _group_keys(record):
            groups.setdefault(key, []).append(record)
    per_run_maps: list[dict[str, list[float]]] = []
    for run in runs:
        run_map: dict[str, list[float]] = {}
        for stay in run:
            run_map.setdefault(stay.source_patient_id, []).append(stay.los_hours)
        per_run_maps.append(run_map)
    order = {"overall": 0}
    for group in sorted(groups, key=lambda g: (order.get(g, 1), g)):
        real = {r.patient_id: r.true_los_hours for r in groups[group]}
        try:
            reports.append(coverage_width(real, per_run_maps, interval=interval, group=group))
        except MetricsError:
            continue  # nobody from this group was ever sampled
    return reports


# ---------------------------------------------------------------------------
# predictions and classification metrics
# ---------------------------------------------------------------------------

PREDICTIONS_HEADER = ("id", "predicted_label", "score")


class PredictionSet:
    """Predicted labels (and optional scores) keyed by stay or patient id."""

    def __init__(self, entries: Mapping[str, tuple[int, float | None]]):
        for pid, (label, score) in entries.items():
            if label not in (0, 1):
                raise MetricsError(f"{pid}: predicted label must be 0 or 1, got {label!r}")
            if score is not None and not 0.0 <= score <= 1.0:
                raise MetricsError(f"{pid}: score {score} outside [0, 1]")
        self._entries = dict(entries)

    def __len__(self) -> int:
        return len(self._entries)

    def __contains__(self, pid: str) -> bool:
        return pid in self._entries

    def ids(self) -> list[str]:
        return list(self._entries)

    def label(self, pid: str) -> int:
        return self._entries[pid][0]

    def score(self, pid: str) -> float | None:
        return self._entries[pid][1]

    def items(self) -> Iterable[tuple[str, tuple[int, float | None]]]:
        return self._entries.items()


def read_predictions(path: str | Path) -> tuple[PredictionSet, list[str]]:
    """Load a predictions CSV; returns the set plus schema warnings."""
    problems: list[str] = []
    entries: dict[str, tuple[int, float | None]] = {}
    with open(path, "r", encoding="utf-8", newline="") as handle:
        reader = csv.reader(line for line in handle if not line.startswith("#"))
        header = next(reader, None)
        if header is None or tuple(header) != PREDICTIONS_HEADER:
            raise MetricsError(f"{path}: bad predictions header {header!r}")
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 3:
                raise MetricsError(f"{path}:{line_no}: expected 3 fields")
            pid, label_raw, score_raw = row
            if pid in entries:
                raise MetricsError(f"{path}:{line_no}: duplicate id {pid!r}")
            try:
                label = int(label_raw)
                score = float(score_raw) if score_raw != "" else None
            except ValueError:
                raise MetricsError(f"{path}:{line_no}: malformed row") from None
            if score is not None and label != int(score >= 0.5):
                problems.append(f"{path}:{line_no}: label {label} disagrees with score {score}")
            entries[pid] = (label, score)
    if not entries:
        raise MetricsError(f"{path}: no predictions")
    return PredictionSet(entries), problems


def write_predictions(
    path: str | Path,
    entries: Iterable[tuple[str, int, float | None]],
    header_comment: str | None = None,
) -> None:
    with open(path, "w", encoding="utf-8", newline="") as handle:
        if header_comment:
            handle.write(f"# {header_comment}\n")
        writer = csv.writer(handle)
        writer.writerow(PREDICTIONS_HEADER)
        for pid, label, score in entries:
            writer.writerow([pid, label, "" if score is None else repr(float(score))])


@dataclass(frozen=True)
class ClassificationMetrics:
    tp: int
    fp: int
    fn: int
    tn: int
    precision: float | None  # absent when nothing was predicted positive
    recall: float | None  # absent when the truth has no positives
    prevalence: float

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn


def classification_metrics(preds: PredictionSet, truth: Mapping[str, int]) -> ClassificationMetrics:
    tp = fp = fn = tn = 0
    for pid, (label, _) in preds.items():
        if pid not in truth:
            raise MetricsError(f"prediction for unknown id {pid!r}")
        actual = truth[pid]
        if label == 1 and actual == 1:
            tp += 1
        elif label == 1 and actual == 0:
            fp += 1
        elif label == 0 and actual == 1:
            fn += 1
        else:
            tn += 1
    total = tp + fp + fn + tn
    if total == 0:
        raise MetricsError("empty prediction set")
    precision = tp / (tp + fp) if (tp + fp) > 0 else None
    recall = tp / (tp + fn) if (tp + fn) > 0 else None
    return ClassificationMetrics(
        tp=tp, fp=fp, fn=fn, tn=tn,
        precision=precision, recall=recall,
        prevalence=(tp + fn) / total,
    )


def missed_per_100(preds: PredictionSet, truth: Mapping[str, int]) -> float:
    """Positive stays predicted negative, per 100 evaluated stays."""
    m = classification_metrics(preds, truth)
    return 100.0 * m.fn / m.total


# ---------------------------------------------------------------------------
# robustness report (per model, across runs)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RobustnessRow:
    model: str
    scenario: str
    precision: MeanSpread | None
    recall: MeanSpread | None
    missed: MeanSpread
    n_runs: int


def robustness_row(
    model: str,
    scenario: str,
    per_run: Sequence[ClassificationMetrics],
) -> RobustnessRow:
    """Aggregate per-run confusion metrics as mean with a 2 SD band."""
    if not per_run:
        raise MetricsError("robustness_row needs at least one run")
    precisions = [m.precision for m in per_run if m.precision is not None]
    recalls = [m.recall for m in per_run if m.recall is not None]
    missed = [100.0 * m.fn / m.total for m in per_run]
    return RobustnessRow(
        model=model,
        scenario=scenario,
        precision=_spread(precisions) if precisions else None,
        recall=_spread(recalls) if recalls else None,
        missed=_spread(missed),
        n_runs=len(per_run),
    )


# ---------------------------------------------------------------------------
# CSV / text rendering
# ---------------------------------------------------------------------------


def write_fidelity_csv(path: str | Path, report: FidelityReport, header_comment: str | None = None) -> None:
    with open(path, "w", encoding="utf-8", newline="") as handle:
        if header_comment:
            handle.write(f"# {header_comment}\n")
        writer = csv.writer(handle)
        writer.writerow(
            ["group", "n_real", "real_median_los", "sim_median_los", "sim_median_iqr_low",
             "sim_median_iqr_high", "w1_median", "w1_iqr_low", "w1_iqr_high", "n_runs"]
        )
        for r in report.rows:
            writer.writerow(
                [r.group, r.n_real, repr(r.real_median), repr(r.sim_median.median),
                 repr(r.sim_median.iqr_low), repr(r.sim_median.iqr_high), repr(r.wasserstein.median),
                 repr(r.wasserstein.iqr_low), repr(r.wasserstein.iqr_high), r.n_runs]
            )


def write_coverage_csv(path: str | Path, reports: Sequence[CoverageReport], header_comment: str | None = None) -> None:
    with open(path, "w", encoding="utf-8", newline="") as handle:
        if header_comment:
            handle.write(f"# {header_comment}\n")
        writer = csv.writer(handle)
        writer.writerow(
            ["group", "coverage", "n_covered", "n_considered", "n_skipped",
             "width_median", "width_iqr_low", "width_iqr_high"]
        )
        for r in reports:
            writer.writerow(
                [r.group, repr(r.coverage), r.n_covered, r.n_considered, r.n_skipped,
                 repr(r.width.median), repr(r.width.iqr_low), repr(r.width.iqr_high)]
            )


def write_robustness_csv(path: str | Path, rows: Sequence[RobustnessRow], header_comment: str | None = None) -> None:
    with open(path, "w", encoding="utf-8", newline="") as handle:
        if header_comment:
            handle.write(f"# {header_comment}\n")
        writer = csv.writer(handle)
        writer.writerow(
            ["model", "scenario", "precision_mean", "precision_2sd", "recall_mean",
             "recall_2sd", "missed_per_100_mean", "missed_per_100_2sd", "n_runs"]
        )
        for r in rows:
            writer.writerow(
                [r.model, r.scenario,
                 "" if r.precision is None else repr(r.precision.mean),
                 "" if r.precision is None else repr(r.precision.two_sd),
                 "" if r.recall is None else repr(r.recall.mean),
                 "" if r.recall is None else repr(r.recall.two_sd),
                 repr(r.missed.mean), repr(r.missed.two_sd), r.n_runs]
            )


def _fmt(x: float | None, digits: int = 2) -> str:
    return "-" if x is None else f"{x:.{digits}f}"


def render_summary(
    fidelity: FidelityReport | None = None,
    coverage: Sequence[CoverageReport] = (),
    robustness: Sequence[RobustnessRow] = (),
    los: Mapping[str, LosSummary] | None = None,
) -> str:
    """Plain-text digest of whichever reports are available."""
    lines: list[str] = []
    if fidelity is not None:
        lines.append("LOS distribution fidelity (hours)")
        lines.append(f"{'group':<18}{'real med':>9}{'sim med (IQR)':>22}{'W1 (IQR)':>22}")
        for r in fidelity.rows:
            sim = f"{_fmt(r.sim_median.median)} ({_fmt(r.sim_median.iqr_low)}-{_fmt(r.sim_median.iqr_high)})"
            w1 = f"{_fmt(r.wasserstein.median)} ({_fmt(r.wasserstein.iqr_low)}-{_fmt(r.wasserstein.iqr_high)})"
            lines.append(f"{r.group:<18}{_fmt(r.real_median):>9}{sim:>22}{w1:>22}")
        lines.append("")
    if coverage:
        lines.append("Coverage of true LOS by simulated intervals")
        lines.append(f"{'group':<18}{'coverage':>9}{'width med (IQR)':>24}{'skipped':>9}")
        for r in coverage:
            width = f"{_fmt(r.width.median)} ({_fmt(r.width.iqr_low)}-{_fmt(r.width.iqr_high)})"
            lines.append(f"{r.group:<18}{_fmt(r.coverage):>9}{width:>24}{r.n_skipped:>9}")
        lines.append("")
    if los:
        lines.append("LOS summaries per scenario")
        lines.append(f"{'scenario':<18}{'median (IQR)':>22}{'frac>thr (IQR)':>24}{'runs':>6}")
        for name, summary in los.items():
            med = f"{_fmt(summary.median.median)} ({_fmt(summary.median.iqr_low)}-{_fmt(summary.median.iqr_high)})"
            frac = (
                f"{_fmt(summary.fraction_over.median)} "
                f"({_fmt(summary.fraction_over.iqr_low)}-{_fmt(summary.fraction_over.iqr_high)})"
            )
            lines.append(f"{name:<18}{med:>22}{frac:>24}{summary.n_runs:>6}")
        lines.append("")
    if robustness:
        lines.append("Prediction robustness (mean +/- 2 SD across runs)")
        lines.append(f"{'model':<20}{'scenario':<18}{'precision':>14}{'recall':>14}{'missed/100':>14}")
        for r in robustness:
            prec = "-" if r.precision is None else f"{r.precision.mean:.2f}+-{r.precision.two_sd:.2f}"
            rec = "-" if r.recall is None else f"{r.recall.mean:.2f}+-{r.recall.two_sd:.2f}"
            mis = f"{r.missed.mean:.2f}+-{r.missed.two_sd:.2f}"
            lines.append(f"{r.model:<20}{r.scenario:<18}{prec:>14}{rec:>14}{mis:>14}")
        lines.append("")
    return "\n".join(lines)
