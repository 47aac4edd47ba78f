"""Scenario perturbations and the Monte Carlo sweep.

A scenario perturbs the environment inside a bounded incident window: more
arrivals, fewer clinicians, or slower lab turnaround (or several at once for
composite scenarios). Outside the window the environment is exactly baseline.
Each run gets its own random stream derived from the master seed and the run
index, so runs are reproducible individually and independent of execution
order or worker count.
"""

from __future__ import annotations

import json
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from math import floor, inf
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import eventlog as ev
from .metrics import LosSummary, los_summary
from .patients import PatientPool
from .simulation import (
    DEFAULT_WARMUP_MINUTES,
    EDEnvironmentParams,
    ParamsTimeline,
    SimulationError,
    SyntheticStay,
    run_simulation,
)

BASELINE = "baseline"
ARRIVAL_SURGE = "arrival_surge"
CLINICIAN_CUT = "clinician_cut"
LAB_DELAY = "lab_delay"
COMPOSITE = "composite"

KINDS = (BASELINE, ARRIVAL_SURGE, CLINICIAN_CUT, LAB_DELAY, COMPOSITE)

DEFAULT_WINDOW_DAYS = 4.0
DEFAULT_RUNS = 1000


class ScenarioError(ValueError):
    pass


@dataclass(frozen=True)
class ScenarioSpec:
    """One named experimental condition.

    magnitude means percent for arrival_surge / clinician_cut and minutes
    for lab_delay; it is ignored for baseline. Composite scenarios carry
    (kind, magnitude) parts applied together in the same window.
    """

    name: str
    kind: str = BASELINE
    magnitude: float = 0.0
    parts: tuple[tuple[str, float], ...] = ()
    window_start_days: float = 0.0
    window_days: float = DEFAULT_WINDOW_DAYS
    runs: int = DEFAULT_RUNS
    master_seed: int = 0
    steady_state: bool = False
    paired_seeds: bool = True

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise ScenarioError(f"unknown scenario kind {self.kind!r} (one of {', '.join(KINDS)})")
        if self.kind != BASELINE and self.kind != COMPOSITE and self.magnitude < 0:
            raise ScenarioError("magnitude must be non-negative")
        if self.kind == COMPOSITE:
            if not self.parts:
                raise ScenarioError("composite scenario needs at least one part")
            for kind, magnitude in self.parts:
                if kind not in (ARRIVAL_SURGE, CLINICIAN_CUT, LAB_DELAY):
                    raise ScenarioError(f"composite part kind {kind!r} not perturbable")
                if magnitude < 0:
                    raise ScenarioError("composite part magnitude must be non-negative")
        if self.window_days <= 0:
            raise ScenarioError("window_days must be positive")
        if self.window_start_days < 0:
            raise ScenarioError("window_start_days must be non-negative")
        if self.runs < 1:
            raise ScenarioError("runs must be at least 1")

    @property
    def window_start_min(self) -> float:
        return self.window_start_days * 1440.0

    @property
    def window_end_min(self) -> float:
        return (self.window_start_days + self.window_days) * 1440.0


def _round_half_up(x: float) -> int:
    return int(floor(x + 0.5))


def _apply_one(params: EDEnvironmentParams, kind: str, magnitude: float) -> EDEnvironmentParams:
    if kind == ARRIVAL_SURGE:
        factor = 1.0 + magnitude / 100.0
        return replace(params, arrival_rates=tuple(r * factor for r in params.arrival_rates))
    if kind == CLINICIAN_CUT:
        cut = max(1, _round_half_up(params.n_clinicians * (1.0 - magnitude / 100.0)))
        return replace(params, n_clinicians=cut)
    if kind == LAB_DELAY:
        delays = dict(params.workflow_delays)
        delays[ev.LAB_TEST] = delays.get(ev.LAB_TEST, 0.0) + magnitude
        return replace(params, workflow_delays=delays)
    raise ScenarioError(f"cannot apply kind {kind!r}")


def apply_scenario(baseline: EDEnvironmentParams, spec: ScenarioSpec) -> EDEnvironmentParams:
    """Fully-perturbed parameters (windowing is build_timeline's job)."""
    if spec.kind == BASELINE:
        return baseline
    if spec.kind == COMPOSITE:
        params = baseline
        for kind, magnitude in spec.parts:
            params = _apply_one(params, kind, magnitude)
        return params
    return _apply_one(baseline, spec.kind, spec.magnitude)


def build_timeline(baseline: EDEnvironmentParams, spec: ScenarioSpec) -> ParamsTimeline:
    """Overlay the perturbation on the incident window (or everywhere)."""
    if spec.kind == BASELINE:
        return ParamsTimeline(baseline=baseline)
    perturbed = apply_scenario(baseline, spec)
    if spec.steady_state:
        window = (0.0, inf, perturbed)
    else:
        window = (spec.window_start_min, spec.window_end_min, perturbed)
    return ParamsTimeline(baseline=baseline, windows=(window,))


# ---------------------------------------------------------------------------
# presets
# ---------------------------------------------------------------------------


def preset_scenario(name: str, *, runs: int = DEFAULT_RUNS, master_seed: int = 0,
                    window_start_days: float = 0.0, window_days: float = DEFAULT_WINDOW_DAYS) -> ScenarioSpec:
    """Build one of the named presets: baseline, arrivals+P, clinicians-P, lab+M."""
    common = dict(runs=runs, master_seed=master_seed,
                  window_start_days=window_start_days, window_days=window_days)
    if name == BASELINE:
        return ScenarioSpec(name=name, kind=BASELINE, **common)
    for prefix, kind in (("arrivals+", ARRIVAL_SURGE), ("clinicians-", CLINICIAN_CUT), ("lab+", LAB_DELAY)):
        if name.startswith(prefix):
            try:
                magnitude = float(name[len(prefix):])
            except ValueError:
                raise ScenarioError(f"bad preset magnitude in {name!r}") from None
            return ScenarioSpec(name=name, kind=kind, magnitude=magnitude, **common)
    raise ScenarioError(f"unknown preset {name!r}")


def table_preset_names() -> list[str]:
    """The twelve graded presets: four magnitudes per perturbation family."""
    names = []
    for prefix in ("arrivals+", "clinicians-", "lab+"):
        names.extend(f"{prefix}{pct}" for pct in (5, 10, 15, 20))
    return names


# ---------------------------------------------------------------------------
# scenario JSON files
# ---------------------------------------------------------------------------


def scenario_to_json(spec: ScenarioSpec) -> dict:
    data = {
        "name": spec.name,
        "kind": spec.kind,
        "magnitude": spec.magnitude,
        "window_start": spec.window_start_days,
        "window_days": spec.window_days,
        "runs": spec.runs,
        "seed": spec.master_seed,
    }
    if spec.parts:
        data["parts"] = [{"kind": kind, "magnitude": magnitude} for kind, magnitude in spec.parts]
    if spec.steady_state:
        data["steady_state"] = True
    if not spec.paired_seeds:
        data["paired_seeds"] = False
    return data


def write_scenario(path: str | Path, spec: ScenarioSpec) -> None:
    Path(path).write_text(json.dumps(scenario_to_json(spec), indent=2) + "\n", encoding="utf-8")


def read_scenario(path: str | Path) -> ScenarioSpec:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"{path}: not valid JSON ({exc})") from None
    if not isinstance(data, dict) or "name" not in data:
        raise ScenarioError(f"{path}: scenario JSON needs at least a name")
    known = {"name", "kind", "magnitude", "window_start", "window_days", "runs", "seed",
             "parts", "steady_state", "paired_seeds"}
    unknown = set(data) - known
    if unknown:
        raise ScenarioError(f"{path}: unknown scenario keys {sorted(unknown)}")
    parts = tuple(
        (part["kind"], float(part["magnitude"])) for part in data.get("parts", ())
    )
    try:
        return ScenarioSpec(
            name=str(data["name"]),
            kind=str(data.get("kind", BASELINE)),
            magnitude=float(data.get("magnitude", 0.0)),
            parts=parts,
            window_start_days=float(data.get("window_start", 0.0)),
            window_days=float(data.get("window_days", DEFAULT_WINDOW_DAYS)),
            runs=int(data.get("runs", DEFAULT_RUNS)),
            master_seed=int(data.get("seed", 0)),
            steady_state=bool(data.get("steady_state", False)),
            paired_seeds=bool(data.get("paired_seeds", True)),
        )
    except (TypeError, KeyError) as exc:
        raise ScenarioError(f"{path}: malformed scenario ({exc})") from None


# ---------------------------------------------------------------------------
# the sweep
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ExperimentResult:
    spec: ScenarioSpec
    runs: tuple[tuple[SyntheticStay, ...], ...]
    los: LosSummary

    @property
    def name(self) -> str:
        return self.spec.name


def _run_seed(spec: ScenarioSpec, run_index: int) -> np.random.SeedSequence:
    if spec.paired_seeds:
        return np.random.SeedSequence(spec.master_seed, spawn_key=(run_index,))
    salt = zlib.crc32(spec.name.encode("utf-8"))
    return np.random.SeedSequence(spec.master_seed, spawn_key=(salt, run_index))


def _one_run(
    spec: ScenarioSpec,
    baseline: EDEnvironmentParams,
    pool: PatientPool,
    run_index: int,
    horizon_minutes: int,
    warmup_minutes: int,
    los_threshold: float,
) -> tuple[SyntheticStay, ...]:
    timeline = build_timeline(baseline, spec)
    rng = np.random.default_rng(_run_seed(spec, run_index))
    result = run_simulation(
        timeline,
        pool,
        horizon_minutes,
        seed=rng,
        warmup_minutes=warmup_minutes,
        run_id=run_index,
        los_threshold=los_threshold,
    )
    start, end = spec.window_start_min, spec.window_end_min
    return tuple(s for s in result.stays if start <= s.arrival_min < end)


def run_experiment(
    spec: ScenarioSpec,
    baseline: EDEnvironmentParams,
    pool: PatientPool,
    *,
    horizon_minutes: int | None = None,
    warmup_minutes: int | None = None,
    los_threshold: float = 4.0,
    jobs: int = 1,
) -> ExperimentResult:
    """Execute spec.runs independent simulations and window the results.

    The default horizon covers the incident window plus one day so stays
    starting late in the window can still discharge; the drain phase after
    the horizon catches the rest.
    """
    if warmup_minutes is None:
        warmup_minutes = min(DEFAULT_WARMUP_MINUTES, int(spec.window_start_min))
    if horizon_minutes is None:
        horizon_minutes = int(spec.window_end_min) + 1440
    args = [
        (spec, baseline, pool, index, horizon_minutes, warmup_minutes, los_threshold)
        for index in range(spec.runs)
    ]
    runs: list[tuple[SyntheticStay, ...]] = [()] * spec.runs
    if jobs <= 1 or spec.runs == 1:
        for index, arg in enumerate(args):
            try:
                runs[index] = _one_run(*arg)
            except Exception as exc:
                raise ScenarioError(f"{spec.name}: run {index} failed: {exc}") from exc
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool_exec:
            futures = {pool_exec.submit(_one_run, *arg): index for index, arg in enumerate(args)}
            for future, index in futures.items():
                try:
                    runs[index] = future.result()
                except Exception as exc:
                    raise ScenarioError(f"{spec.name}: run {index} failed: {exc}") from exc
    los = los_summary([[s.los_hours for s in run] for run in runs], los_threshold)
    return ExperimentResult(spec=spec, runs=tuple(runs), los=los)


def flatten_runs(result: ExperimentResult) -> list[SyntheticStay]:
    """All stays of an experiment in (run index, completion) order."""
    out: list[SyntheticStay] = []
    for run in result.runs:
        out.extend(run)
    return out
