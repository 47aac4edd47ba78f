"""Command-line front end: gen, clean, simulate, sweep, evaluate, report.

Every command records a run manifest. The manifest digest is a short hash
over the command, its input file contents, the scenario set, the seed, and
the option values that shape output bytes; the output directory and the
parallelism degree are deliberately excluded so reruns elsewhere (or with a
different worker count) reproduce identical files. Each output CSV carries
``# manifest <digest> seed <seed>`` as its first line.

Exit codes: 0 success, 2 validation or input error, 3 unexpected runtime
failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import re
import sys
from dataclasses import dataclass, replace
from pathlib import Path

from . import __version__
from . import eventlog as ev
from .corpus import CorpusError, CorpusSpec, generate_corpus, write_corpus
from .metrics import (
    MetricsError,
    PredictionSet,
    classification_metrics,
    coverage_report,
    fidelity_report,
    read_predictions,
    robustness_row,
    write_coverage_csv,
    write_fidelity_csv,
    write_robustness_csv,
)
from .patients import PatientPoolError, build_pool, read_features
from .scenarios import (
    BASELINE,
    DEFAULT_RUNS,
    ScenarioError,
    ScenarioSpec,
    flatten_runs,
    preset_scenario,
    read_scenario,
    run_experiment,
    scenario_to_json,
    table_preset_names,
)
from .simulation import EDEnvironmentParams, SimulationError, read_dataset, write_dataset

VALIDATION_ERRORS = (
    ev.EventLogError,
    CorpusError,
    PatientPoolError,
    SimulationError,
    ScenarioError,
    MetricsError,
    FileNotFoundError,
)

_NAME_RE = re.compile(r"^[A-Za-z0-9][A-Za-z0-9_.+-]*$")


class CliError(ValueError):
    pass


# ---------------------------------------------------------------------------
# run manifest
# ---------------------------------------------------------------------------


def _file_hash(path: str | Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as handle:
        for chunk in iter(lambda: handle.read(1 << 16), b""):
            digest.update(chunk)
    return digest.hexdigest()[:12]


@dataclass(frozen=True)
class RunManifest:
    """What a command ran on: inputs, scenarios, seed, output, parallelism."""

    command: str
    inputs: tuple[tuple[str, str], ...]  # (path as given, content hash)
    scenarios: tuple[str, ...]  # canonical JSON, one string per scenario
    out_dir: str
    seed: int
    jobs: int = 1
    options: tuple[tuple[str, str], ...] = ()

    @property
    def digest(self) -> str:
        payload = {
            "command": self.command,
            "inputs": [list(pair) for pair in self.inputs],
            "scenarios": list(self.scenarios),
            "seed": self.seed,
            "options": dict(self.options),
        }
        blob = json.dumps(payload, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:12]

    def header(self) -> str:
        return f"manifest {self.digest} seed {self.seed}"

    def to_json(self) -> dict:
        return {
            "command": self.command,
            "inputs": [list(pair) for pair in self.inputs],
            "scenarios": [json.loads(s) for s in self.scenarios],
            "out_dir": self.out_dir,
            "seed": self.seed,
            "jobs": self.jobs,
            "options": dict(self.options),
            "digest": self.digest,
        }


def _manifest(command, args, *, inputs=(), scenarios=(), seed=0, jobs=1, options=()):
    return RunManifest(
        command=command,
        inputs=tuple((str(p), _file_hash(p)) for p in inputs),
        scenarios=tuple(
            json.dumps(scenario_to_json(s), sort_keys=True, separators=(",", ":"))
            for s in scenarios
        ),
        out_dir=str(args.out),
        seed=seed,
        jobs=jobs,
        options=tuple((k, str(v)) for k, v in options),
    )


def _finish(manifest: RunManifest) -> None:
    print(json.dumps(manifest.to_json(), sort_keys=True))


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_json(path: str | Path) -> dict:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise CliError(f"{path}: not valid JSON ({exc})") from None
    if not isinstance(data, dict):
        raise CliError(f"{path}: expected a JSON object")
    return data


# ---------------------------------------------------------------------------
# gen
# ---------------------------------------------------------------------------

_CORPUS_KEYS = {
    "n_stays", "seed", "acuity_mix", "disposition_mix", "wait_probability",
    "wait_mean_min", "wait_log_sigma", "arrival_days",
}


def _corpus_spec(args) -> CorpusSpec:
    data: dict = {}
    if args.spec:
        data = _load_json(args.spec)
        unknown = set(data) - _CORPUS_KEYS
        if unknown:
            raise CliError(f"{args.spec}: unknown corpus keys {sorted(unknown)}")
    if args.n_stays is not None:
        data["n_stays"] = args.n_stays
    if args.arrival_days is not None:
        data["arrival_days"] = args.arrival_days
    if args.seed is not None:
        data["seed"] = args.seed
    for key in ("acuity_mix", "disposition_mix"):
        if key in data:
            data[key] = tuple(float(x) for x in data[key])
    try:
        return CorpusSpec(**data)
    except TypeError as exc:
        raise CliError(f"bad corpus spec: {exc}") from None


def cmd_gen(args) -> None:
    spec = _corpus_spec(args)
    out = _out_dir(args)
    manifest = _manifest(
        "gen",
        args,
        inputs=(args.spec,) if args.spec else (),
        seed=spec.seed,
        options=(("corpus_spec", repr(spec)),),
    )
    stays = generate_corpus(spec)
    write_corpus(stays, out, header_comment=manifest.header())
    _finish(manifest)


# ---------------------------------------------------------------------------
# clean
# ---------------------------------------------------------------------------


def cmd_clean(args) -> None:
    if args.k < 0:
        raise CliError("--k must be non-negative (use 'inf' to disable clamping)")
    events = ev.parse_event_log(args.eventlog)
    trajectories = ev.extract_trajectories(events)
    stats = ev.compute_transition_stats(trajectories)
    cleaned = [ev.remove_waiting_times(t, stats, k=args.k) for t in trajectories]
    out = _out_dir(args)
    manifest = _manifest(
        "clean",
        args,
        inputs=(args.eventlog,),
        seed=args.seed if args.seed is not None else 0,
        options=(("k", repr(float(args.k))),),
    )
    ev.write_clean_trajectories(out / "cleaned_trajectories.csv", cleaned, header_comment=manifest.header())
    ev.write_transition_stats(out / "transition_stats.csv", stats, header_comment=manifest.header())
    _finish(manifest)


# ---------------------------------------------------------------------------
# simulate / sweep
# ---------------------------------------------------------------------------


def _load_pool(features_path, trajectories_path):
    records, _ = read_features(features_path)
    trajectories = ev.read_clean_trajectories(trajectories_path)
    return records, build_pool(records, trajectories)


_PARAM_KEYS = {
    "n_beds", "n_clinicians", "n_imaging", "arrival_rates", "workflow_delays", "tick_minutes",
}


def _load_params(path) -> EDEnvironmentParams:
    if path is None:
        return EDEnvironmentParams()
    data = _load_json(path)
    unknown = set(data) - _PARAM_KEYS
    if unknown:
        raise CliError(f"{path}: unknown parameter keys {sorted(unknown)}")
    if "arrival_rates" in data:
        data["arrival_rates"] = tuple(float(x) for x in data["arrival_rates"])
    if "workflow_delays" in data:
        data["workflow_delays"] = {str(k): float(v) for k, v in data["workflow_delays"].items()}
    return EDEnvironmentParams(**data)


def _gather_scenarios(args, *, auto_baseline: bool, presets: bool) -> list[ScenarioSpec]:
    specs = [read_scenario(path) for path in args.scenario]
    seed = args.seed if args.seed is not None else 0
    window = dict(window_start_days=args.window_start, window_days=args.window_days)
    if presets:
        specs.extend(
            preset_scenario(name, runs=DEFAULT_RUNS, master_seed=seed, **window)
            for name in table_preset_names()
        )
    if auto_baseline and not any(s.kind == BASELINE for s in specs):
        specs.insert(0, ScenarioSpec(name="baseline", master_seed=seed, **window))
    if not specs:
        raise CliError("nothing to simulate: pass --scenario files or --presets")
    if args.seed is not None:
        specs = [replace(s, master_seed=args.seed) for s in specs]
    if args.runs is not None:
        specs = [replace(s, runs=args.runs) for s in specs]
    names = [s.name for s in specs]
    if len(set(names)) != len(names):
        raise CliError(f"duplicate scenario names: {sorted(n for n in names if names.count(n) > 1)}")
    for name in names:
        if not _NAME_RE.match(name):
            raise CliError(f"scenario name {name!r} is not filename-safe")
    return specs


def _run_and_write(args, *, command: str, jobs: int, presets: bool) -> RunManifest:
    records, pool = _load_pool(args.features, args.trajectories)
    params = _load_params(args.params)
    specs = _gather_scenarios(args, auto_baseline=True, presets=presets)
    out = _out_dir(args)
    inputs = [args.features, args.trajectories]
    if args.params:
        inputs.append(args.params)
    seeds = {s.master_seed for s in specs}
    effective_seed = args.seed if args.seed is not None else (seeds.pop() if len(seeds) == 1 else 0)
    manifest = _manifest(
        command,
        args,
        inputs=inputs,
        scenarios=specs,
        seed=effective_seed,
        jobs=jobs,
        options=(("los_threshold", repr(args.los_threshold)),),
    )
    for spec in specs:
        result = run_experiment(
            spec, params, pool, los_threshold=args.los_threshold, jobs=jobs
        )
        write_dataset(
            out / f"dataset_{spec.name}.csv",
            flatten_runs(result),
            header_comment=manifest.header(),
        )
    return manifest


def cmd_simulate(args) -> None:
    manifest = _run_and_write(args, command="simulate", jobs=1, presets=False)
    _finish(manifest)


def cmd_sweep(args) -> None:
    jobs = args.jobs if args.jobs is not None else (os.cpu_count() or 1)
    if jobs < 1:
        raise CliError("--jobs must be at least 1")
    manifest = _run_and_write(args, command="sweep", jobs=jobs, presets=args.presets)
    out = Path(args.out)
    (out / "manifest.json").write_text(
        json.dumps(manifest.to_json(), indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    _finish(manifest)


# ---------------------------------------------------------------------------
# evaluate
# ---------------------------------------------------------------------------


def _runs_by_id(stays) -> list[list]:
    by_run: dict[int, list] = {}
    for stay in stays:
        by_run.setdefault(stay.run_id, []).append(stay)
    return [by_run[run_id] for run_id in sorted(by_run)]


def _parse_prediction_arg(raw: str) -> tuple[str, str, str]:
    head, sep, path = raw.partition("=")
    model, sep2, scenario = head.partition(":")
    if not sep or not sep2 or not model or not scenario or not path:
        raise CliError(f"--predictions wants model:scenario=path, got {raw!r}")
    return model, scenario, path


def cmd_evaluate(args) -> None:
    records, _ = read_features(args.features)
    dataset_dir = Path(args.datasets)
    paths = sorted(dataset_dir.glob("dataset_*.csv"))
    if not paths:
        raise CliError(f"no dataset_*.csv files under {dataset_dir}")
    datasets = {p.stem[len("dataset_"):]: read_dataset(p) for p in paths}
    runs = {name: _runs_by_id(stays) for name, stays in datasets.items()}

    reference = "baseline" if "baseline" in datasets else sorted(datasets)[0]
    fidelity = fidelity_report(records, runs[reference])
    interval = tuple(args.interval) if args.interval else None
    coverage = coverage_report(records, runs[reference], interval=interval)

    rows = []
    prediction_inputs = []
    for raw in args.predictions:
        model, scenario, path = _parse_prediction_arg(raw)
        if scenario not in runs:
            raise CliError(f"{raw!r}: no dataset for scenario {scenario!r}")
        prediction_inputs.append(path)
        preds, problems = read_predictions(path)
        for problem in problems:
            print(f"warning: {problem}", file=sys.stderr)
        per_run = []
        for run in runs[scenario]:
            truth = {f"{s.run_id}:{s.sim_id}": int(s.label) for s in run}
            entries = {}
            for pid in truth:
                if pid not in preds:
                    raise CliError(f"{path}: no prediction for stay {pid}")
                entries[pid] = (preds.label(pid), preds.score(pid))
            per_run.append(classification_metrics(PredictionSet(entries), truth))
        rows.append(robustness_row(model, scenario, per_run))

    out = _out_dir(args)
    manifest = _manifest(
        "evaluate",
        args,
        inputs=[args.features, *paths, *prediction_inputs],
        seed=args.seed if args.seed is not None else 0,
        options=(
            ("los_threshold", repr(args.los_threshold)),
            ("reference", reference),
            ("interval", repr(interval)),
        ),
    )
    write_fidelity_csv(out / "fidelity.csv", fidelity, header_comment=manifest.header())
    write_coverage_csv(out / "coverage.csv", coverage, header_comment=manifest.header())
    if rows:
        write_robustness_csv(out / "robustness.csv", rows, header_comment=manifest.header())
    _finish(manifest)


# ---------------------------------------------------------------------------
# report
# ---------------------------------------------------------------------------


def _render_table(path: Path) -> str:
    rows = []
    with open(path, "r", encoding="utf-8", newline="") as handle:
        for line in handle:
            line = line.rstrip("\n")
            if not line or line.startswith("#"):
                continue
            rows.append(line.split(","))
    if not rows:
        return "(empty)"
    widths = [max(len(row[i]) if i < len(row) else 0 for row in rows) for i in range(len(rows[0]))]
    lines = []
    for row in rows:
        cells = (cell.ljust(widths[i]) for i, cell in enumerate(row))
        lines.append("  ".join(cells).rstrip())
    return "\n".join(lines)


def cmd_report(args) -> None:
    results = Path(args.results)
    names = ("fidelity.csv", "coverage.csv", "robustness.csv")
    found = [results / name for name in names if (results / name).exists()]
    if not found:
        raise CliError(f"no report CSVs under {results} (expected any of {', '.join(names)})")
    manifest = _manifest(
        "report", args, inputs=found, seed=args.seed if args.seed is not None else 0
    )
    sections = [f"== {path.name} ==\n{_render_table(path)}" for path in found]
    text = f"# {manifest.header()}\n\n" + "\n\n".join(sections) + "\n"
    out = _out_dir(args)
    (out / "summary.txt").write_text(text, encoding="utf-8")
    print(text, end="")
    _finish(manifest)


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def _add_common(sub, *, seed=True, out=True):
    if seed:
        sub.add_argument("--seed", type=int, default=None, help="master seed (overrides scenario files)")
    if out:
        sub.add_argument("--out", required=True, help="output directory")


def _add_sim_args(sub):
    sub.add_argument("--features", required=True, help="patient features CSV")
    sub.add_argument("--trajectories", required=True, help="cleaned trajectories CSV")
    sub.add_argument("--params", default=None, help="environment parameters JSON")
    sub.add_argument("--scenario", action="append", default=[], help="scenario JSON file (repeatable)")
    sub.add_argument("--runs", type=int, default=None, help="override per-scenario run count")
    sub.add_argument("--window-start", type=float, default=2.0,
                     help="incident window start, days (for presets and the implicit baseline)")
    sub.add_argument("--window-days", type=float, default=4.0,
                     help="incident window length, days (for presets and the implicit baseline)")
    sub.add_argument("--los-threshold", type=float, default=4.0, help="long-stay cutoff, hours")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="edsynth",
        description="Synthetic emergency-department stays: generate, clean, simulate, evaluate.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    commands = parser.add_subparsers(dest="command", required=True)

    gen = commands.add_parser("gen", help="generate a raw desk corpus")
    gen.add_argument("--spec", default=None, help="corpus spec JSON")
    gen.add_argument("--n-stays", type=int, default=None)
    gen.add_argument("--arrival-days", type=float, default=None)
    _add_common(gen)
    gen.set_defaults(func=cmd_gen)

    clean = commands.add_parser("clean", help="strip waiting time from an event log")
    clean.add_argument("eventlog", help="raw event log CSV")
    clean.add_argument("--k", type=float, default=ev.DEFAULT_Z_THRESHOLD,
                       help="modified z-score threshold ('inf' disables clamping)")
    _add_common(clean)
    clean.set_defaults(func=cmd_clean)

    simulate = commands.add_parser("simulate", help="run scenarios single-threaded")
    _add_sim_args(simulate)
    _add_common(simulate)
    simulate.set_defaults(func=cmd_simulate)

    sweep = commands.add_parser("sweep", help="run a scenario sweep on a worker pool")
    _add_sim_args(sweep)
    sweep.add_argument("--presets", action="store_true", help="include the twelve graded presets")
    sweep.add_argument("--jobs", type=int, default=None, help="worker processes (default: all cores)")
    _add_common(sweep)
    sweep.set_defaults(func=cmd_sweep)

    evaluate = commands.add_parser("evaluate", help="score datasets against the source corpus")
    evaluate.add_argument("--features", required=True, help="patient features CSV")
    evaluate.add_argument("--datasets", required=True, help="directory of dataset_*.csv files")
    evaluate.add_argument("--predictions", action="append", default=[],
                          metavar="MODEL:SCENARIO=PATH", help="predictions CSV (repeatable)")
    evaluate.add_argument("--interval", nargs=2, type=float, default=None,
                          metavar=("LO", "HI"), help="percentile interval instead of min/max")
    evaluate.add_argument("--los-threshold", type=float, default=4.0)
    _add_common(evaluate)
    evaluate.set_defaults(func=cmd_evaluate)

    report = commands.add_parser("report", help="collate evaluation CSVs into summary.txt")
    report.add_argument("results", help="directory holding evaluation CSVs")
    _add_common(report)
    report.set_defaults(func=cmd_report)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        args.func(args)
    except (CliError, *VALIDATION_ERRORS) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - last-resort runtime failures
        print(f"runtime error: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
