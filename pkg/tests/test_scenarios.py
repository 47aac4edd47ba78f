"""Scenario overlay arithmetic, preset parsing, JSON files, and the sweep."""

from __future__ import annotations

from dataclasses import replace

import numpy as np
import pytest

from edsynth import eventlog as ev
from edsynth import scenarios as sc
from edsynth.corpus import CorpusSpec, corpus_events, generate_corpus
from edsynth.patients import build_pool
from edsynth.simulation import EDEnvironmentParams, run_simulation


@pytest.fixture(scope="module")
def pool():
    corpus = generate_corpus(CorpusSpec(n_stays=150, seed=21))
    trajectories = ev.extract_trajectories(corpus_events(corpus))
    stats = ev.compute_transition_stats(trajectories)
    cleaned = [ev.remove_waiting_times(t, stats) for t in trajectories]
    return build_pool([s.record for s in corpus], cleaned)


def spec_of(kind, magnitude=0.0, **kwargs):
    return sc.ScenarioSpec(name="t", kind=kind, magnitude=magnitude, **kwargs)


# ---------------------------------------------------------------------------
# perturbation arithmetic
# ---------------------------------------------------------------------------


def test_baseline_scenario_returns_params_unchanged():
    params = EDEnvironmentParams()
    assert sc.apply_scenario(params, spec_of(sc.BASELINE)) is params


def test_arrival_surge_scales_every_hourly_rate():
    params = EDEnvironmentParams(arrival_rates=(10.0,) * 24)
    out = sc.apply_scenario(params, spec_of(sc.ARRIVAL_SURGE, 20.0))
    assert out.arrival_rates == (12.0,) * 24
    assert out.n_clinicians == params.n_clinicians


@pytest.mark.parametrize(
    "staff,pct,expected",
    [
        (20, 15.0, 17),  # 20 * 0.85 = 17 exactly
        (21, 5.0, 20),  # 19.95 rounds half-up to 20
        (22, 25.0, 17),  # 16.5 rounds half-up to 17
        (22, 10.0, 20),
        (3, 100.0, 1),  # floor at one clinician
        (1, 50.0, 1),
    ],
)
def test_clinician_cut_rounds_half_up_with_floor_one(staff, pct, expected):
    params = EDEnvironmentParams(n_clinicians=staff)
    out = sc.apply_scenario(params, spec_of(sc.CLINICIAN_CUT, pct))
    assert out.n_clinicians == expected
    assert out.arrival_rates == params.arrival_rates


def test_lab_delay_accumulates_on_existing_delay():
    params = EDEnvironmentParams(workflow_delays={ev.LAB_TEST: 10.0})
    once = sc.apply_scenario(params, spec_of(sc.LAB_DELAY, 30.0))
    assert once.workflow_delays[ev.LAB_TEST] == 40.0
    twice = sc.apply_scenario(once, spec_of(sc.LAB_DELAY, 30.0))
    assert twice.workflow_delays[ev.LAB_TEST] == 70.0


def test_composite_applies_all_parts():
    params = EDEnvironmentParams(n_clinicians=20, arrival_rates=(5.0,) * 24)
    spec = spec_of(sc.COMPOSITE, parts=((sc.ARRIVAL_SURGE, 20.0), (sc.CLINICIAN_CUT, 15.0), (sc.LAB_DELAY, 25.0)))
    out = sc.apply_scenario(params, spec)
    expected = replace(
        params,
        arrival_rates=tuple(r * 1.2 for r in params.arrival_rates),
        n_clinicians=17,
        workflow_delays={ev.LAB_TEST: 25.0},
    )
    assert out == expected


@pytest.mark.parametrize(
    "kwargs",
    [
        {"kind": "meteor_strike"},
        {"kind": sc.ARRIVAL_SURGE, "magnitude": -5.0},
        {"kind": sc.COMPOSITE},
        {"kind": sc.COMPOSITE, "parts": ((sc.BASELINE, 0.0),)},
        {"kind": sc.COMPOSITE, "parts": ((sc.ARRIVAL_SURGE, -1.0),)},
        {"window_days": 0.0},
        {"window_start_days": -1.0},
        {"runs": 0},
    ],
)
def test_scenario_spec_validation(kwargs):
    with pytest.raises(sc.ScenarioError):
        sc.ScenarioSpec(name="bad", **kwargs)


# ---------------------------------------------------------------------------
# timeline windowing
# ---------------------------------------------------------------------------


def test_timeline_confines_perturbation_to_window():
    params = EDEnvironmentParams()
    spec = spec_of(sc.ARRIVAL_SURGE, 20.0, window_start_days=2.0, window_days=1.0)
    timeline = sc.build_timeline(params, spec)
    perturbed = sc.apply_scenario(params, spec)
    assert timeline.params_at(2 * 1440 - 1) is params
    assert timeline.params_at(2 * 1440) == perturbed
    assert timeline.params_at(3 * 1440 - 1) == perturbed
    assert timeline.params_at(3 * 1440) is params


def test_steady_state_timeline_is_perturbed_everywhere():
    params = EDEnvironmentParams()
    spec = spec_of(sc.CLINICIAN_CUT, 10.0, steady_state=True)
    timeline = sc.build_timeline(params, spec)
    perturbed = sc.apply_scenario(params, spec)
    for t in (0.0, 1440.0, 1e9):
        assert timeline.params_at(t) == perturbed


def test_baseline_timeline_has_no_windows():
    params = EDEnvironmentParams()
    timeline = sc.build_timeline(params, spec_of(sc.BASELINE))
    assert timeline.windows == ()
    assert timeline.params_at(0.0) is params


# ---------------------------------------------------------------------------
# presets
# ---------------------------------------------------------------------------


def test_table_presets_cover_three_families_four_grades():
    names = sc.table_preset_names()
    assert len(names) == 12
    specs = [sc.preset_scenario(name) for name in names]
    by_kind = {}
    for spec in specs:
        by_kind.setdefault(spec.kind, []).append(spec.magnitude)
    assert by_kind == {
        sc.ARRIVAL_SURGE: [5.0, 10.0, 15.0, 20.0],
        sc.CLINICIAN_CUT: [5.0, 10.0, 15.0, 20.0],
        sc.LAB_DELAY: [5.0, 10.0, 15.0, 20.0],
    }


def test_preset_parses_magnitude_and_rejects_junk():
    spec = sc.preset_scenario("arrivals+17.5", runs=3, master_seed=9)
    assert spec.kind == sc.ARRIVAL_SURGE
    assert spec.magnitude == 17.5
    assert spec.runs == 3
    assert sc.preset_scenario("baseline").kind == sc.BASELINE
    with pytest.raises(sc.ScenarioError):
        sc.preset_scenario("arrivals+lots")
    with pytest.raises(sc.ScenarioError):
        sc.preset_scenario("discharge-10")


# ---------------------------------------------------------------------------
# JSON files
# ---------------------------------------------------------------------------


def test_scenario_json_round_trip(tmp_path):
    specs = [
        sc.preset_scenario("clinicians-15", runs=7, master_seed=3, window_start_days=1.5),
        spec_of(sc.COMPOSITE, parts=((sc.ARRIVAL_SURGE, 10.0), (sc.LAB_DELAY, 20.0)), steady_state=True),
        spec_of(sc.BASELINE, paired_seeds=False),
    ]
    for i, spec in enumerate(specs):
        path = tmp_path / f"s{i}.json"
        sc.write_scenario(path, spec)
        assert sc.read_scenario(path) == spec


def test_scenario_json_defaults_fill_missing_keys(tmp_path):
    path = tmp_path / "min.json"
    path.write_text('{"name": "quiet"}\n')
    spec = sc.read_scenario(path)
    assert spec.kind == sc.BASELINE
    assert spec.runs == sc.DEFAULT_RUNS
    assert spec.window_days == sc.DEFAULT_WINDOW_DAYS
    assert spec.paired_seeds is True


@pytest.mark.parametrize(
    "text,fragment",
    [
        ("{not json", "not valid JSON"),
        ('{"kind": "baseline"}', "needs at least a name"),
        ('{"name": "x", "flavour": "rough"}', "unknown scenario keys"),
        ('{"name": "x", "runs": 0}', "runs"),
    ],
)
def test_scenario_json_errors(tmp_path, text, fragment):
    path = tmp_path / "bad.json"
    path.write_text(text)
    with pytest.raises(sc.ScenarioError, match=fragment):
        sc.read_scenario(path)


# ---------------------------------------------------------------------------
# the sweep
# ---------------------------------------------------------------------------


def small_spec(name="baseline", **kwargs):
    defaults = dict(runs=2, master_seed=11, window_start_days=1.0, window_days=1.0)
    defaults.update(kwargs)
    return sc.preset_scenario(name, **defaults)


def test_run_experiment_windows_match_direct_simulation(pool):
    params = EDEnvironmentParams()
    spec = small_spec(runs=1)
    result = sc.run_experiment(spec, params, pool)
    rng = np.random.default_rng(np.random.SeedSequence(11, spawn_key=(0,)))
    direct = run_simulation(
        sc.build_timeline(params, spec),
        pool,
        int(spec.window_end_min) + 1440,
        seed=rng,
        warmup_minutes=1440,
        run_id=0,
    )
    expected = tuple(s for s in direct.stays if 1440 <= s.arrival_min < 2880)
    assert result.runs[0] == expected
    assert expected  # the window is busy enough to matter


def test_run_experiment_is_deterministic(pool):
    params = EDEnvironmentParams()
    a = sc.run_experiment(small_spec(), params, pool)
    b = sc.run_experiment(small_spec(), params, pool)
    assert a.runs == b.runs
    assert a.los == b.los


def test_parallel_jobs_reproduce_serial_results(pool):
    params = EDEnvironmentParams()
    spec = small_spec(runs=3)
    serial = sc.run_experiment(spec, params, pool, jobs=1)
    parallel = sc.run_experiment(spec, params, pool, jobs=2)
    assert serial.runs == parallel.runs


def test_paired_seeds_share_arrival_streams_across_scenarios(pool):
    # a zero-minute lab delay perturbs nothing, so with paired seeds the
    # dataset must be identical to baseline run for run
    params = EDEnvironmentParams()
    base = sc.run_experiment(small_spec(), params, pool)
    noop = sc.run_experiment(
        sc.ScenarioSpec(name="lab+0", kind=sc.LAB_DELAY, magnitude=0.0,
                        runs=2, master_seed=11, window_start_days=1.0, window_days=1.0),
        params,
        pool,
    )
    paired = [
        tuple(replace(s, run_id=0) for s in run) for run in noop.runs
    ]
    assert [tuple(replace(s, run_id=0) for s in run) for run in base.runs] == paired


def test_unpaired_seeds_decorrelate_scenarios(pool):
    params = EDEnvironmentParams()
    base = sc.run_experiment(small_spec(), params, pool)
    unpaired = sc.run_experiment(
        sc.ScenarioSpec(name="lab+0", kind=sc.LAB_DELAY, magnitude=0.0,
                        runs=2, master_seed=11, window_start_days=1.0, window_days=1.0,
                        paired_seeds=False),
        params,
        pool,
    )
    assert base.runs != unpaired.runs


def test_windowed_stay_count_matches_arrival_rate(pool):
    # expected arrivals in a [1d, 3d) window: 2 days * 144/day per run
    params = EDEnvironmentParams()
    spec = small_spec(runs=8, window_days=2.0)
    result = sc.run_experiment(spec, params, pool)
    total = sum(len(run) for run in result.runs)
    mean = 8 * 2 * sum(params.arrival_rates)
    assert abs(total - mean) <= 4 * mean ** 0.5
    sources = {s.source_patient_id for s in sc.flatten_runs(result)}
    assert len(sources) >= 0.9 * len(pool.records)


def test_run_failures_carry_scenario_and_run_index(pool):
    params = EDEnvironmentParams()
    with pytest.raises(sc.ScenarioError, match="baseline: run 0 failed"):
        sc.run_experiment(small_spec(), params, pool, horizon_minutes=10, warmup_minutes=100)


def test_experiment_summary_reflects_runs(pool):
    params = EDEnvironmentParams()
    result = sc.run_experiment(small_spec(), params, pool)
    all_los = sorted(s.los_hours for s in sc.flatten_runs(result))
    assert result.los.n_runs == 2
    assert result.name == "baseline"
    assert 0.0 < result.los.median.median <= all_los[-1]
