"""Tests for the reference-corpus generator and its ground-truth closure."""

from __future__ import annotations

import numpy as np
import pytest

from edsynth import corpus as cg
from edsynth import eventlog as ev
from edsynth.patients import read_features


SMALL = cg.CorpusSpec(n_stays=100, seed=2024)


def test_generation_is_deterministic():
    a = cg.generate_corpus(SMALL)
    b = cg.generate_corpus(SMALL)
    assert a == b
    c = cg.generate_corpus(cg.CorpusSpec(n_stays=100, seed=2025))
    assert a != c


def test_templates_match_acuity_and_grow_with_severity():
    stays = cg.generate_corpus(SMALL)
    for stay in stays:
        assert tuple(s.activity for s in stay.truth) == cg.ACUITY_TEMPLATES[stay.record.acuity]
    lengths = [len(cg.ACUITY_TEMPLATES[a]) for a in (1, 2, 3, 4, 5)]
    assert lengths == sorted(lengths, reverse=True)
    for template in cg.ACUITY_TEMPLATES.values():
        assert template[-1] == ev.DISCHARGE
        assert ev.ARRIVAL not in template


def test_true_los_is_timestamp_difference():
    stays = cg.generate_corpus(SMALL)
    for stay in stays:
        events = stay.events()
        span_min = (events[-1].timestamp - events[0].timestamp).total_seconds() / 60.0
        assert stay.record.true_los_hours == span_min / 60.0
        assert span_min == stay.exec_total_min() + stay.wait_total_min()


def test_event_log_reconstructs_ground_truth_exactly():
    # closure: parse + extract on the generated log recovers exec + wait per step
    stays = cg.generate_corpus(SMALL)
    trajectories = {t.stay_id: t for t in ev.extract_trajectories(cg.corpus_events(stays))}
    assert set(trajectories) == {s.record.patient_id for s in stays}
    for stay in stays:
        steps = trajectories[stay.record.patient_id].steps
        assert len(steps) == len(stay.truth)
        for got, truth in zip(steps, stay.truth):
            assert got.activity == truth.activity
            assert got.duration == float(truth.exec_min + truth.wait_min)


def test_arrivals_fall_inside_window():
    spec = cg.CorpusSpec(n_stays=80, seed=5, arrival_days=2.0)
    for stay in cg.generate_corpus(spec):
        offset_min = (stay.arrival - spec.start).total_seconds() / 60.0
        assert 0 <= offset_min < 2.0 * 1440


def test_wait_injection_rate_is_binomial():
    spec = cg.CorpusSpec(n_stays=1000, seed=7, wait_probability=0.18)
    stays = cg.generate_corpus(spec)
    n_steps = sum(len(s.truth) for s in stays)
    injected = sum(1 for s in stays for step in s.truth if step.wait_min > 0)
    expected = n_steps * spec.wait_probability
    sigma = (n_steps * spec.wait_probability * (1 - spec.wait_probability)) ** 0.5
    assert abs(injected - expected) <= 4 * sigma
    assert all(step.wait_min == 0 or step.wait_min >= 1 for s in stays for step in s.truth)


def test_constant_wait_magnitude_when_sigma_zero():
    spec = cg.CorpusSpec(n_stays=60, seed=9, wait_probability=0.5, wait_mean_min=400.0, wait_log_sigma=0.0)
    stays = cg.generate_corpus(spec)
    magnitudes = {step.wait_min for s in stays for step in s.truth if step.wait_min > 0}
    assert magnitudes == {400}


def test_acuity_mix_matches_spec_frequencies():
    spec = cg.CorpusSpec(n_stays=2000, seed=42)
    stays = cg.generate_corpus(spec)
    counts = np.bincount([s.record.acuity for s in stays], minlength=6)[1:]
    for count, p in zip(counts, spec.acuity_mix):
        sigma = (len(stays) * p * (1 - p)) ** 0.5
        assert abs(count - len(stays) * p) <= 4 * sigma


def test_cleaning_recovers_execution_when_waits_are_extreme():
    # every injected wait dwarfs the conforming spread, so all must be clamped
    spec = cg.CorpusSpec(n_stays=400, seed=11, wait_probability=0.2, wait_mean_min=400.0, wait_log_sigma=0.0)
    stays = cg.generate_corpus(spec)
    trajectories = ev.extract_trajectories(cg.corpus_events(stays))
    stats = ev.compute_transition_stats(trajectories)
    cleaned = {t.stay_id: ev.remove_waiting_times(t, stats) for t in trajectories}
    truth = {s.record.patient_id: s for s in stays}
    raw_err = clean_err = 0.0
    for trajectory in trajectories:
        stay = truth[trajectory.stay_id]
        out = cleaned[trajectory.stay_id]
        for (pair, raw_step), got, step_truth in zip(
            ev.transition_pairs(trajectory), out.steps, stay.truth
        ):
            pair_stats = stats.require(pair)
            ceiling = pair_stats.median + 3.0 * (1.4826 * pair_stats.mad)
            assert got.duration <= max(raw_step.duration, ceiling) + 1e-9
            if step_truth.wait_min > 0:
                assert got.duration < raw_step.duration  # wait was stripped
                assert got.duration <= ceiling + 1e-9
            raw_err += abs(raw_step.duration - step_truth.exec_min)
            clean_err += abs(got.duration - step_truth.exec_min)
    # the clamp lands at most k * 1.4826 * MAD above the pair median, so the
    # surviving error is a small fraction of the 400-minute injected waits
    assert clean_err < 0.25 * raw_err


def test_write_corpus_files_and_round_trips(tmp_path):
    stays = cg.generate_corpus(cg.CorpusSpec(n_stays=50, seed=3))
    paths = cg.write_corpus(stays, tmp_path / "corpus", header_comment="seed 3")
    assert sorted(p.name for p in (tmp_path / "corpus").iterdir()) == [
        "event_log.csv",
        "features.csv",
        "ground_truth.csv",
    ]
    first = paths["event_log"].read_text().splitlines()[0]
    assert first == "# seed 3"

    events = ev.parse_event_log(paths["event_log"])
    assert events == cg.corpus_events(stays)
    records, _ = read_features(paths["features"])
    assert records == [s.record for s in stays]
    truth = cg.read_ground_truth(paths["ground_truth"])
    for stay in stays:
        assert truth[stay.record.patient_id] == list(stay.truth)


def test_event_log_rows_are_chronological():
    stays = cg.generate_corpus(SMALL)
    events = cg.corpus_events(stays)
    times = [e.timestamp for e in events]
    assert times == sorted(times)


@pytest.mark.parametrize(
    "kwargs",
    [
        {"n_stays": 0},
        {"acuity_mix": (0.5, 0.5, 0.0, 0.0, 0.1)},
        {"disposition_mix": (0.5, 0.4, 0.2)},
        {"wait_probability": 1.5},
        {"wait_mean_min": 0.0},
        {"service_times": {ev.TRIAGE: cg.ActivityTime(10.0, 0.3)}},
    ],
)
def test_spec_validation(kwargs):
    with pytest.raises(cg.CorpusError):
        cg.CorpusSpec(**kwargs)
