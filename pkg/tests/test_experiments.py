"""Pipeline tests: banks, calibration, rollouts, offline replay, rounds."""

import numpy as np
import pytest

from otfleet.config import ExperimentConfig
from otfleet.errors import CompatibilityError, DomainError
from otfleet.experiments import (
    benchmark_config,
    build_banks,
    build_encoder,
    calibrate_detectors,
    generate_rollouts,
    replay_detector,
    run_detection,
    run_fleet_rounds,
)
from otfleet.sim import EpisodeRecord


TASK = "hang"


@pytest.fixture(scope="module")
def small_config():
    return ExperimentConfig(
        tasks=(TASK,),
        calibration_episodes=12,
        episodes_per_round=10,
        rounds=2,
        fleet_robots=2,
        fleet_operators=1,
        min_prefix_fraction=0.7,
        seed=5,
    )


@pytest.fixture(scope="module")
def pipeline(small_config):
    encoder = build_encoder(small_config)
    banks = build_banks(small_config, encoder)
    calibrations = calibrate_detectors(small_config, banks, encoder)
    rollouts = generate_rollouts(small_config, banks, encoder)
    return encoder, banks, calibrations, rollouts


def test_benchmark_config_applies_recipe_and_overrides():
    config = benchmark_config(seed=9, demo_count=12)
    assert config.seed == 9
    assert config.demo_count == 12
    assert config.min_prefix_fraction == 0.7
    # unrelated defaults survive
    assert config.delta == ExperimentConfig().delta


def test_build_banks_one_bank_per_task(small_config, pipeline):
    encoder, banks, _, _ = pipeline
    assert set(banks) == {TASK}
    bank = banks[TASK]
    assert bank.size == small_config.demo_count
    assert bank.encoder_id == encoder.encoder_id
    assert bank.l_max == max(demo.length for demo in bank.demos)


def test_calibration_fits_a_threshold(small_config, pipeline):
    _, _, calibrations, _ = pipeline
    calibration = calibrations[TASK]
    assert calibration.threshold is not None and calibration.threshold > 0
    assert 0 < len(calibration.success_indices) <= small_config.calibration_episodes
    assert all(value >= 0 for value in calibration.success_indices)


def test_rollouts_seeded_and_sized(small_config, pipeline):
    encoder, banks, _, rollouts = pipeline
    records = rollouts[TASK]
    assert len(records) == small_config.episodes_per_round
    again = generate_rollouts(small_config, banks, encoder)[TASK]
    for first, second in zip(records, again):
        assert first.success == second.success
        assert np.array_equal(
            first.trajectory.embeddings, second.trajectory.embeddings
        )
    assert any(record.injection is not None for record in records)
    assert any(record.injection is None for record in records)


def test_replay_scores_each_record_once(small_config, pipeline):
    _, banks, calibrations, rollouts = pipeline
    outcomes = replay_detector(
        banks[TASK],
        rollouts[TASK],
        calibrations[TASK],
        small_config.detector_config(),
        id_prefix="probe",
    )
    assert len(outcomes) == len(rollouts[TASK])
    assert [outcome.episode_id for outcome in outcomes] == [
        f"probe-{i}" for i in range(len(outcomes))
    ]
    for outcome, record in zip(outcomes, rollouts[TASK]):
        assert outcome.success == record.success
        assert all(step >= 1 for step in outcome.warnings)


def test_replay_refuses_foreign_encoder(small_config, pipeline):
    _, banks, calibrations, rollouts = pipeline
    with pytest.raises(CompatibilityError, match="encoded with"):
        replay_detector(
            banks[TASK],
            rollouts[TASK],
            calibrations[TASK],
            small_config.detector_config(),
            encoder_id="other-encoder-v9",
        )


def _relabeled(record: EpisodeRecord, **changes) -> EpisodeRecord:
    return EpisodeRecord(
        trajectory=record.trajectory,
        success=changes.get("success", record.success),
        injection=changes.get("injection", record.injection),
        task_id=record.task_id,
    )


def test_replay_onset_labels(small_config, pipeline):
    _, banks, calibrations, rollouts = pipeline
    clean = next(r for r in rollouts[TASK] if r.success and r.injection is None)
    faulty = next(r for r in rollouts[TASK] if r.injection is not None)

    survived = _relabeled(faulty, success=True)
    wandered = _relabeled(clean, success=False, injection=None)
    outcomes = replay_detector(
        banks[TASK],
        [survived, wandered],
        calibrations[TASK],
        small_config.detector_config(),
    )
    # a survived fault counts clean; an uninjected timeout has no clean window
    assert outcomes[0].failure_onset is None
    assert outcomes[1].failure_onset == 1


def test_run_detection_aggregates_per_task(small_config, pipeline):
    _, banks, calibrations, rollouts = pipeline
    result = run_detection(small_config, banks, calibrations, rollouts)
    assert set(result.per_task) == {TASK}
    assert set(result.thresholds) == {TASK}
    counts = result.report.counts
    assert counts.failures + counts.successes == small_config.episodes_per_round
    assert len(result.outcomes) == small_config.episodes_per_round
    assert result.thresholds[TASK] == calibrations[TASK].threshold
    assert 0.0 <= result.report.accuracy <= 1.0


def test_fleet_rounds_improve_skill(small_config, pipeline):
    _, banks, calibrations, _ = pipeline
    result = run_fleet_rounds(small_config, banks, calibrations)
    assert len(result.rounds) == small_config.rounds
    skills = [round_.skill for round_ in result.rounds]
    assert skills[0] == small_config.initial_skill
    assert all(b >= a for a, b in zip(skills, skills[1:]))
    assert result.final_skill >= skills[-1]
    assert len(result.success_rates) == small_config.rounds
    assert len(result.intervention_rates) == small_config.rounds
    for summary in result.rounds:
        assert summary.episodes == small_config.episodes_per_round


def test_fleet_rounds_require_a_round():
    with pytest.raises(DomainError, match="rounds"):
        ExperimentConfig(tasks=(TASK,), rounds=0)
