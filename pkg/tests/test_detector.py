"""Monitor scoring, calibration, warning decisions, and rewind targets."""

import io
import json
import math

import numpy as np
import pytest

from oracles import linear_quantile as oracle_quantile
from otfleet.demos import Trajectory, build_bank
from otfleet.detector import (
    DELTA_MAX,
    DELTA_MIN,
    FALSE_ALARM,
    MISSED_FAILURE,
    RAISE,
    SILENT,
    CheckDecision,
    DetectorConfig,
    DetectorEventLog,
    DetectorState,
    MatchIndex,
    RewindConfig,
    RolloutMonitor,
    SharedCalibration,
    calibrate_threshold,
    check,
    episode_summary,
    gate_length,
    linear_quantile,
    match_index,
    record_success,
    rewind_target,
    update_delta,
)
from otfleet.errors import DomainError, SchemaError
from otfleet.ot import CostMatrix, SinkhornConfig, solve_exact

TIGHT = SinkhornConfig(regularization=1e-4, max_iterations=5000)


def unit(rows):
    rows = np.asarray(rows, dtype=np.float64)
    return rows / np.linalg.norm(rows, axis=-1, keepdims=True)


def make_bank(rng, lengths, dim=8):
    demos = [
        Trajectory(
            embeddings=rng.normal(size=(length, dim)),
            actions=np.zeros((length, 1)),
        )
        for length in lengths
    ]
    return build_bank(demos, encoder_id="enc-t")


def brute_force_index(bank, prefix_embeddings):
    """Loop demos, call the exact solver, take the minimum."""
    best_value, best_n = math.inf, -1
    prefix_units = unit(prefix_embeddings)
    for n in range(bank.size):
        demo_units = unit(bank.padded_embeddings[n])
        cost = CostMatrix(np.clip(1.0 - demo_units @ prefix_units.T, 0.0, 2.0))
        total = solve_exact(cost).total_cost
        if total < best_value:
            best_value, best_n = total, n
    return best_value, best_n


def fresh_state(**overrides):
    config = DetectorConfig(**overrides)
    return DetectorState(calibration=SharedCalibration(config), config=config)


class TestMatchIndex:
    def test_matches_brute_force_oracle_on_average(self):
        rng = np.random.default_rng(61)
        rel_errors = []
        for _ in range(30):
            bank = make_bank(rng, rng.integers(2, 9, size=rng.integers(1, 5)))
            t0 = int(rng.integers(1, 9))
            prefix = rng.normal(size=(t0, 8))
            got = match_index(prefix, bank)
            want_value, want_n = brute_force_index(bank, prefix)
            rel_errors.append(abs(got.value - want_value) / max(want_value, 1e-12))
            assert got.value >= want_value - 1e-9
            assert got.prefix_len == t0
            # argmin must agree whenever the margin is not razor thin
            runner_up = min(
                solve_exact(
                    CostMatrix(
                        np.clip(
                            1.0 - unit(bank.padded_embeddings[n]) @ unit(prefix).T,
                            0.0,
                            2.0,
                        )
                    )
                ).total_cost
                for n in range(bank.size)
                if n != want_n
            ) if bank.size > 1 else math.inf
            if runner_up > want_value * 1.10:
                assert got.nearest_demo == want_n
        assert float(np.mean(rel_errors)) <= 0.02

    def test_single_demo_one_step_prefix_is_column_mean(self):
        rng = np.random.default_rng(62)
        bank = make_bank(rng, [4])
        prefix = rng.normal(size=(1, 8))
        got = match_index(prefix, bank, TIGHT)
        costs = np.clip(1.0 - unit(bank.padded_embeddings[0]) @ unit(prefix).T, 0, 2)
        assert got.value == pytest.approx(float(costs.mean()), abs=1e-9)

    def test_identity_rollout_scores_zero(self):
        rng = np.random.default_rng(63)
        bank = make_bank(rng, [6, 6, 6])
        got = match_index(bank.demos[1].embeddings, bank, TIGHT)
        assert got.value <= 1e-6
        assert got.nearest_demo == 1

    def test_self_prefix_scores_zero_without_padding(self):
        rng = np.random.default_rng(64)
        embeddings = rng.normal(size=(5, 8))
        bank = build_bank(
            [Trajectory(embeddings=embeddings, actions=np.zeros((5, 1)))], "enc-t"
        )
        got = match_index(embeddings, bank, TIGHT)
        assert got.value <= 1e-6

    def test_ties_break_to_lowest_demo_index(self):
        rng = np.random.default_rng(65)
        embeddings = rng.normal(size=(4, 8))
        twin = Trajectory(embeddings=embeddings, actions=np.zeros((4, 1)))
        bank = build_bank([twin, twin, twin], "enc-t")
        got = match_index(rng.normal(size=(3, 8)), bank)
        assert got.nearest_demo == 0

    def test_input_validation(self):
        rng = np.random.default_rng(66)
        bank = make_bank(rng, [4])
        with pytest.raises(SchemaError):
            match_index(rng.normal(size=(3, 9)), bank)
        with pytest.raises(DomainError):
            match_index(np.empty((0, 8)), bank)

    def test_deterministic_given_identical_inputs(self):
        rng = np.random.default_rng(67)
        bank = make_bank(rng, [5, 7])
        prefix = rng.normal(size=(6, 8))
        first = match_index(prefix, bank)
        second = match_index(prefix, bank)
        assert first.value == second.value
        assert first.nearest_demo == second.nearest_demo

    def test_rejects_bad_scalars(self):
        with pytest.raises(DomainError):
            MatchIndex(value=-0.5, nearest_demo=0, prefix_len=1)
        with pytest.raises(DomainError):
            MatchIndex(value=1.0, nearest_demo=0, prefix_len=0)


class TestQuantile:
    def test_matches_reference_oracle(self):
        rng = np.random.default_rng(71)
        for _ in range(50):
            values = rng.normal(size=rng.integers(1, 40)).tolist()
            q = float(rng.uniform(0, 1))
            assert linear_quantile(values, q) == pytest.approx(
                oracle_quantile(values, q), abs=1e-12
            )

    def test_degenerate_and_extremes(self):
        assert linear_quantile([4.0], 0.37) == 4.0
        assert linear_quantile([2.0, 2.0, 2.0], 0.9) == 2.0
        values = [5.0, 1.0, 3.0]
        assert linear_quantile(values, 0.0) == 1.0
        assert linear_quantile(values, 1.0) == 5.0

    def test_pinned_hundred_point_example(self):
        values = list(range(1, 101))
        assert linear_quantile(values, 0.9) == pytest.approx(90.1, abs=1e-12)
        assert oracle_quantile(values, 0.9) == pytest.approx(90.1, abs=1e-12)

    def test_rejects_bad_inputs(self):
        with pytest.raises(DomainError):
            linear_quantile([], 0.5)
        with pytest.raises(DomainError):
            linear_quantile([1.0], 1.5)


class TestCalibration:
    def test_warmup_gates_threshold(self):
        state = fresh_state()
        for k in range(4):
            record_success(state, float(k))
            assert state.threshold is None
        record_success(state, 4.0)
        assert state.threshold is not None

    def test_threshold_tracks_quantile_oracle_while_growing(self):
        rng = np.random.default_rng(72)
        state = fresh_state()
        values = rng.uniform(0.1, 3.0, size=30)
        for m, value in enumerate(values, start=1):
            record_success(state, float(value))
            if m >= state.warmup_min_successes:
                assert state.threshold == pytest.approx(
                    oracle_quantile(values[:m], 0.9), abs=1e-12
                )

    def test_threshold_monotone_in_delta(self):
        rng = np.random.default_rng(73)
        values = rng.uniform(0.0, 5.0, size=25).tolist()
        thresholds = []
        for delta in (2.0, 5.0, 10.0, 25.0, 50.0):
            state = fresh_state(delta=delta)
            for value in values:
                record_success(state, value)
            thresholds.append(state.threshold)
        assert all(a >= b - 1e-12 for a, b in zip(thresholds, thresholds[1:]))

    def test_low_insertion_never_raises_threshold(self):
        state = fresh_state()
        for value in (1.0, 2.0, 3.0, 4.0, 5.0):
            record_success(state, value)
        before = state.threshold
        record_success(state, 0.5)
        assert state.threshold <= before + 1e-12

    def test_delta_steps_and_clamping(self):
        state = fresh_state()
        assert update_delta(state, MISSED_FAILURE) == pytest.approx(12.5)
        assert update_delta(state, FALSE_ALARM) == pytest.approx(10.0)
        assert update_delta(state, FALSE_ALARM) == pytest.approx(7.5)
        for _ in range(10):
            update_delta(state, FALSE_ALARM)
        assert state.delta == DELTA_MIN
        for _ in range(40):
            update_delta(state, MISSED_FAILURE)
        assert state.delta == DELTA_MAX

    def test_inverted_direction_flag(self):
        state = fresh_state(invert_delta_updates=True)
        assert update_delta(state, MISSED_FAILURE) == pytest.approx(7.5)
        assert update_delta(state, FALSE_ALARM) == pytest.approx(10.0)

    def test_delta_update_recalibrates_immediately(self):
        state = fresh_state()
        for value in (1.0, 2.0, 3.0, 4.0, 10.0):
            record_success(state, value)
        before = state.threshold
        update_delta(state, MISSED_FAILURE)  # more sensitive: lower quantile
        assert state.threshold <= before
        assert state.threshold == pytest.approx(
            oracle_quantile([1.0, 2.0, 3.0, 4.0, 10.0], 1 - 12.5 / 100), abs=1e-12
        )

    def test_unknown_event_rejected(self):
        with pytest.raises(DomainError):
            update_delta(fresh_state(), "shrug")

    def test_calibrate_threshold_exposed(self):
        state = fresh_state()
        assert calibrate_threshold(state) is None
        for value in (1.0, 1.0, 1.0, 1.0, 1.0):
            record_success(state, value)
        assert calibrate_threshold(state) == 1.0  # degenerate distribution


class TestCheck:
    def calibrated_state(self, threshold=1.0):
        state = fresh_state()
        state.calibration.threshold = threshold
        state.calibration.success_indices = [threshold] * 5
        return state

    def test_boundary_is_silent(self):
        state = self.calibrated_state(1.0)
        idx = MatchIndex(value=1.0, nearest_demo=0, prefix_len=10)
        assert check(state, idx, 10, 20).decision == SILENT

    def test_crossing_raises_past_gate(self):
        state = self.calibrated_state(1.0)
        idx = MatchIndex(value=1.0 + 1e-6, nearest_demo=0, prefix_len=5)
        decision = check(state, idx, 5, 20)
        assert decision.decision == RAISE
        assert decision.raised

    def test_gated_prefix_stays_silent(self):
        state = self.calibrated_state(1.0)
        idx = MatchIndex(value=10.0, nearest_demo=0, prefix_len=4)
        decision = check(state, idx, 4, 20)
        assert decision.decision == SILENT
        assert decision.reason == "prefix-gated"

    def test_uncalibrated_announces_warmup(self):
        state = fresh_state()
        idx = MatchIndex(value=99.0, nearest_demo=0, prefix_len=19)
        decision = check(state, idx, 19, 20)
        assert decision.decision == SILENT
        assert decision.reason == "warming-up"

    def test_prefix_beyond_rollout_rejected(self):
        state = self.calibrated_state()
        idx = MatchIndex(value=0.5, nearest_demo=0, prefix_len=9)
        with pytest.raises(DomainError):
            check(state, idx, 8, 20)

    def test_gate_length_floor_semantics(self):
        assert gate_length(0.25, 20) == 5
        assert gate_length(0.25, 10) == 2
        assert gate_length(0.25, 3) == 1


def cache_from(values):
    return [
        MatchIndex(value=v, nearest_demo=0, prefix_len=t)
        for t, v in enumerate(values, start=1)
    ]


class TestRewind:
    def test_worked_example(self):
        cache = cache_from([0.1, 0.5, 1.0, 2.0, 5.0])
        assert rewind_target(cache, 5, RewindConfig(0.2)) == 3

    def test_all_above_bound_falls_back_to_one(self):
        cache = cache_from([2.0, 3.0, 4.0])
        assert rewind_target(cache, 3, RewindConfig(0.2)) == 1

    def test_empty_and_missing_t0_rejected(self):
        with pytest.raises(DomainError):
            rewind_target([], 3, RewindConfig(0.2))
        with pytest.raises(DomainError):
            rewind_target(cache_from([1.0, 2.0]), 7, RewindConfig(0.2))

    def test_default_epsilon_is_two_tenths(self):
        assert RewindConfig().epsilon == 0.2
        with pytest.raises(DomainError):
            RewindConfig(0.0)
        with pytest.raises(DomainError):
            RewindConfig(1.0)

    def test_matches_exhaustive_scan(self):
        rng = np.random.default_rng(74)
        for _ in range(200):
            stride = int(rng.integers(1, 4))
            values = rng.uniform(0.0, 4.0, size=rng.integers(1, 12))
            cache = [
                MatchIndex(value=float(v), nearest_demo=0, prefix_len=1 + k * stride)
                for k, v in enumerate(values)
            ]
            t0 = cache[-1].prefix_len
            got = rewind_target(cache, t0, RewindConfig(0.2))
            bound = 0.2 * cache[-1].value
            qualifying = [i.prefix_len for i in cache if i.value <= bound]
            if qualifying:
                assert got == max(qualifying)
            else:
                assert got == 1


class TestEpisodeSummary:
    def test_max_prefix_takes_gated_maximum(self):
        state = fresh_state()
        for idx in cache_from([9.0, 1.0, 4.0, 2.0]):
            state.cache_index(idx)
        # gate for l_max=8 at fraction 0.25 is 2, so the 9.0 at t=1 is excluded
        assert episode_summary(state, l_max=8) == 4.0

    def test_final_mode_takes_last(self):
        state = fresh_state(calibration_summary="final")
        for idx in cache_from([9.0, 1.0, 4.0, 2.0]):
            state.cache_index(idx)
        assert episode_summary(state, l_max=8) == 2.0

    def test_no_gated_entries_falls_back_to_final(self):
        state = fresh_state()
        state.cache_index(MatchIndex(value=3.0, nearest_demo=0, prefix_len=1))
        assert episode_summary(state, l_max=40) == 3.0

    def test_empty_cache_rejected(self):
        with pytest.raises(DomainError):
            episode_summary(fresh_state(), l_max=8)

    def test_cache_must_grow_strictly(self):
        state = fresh_state()
        state.cache_index(MatchIndex(value=1.0, nearest_demo=0, prefix_len=4))
        with pytest.raises(DomainError):
            state.cache_index(MatchIndex(value=1.0, nearest_demo=0, prefix_len=4))


class TestRolloutMonitor:
    def test_stride_controls_evaluation(self):
        rng = np.random.default_rng(75)
        bank = make_bank(rng, [8, 8])
        monitor = RolloutMonitor(bank, fresh_state(stride=4))
        outputs = [monitor.observe(rng.normal(size=8)) for _ in range(8)]
        assert [o is not None for o in outputs] == [False] * 3 + [True] + [False] * 3 + [True]
        assert [idx.prefix_len for idx in monitor.state.prefix_index_cache] == [4, 8]

    def test_warm_started_scores_match_cold_solves(self):
        rng = np.random.default_rng(76)
        bank = make_bank(rng, [8, 6, 8])
        monitor = RolloutMonitor(bank, fresh_state(stride=2))
        steps = [rng.normal(size=8) for _ in range(8)]
        warm_indices = [idx for idx in map(monitor.observe, steps) if idx is not None]
        for idx in warm_indices:
            cold = match_index(np.asarray(steps[: idx.prefix_len]), bank)
            assert idx.value == pytest.approx(cold.value, rel=1e-4, abs=1e-6)
            assert idx.nearest_demo == cold.nearest_demo

    def test_two_monitors_agree_bit_for_bit(self):
        rng = np.random.default_rng(77)
        bank = make_bank(rng, [6, 6])
        steps = [rng.normal(size=8) for _ in range(6)]
        runs = []
        for _ in range(2):
            monitor = RolloutMonitor(bank, fresh_state(stride=3))
            runs.append([
                (idx.value, idx.nearest_demo, idx.prefix_len)
                for idx in map(monitor.observe, steps)
                if idx is not None
            ])
        assert runs[0] == runs[1]

    def test_reset_clears_rollout_state(self):
        rng = np.random.default_rng(78)
        bank = make_bank(rng, [4])
        monitor = RolloutMonitor(bank, fresh_state(stride=1))
        monitor.observe(rng.normal(size=8))
        assert monitor.steps_seen == 1
        monitor.reset()
        assert monitor.steps_seen == 0
        assert monitor.state.prefix_index_cache == []

    def test_event_log_records_decisions(self):
        rng = np.random.default_rng(79)
        bank = make_bank(rng, [4, 4])
        buffer = io.StringIO()
        state = fresh_state(stride=2)
        monitor = RolloutMonitor(bank, state, robot_id="r7", event_log=DetectorEventLog(buffer))
        for _ in range(4):
            idx = monitor.observe(rng.normal(size=8))
            if idx is not None:
                monitor.decide(idx)
        records = [json.loads(line) for line in buffer.getvalue().splitlines()]
        assert len(records) == 2
        for record in records:
            assert record["robot_id"] == "r7"
            assert record["decision"] == SILENT  # uncalibrated -> silent
            assert record["threshold"] is None
            assert set(record) >= {
                "robot_id", "t0", "lambda", "nearest_demo", "threshold", "delta", "decision",
            }


def test_detector_config_validation():
    with pytest.raises(DomainError):
        DetectorConfig(delta=0.0)
    with pytest.raises(DomainError):
        DetectorConfig(delta_step=0.0)
    with pytest.raises(DomainError):
        DetectorConfig(min_prefix_fraction=1.0)
    with pytest.raises(DomainError):
        DetectorConfig(stride=0)
    with pytest.raises(DomainError):
        DetectorConfig(calibration_summary="median")
    with pytest.raises(DomainError):
        DetectorConfig(warmup_min_successes=0)
