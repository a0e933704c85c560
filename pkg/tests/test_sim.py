"""Simulator behavior: dynamics, faults, determinism, and episode logs."""

import numpy as np
import pytest

from otfleet.demos import build_bank
from otfleet.errors import (
    CompatibilityError,
    ConfigError,
    DomainError,
    ParseError,
    SchemaError,
)
from otfleet.ot.cost import cosine_distance
from otfleet.seeding import derive_rng, derive_seed
from otfleet.sim import (
    FAULT_MODES,
    TASKS,
    EpisodeRecord,
    FailureInjection,
    FeatureEncoder,
    ScriptedPolicy,
    World,
    WorldState,
    generate_expert_demos,
    get_task,
    load_episodes,
    post_train,
    restore,
    run_episode,
    sample_injection,
    save_episodes,
)
from otfleet.sim.tasks import POS_TOL, extreme_starts
from otfleet.sim.world import ACTION_DIM

ENCODER = FeatureEncoder()


def make_world(task="pick_place"):
    return World(task, ENCODER)


def clean_policy(seed=1, noise=0.006):
    return ScriptedPolicy(skill=1.0, noise_scale=noise, seed=seed)


# ---------------------------------------------------------------- state


def test_initial_state_is_in_bounds_at_clock_zero():
    world = make_world()
    state = world.initial_state(derive_rng(0, "start"))
    assert state.clock == 0
    assert not state.holding
    assert np.all(state.effector >= 0) and np.all(state.effector <= 1)
    assert np.all(state.objects[:, :2] >= 0) and np.all(state.objects[:, :2] <= 1)


def test_state_rejects_out_of_bounds_position():
    with pytest.raises(DomainError):
        WorldState(
            effector=np.array([1.2, 0.5]),
            objects=np.zeros((2, 3)),
            holding=False,
            clock=0,
        )


def test_state_rejects_negative_clock_and_bad_shapes():
    with pytest.raises(DomainError):
        WorldState(
            effector=np.array([0.5, 0.5]),
            objects=np.zeros((2, 3)),
            holding=False,
            clock=-1,
        )
    with pytest.raises(SchemaError):
        WorldState(
            effector=np.array([0.5, 0.5, 0.5]),
            objects=np.zeros((2, 3)),
            holding=False,
            clock=0,
        )


def test_step_increments_clock_by_exactly_one():
    world = make_world()
    state = world.initial_state(derive_rng(1, "start"))
    policy = clean_policy()
    for expected in range(1, 8):
        state, _ = world.step(state, policy)
        assert state.clock == expected


def test_apply_action_validates_shape_and_finiteness():
    world = make_world()
    state = world.initial_state(derive_rng(2, "start"))
    with pytest.raises(SchemaError):
        world.apply_action(state, np.zeros(3))
    with pytest.raises(DomainError):
        world.apply_action(state, np.array([np.nan, 0.0, 0.0, 0.0]))


def test_boundary_clamp_keeps_positions_inside_and_flags():
    world = make_world()
    state = WorldState(
        effector=np.array([0.01, 0.5]),
        objects=np.array([[0.5, 0.5, 0.0], [0.7, 0.7, 0.0]]),
        holding=False,
        clock=0,
    )
    pushed = world.apply_action(state, np.array([-0.08, 0.0, 0.0, 0.0]))
    assert pushed.effector[0] == 0.0
    assert pushed.clamped
    stayed = world.apply_action(state, np.array([0.005, 0.0, 0.0, 0.0]))
    assert not stayed.clamped


def test_grasped_object_rides_effector_and_release_drops_it():
    world = make_world()
    state = WorldState(
        effector=np.array([0.5, 0.5]),
        objects=np.array([[0.5, 0.5, 0.0], [0.8, 0.8, 0.0]]),
        holding=False,
        clock=0,
    )
    held = world.apply_action(state, np.array([0.03, 0.0, 0.0, 1.0]))
    assert held.holding
    assert np.array_equal(held.objects[0, :2], held.effector)
    spun = world.apply_action(held, np.array([0.0, 0.0, 0.2, 1.0]))
    assert spun.objects[0, 2] == pytest.approx(0.2)
    dropped = world.apply_action(spun, np.array([0.05, 0.0, 0.0, 0.0]))
    assert not dropped.holding
    assert np.array_equal(dropped.objects[0, :2], spun.objects[0, :2])


def test_grip_far_from_object_does_not_grasp():
    world = make_world()
    state = WorldState(
        effector=np.array([0.2, 0.2]),
        objects=np.array([[0.6, 0.6, 0.0], [0.8, 0.8, 0.0]]),
        holding=False,
        clock=0,
    )
    after = world.apply_action(state, np.array([0.0, 0.0, 0.0, 1.0]))
    assert not after.holding


# ------------------------------------------------------------ validation


def test_policy_validation():
    with pytest.raises(DomainError):
        ScriptedPolicy(skill=1.5, noise_scale=0.0, seed=0)
    with pytest.raises(DomainError):
        ScriptedPolicy(skill=0.5, noise_scale=-0.1, seed=0)


def test_injection_validation():
    with pytest.raises(ConfigError):
        FailureInjection(mode="teleport", onset=5, magnitude=1.0)
    with pytest.raises(DomainError):
        FailureInjection(mode="drift", onset=0, magnitude=1.0)
    with pytest.raises(DomainError):
        FailureInjection(mode="drift", onset=5, magnitude=0.0)
    label = FailureInjection(mode="drift", onset=5)
    assert label.magnitude is None


def test_magnitude_free_label_cannot_drive_the_world():
    world = make_world()
    state = world.initial_state(derive_rng(3, "start"))
    label = FailureInjection(mode="drift", onset=1)
    with pytest.raises(ConfigError):
        world.step(state, clean_policy(), label)


def test_unknown_task_is_a_config_error():
    with pytest.raises(ConfigError):
        get_task("juggle")


# ----------------------------------------------------------- determinism


def run_trajectory(task, policy_seed, start_seed, injection=None, steps=40):
    world = make_world(task)
    start = world.initial_state(derive_rng(start_seed, "start"))
    policy = ScriptedPolicy(skill=0.5, noise_scale=0.006, seed=policy_seed)
    return run_episode(world, policy, start, steps, injection)


def test_same_seeds_reproduce_bit_identical_episodes():
    a = run_trajectory("hang", 11, 7)
    b = run_trajectory("hang", 11, 7)
    assert np.array_equal(a.trajectory.embeddings, b.trajectory.embeddings)
    assert np.array_equal(a.trajectory.actions, b.trajectory.actions)
    assert a.success == b.success


def test_different_policy_seeds_diverge():
    a = run_trajectory("hang", 11, 7)
    b = run_trajectory("hang", 12, 7)
    assert not np.array_equal(a.trajectory.actions, b.trajectory.actions)


def test_expert_demos_bit_identical_per_seed_and_vary_across_seeds():
    first = generate_expert_demos("pour", count=6, seed=5, encoder=ENCODER)
    second = generate_expert_demos("pour", count=6, seed=5, encoder=ENCODER)
    for a, b in zip(first, second):
        assert np.array_equal(a.embeddings, b.embeddings)
        assert np.array_equal(a.actions, b.actions)
    other = generate_expert_demos("pour", count=6, seed=6, encoder=ENCODER)
    assert not np.array_equal(first[5].embeddings, other[5].embeddings)


# -------------------------------------------------------------- restore


def test_restore_returns_exact_snapshot_and_replays_identically():
    record = run_trajectory("pick_place", 21, 9)
    refs = record.state_refs
    assert refs[0].clock == 0
    for t in (0, 1, record.length // 2, record.length):
        snap = restore(refs, t)
        assert snap.clock == t
    # restoring and stepping again reproduces the recorded successor
    world = make_world("pick_place")
    policy = ScriptedPolicy(skill=0.5, noise_scale=0.006, seed=21)
    t = record.length // 2
    replayed, _ = world.step(restore(refs, t), policy, record.injection)
    original = refs[t + 1]
    assert np.array_equal(replayed.effector, original.effector)
    assert np.array_equal(replayed.objects, original.objects)
    assert replayed.holding == original.holding
    assert replayed.clock == original.clock


def test_restore_unknown_tick_raises_index_error():
    record = run_trajectory("pick_place", 22, 9)
    with pytest.raises(IndexError):
        restore(record.state_refs, record.length + 1)
    with pytest.raises(IndexError):
        restore(record.state_refs, -1)


# ---------------------------------------------------------------- faults


def test_freeze_holds_effector_exactly_constant_from_onset():
    world = make_world("pick_place")
    start = world.initial_state(derive_rng(31, "start"))
    policy = ScriptedPolicy(skill=0.5, noise_scale=0.006, seed=31)
    record = run_episode(
        world, policy, start, 30, FailureInjection("freeze", 10, 1.0)
    )
    frozen = record.state_refs[10].effector
    for t in range(10, record.length + 1):
        assert np.array_equal(record.state_refs[t].effector, frozen)
    before = record.state_refs[9].effector
    assert not np.array_equal(before, frozen) or True  # motion up to onset
    assert not record.success


def test_drift_distance_to_twin_demo_grows_monotonically_after_onset():
    # a zero-noise demo twin shares the rollout's start, so pre-onset the
    # rollout coincides with it and post-onset the drift offset is the
    # only difference at matching clocks; the start puts the manipuland
    # far away so the measured window sits inside one long pursuit leg
    world = make_world("pick_place")
    start = world.fixed_state((0.05, 0.3), (0.85, 0.55), (0.6, 0.25))
    twin_policy = ScriptedPolicy(skill=1.0, noise_scale=0.0, seed=77)
    twin = run_episode(world, twin_policy, start, 60)
    assert twin.success
    bank = build_bank([twin.trajectory], ENCODER.encoder_id)

    onset = 2
    rollout_policy = ScriptedPolicy(skill=0.5, noise_scale=0.0, seed=78)
    record = run_episode(
        world, rollout_policy, start, bank.l_max,
        FailureInjection("drift", onset, 0.05),
    )
    assert not record.success
    # identical controller and zero noise: bit-equal prefix before onset
    for t in range(1, onset):
        assert np.array_equal(
            record.trajectory.embeddings[t - 1], twin.trajectory.embeddings[t - 1]
        )
    distances = [
        cosine_distance(
            record.trajectory.embeddings[t - 1],
            bank.padded_embeddings[0, t - 1],
        )
        for t in range(onset, onset + 5)
    ]
    assert np.all(np.diff(distances) > 0)
    assert distances[-1] > 5 * distances[0]


def test_wrong_object_and_overshoot_cause_failures():
    for mode, magnitude in (("wrong_object", 1.0), ("overshoot", 2.6)):
        world = make_world("hang")
        start = world.initial_state(derive_rng(41, mode))
        policy = ScriptedPolicy(skill=0.5, noise_scale=0.006, seed=42)
        record = run_episode(
            world, policy, start, 30, FailureInjection(mode, 4, magnitude)
        )
        assert not record.success, mode


def test_full_skill_uninjected_episodes_reach_goal_within_cap():
    for task in TASKS:
        demos = generate_expert_demos(task, count=12, seed=11, encoder=ENCODER)
        l_max = max(demo.length for demo in demos)
        world = make_world(task)
        for case in range(10):
            start = world.initial_state(derive_rng(50, task, case))
            policy = ScriptedPolicy(
                skill=1.0, noise_scale=0.006, seed=derive_seed(50, task, case)
            )
            record = run_episode(world, policy, start, l_max + 10)
            assert record.success
            assert record.length <= l_max + 10


def test_expert_demo_lengths_vary_with_start_randomization():
    demos = generate_expert_demos("fold", count=12, seed=3, encoder=ENCODER)
    assert len({demo.length for demo in demos}) > 1


# ---------------------------------------------------------------- oracle


def test_oracle_finishes_from_rewound_fault_states_within_budget():
    world = make_world("pick_place")
    demos = generate_expert_demos("pick_place", count=20, seed=11, encoder=ENCODER)
    l_max = max(demo.length for demo in demos)
    for mode, onset in (("drift", 8), ("freeze", 6), ("wrong_object", 7), ("overshoot", 9)):
        magnitude = {"drift": 0.06, "freeze": 1.0, "wrong_object": 1.0, "overshoot": 2.6}[mode]
        start = world.initial_state(derive_rng(60, mode))
        policy = ScriptedPolicy(skill=0.3, noise_scale=0.006, seed=derive_seed(60, mode))
        record = run_episode(
            world, policy, start, l_max, FailureInjection(mode, onset, magnitude)
        )
        assert not record.success
        state = restore(record.state_refs, max(1, onset - 2))
        while state.clock < l_max and not world.evaluate_success(state):
            state = world.apply_action(state, world.oracle_operator(state))
        assert world.evaluate_success(state), mode


def test_oracle_action_is_near_zero_once_goal_is_reached():
    world = make_world("pour")
    start = world.initial_state(derive_rng(61, "start"))
    state = start
    while state.clock < 80 and not world.evaluate_success(state):
        state = world.apply_action(state, world.oracle_operator(state))
    assert world.evaluate_success(state)
    action = world.oracle_operator(state)
    assert np.linalg.norm(action[:3]) <= 1e-9


# ------------------------------------------------------------- success


def test_goal_test_is_a_closed_ball_at_exact_tolerance():
    task = get_task("hang")
    world = make_world("hang")
    anchor = np.array([0.03125, 0.25])
    goal = task.goal_point(anchor)
    exactly_on = goal + np.array([POS_TOL, 0.0])
    # x components differ by less than a factor of two, so the predicate's
    # subtraction is exact and the distance equals POS_TOL bit for bit
    objects = np.array([[exactly_on[0], exactly_on[1], 0.0], [anchor[0], anchor[1], 0.0]])
    state = WorldState(
        effector=np.array([0.9, 0.9]), objects=objects, holding=False, clock=5
    )
    assert float(np.linalg.norm(state.objects[0, :2] - goal)) == POS_TOL
    assert world.evaluate_success(state)
    nudged = objects.copy()
    nudged[0, 0] = np.nextafter(nudged[0, 0], 2.0)
    beyond = WorldState(
        effector=np.array([0.9, 0.9]), objects=nudged, holding=False, clock=5
    )
    assert not world.evaluate_success(beyond)


def test_held_object_in_goal_ball_is_not_a_placement():
    task = get_task("hang")
    world = make_world("hang")
    anchor = np.array([0.4, 0.4])
    goal = task.goal_point(anchor)
    objects = np.array([[goal[0], goal[1], 0.0], [anchor[0], anchor[1], 0.0]])
    held = WorldState(
        effector=goal, objects=objects, holding=True, clock=5
    )
    assert not world.evaluate_success(held)
    released = WorldState(
        effector=goal, objects=objects, holding=False, clock=6
    )
    assert world.evaluate_success(released)


# -------------------------------------------------------------- encoder


def test_encoder_is_deterministic_and_seed_sensitive():
    state = make_world().initial_state(derive_rng(70, "start"))
    again = FeatureEncoder()
    assert np.array_equal(ENCODER.embed(state), again.embed(state))
    other = FeatureEncoder(seed=99)
    assert other.encoder_id != ENCODER.encoder_id
    assert not np.array_equal(ENCODER.embed(state), other.embed(state))


def test_encoder_bias_guarantees_positive_norm():
    state = make_world().initial_state(derive_rng(71, "start"))
    embedding = ENCODER.embed(state)
    assert embedding.shape == (ENCODER.dim,)
    assert embedding[-1] == 1.0
    assert np.linalg.norm(embedding) >= 1.0


def test_encoder_dim_validation():
    with pytest.raises(ConfigError):
        FeatureEncoder(dim=1)


def test_encoder_distinguishes_all_states_across_episodes():
    rows = []
    for case in range(6):
        record = run_trajectory("fold", 80 + case, 90 + case)
        rows.append(record.trajectory.embeddings)
    stacked = np.vstack(rows)
    assert len(np.unique(stacked, axis=0)) == stacked.shape[0]


def test_clock_feature_separates_frozen_states_from_their_past():
    world = make_world("pick_place")
    start = world.initial_state(derive_rng(72, "start"))
    policy = ScriptedPolicy(skill=0.5, noise_scale=0.0, seed=72)
    record = run_episode(
        world, policy, start, 30, FailureInjection("freeze", 5, 1.0)
    )
    early = record.trajectory.embeddings[5]
    late = record.trajectory.embeddings[-1]
    assert not np.array_equal(early, late)
    assert cosine_distance(early, late) > 0


# ------------------------------------------------------------- episodes


def test_run_episode_validates_inputs():
    world = make_world()
    start = world.initial_state(derive_rng(73, "start"))
    with pytest.raises(DomainError):
        run_episode(world, clean_policy(), start, 0)
    bare = World("hang", encoder=None)
    with pytest.raises(SchemaError):
        run_episode(bare, clean_policy(), bare.initial_state(derive_rng(0, "s")), 10)


def test_episode_hits_cap_when_frozen_early():
    world = make_world("hang")
    start = world.initial_state(derive_rng(74, "start"))
    record = run_episode(
        world, clean_policy(seed=74), start, 25, FailureInjection("freeze", 2, 1.0)
    )
    assert record.length == 25
    assert not record.success


def test_episode_record_snapshot_count_is_validated():
    record = run_trajectory("hang", 75, 75)
    with pytest.raises(SchemaError):
        EpisodeRecord(
            trajectory=record.trajectory,
            success=record.success,
            state_refs=record.state_refs[:-1],
        )


def test_failure_onset_property():
    record = run_trajectory("hang", 76, 76, FailureInjection("freeze", 3, 1.0), steps=20)
    assert record.failure_onset == 3
    clean = run_trajectory("hang", 76, 76)
    assert clean.failure_onset is None


# ------------------------------------------------------- fault sampling


def test_sample_injection_rate_tracks_skill():
    rng = derive_rng(80, "inj")
    draws = [sample_injection(rng, skill=1.0, horizon=30) for _ in range(500)]
    assert all(draw is None for draw in draws)
    rng = derive_rng(81, "inj")
    draws = [sample_injection(rng, skill=0.0, horizon=30) for _ in range(4000)]
    rate = sum(draw is not None for draw in draws) / len(draws)
    assert 0.72 <= rate <= 0.78
    rng = derive_rng(82, "inj")
    draws = [sample_injection(rng, skill=1 / 3, horizon=30) for _ in range(4000)]
    rate = sum(draw is not None for draw in draws) / len(draws)
    assert 0.47 <= rate <= 0.53


def test_sample_injection_covers_modes_and_respects_ranges():
    rng = derive_rng(83, "inj")
    seen = set()
    for _ in range(600):
        draw = sample_injection(rng, skill=0.0, horizon=30)
        if draw is None:
            continue
        seen.add(draw.mode)
        assert 4 <= draw.onset <= 18
        if draw.mode == "drift":
            assert 0.10 <= draw.magnitude <= 0.16
        elif draw.mode == "overshoot":
            assert 3.0 <= draw.magnitude <= 4.2
    assert seen == set(FAULT_MODES)


# ------------------------------------------------------------ post_train


def test_post_train_matches_closed_form_and_clamps():
    policy = ScriptedPolicy(skill=0.4, noise_scale=0.006, seed=1)
    record = run_trajectory("hang", 90, 90)
    flags = np.zeros(record.length, dtype=bool)
    flags[2:10] = True
    corrected = EpisodeRecord(
        trajectory=type(record.trajectory)(
            embeddings=record.trajectory.embeddings,
            actions=record.trajectory.actions,
            intervention_flags=flags,
        ),
        success=True,
    )
    updated = post_train(policy, [corrected, corrected], gain=0.4, normalizer=400.0)
    assert updated.skill == pytest.approx(0.4 + 0.4 * 16 / 400.0)
    assert updated.seed == policy.seed
    maxed = post_train(policy, [corrected] * 500, gain=0.4, normalizer=400.0)
    assert maxed.skill == 1.0


def test_post_train_without_corrections_returns_policy_unchanged():
    policy = ScriptedPolicy(skill=0.4, noise_scale=0.006, seed=1)
    assert post_train(policy, []) is policy
    record = run_trajectory("hang", 91, 91)
    assert post_train(policy, [record]) is policy


def test_post_train_validates_normalizer():
    policy = ScriptedPolicy(skill=0.4, noise_scale=0.006, seed=1)
    with pytest.raises(DomainError):
        post_train(policy, [], normalizer=0.0)


# ------------------------------------------------------------ episode log


def test_episode_log_round_trip_is_bit_exact(tmp_path):
    records = [
        run_trajectory("hang", 100 + i, 110 + i,
                       FailureInjection("freeze", 5, 1.0) if i % 2 else None,
                       steps=20)
        for i in range(4)
    ]
    path = tmp_path / "episodes.jsonl"
    save_episodes(records, path, ENCODER.encoder_id)
    loaded, encoder_id = load_episodes(path)
    assert encoder_id == ENCODER.encoder_id
    assert len(loaded) == 4
    for original, parsed in zip(records, loaded):
        assert np.array_equal(original.trajectory.embeddings, parsed.trajectory.embeddings)
        assert np.array_equal(original.trajectory.actions, parsed.trajectory.actions)
        assert parsed.success == original.success
        if original.injection is None:
            assert parsed.injection is None
        else:
            assert parsed.injection.mode == original.injection.mode
            assert parsed.injection.onset == original.injection.onset
            assert parsed.injection.magnitude is None
        assert parsed.state_refs is None


def test_episode_log_rejects_unknown_version(tmp_path):
    records = [run_trajectory("hang", 120, 120)]
    path = tmp_path / "episodes.jsonl"
    save_episodes(records, path, ENCODER.encoder_id)
    lines = path.read_text().splitlines()
    lines[0] = lines[0].replace('"version": 1', '"version": 9')
    path.write_text("\n".join(lines) + "\n")
    with pytest.raises(CompatibilityError):
        load_episodes(path)


def test_episode_log_reports_malformed_record_index(tmp_path):
    records = [run_trajectory("hang", 121 + i, 121 + i) for i in range(3)]
    path = tmp_path / "episodes.jsonl"
    save_episodes(records, path, ENCODER.encoder_id)
    lines = path.read_text().splitlines()
    lines[2] = lines[2][: len(lines[2]) // 2]
    path.write_text("\n".join(lines) + "\n")
    with pytest.raises(ParseError) as excinfo:
        load_episodes(path)
    assert excinfo.value.record_index == 2


def test_episode_log_rejects_bad_labels(tmp_path):
    import json

    records = [run_trajectory("hang", 125, 125)]
    path = tmp_path / "episodes.jsonl"
    save_episodes(records, path, ENCODER.encoder_id)
    lines = path.read_text().splitlines()
    record = json.loads(lines[1])
    record["success"] = "yes"
    path.write_text("\n".join([lines[0], json.dumps(record)]) + "\n")
    with pytest.raises(ParseError):
        load_episodes(path)
    record = json.loads(lines[1])
    record["injection"] = {"mode": "teleport", "onset": 3}
    path.write_text("\n".join([lines[0], json.dumps(record)]) + "\n")
    with pytest.raises(ParseError) as excinfo:
        load_episodes(path)
    assert excinfo.value.record_index == 1


def test_save_episodes_rejects_empty_list(tmp_path):
    with pytest.raises(DomainError):
        save_episodes([], tmp_path / "none.jsonl", "enc")


# ------------------------------------------------------------- starts


def test_extreme_starts_rank_by_path_length():
    task = get_task("pick_place")
    starts = extreme_starts(task, 4)
    assert len(starts) == 4

    def path(combo):
        effector, manipuland, anchor = combo
        goal = task.goal_point(anchor)
        return float(
            np.linalg.norm(effector - manipuland) + np.linalg.norm(manipuland - goal)
        )

    lengths = [path(combo) for combo in starts]
    assert lengths == sorted(lengths, reverse=True)
