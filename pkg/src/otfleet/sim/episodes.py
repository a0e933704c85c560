"""Episode running, demo generation, and episode logs.

An episode steps a scripted policy (optionally under one scheduled
fault) until the goal test passes or a step cap is hit. The record
keeps the per-step trajectory plus runtime-only snapshots of every
world state, indexed by clock, so any tick can be restored exactly.

Episode logs reuse the demo-bank JSON Lines layout, with two extra
fields per record: ``success`` and ``injection`` (``{mode, onset}`` or
null). Fault magnitudes and state snapshots are not persisted.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np

from otfleet.demos import (
    BANK_FORMAT_VERSION,
    Trajectory,
    _parse_record,
    _require,
)
from otfleet.errors import (
    CompatibilityError,
    ConfigError,
    DomainError,
    ParseError,
    SchemaError,
)
from otfleet.seeding import derive_rng, derive_seed
from otfleet.sim.encoder import FeatureEncoder
from otfleet.sim.tasks import extreme_starts
from otfleet.sim.world import (
    FAULT_MODES,
    FailureInjection,
    ScriptedPolicy,
    World,
    WorldState,
)

# P(fault scheduled) = FAILURE_RATE_COEFFICIENT * (1 - skill), so a
# freshly deployed robot at skill 1/3 fails about half its episodes and
# a fully trained one never does.
FAILURE_RATE_COEFFICIENT = 0.75

EXPERT_NOISE = 0.006
ROLLOUT_NOISE = 0.006
DEFAULT_DEMO_COUNT = 50
DEMO_STEP_CAP = 160

# demos seeded with the longest-path corner starts, so the bank's l_max
# (and with it the rollout budget) covers the randomized start range
EXTREME_START_DEMOS = 4

EARLIEST_ONSET = 4
ONSET_HORIZON_FRACTION = 0.6

# drift below the actuator step cap reaches a standoff the controller
# can hold indefinitely; keeping the range above the cap guarantees the
# effector diverges once the fault is live
DRIFT_MAGNITUDE_RANGE = (0.10, 0.16)
OVERSHOOT_MAGNITUDE_RANGE = (3.0, 4.2)


@dataclass(frozen=True)
class EpisodeRecord:
    """One completed episode plus its ground-truth label.

    ``state_refs`` (when present) is clock-indexed: entry ``t`` is the
    world state whose clock equals ``t``, including the initial state at
    index 0, so it has ``length + 1`` entries. Records loaded from disk
    carry no snapshots and no fault magnitude.
    """

    trajectory: Trajectory
    success: bool
    injection: Optional[FailureInjection] = None
    task_id: Optional[str] = None
    seed: Optional[int] = None
    state_refs: Optional[tuple] = None

    def __post_init__(self):
        if self.state_refs is not None and len(self.state_refs) != self.length + 1:
            raise SchemaError(
                f"state_refs must hold length+1 clock-indexed snapshots, got "
                f"{len(self.state_refs)} for length {self.length}"
            )

    @property
    def length(self) -> int:
        return self.trajectory.length

    @property
    def failure_onset(self) -> Optional[int]:
        """Tick at which the fault activated, if one was scheduled."""
        return self.injection.onset if self.injection is not None else None


def run_episode(
    world: World,
    policy: ScriptedPolicy,
    initial_state: WorldState,
    max_steps: int,
    injection: Optional[FailureInjection] = None,
) -> EpisodeRecord:
    """Step the scripted policy until success or the step cap.

    The goal test runs after every step, so the episode ends on the
    first tick whose state satisfies it.
    """
    if max_steps < 1:
        raise DomainError(f"max_steps must be >= 1, got {max_steps}")
    if world.encoder is None:
        raise SchemaError("world has no encoder; embeddings cannot be recorded")

    state = initial_state
    refs = [state]
    embeddings: List[np.ndarray] = []
    actions: List[np.ndarray] = []
    while state.clock < max_steps:
        prev = state
        state, action = world.step(state, policy, injection)
        refs.append(state)
        embeddings.append(world.encoder.embed(state, prev))
        actions.append(action)
        if world.evaluate_success(state):
            break

    trajectory = Trajectory(
        embeddings=np.array(embeddings),
        actions=np.array(actions),
    )
    return EpisodeRecord(
        trajectory=trajectory,
        success=world.evaluate_success(state),
        injection=injection,
        task_id=world.task.task_id,
        seed=policy.seed,
        state_refs=tuple(refs),
    )


def generate_expert_demos(
    task_id: str,
    count: int = DEFAULT_DEMO_COUNT,
    seed: int = 0,
    encoder: Optional[FeatureEncoder] = None,
    noise_scale: float = EXPERT_NOISE,
) -> List[Trajectory]:
    """Expert rollouts for one task; every demo reaches the goal.

    Start poses are randomized per demo, so lengths vary; the first few
    demos start from the longest-path corner poses, making the longest
    demo an upper bound on typical episode length. The same
    (task_id, count, seed) always produces bit-identical demos.
    """
    if count < 1:
        raise DomainError(f"demo count must be >= 1, got {count}")
    world = World(task_id, encoder or FeatureEncoder())
    corner_starts = extreme_starts(world.task, min(EXTREME_START_DEMOS, count))
    demos = []
    for index in range(count):
        if index < len(corner_starts):
            start = world.fixed_state(*corner_starts[index])
        else:
            start = world.initial_state(derive_rng(seed, "demo-start", index))
        policy = ScriptedPolicy(
            skill=1.0,
            noise_scale=noise_scale,
            seed=derive_seed(seed, "demo-noise", index),
        )
        record = run_episode(world, policy, start, DEMO_STEP_CAP)
        assert record.success, (
            f"expert demo {index} for task {task_id!r} failed to reach the goal"
        )
        demos.append(
            Trajectory(
                embeddings=record.trajectory.embeddings,
                actions=record.trajectory.actions,
            )
        )
    return demos


def sample_injection(
    rng: np.random.Generator,
    skill: float,
    horizon: int,
    coefficient: float = FAILURE_RATE_COEFFICIENT,
) -> Optional[FailureInjection]:
    """Draw this episode's fault schedule, or None.

    A fault is scheduled with probability ``coefficient * (1 - skill)``
    (clipped to [0, 1]). Mode is uniform over the four fault modes,
    onset uniform over the first ``ONSET_HORIZON_FRACTION`` of the
    horizon, and magnitude mode-specific.
    """
    probability = min(1.0, max(0.0, coefficient * (1.0 - float(skill))))
    if rng.random() >= probability:
        return None
    mode = FAULT_MODES[int(rng.integers(len(FAULT_MODES)))]
    latest = max(EARLIEST_ONSET, int(ONSET_HORIZON_FRACTION * horizon))
    onset = int(rng.integers(EARLIEST_ONSET, latest + 1))
    if mode == "drift":
        magnitude = float(rng.uniform(*DRIFT_MAGNITUDE_RANGE))
    elif mode == "overshoot":
        magnitude = float(rng.uniform(*OVERSHOOT_MAGNITUDE_RANGE))
    else:
        magnitude = 1.0
    return FailureInjection(mode=mode, onset=onset, magnitude=magnitude)


def post_train(
    policy: ScriptedPolicy,
    episodes: Sequence[EpisodeRecord],
    gain: float = 0.4,
    normalizer: float = 400.0,
) -> ScriptedPolicy:
    """Fold operator corrections back into the policy's skill.

    Skill increases by ``gain * corrected_steps / normalizer``, clamped
    at 1. With no corrected steps the policy is returned unchanged.
    """
    if normalizer <= 0:
        raise DomainError(f"normalizer must be positive, got {normalizer}")
    corrected = sum(
        int(record.trajectory.intervention_flags.sum()) for record in episodes
    )
    if corrected == 0:
        return policy
    new_skill = min(1.0, policy.skill + gain * corrected / normalizer)
    return replace(policy, skill=new_skill)


def save_episodes(records: Sequence[EpisodeRecord], path, encoder_id: str) -> None:
    """Write an episode log (demo-bank layout plus labels)."""
    records = list(records)
    if not records:
        raise DomainError("cannot save an empty episode log")
    path = Path(path)
    l_max = max(record.length for record in records)
    dim = records[0].trajectory.dim
    lines = [
        json.dumps(
            {
                "version": BANK_FORMAT_VERSION,
                "N": len(records),
                "dim": dim,
                "l_max": l_max,
                "encoder_id": encoder_id,
            }
        )
    ]
    for index, record in enumerate(records):
        injection = (
            None
            if record.injection is None
            else {"mode": record.injection.mode, "onset": record.injection.onset}
        )
        lines.append(
            json.dumps(
                {
                    "id": index,
                    "length": record.length,
                    "embeddings": record.trajectory.embeddings.tolist(),
                    "actions": record.trajectory.actions.tolist(),
                    "intervention_flags": record.trajectory.intervention_flags.tolist(),
                    "success": bool(record.success),
                    "injection": injection,
                }
            )
        )
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_episodes(path) -> tuple:
    """Read an episode log; returns (records, encoder_id).

    Loaded records carry labels and trajectories only: no snapshots, no
    fault magnitudes, no task id.
    """
    path = Path(path)
    with path.open("r", encoding="utf-8") as handle:
        lines = handle.read().splitlines()
    if not lines:
        raise ParseError("file is empty; expected a manifest line", record_index=0)

    manifest = _parse_record(lines[0], 0)
    version = _require(manifest, "version", 0)
    if version != BANK_FORMAT_VERSION:
        raise CompatibilityError(
            f"unsupported episode log version {version!r}; "
            f"this build reads version {BANK_FORMAT_VERSION}"
        )
    expected_n = _require(manifest, "N", 0)
    expected_dim = _require(manifest, "dim", 0)
    encoder_id = _require(manifest, "encoder_id", 0)

    body = [line for line in lines[1:] if line.strip()]
    if len(body) != expected_n:
        raise ParseError(
            f"manifest says N={expected_n} but file holds {len(body)} records",
            record_index=len(body),
        )

    records = []
    for index, line in enumerate(body, start=1):
        raw = _parse_record(line, index)
        try:
            trajectory = Trajectory(
                embeddings=np.asarray(_require(raw, "embeddings", index), dtype=np.float64),
                actions=np.asarray(_require(raw, "actions", index), dtype=np.float64),
                intervention_flags=np.asarray(
                    _require(raw, "intervention_flags", index), dtype=bool
                ),
            )
        except (SchemaError, DomainError) as exc:
            raise ParseError(str(exc), record_index=index) from exc
        if trajectory.length != _require(raw, "length", index):
            raise ParseError(
                f"declared length {raw['length']} but embeddings have "
                f"{trajectory.length} rows",
                record_index=index,
            )
        if trajectory.dim != expected_dim:
            raise ParseError(
                f"embedding dimension {trajectory.dim} does not match manifest "
                f"dim {expected_dim}",
                record_index=index,
            )
        success = _require(raw, "success", index)
        if not isinstance(success, bool):
            raise ParseError("success must be a boolean", record_index=index)
        injection_raw = _require(raw, "injection", index)
        injection = None
        if injection_raw is not None:
            if not isinstance(injection_raw, dict):
                raise ParseError("injection must be an object or null", record_index=index)
            try:
                injection = FailureInjection(
                    mode=_require(injection_raw, "mode", index),
                    onset=_require(injection_raw, "onset", index),
                )
            except (ConfigError, SchemaError, DomainError) as exc:
                raise ParseError(str(exc), record_index=index) from exc
        records.append(
            EpisodeRecord(trajectory=trajectory, success=success, injection=injection)
        )
    return records, encoder_id
