"""Deterministic 2-D manipulation world.

The world is the unit square. A point effector pursues task waypoints
with proportional control, can grasp the manipuland when close enough
(the held object then rides on the effector and can be spun), and is
perturbed by seeded Gaussian noise plus, optionally, one of four fault
modes.

Determinism contract: every source of randomness in a step is drawn
from a generator derived from ``(policy.seed, "step", state.clock)``,
so restoring a recorded snapshot and stepping again reproduces the
original successor state bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np

from otfleet.errors import ConfigError, DomainError, SchemaError
from otfleet.seeding import derive_rng
from otfleet.sim.tasks import (
    GRASP_TOL,
    TaskSpec,
    control_command,
    get_task,
    goal_satisfied,
)

ACTION_DIM = 4  # (dx, dy, dspin, grip)

GAIN = 0.7
MAX_STEP = 0.08
SPIN_GAIN = 0.6
MAX_SPIN = 0.35
SPIN_NOISE_FRACTION = 0.25

FAULT_MODES = ("drift", "freeze", "wrong_object", "overshoot")


def _frozen_array(values, shape, name: str) -> np.ndarray:
    arr = np.array(values, dtype=np.float64)
    if arr.shape != shape:
        raise SchemaError(f"{name} must have shape {shape}, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise DomainError(f"{name} contains non-finite values")
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class WorldState:
    """Full simulator state at one clock tick.

    ``objects`` is (2, 3): row 0 the manipuland, row 1 the static anchor,
    columns (x, y, orientation). Positions live inside the unit square.
    """

    effector: np.ndarray  # (2,)
    objects: np.ndarray  # (2, 3)
    holding: bool
    clock: int
    clamped: bool = False  # last transition hit the workspace boundary

    def __post_init__(self):
        effector = _frozen_array(self.effector, (2,), "effector")
        objects = _frozen_array(self.objects, (2, 3), "objects")
        for name, xy in (("effector", effector), ("objects", objects[:, :2])):
            if np.any(xy < 0.0) or np.any(xy > 1.0):
                raise DomainError(f"{name} position outside the unit workspace")
        if self.clock < 0:
            raise DomainError(f"clock must be non-negative, got {self.clock}")
        object.__setattr__(self, "effector", effector)
        object.__setattr__(self, "objects", objects)
        object.__setattr__(self, "holding", bool(self.holding))
        object.__setattr__(self, "clock", int(self.clock))
        object.__setattr__(self, "clamped", bool(self.clamped))


@dataclass(frozen=True)
class FailureInjection:
    """One scheduled fault: ``mode`` activates at every tick >= ``onset``.

    ``magnitude`` must be positive to drive a world (drift bias per step,
    or gain multiplier for overshoot). Episode logs persist only mode and
    onset, so labels loaded from disk carry ``magnitude=None``; they
    describe a past fault and cannot be re-injected.
    """

    mode: str
    onset: int
    magnitude: Optional[float] = None

    def __post_init__(self):
        if self.mode not in FAULT_MODES:
            raise ConfigError(
                f"unknown fault mode {self.mode!r}; expected one of {FAULT_MODES}"
            )
        if self.onset < 1:
            raise DomainError(f"fault onset must be >= 1, got {self.onset}")
        if self.magnitude is not None and not self.magnitude > 0:
            raise DomainError(f"fault magnitude must be positive, got {self.magnitude}")


@dataclass(frozen=True)
class ScriptedPolicy:
    """Noisy waypoint follower.

    ``skill`` does not change the controller itself; it scales the
    per-episode probability that a fault is scheduled at all (see
    ``sample_injection``), so better-trained robots fail less often.
    """

    skill: float
    noise_scale: float
    seed: int

    def __post_init__(self):
        if not 0.0 <= self.skill <= 1.0:
            raise DomainError(f"skill must lie in [0, 1], got {self.skill}")
        if self.noise_scale < 0:
            raise DomainError(f"noise_scale must be >= 0, got {self.noise_scale}")


def _pursuit_move(effector: np.ndarray, target: np.ndarray, gain_scale: float) -> np.ndarray:
    """Proportional pursuit, rate-limited, then scaled by any gain fault.

    The fault multiplier applies downstream of the step limiter: a
    runaway gain drives real motion past the commanded limit, which is
    what makes the overshoot mode unrecoverable rather than just slow.
    """
    move = GAIN * (target - effector)
    norm = float(np.linalg.norm(move))
    if norm > MAX_STEP:
        move = move * (MAX_STEP / norm)
    return move * gain_scale


def _drift_direction(seed: int) -> np.ndarray:
    direction = derive_rng(seed, "drift-direction").normal(size=2)
    return direction / float(np.linalg.norm(direction))


class World:
    """Task dynamics bound to one task and one feature encoder."""

    def __init__(self, task: TaskSpec | str, encoder=None):
        self.task = get_task(task) if isinstance(task, str) else task
        self.encoder = encoder

    def initial_state(self, rng: np.random.Generator) -> WorldState:
        spec = self.task
        effector = spec.effector_start.sample(rng)
        objects = np.zeros((2, 3))
        objects[0, :2] = spec.manipuland_start.sample(rng)
        objects[1, :2] = spec.anchor_start.sample(rng)
        return WorldState(
            effector=effector, objects=objects, holding=False, clock=0
        )

    def fixed_state(self, effector, manipuland, anchor) -> WorldState:
        """Initial state at explicit start poses (no sampling)."""
        objects = np.zeros((2, 3))
        objects[0, :2] = manipuland
        objects[1, :2] = anchor
        return WorldState(
            effector=np.asarray(effector, dtype=np.float64),
            objects=objects,
            holding=False,
            clock=0,
        )

    def scripted_action(
        self,
        state: WorldState,
        policy: ScriptedPolicy,
        injection: Optional[FailureInjection] = None,
    ) -> np.ndarray:
        """Action the scripted controller takes from ``state``.

        Applies the active fault (if any), then the policy's seeded
        noise. The returned vector is exactly what ``apply_action``
        will integrate, and what gets logged.
        """
        active = injection is not None and state.clock + 1 >= injection.onset
        mode = injection.mode if active else None
        if mode in ("drift", "overshoot") and injection.magnitude is None:
            raise ConfigError(
                f"{mode} fault needs a magnitude to drive the world; "
                "labels loaded from episode logs cannot be re-injected"
            )

        override = np.asarray(self.task.decoy) if mode == "wrong_object" else None
        command = control_command(self.task, state, pursuit_override=override)

        gain_scale = 1.0 + injection.magnitude if mode == "overshoot" else 1.0
        move = _pursuit_move(state.effector, command.target, gain_scale)
        spin = gain_scale * float(
            np.clip(SPIN_GAIN * command.spin_error, -MAX_SPIN, MAX_SPIN)
        )
        grip = command.grip

        rng = derive_rng(policy.seed, "step", state.clock)
        noise = rng.normal(size=3)
        move = move + policy.noise_scale * noise[:2]
        spin = spin + SPIN_NOISE_FRACTION * policy.noise_scale * float(noise[2])

        if mode == "drift":
            move = move + injection.magnitude * _drift_direction(policy.seed)
        elif mode == "freeze":
            # the controller stops commanding; grip holds its last value
            move = np.zeros(2)
            spin = 0.0
            grip = 1 if state.holding else 0

        return np.array([move[0], move[1], spin, float(grip)], dtype=np.float64)

    def apply_action(self, state: WorldState, action: np.ndarray) -> WorldState:
        """Integrate one action: move, clamp, grasp/release, carry, spin."""
        action = np.asarray(action, dtype=np.float64)
        if action.shape != (ACTION_DIM,):
            raise SchemaError(
                f"action must have shape ({ACTION_DIM},), got {action.shape}"
            )
        if not np.all(np.isfinite(action)):
            raise DomainError("action contains non-finite values")

        raw = state.effector + action[:2]
        effector = np.clip(raw, 0.0, 1.0)
        clamped = bool(np.any(raw != effector))

        grip_on = action[3] >= 0.5
        near = float(np.linalg.norm(state.effector - state.objects[0, :2])) <= GRASP_TOL
        holding = grip_on and (state.holding or near)

        objects = np.array(state.objects)
        if holding:
            objects[0, :2] = effector
            objects[0, 2] += action[2]

        return WorldState(
            effector=effector,
            objects=objects,
            holding=holding,
            clock=state.clock + 1,
            clamped=clamped,
        )

    def step(
        self,
        state: WorldState,
        policy: ScriptedPolicy,
        injection: Optional[FailureInjection] = None,
    ) -> Tuple[WorldState, np.ndarray]:
        """Advance one tick under the scripted policy; clock increases by 1."""
        action = self.scripted_action(state, policy, injection)
        return self.apply_action(state, action), action

    def oracle_operator(self, state: WorldState) -> np.ndarray:
        """Clean corrective action: full-gain pursuit, no noise, no faults.

        At the goal the pursuit error is zero, so the returned action is
        (numerically) the zero vector plus the grip command.
        """
        command = control_command(self.task, state)
        move = _pursuit_move(state.effector, command.target, 1.0)
        spin = float(np.clip(SPIN_GAIN * command.spin_error, -MAX_SPIN, MAX_SPIN))
        return np.array([move[0], move[1], spin, float(command.grip)], dtype=np.float64)

    def evaluate_success(self, state: WorldState) -> bool:
        """Closed-ball goal test; exact-boundary states count as success."""
        return goal_satisfied(self.task, state)


def restore(state_refs: Sequence[WorldState], t: int) -> WorldState:
    """Return the recorded snapshot whose clock is exactly ``t``.

    Snapshots are immutable, so the stored object itself is returned.
    Raises ``IndexError`` when tick ``t`` was never recorded.
    """
    if not 0 <= t < len(state_refs):
        raise IndexError(
            f"no snapshot for tick {t}; recorded ticks span 0..{len(state_refs) - 1}"
        )
    state = state_refs[t]
    if state.clock != t:
        raise DomainError(
            f"snapshot at position {t} carries clock {state.clock}"
        )
    return state
