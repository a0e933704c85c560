"""Surrogate manipulation tasks on the unit workspace.

Each task moves one manipuland (object 0) relative to one static anchor
(object 1) through a short waypoint schedule: approach, grasp, carry
(optionally through a high corridor), then tilt, release, or retreat.
Progress is *recomputed from the state* every step (held or not, placed
or not), so control needs no hidden program counter and replaying from a
restored snapshot continues exactly where the state says it is.

Distances are Euclidean and every tolerance check is a closed ball
(``<=``), including the success predicates.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from otfleet.errors import ConfigError

# shared control and goal tolerances (task units on the unit square)
GRASP_TOL = 0.02
PLACE_TOL = 0.02
POS_TOL = 0.03
ANGLE_TOL = 0.15
ALIGN_TOL = 0.05


@dataclass(frozen=True)
class Region:
    """Axis-aligned sampling box."""

    low: tuple
    high: tuple

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        low = np.asarray(self.low, dtype=np.float64)
        high = np.asarray(self.high, dtype=np.float64)
        return rng.uniform(low, high)


@dataclass(frozen=True)
class TaskSpec:
    task_id: str
    effector_start: Region
    manipuland_start: Region
    anchor_start: Region
    goal_offset: tuple  # goal point = anchor + offset
    target_angle: Optional[float]  # tilt the held object once placed
    high_route_y: Optional[float]  # carry through a high corridor first
    release_at_goal: bool
    retreat_home: Optional[tuple]  # post-release pursuit point
    decoy: tuple  # pursued instead of any target under the wrong-target fault

    def goal_point(self, anchor_xy: np.ndarray) -> np.ndarray:
        return anchor_xy + np.asarray(self.goal_offset, dtype=np.float64)


@dataclass(frozen=True)
class ControlCommand:
    """What the scripted controller wants this step, before gains/noise."""

    target: np.ndarray  # pursuit point for the effector
    spin_error: float  # remaining rotation of the held object
    grip: int  # 0 or 1, the commanded grip


TASKS = {
    "pour": TaskSpec(
        task_id="pour",
        effector_start=Region((0.075, 0.075), (0.175, 0.175)),
        manipuland_start=Region((0.325, 0.225), (0.425, 0.325)),
        anchor_start=Region((0.675, 0.525), (0.775, 0.625)),
        goal_offset=(0.0, 0.12),
        target_angle=1.8,
        high_route_y=None,
        release_at_goal=False,
        retreat_home=None,
        decoy=(0.1, 0.85),
    ),
    "hang": TaskSpec(
        task_id="hang",
        effector_start=Region((0.775, 0.075), (0.875, 0.175)),
        manipuland_start=Region((0.575, 0.175), (0.675, 0.275)),
        anchor_start=Region((0.225, 0.725), (0.325, 0.825)),
        goal_offset=(0.0, 0.05),
        target_angle=None,
        high_route_y=None,
        release_at_goal=True,
        retreat_home=None,
        decoy=(0.9, 0.9),
    ),
    "pick_place": TaskSpec(
        task_id="pick_place",
        effector_start=Region((0.075, 0.325), (0.175, 0.425)),
        manipuland_start=Region((0.175, 0.575), (0.275, 0.675)),
        anchor_start=Region((0.725, 0.225), (0.825, 0.325)),
        goal_offset=(0.0, 0.0),
        target_angle=None,
        high_route_y=0.85,
        release_at_goal=True,
        retreat_home=None,
        decoy=(0.1, 0.1),
    ),
    "fold": TaskSpec(
        task_id="fold",
        effector_start=Region((0.075, 0.775), (0.175, 0.875)),
        manipuland_start=Region((0.275, 0.275), (0.375, 0.375)),
        anchor_start=Region((0.575, 0.575), (0.675, 0.675)),
        goal_offset=(0.0, 0.0),
        target_angle=None,
        high_route_y=None,
        release_at_goal=True,
        retreat_home=(0.1, 0.1),
        decoy=(0.9, 0.1),
    ),
}


def get_task(task_id: str) -> TaskSpec:
    try:
        return TASKS[task_id]
    except KeyError:
        raise ConfigError(
            f"unknown task {task_id!r}; shipped tasks: {sorted(TASKS)}"
        ) from None


def _corners(region: Region):
    (x0, y0), (x1, y1) = region.low, region.high
    return [
        np.array(p, dtype=np.float64)
        for p in ((x0, y0), (x0, y1), (x1, y0), (x1, y1))
    ]


def extreme_starts(task: TaskSpec, count: int):
    """The ``count`` longest-path corner starts for a task.

    Ranks every corner combination of the three start regions by total
    leg length (approach + carry, plus the retreat leg when the task has
    one). Seeding a demo set with these makes the longest demo an upper
    bound on how long a typical randomized episode runs.
    """
    combos = []
    for effector in _corners(task.effector_start):
        for manipuland in _corners(task.manipuland_start):
            for anchor in _corners(task.anchor_start):
                goal = task.goal_point(anchor)
                path = float(
                    np.linalg.norm(effector - manipuland)
                    + np.linalg.norm(manipuland - goal)
                )
                if task.retreat_home is not None:
                    path += float(
                        np.linalg.norm(goal - np.asarray(task.retreat_home))
                    )
                combos.append((path, effector, manipuland, anchor))
    combos.sort(key=lambda item: -item[0])
    return [(e, m, a) for _, e, m, a in combos[:count]]


def control_command(task: TaskSpec, state, pursuit_override=None) -> ControlCommand:
    """Derive the controller's intent purely from the current state.

    ``pursuit_override`` replaces every pursuit point (the wrong-target
    fault); grasp/release logic still runs on proximity.
    """
    effector = state.effector
    manipuland = state.objects[0, :2]
    goal = task.goal_point(state.objects[1, :2])
    placed = float(np.linalg.norm(manipuland - goal)) <= PLACE_TOL

    def pursue(point) -> np.ndarray:
        if pursuit_override is not None:
            return np.asarray(pursuit_override, dtype=np.float64)
        return np.asarray(point, dtype=np.float64)

    if state.holding:
        at_goal = float(np.linalg.norm(effector - goal)) <= PLACE_TOL
        if not at_goal:
            if (
                task.high_route_y is not None
                and abs(effector[0] - goal[0]) > ALIGN_TOL
            ):
                return ControlCommand(pursue((goal[0], task.high_route_y)), 0.0, 1)
            return ControlCommand(pursue(goal), 0.0, 1)
        if task.target_angle is not None:
            remaining = task.target_angle - float(state.objects[0, 2])
            if abs(remaining) > ANGLE_TOL:
                return ControlCommand(pursue(effector), remaining, 1)
        if task.release_at_goal:
            return ControlCommand(pursue(effector), 0.0, 0)
        return ControlCommand(pursue(effector), 0.0, 1)

    if not placed:
        near = float(np.linalg.norm(effector - manipuland)) <= GRASP_TOL
        return ControlCommand(pursue(manipuland), 0.0, 1 if near else 0)

    if task.retreat_home is not None:
        return ControlCommand(pursue(task.retreat_home), 0.0, 0)
    return ControlCommand(pursue(effector), 0.0, 0)


def goal_satisfied(task: TaskSpec, state) -> bool:
    """Ground-truth success predicate; pure function of the state.

    Placement tasks only count once the object has been released (a held
    object swept through the goal ball is not a placement); tilt tasks
    complete in-grip. Tasks with a retreat point also require the
    effector to have reached it.
    """
    manipuland = state.objects[0, :2]
    goal = task.goal_point(state.objects[1, :2])
    if float(np.linalg.norm(manipuland - goal)) > POS_TOL:
        return False
    if task.release_at_goal and state.holding:
        return False
    if task.target_angle is not None:
        if abs(float(state.objects[0, 2]) - task.target_angle) > ANGLE_TOL:
            return False
    if task.retreat_home is not None:
        home = np.asarray(task.retreat_home, dtype=np.float64)
        if float(np.linalg.norm(state.effector - home)) > POS_TOL:
            return False
    return True
