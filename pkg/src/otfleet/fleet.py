"""Multi-robot deployment loop: rollouts, warnings, operator handoffs.

A fleet of robot nodes rolls out episodes in parallel. When a robot's
monitor raises, the robot stops stepping and posts an intervention
request on a FIFO queue; idle operators service the queue in arrival
order, the robot rewinds to a recoverable step, the operator drives it
(oracle operators use the simulator's clean controller), and control
returns once the match index recovers or the goal is reached. Finished
episodes land in an append-only buffer with per-step intervention flags.

Execution modes share one engine. The logical-clock mode ticks robots in
a fixed order on one thread, so the entire event log is a function of
the configuration and seeds. The paced mode runs the same ticks on a
background thread while console handlers mutate the engine concurrently;
every public mutation takes the engine lock, so the two never interleave
mid-transition.
"""

import dataclasses
import json
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Optional, Sequence

import numpy as np

from .demos import DemoBank, Trajectory
from .detector import (
    DetectorConfig,
    DetectorState,
    RolloutMonitor,
    SharedCalibration,
    episode_summary,
    record_success,
    update_delta,
)
from .errors import DomainError, ProtocolError, SchemaError
from .metrics import EpisodeOutcome
from .seeding import derive_rng, derive_seed
from .sim import FeatureEncoder, ScriptedPolicy, World, restore, sample_injection
from .sim.episodes import EpisodeRecord

RESETTING = "Resetting"
ROLLING = "Rolling"
AWAITING_OPERATOR = "AwaitingOperator"
REWINDING = "Rewinding"
UNDER_INTERVENTION = "UnderIntervention"
FINALIZING = "Finalizing"
PHASES = (
    RESETTING,
    ROLLING,
    AWAITING_OPERATOR,
    REWINDING,
    UNDER_INTERVENTION,
    FINALIZING,
)
# legal source phases for each transition target; AwaitingOperator also
# accepts re-entry when a console abandons an intervention mid-flight
_ALLOWED_FROM = {
    ROLLING: (RESETTING, UNDER_INTERVENTION),
    AWAITING_OPERATOR: (ROLLING, REWINDING, UNDER_INTERVENTION),
    REWINDING: (AWAITING_OPERATOR,),
    UNDER_INTERVENTION: (REWINDING,),
    FINALIZING: (ROLLING, UNDER_INTERVENTION),
    RESETTING: (FINALIZING,),
}

EVENT_KINDS = (
    "RAISE",
    "ENQUEUE",
    "ASSIGN",
    "REWIND",
    "TAKEOVER_STEP",
    "RELEASE",
    "FINALIZE",
)

IDLE = "Idle"
BUSY = "Busy"
OPERATOR_KINDS = ("oracle", "human_console")

EVENT_LOG_VERSION = 1

# An episode may execute at most this many multiples of the nominal step
# cap, counting steps that were later rewound away.  Whatever survives in
# the trajectory stays within the nominal cap; this budget only exists to
# stop pathological raise/rewind/release cycles from running forever.
EPISODE_EFFORT_FACTOR = 4


@dataclass(frozen=True)
class FleetEvent:
    seq: int
    clock: int
    kind: str
    robot_id: str
    operator_id: Optional[str] = None
    payload: dict = field(default_factory=dict)

    def to_json(self) -> str:
        record = {
            "seq": self.seq,
            "clock": self.clock,
            "kind": self.kind,
            "robot_id": self.robot_id,
            "operator_id": self.operator_id,
            "payload": self.payload,
        }
        return json.dumps(record, sort_keys=True, separators=(",", ":"))


class FleetEventLog:
    """Append-only, sequence-stamped event record; safe for many writers."""

    def __init__(self):
        self._lock = threading.Lock()
        self._events: list[FleetEvent] = []

    def append(self, clock, kind, robot_id, operator_id=None, payload=None) -> FleetEvent:
        if kind not in EVENT_KINDS:
            raise ProtocolError(f"unknown event kind {kind!r}")
        with self._lock:
            event = FleetEvent(
                seq=len(self._events),
                clock=int(clock),
                kind=kind,
                robot_id=robot_id,
                operator_id=operator_id,
                payload=dict(payload or {}),
            )
            self._events.append(event)
            return event

    def __len__(self) -> int:
        with self._lock:
            return len(self._events)

    @property
    def events(self) -> tuple:
        with self._lock:
            return tuple(self._events)

    def since(self, seq: int) -> tuple:
        """Events with sequence number >= ``seq`` (console polling)."""
        with self._lock:
            return tuple(self._events[seq:])

    def save(self, path) -> None:
        events = self.events
        lines = [
            json.dumps(
                {"version": EVENT_LOG_VERSION, "events": len(events)},
                sort_keys=True,
                separators=(",", ":"),
            )
        ]
        lines.extend(event.to_json() for event in events)
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_events(path) -> tuple:
    """Read back an event log written by ``FleetEventLog.save``."""
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines:
        raise SchemaError("event log is empty")
    header = json.loads(lines[0])
    if header.get("version") != EVENT_LOG_VERSION:
        raise SchemaError(
            f"unsupported event log version {header.get('version')!r}"
        )
    events = []
    for line in lines[1:]:
        record = json.loads(line)
        events.append(
            FleetEvent(
                seq=record["seq"],
                clock=record["clock"],
                kind=record["kind"],
                robot_id=record["robot_id"],
                operator_id=record["operator_id"],
                payload=record["payload"],
            )
        )
    if len(events) != header.get("events"):
        raise SchemaError(
            f"event log truncated: header says {header.get('events')}, "
            f"found {len(events)}"
        )
    return tuple(events)


@dataclass(frozen=True)
class InterventionRequest:
    """One help request: who raised, at which step, how far to rewind.

    ``sequence`` is stamped by the queue at enqueue time and orders
    service FIFO across the whole fleet.
    """

    robot_id: str
    raise_timestep: int
    float_value: float
    rewind_target: int
    sequence: Optional[int] = None


class OperatorNode:
    """One operator: idle or bound to exactly one robot."""

    def __init__(self, operator_id: str, kind: str = "oracle"):
        if kind not in OPERATOR_KINDS:
            raise ProtocolError(f"unknown operator kind {kind!r}")
        self.operator_id = operator_id
        self.kind = kind
        self.status = IDLE
        self.robot_id: Optional[str] = None

    @property
    def idle(self) -> bool:
        return self.status == IDLE

    def __repr__(self):
        bound = f" on {self.robot_id}" if self.robot_id else ""
        return f"OperatorNode({self.operator_id}, {self.status}{bound})"


class MessageQueue:
    """FIFO intervention requests with atomic enqueue and assignment.

    One lock guards the items, the per-robot outstanding set, and the
    operator status flip inside ``next_assignment``, so an enqueue racing
    an assignment can never lose or double-deliver a request.
    """

    def __init__(self):
        self._lock = threading.RLock()
        self._items: list[InterventionRequest] = []
        self._outstanding: set[str] = set()
        self._next_sequence = 0

    def __len__(self) -> int:
        with self._lock:
            return len(self._items)

    def pending(self) -> tuple:
        with self._lock:
            return tuple(self._items)

    def enqueue(self, request: InterventionRequest) -> InterventionRequest:
        """Stamp the next sequence number and append; atomic."""
        with self._lock:
            if request.robot_id in self._outstanding:
                raise ProtocolError(
                    f"robot {request.robot_id} already has an outstanding "
                    f"intervention request"
                )
            stamped = dataclasses.replace(request, sequence=self._next_sequence)
            self._next_sequence += 1
            self._items.append(stamped)
            self._outstanding.add(stamped.robot_id)
            return stamped

    def requeue_front(self, request: InterventionRequest) -> None:
        """Put an already-stamped request back at the head of the line.

        Used when an assignment falls through (console disconnect); the
        request keeps its original sequence number, as if never popped.
        """
        if request.sequence is None:
            raise ProtocolError("cannot requeue an unstamped request")
        with self._lock:
            if request.robot_id in self._outstanding:
                raise ProtocolError(
                    f"robot {request.robot_id} already has an outstanding "
                    f"intervention request"
                )
            self._items.insert(0, request)
            self._outstanding.add(request.robot_id)

    def next_assignment(
        self, operators: Sequence[OperatorNode], operator_id: Optional[str] = None
    ):
        """Pop the earliest request and bind an idle operator to it.

        Returns (request, operator), or None when the queue is empty or
        no operator is idle; in both cases the queue is left untouched.
        ``operator_id`` restricts the choice to one specific operator,
        used when a console claims an alert for itself.
        """
        with self._lock:
            if not self._items:
                return None
            chosen = None
            for operator in operators:
                if operator_id is not None and operator.operator_id != operator_id:
                    continue
                if operator.idle:
                    chosen = operator
                    break
            if chosen is None:
                return None
            request = self._items.pop(0)
            self._outstanding.discard(request.robot_id)
            chosen.status = BUSY
            chosen.robot_id = request.robot_id
            return request, chosen


def enqueue_request(queue: MessageQueue, request: InterventionRequest) -> InterventionRequest:
    return queue.enqueue(request)


def next_assignment(queue: MessageQueue, operators: Sequence[OperatorNode]):
    return queue.next_assignment(operators)


def release_operator(operator: OperatorNode, robot: "RobotNode") -> None:
    """Unbind a busy operator and return the robot to autonomy.

    The robot moves to Finalizing when its episode is already over,
    otherwise back to Rolling.
    """
    if operator.status != BUSY or operator.robot_id != robot.robot_id:
        raise ProtocolError(
            f"cannot release operator {operator.operator_id!r}: "
            f"not busy on robot {robot.robot_id!r}"
        )
    operator.status = IDLE
    operator.robot_id = None
    robot.operator = None
    robot.pending_request = None
    robot.transition(FINALIZING if robot.episode_over else ROLLING)


class EpisodeBuffer:
    """Append-only store of finished episodes, in completion order."""

    def __init__(self):
        self._lock = threading.Lock()
        self._records: list[EpisodeRecord] = []

    def append(self, record: EpisodeRecord) -> None:
        with self._lock:
            self._records.append(record)

    @property
    def records(self) -> tuple:
        with self._lock:
            return tuple(self._records)

    def __len__(self) -> int:
        with self._lock:
            return len(self._records)


class RobotNode:
    """One robot: world, policy, monitor, and the episode under way.

    ``executed_steps`` and ``intervened_executed`` count every step the
    robot ever took in the episode, including stretches later discarded
    by a rewind; the trajectory arrays hold only the surviving steps.
    """

    def __init__(
        self,
        robot_id: str,
        task_id: str,
        world: World,
        bank: DemoBank,
        detector_config: DetectorConfig,
        calibration: SharedCalibration,
    ):
        self.robot_id = robot_id
        self.task_id = task_id
        self.world = world
        self.bank = bank
        self.monitor = RolloutMonitor(
            bank, DetectorState(calibration, detector_config), robot_id
        )
        self.phase = RESETTING
        self.done = False
        # episode-scoped fields, populated by begin_episode
        self.episode_index: Optional[int] = None
        self.policy: Optional[ScriptedPolicy] = None
        self.injection = None
        self.state = None
        self.state_refs: list = []
        self.embeddings: list = []
        self.actions: list = []
        self.flags: list = []
        self.executed_steps = 0
        self.intervened_executed = 0
        self.raise_steps: list = []
        self.pending_request: Optional[InterventionRequest] = None
        self.operator: Optional[OperatorNode] = None
        self.false_alarm_marked = False

    def transition(self, phase: str) -> None:
        if self.phase not in _ALLOWED_FROM[phase]:
            raise ProtocolError(
                f"robot {self.robot_id} cannot move {self.phase} -> {phase}"
            )
        self.phase = phase

    def begin_episode(self, episode_index, policy, injection, start_state) -> None:
        self.episode_index = episode_index
        self.policy = policy
        self.injection = injection
        self.state = start_state
        self.state_refs = [start_state]
        self.embeddings = []
        self.actions = []
        self.flags = []
        self.executed_steps = 0
        self.intervened_executed = 0
        self.raise_steps = []
        self.pending_request = None
        self.operator = None
        self.false_alarm_marked = False
        self.monitor.reset()
        self.transition(ROLLING)

    def record_step(self, state, action, intervened: bool):
        """Append one executed step and feed the monitor.

        Returns the evaluated index on stride boundaries, else None.
        """
        prev = self.state_refs[-1]
        self.state = state
        self.state_refs.append(state)
        self.embeddings.append(self.world.encoder.embed(state, prev))
        self.actions.append(np.asarray(action, dtype=np.float64))
        self.flags.append(bool(intervened))
        self.executed_steps += 1
        if intervened:
            self.intervened_executed += 1
        return self.monitor.observe(self.embeddings[-1])

    @property
    def episode_over(self) -> bool:
        """Goal reached, trajectory at the step cap, or effort exhausted.

        The clock cap alone cannot terminate an episode that keeps
        rewinding (each rewind moves the clock backwards), so a budget
        on total executed steps, which only ever grows, backs it up.
        """
        return (
            self.world.evaluate_success(self.state)
            or self.state.clock >= self.bank.l_max
            or self.executed_steps >= EPISODE_EFFORT_FACTOR * self.bank.l_max
        )

    @property
    def raised_count(self) -> int:
        return len(self.raise_steps)

    def build_record(self) -> EpisodeRecord:
        trajectory = Trajectory(
            embeddings=np.asarray(self.embeddings),
            actions=np.asarray(self.actions),
            intervention_flags=np.asarray(self.flags, dtype=bool),
        )
        return EpisodeRecord(
            trajectory=trajectory,
            success=self.world.evaluate_success(self.state),
            injection=self.injection,
            task_id=self.task_id,
            state_refs=tuple(self.state_refs),
        )


@dataclass
class FleetResult:
    buffer: EpisodeBuffer
    event_log: FleetEventLog
    outcomes: list
    clock: int

    @property
    def events(self) -> tuple:
        return self.event_log.events


class FleetEngine:
    """Drives robots, the queue, and operators under one logical clock.

    Each tick: robots act once each in id order (one phase action each),
    then the queue is served while idle oracle operators remain. Console
    operators are never auto-assigned; they claim alerts through the
    ``claim`` entry point and drive takeovers through ``console_step``.
    """

    def __init__(
        self,
        banks: Mapping[str, DemoBank],
        calibrations: Mapping[str, SharedCalibration],
        detector_config: DetectorConfig,
        encoder: FeatureEncoder,
        *,
        tasks: Sequence[str],
        robots: int,
        operators: int,
        operator_kind: str = "oracle",
        episode_budget: int,
        skill: float,
        noise_scale: float = 0.006,
        seed: int = 0,
        adapt_thresholds: bool = True,
        allow_operator_join: bool = False,
    ):
        if robots < 1:
            raise DomainError("fleet needs at least one robot")
        if operators < 0:
            raise DomainError("operator count must be >= 0")
        if episode_budget < 1:
            raise DomainError("episode budget must be >= 1")
        if operator_kind not in OPERATOR_KINDS:
            raise ProtocolError(f"unknown operator kind {operator_kind!r}")
        if not tasks:
            raise DomainError("fleet needs at least one task")
        for task in tasks:
            if task not in banks or task not in calibrations:
                raise SchemaError(f"no bank or calibration prepared for task {task!r}")
        self.encoder = encoder
        self.detector_config = detector_config
        self.skill = float(skill)
        self.noise_scale = float(noise_scale)
        self.seed = int(seed)
        self.episode_budget = int(episode_budget)
        self.adapt_thresholds = bool(adapt_thresholds)
        self.allow_operator_join = bool(allow_operator_join)
        self.queue = MessageQueue()
        self.operators: list[OperatorNode] = [
            OperatorNode(f"op-{j}", operator_kind) for j in range(operators)
        ]
        self._operator_counter = operators
        self.event_log = FleetEventLog()
        self.buffer = EpisodeBuffer()
        self.outcomes: list = []
        self.clock = 0
        self._lock = threading.RLock()
        self._episodes_started = 0
        self._episodes_done = 0
        self.robots: list[RobotNode] = []
        for i in range(robots):
            task = tasks[i % len(tasks)]
            self.robots.append(
                RobotNode(
                    robot_id=f"robot-{i}",
                    task_id=task,
                    world=World(task, encoder),
                    bank=banks[task],
                    detector_config=detector_config,
                    calibration=calibrations[task],
                )
            )
        # abort net: every episode may burn its full effort budget plus
        # bookkeeping ticks before the run is declared stuck
        l_cap = max(banks[t].l_max for t in tasks)
        per_episode = (EPISODE_EFFORT_FACTOR + 2) * l_cap + 8
        self.max_clock = self.episode_budget * per_episode + 64

    # ------------------------------------------------------------ driving

    def run(self) -> FleetResult:
        """Run to budget exhaustion under the logical clock."""
        while not self.finished:
            self.tick()
        return self.result()

    def run_paced(self, interval: float = 0.005, stop=None) -> FleetResult:
        """Run with wall-clock pacing; ``stop`` is an optional Event."""
        while not self.finished:
            if stop is not None and stop.is_set():
                break
            self.tick()
            time.sleep(interval)
        return self.result()

    def result(self) -> FleetResult:
        return FleetResult(
            buffer=self.buffer,
            event_log=self.event_log,
            outcomes=self.outcomes,
            clock=self.clock,
        )

    @property
    def finished(self) -> bool:
        return self._episodes_done >= self.episode_budget

    def tick(self) -> None:
        with self._lock:
            if self.finished:
                return
            self.clock += 1
            if self.clock > self.max_clock:
                raise ProtocolError(self._stall_diagnostic("clock budget exhausted"))
            self._abort_if_starved()
            for robot in self.robots:
                self._tick_robot(robot)
            self._service_queue()

    def _abort_if_starved(self) -> None:
        """Fail fast when requests exist but no operator can ever serve.

        With zero operators and no way for one to join, a pending request
        is a guaranteed deadlock; aborting at once gives the diagnostic
        the clock budget would eventually produce, without spinning.
        """
        if self.operators or self.allow_operator_join or len(self.queue) == 0:
            return
        raise ProtocolError(
            self._stall_diagnostic("intervention requested but no operators exist")
        )

    def _stall_diagnostic(self, reason: str) -> str:
        stuck = ", ".join(
            f"{r.robot_id}[{r.phase}]"
            for r in self.robots
            if r.phase in (AWAITING_OPERATOR, REWINDING, UNDER_INTERVENTION)
        )
        return (
            f"fleet aborted at clock {self.clock}: {reason}; "
            f"stuck robots: {stuck or 'none'}"
        )

    def _tick_robot(self, robot: RobotNode) -> None:
        if robot.done:
            return
        if robot.phase == RESETTING:
            self._maybe_start_episode(robot)
        elif robot.phase == ROLLING:
            self._autonomous_step(robot)
        elif robot.phase == AWAITING_OPERATOR:
            pass  # blocked: no environment steps while the request waits
        elif robot.phase == REWINDING:
            self._execute_rewind(robot)
        elif robot.phase == UNDER_INTERVENTION:
            if robot.operator is not None and robot.operator.kind == "oracle":
                self._oracle_step(robot)
            # console-driven robots wait for console_step calls
        elif robot.phase == FINALIZING:
            self._finalize(robot)

    # ----------------------------------------------------------- episodes

    def _maybe_start_episode(self, robot: RobotNode) -> None:
        if self._episodes_started >= self.episode_budget:
            robot.done = True
            return
        index = self._episodes_started
        self._episodes_started += 1
        start = robot.world.initial_state(derive_rng(self.seed, "fleet-start", index))
        policy = ScriptedPolicy(
            skill=self.skill,
            noise_scale=self.noise_scale,
            seed=derive_seed(self.seed, "fleet-policy", index),
        )
        injection = sample_injection(
            derive_rng(self.seed, "fleet-inject", index),
            policy.skill,
            robot.bank.l_max,
        )
        robot.begin_episode(index, policy, injection, start)

    def _autonomous_step(self, robot: RobotNode) -> None:
        state, action = robot.world.step(robot.state, robot.policy, robot.injection)
        idx = robot.record_step(state, action, intervened=False)
        if robot.episode_over:
            robot.transition(FINALIZING)
            return
        if idx is not None and robot.monitor.decide(idx).raised:
            self._raise_and_enqueue(robot, idx)

    def _raise_and_enqueue(self, robot: RobotNode, idx) -> None:
        rewind_to = robot.monitor.rewind_to(idx.prefix_len)
        robot.raise_steps.append(robot.executed_steps)
        robot.false_alarm_marked = False
        self.event_log.append(
            self.clock,
            "RAISE",
            robot.robot_id,
            payload={
                "t": idx.prefix_len,
                "index": idx.value,
                "threshold": robot.monitor.state.threshold,
                "rewind_target": rewind_to,
            },
        )
        robot.transition(AWAITING_OPERATOR)
        request = self.queue.enqueue(
            InterventionRequest(
                robot_id=robot.robot_id,
                raise_timestep=idx.prefix_len,
                float_value=idx.value,
                rewind_target=rewind_to,
            )
        )
        robot.pending_request = request
        self.event_log.append(
            self.clock,
            "ENQUEUE",
            robot.robot_id,
            payload={"sequence": request.sequence, "rewind_target": rewind_to},
        )

    def _execute_rewind(self, robot: RobotNode) -> None:
        request = robot.pending_request
        target = request.rewind_target
        diagnostic = None
        try:
            state = restore(robot.state_refs, target)
        except (IndexError, DomainError) as exc:
            diagnostic = f"rewind target {target} unavailable ({exc}); reset to step 1"
            target = 1
            state = restore(robot.state_refs, target)
        robot.state = state
        robot.state_refs = list(robot.state_refs[: target + 1])
        robot.embeddings = robot.embeddings[:target]
        robot.actions = robot.actions[:target]
        robot.flags = robot.flags[:target]
        robot.monitor.truncate(target)
        payload = {"from_t": request.raise_timestep, "to_t": target}
        if diagnostic:
            payload["diagnostic"] = diagnostic
        self.event_log.append(
            self.clock,
            "REWIND",
            robot.robot_id,
            operator_id=robot.operator.operator_id,
            payload=payload,
        )
        robot.transition(UNDER_INTERVENTION)

    def _oracle_step(self, robot: RobotNode) -> None:
        action = robot.world.oracle_operator(robot.state)
        idx = self._apply_operator_action(robot, action)
        threshold = robot.monitor.state.threshold
        recovered = idx is not None and threshold is not None and idx.value <= threshold
        if robot.episode_over or recovered:
            self._release(robot, self._end_reason(robot, recovered))

    def _apply_operator_action(self, robot: RobotNode, action: np.ndarray):
        state = robot.world.apply_action(
            robot.state, np.asarray(action, dtype=np.float64)
        )
        idx = robot.record_step(state, action, intervened=True)
        self.event_log.append(
            self.clock,
            "TAKEOVER_STEP",
            robot.robot_id,
            operator_id=robot.operator.operator_id,
            payload={"t": robot.state.clock, "action": [float(a) for a in action]},
        )
        return idx

    def _end_reason(self, robot: RobotNode, recovered: bool) -> str:
        if robot.world.evaluate_success(robot.state):
            return "goal"
        if robot.episode_over:
            return "episode_cap"
        return "index_recovered" if recovered else "released"

    def _release(self, robot: RobotNode, reason: str) -> None:
        operator = robot.operator
        self.event_log.append(
            self.clock,
            "RELEASE",
            robot.robot_id,
            operator_id=operator.operator_id,
            payload={"reason": reason},
        )
        release_operator(operator, robot)

    def _finalize(self, robot: RobotNode) -> None:
        record = robot.build_record()
        self.buffer.append(record)
        self._episodes_done += 1
        self.event_log.append(
            self.clock,
            "FINALIZE",
            robot.robot_id,
            payload={
                "episode": robot.episode_index,
                "task": robot.task_id,
                "success": record.success,
                "length": record.length,
                "intervened_steps": int(np.sum(record.trajectory.intervention_flags)),
                "raises": robot.raised_count,
            },
        )
        onset = None
        if not record.success:
            # a failed episode without a scheduled fault (step-cap
            # timeout) has no meaningful onset; step 1 marks the whole
            # episode as post-onset so no spurious clean window exists
            onset = robot.injection.onset if robot.injection is not None else 1
        self.outcomes.append(
            EpisodeOutcome(
                episode_id=f"ep-{robot.episode_index}",
                success=record.success,
                failure_onset=onset,
                warnings=tuple(robot.raise_steps),
                steps_total=robot.executed_steps,
                steps_intervened=robot.intervened_executed,
            )
        )
        self._calibration_update(robot, record.success)
        robot.transition(RESETTING)

    def _calibration_update(self, robot: RobotNode, success: bool) -> None:
        """Feed the shared per-task calibration after each episode.

        Successful episodes contribute their summary statistic; labeled
        mistakes nudge the quantile parameter one step in the direction
        that would have prevented them.
        """
        state = robot.monitor.state
        if success:
            if state.prefix_index_cache:
                record_success(state, episode_summary(state, robot.bank.l_max))
            if (
                self.adapt_thresholds
                and robot.raised_count > 0
                and robot.injection is None
            ):
                update_delta(state, "false_alarm")
        elif (
            self.adapt_thresholds
            and robot.raised_count == 0
            and robot.injection is not None
            and state.calibration.calibrated
        ):
            update_delta(state, "missed_failure")

    # ---------------------------------------------------------- servicing

    def _service_queue(self) -> None:
        oracles = [op for op in self.operators if op.kind == "oracle"]
        while oracles:
            assignment = self.queue.next_assignment(oracles)
            if assignment is None:
                return
            self._apply_assignment(*assignment)

    def _apply_assignment(self, request, operator) -> None:
        robot = self._robot(request.robot_id)
        robot.operator = operator
        robot.pending_request = request
        self.event_log.append(
            self.clock,
            "ASSIGN",
            robot.robot_id,
            operator_id=operator.operator_id,
            payload={"sequence": request.sequence},
        )
        robot.transition(REWINDING)

    def _robot(self, robot_id: str) -> RobotNode:
        for robot in self.robots:
            if robot.robot_id == robot_id:
                return robot
        raise ProtocolError(f"unknown robot {robot_id!r}")

    def _operator(self, operator_id: str) -> OperatorNode:
        for operator in self.operators:
            if operator.operator_id == operator_id:
                return operator
        raise ProtocolError(f"unknown operator {operator_id!r}")

    # ------------------------------------------------------- console entry

    def add_operator(self, kind: str = "human_console") -> OperatorNode:
        with self._lock:
            operator = OperatorNode(f"op-{self._operator_counter}", kind)
            self._operator_counter += 1
            self.operators.append(operator)
            return operator

    def remove_operator(self, operator_id: str) -> None:
        """Drop a console operator, re-posting any abandoned intervention."""
        with self._lock:
            operator = self._operator(operator_id)
            if operator.status == BUSY:
                self.abandon(operator_id)
            self.operators.remove(operator)

    def claim(self, operator_id: str) -> Optional[InterventionRequest]:
        """Console claims the earliest pending alert for itself."""
        with self._lock:
            operator = self._operator(operator_id)
            if not operator.idle:
                raise ProtocolError(f"operator {operator_id!r} is busy")
            assignment = self.queue.next_assignment(self.operators, operator_id)
            if assignment is None:
                return None
            self._apply_assignment(*assignment)
            return assignment[0]

    def console_step(self, operator_id: str, action) -> dict:
        """Apply one console-supplied takeover action synchronously."""
        with self._lock:
            operator = self._operator(operator_id)
            robot = self._busy_robot(operator)
            if robot.phase != UNDER_INTERVENTION:
                raise ProtocolError(
                    f"robot {robot.robot_id} is {robot.phase}, not under intervention"
                )
            action = np.asarray(action, dtype=np.float64)
            if action.shape != (4,):
                raise SchemaError(
                    f"takeover action must have shape (4,), got {action.shape}"
                )
            idx = self._apply_operator_action(robot, action)
            threshold = robot.monitor.state.threshold
            recovered = (
                idx is not None and threshold is not None and idx.value <= threshold
            )
            over = robot.episode_over
            if over:
                self._release(robot, self._end_reason(robot, recovered))
            return {
                "clock": robot.state.clock,
                "episode_over": over,
                "recovered": recovered,
                "effector": [float(v) for v in robot.state.effector],
            }

    def console_release(self, operator_id: str) -> None:
        with self._lock:
            operator = self._operator(operator_id)
            robot = self._busy_robot(operator)
            self._release(robot, "released")

    def mark_false_alarm(self, robot_id: str) -> float:
        """Console judges a robot's active alert spurious.

        Loosens the quantile parameter one step and returns the new
        value. Idempotent per alert: repeated marks on the same raise
        change nothing.
        """
        with self._lock:
            robot = self._robot(robot_id)
            if robot.phase not in (AWAITING_OPERATOR, REWINDING, UNDER_INTERVENTION):
                raise ProtocolError(
                    f"robot {robot_id!r} has no active alert to mark"
                )
            state = robot.monitor.state
            if robot.false_alarm_marked:
                return state.delta
            robot.false_alarm_marked = True
            return update_delta(state, "false_alarm")

    def abandon(self, operator_id: str) -> None:
        """Undo an assignment mid-flight (console disconnect).

        The robot returns to AwaitingOperator and its request goes back
        to the head of the queue with its original sequence number.
        """
        with self._lock:
            operator = self._operator(operator_id)
            robot = self._busy_robot(operator)
            request = robot.pending_request
            operator.status = IDLE
            operator.robot_id = None
            robot.operator = None
            robot.transition(AWAITING_OPERATOR)
            self.queue.requeue_front(request)
            self.event_log.append(
                self.clock,
                "ENQUEUE",
                robot.robot_id,
                payload={"sequence": request.sequence, "requeued": True},
            )

    def _busy_robot(self, operator: OperatorNode) -> RobotNode:
        if operator.status != BUSY or operator.robot_id is None:
            raise ProtocolError(f"operator {operator.operator_id!r} is not busy")
        return self._robot(operator.robot_id)

    def snapshot(self) -> dict:
        """Phase, telemetry, and queue overview for status endpoints."""
        with self._lock:
            return {
                "clock": self.clock,
                "episodes_done": self._episodes_done,
                "episodes_started": self._episodes_started,
                "episode_budget": self.episode_budget,
                "finished": self.finished,
                "robots": [self._robot_summary(r) for r in self.robots],
                "operators": [
                    {
                        "operator_id": o.operator_id,
                        "kind": o.kind,
                        "status": o.status,
                        "robot_id": o.robot_id,
                    }
                    for o in self.operators
                ],
                "queue": [
                    {
                        "robot_id": q.robot_id,
                        "sequence": q.sequence,
                        "raise_timestep": q.raise_timestep,
                        "float_value": q.float_value,
                    }
                    for q in self.queue.pending()
                ],
            }

    def _robot_summary(self, robot: RobotNode) -> dict:
        cache = robot.monitor.state.prefix_index_cache
        state = robot.state
        return {
            "robot_id": robot.robot_id,
            "task": robot.task_id,
            "phase": robot.phase,
            "episode": robot.episode_index,
            "steps": robot.executed_steps,
            "clock": None if state is None else state.clock,
            "effector": None if state is None else [float(v) for v in state.effector],
            "index_value": cache[-1].value if cache else None,
            "threshold": robot.monitor.state.threshold,
            "delta": robot.monitor.state.delta,
            "index_trace": [[idx.prefix_len, idx.value] for idx in cache],
            "pending_sequence": (
                None
                if robot.pending_request is None
                else robot.pending_request.sequence
            ),
        }


def run_fleet(
    banks: Mapping[str, DemoBank],
    calibrations: Mapping[str, SharedCalibration],
    detector_config: DetectorConfig,
    encoder: FeatureEncoder,
    *,
    tasks: Sequence[str],
    robots: int,
    operators: int,
    operator_kind: str = "oracle",
    episode_budget: int,
    skill: float,
    noise_scale: float = 0.006,
    seed: int = 0,
    adapt_thresholds: bool = True,
) -> FleetResult:
    """Run one fleet deployment round to completion under the logical clock."""
    engine = FleetEngine(
        banks,
        calibrations,
        detector_config,
        encoder,
        tasks=tasks,
        robots=robots,
        operators=operators,
        operator_kind=operator_kind,
        episode_budget=episode_budget,
        skill=skill,
        noise_scale=noise_scale,
        seed=seed,
        adapt_thresholds=adapt_thresholds,
    )
    return engine.run()
