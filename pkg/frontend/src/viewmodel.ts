/**
 * Client-side state: a pure reducer over the server message stream plus
 * a small session machine for claiming and steering.
 *
 * The console holds no truth of its own. Every field here is rebuilt
 * from the next `fleet_state` after a reconnect; nothing is simulated
 * client-side. Frames are ordered by the server's `seq` and anything
 * older than the newest frame seen is dropped.
 */

import type {
  AlertInfo,
  AssignMessage,
  ErrorMessage,
  FleetStateMessage,
  MetricsTickMessage,
  OperatorInfo,
  RobotCard,
  ServerMessage,
} from "./protocol.js";

export interface FleetView {
  /** Identity granted by the server hello; null before the handshake. */
  operatorId: string | null;
  configDigest: string | null;
  tasks: string[];
  protocolVersion: number | null;
  /** Last applied fleet_state sequence number; -1 before the first frame. */
  seq: number;
  clock: number;
  episodesDone: number;
  episodeBudget: number;
  finished: boolean;
  robots: RobotCard[];
  /** Pending alerts exactly as the server ordered them. */
  queue: AlertInfo[];
  operators: OperatorInfo[];
  /** Fleet clock at which each pending alert sequence was first seen. */
  alertFirstSeen: Record<number, number>;
  metrics: MetricsTickMessage | null;
  lastRewound: { robotId: string; fromStep: number; toStep: number } | null;
  lastError: ErrorMessage | null;
  /** Out-of-order fleet_state frames discarded so far. */
  droppedFrames: number;
}

export type SessionStatus = "idle" | "claiming" | "steering";

export interface SessionState {
  status: SessionStatus;
  robotId: string | null;
  sequence: number | null;
  rewindTarget: number | null;
  /** Grip bit carried into every steering action until toggled. */
  grip: number;
  /** Alert sequences already marked as false alarms from this session. */
  marked: number[];
}

export function initialView(): FleetView {
  return {
    operatorId: null,
    configDigest: null,
    tasks: [],
    protocolVersion: null,
    seq: -1,
    clock: 0,
    episodesDone: 0,
    episodeBudget: 0,
    finished: false,
    robots: [],
    queue: [],
    operators: [],
    alertFirstSeen: {},
    metrics: null,
    lastRewound: null,
    lastError: null,
    droppedFrames: 0,
  };
}

export function initialSession(): SessionState {
  return {
    status: "idle",
    robotId: null,
    sequence: null,
    rewindTarget: null,
    grip: 1,
    marked: [],
  };
}

function applyFleetState(view: FleetView, msg: FleetStateMessage): FleetView {
  if (msg.seq <= view.seq) {
    return { ...view, droppedFrames: view.droppedFrames + 1 };
  }
  const firstSeen: Record<number, number> = {};
  for (const alert of msg.queue) {
    firstSeen[alert.sequence] =
      view.alertFirstSeen[alert.sequence] ?? msg.clock;
  }
  return {
    ...view,
    seq: msg.seq,
    clock: msg.clock,
    episodesDone: msg.episodes_done,
    episodeBudget: msg.episode_budget,
    finished: msg.finished,
    robots: msg.robots,
    queue: msg.queue,
    operators: msg.operators,
    alertFirstSeen: firstSeen,
  };
}

/** Fold one server message into the view; always returns a new object. */
export function applyServer(view: FleetView, msg: ServerMessage): FleetView {
  switch (msg.type) {
    case "hello":
      return {
        ...view,
        operatorId: msg.operator_id,
        configDigest: msg.config_digest,
        tasks: msg.tasks,
        protocolVersion: msg.version,
      };
    case "fleet_state":
      return applyFleetState(view, msg);
    case "alert": {
      // The queue itself arrives with the next fleet_state; the push
      // only pins the age clock for the new sequence.
      if (msg.sequence in view.alertFirstSeen) return { ...view };
      return {
        ...view,
        alertFirstSeen: { ...view.alertFirstSeen, [msg.sequence]: view.clock },
      };
    }
    case "rewound":
      return {
        ...view,
        lastRewound: {
          robotId: msg.robot_id,
          fromStep: msg.from_step,
          toStep: msg.to_step,
        },
      };
    case "metrics_tick":
      return { ...view, metrics: msg };
    case "error":
      return { ...view, lastError: msg };
    case "assign":
      return { ...view };
  }
}

/** Ticks each pending alert has waited, in server order. */
export function alertAges(view: FleetView): { alert: AlertInfo; age: number }[] {
  return view.queue.map((alert) => ({
    alert,
    age: view.clock - (view.alertFirstSeen[alert.sequence] ?? view.clock),
  }));
}

/** A card alarms when its live index exceeds its threshold. */
export function isAlerting(card: RobotCard): boolean {
  return (
    card.index_value != null &&
    card.threshold != null &&
    card.index_value > card.threshold
  );
}

export function cardForRobot(view: FleetView, robotId: string): RobotCard | null {
  return view.robots.find((card) => card.robot_id === robotId) ?? null;
}

// ------------------------------------------------------- session machine

/** True when the session may send a claim right now. */
export function canClaim(session: SessionState, view: FleetView): boolean {
  return session.status === "idle" && view.queue.length > 0;
}

export function sessionOnClaimSent(session: SessionState): SessionState {
  return { ...session, status: "claiming" };
}

export function sessionOnAssign(
  session: SessionState,
  view: FleetView,
  msg: AssignMessage,
): SessionState {
  if (view.operatorId !== null && msg.operator_id !== view.operatorId) {
    return session;
  }
  return {
    ...session,
    status: "steering",
    robotId: msg.robot_id,
    sequence: msg.sequence,
    rewindTarget: msg.rewind_target,
  };
}

/** A server error while claiming means the race was lost; back to idle. */
export function sessionOnError(session: SessionState): SessionState {
  if (session.status === "claiming") {
    return { ...session, status: "idle" };
  }
  return session;
}

export function sessionOnRelease(session: SessionState): SessionState {
  return {
    ...session,
    status: "idle",
    robotId: null,
    sequence: null,
    rewindTarget: null,
  };
}

/** Steering commands are valid only for the robot this session claimed. */
export function maySteer(session: SessionState, robotId: string): boolean {
  return session.status === "steering" && session.robotId === robotId;
}

export function sessionOnMark(
  session: SessionState,
  sequence: number,
): SessionState {
  if (session.marked.includes(sequence)) return session;
  return { ...session, marked: [...session.marked, sequence] };
}

export function alreadyMarked(session: SessionState, sequence: number): boolean {
  return session.marked.includes(sequence);
}
