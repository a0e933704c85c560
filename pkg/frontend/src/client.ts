/**
 * Socket-agnostic console controller.
 *
 * Owns the view and session state, turns raw frames into reducer
 * steps, and turns user intent (claim, key presses, release, mark)
 * into single protocol messages. The transport is injected as a bare
 * `send` function plus callbacks, so tests and the browser share the
 * same code path; only `main.ts` touches a real WebSocket.
 */

import { actionForKey } from "./keyboard.js";
import {
  claimMessage,
  helloMessage,
  markFalseAlarmMessage,
  parseServerMessage,
  releaseMessage,
  takeoverStepMessage,
  type ClientMessage,
} from "./protocol.js";
import {
  alreadyMarked,
  applyServer,
  canClaim,
  initialSession,
  initialView,
  maySteer,
  sessionOnAssign,
  sessionOnClaimSent,
  sessionOnError,
  sessionOnMark,
  sessionOnRelease,
  type FleetView,
  type SessionState,
} from "./viewmodel.js";

export interface ClientOptions {
  send: (message: ClientMessage) => void;
  onRender?: (view: FleetView, session: SessionState) => void;
  onDiagnostic?: (diagnostic: string) => void;
  now?: () => number;
}

const defaultNow: () => number =
  typeof performance !== "undefined" ? () => performance.now() : () => Date.now();

export class ConsoleClient {
  view: FleetView = initialView();
  session: SessionState = initialSession();

  /** Milliseconds spent handling each inbound frame. */
  readonly frameDurations: number[] = [];
  /** Milliseconds spent handling each user input event. */
  readonly inputDurations: number[] = [];
  /** Inputs that arrived while steering and produced a message. */
  sentSteps = 0;

  private readonly sendRaw: (message: ClientMessage) => void;
  private readonly onRender: (view: FleetView, session: SessionState) => void;
  private readonly onDiagnostic: (diagnostic: string) => void;
  private readonly now: () => number;

  constructor(options: ClientOptions) {
    this.sendRaw = options.send;
    this.onRender = options.onRender ?? (() => undefined);
    this.onDiagnostic = options.onDiagnostic ?? (() => undefined);
    this.now = options.now ?? defaultNow;
  }

  /** Call once the transport is open; starts the handshake. */
  start(): void {
    this.sendRaw(helloMessage());
  }

  /**
   * Handle one raw frame. Malformed frames are dropped with a
   * diagnostic; the session stays alive either way.
   */
  handleFrame(raw: string): void {
    const began = this.now();
    const parsed = parseServerMessage(raw);
    if (!parsed.ok) {
      this.onDiagnostic(parsed.diagnostic);
      this.frameDurations.push(this.now() - began);
      return;
    }
    const message = parsed.message;
    this.view = applyServer(this.view, message);
    if (message.type === "assign") {
      this.session = sessionOnAssign(this.session, this.view, message);
    } else if (message.type === "error") {
      this.session = sessionOnError(this.session);
      this.onDiagnostic(`server error [${message.code}]: ${message.detail}`);
    }
    this.onRender(this.view, this.session);
    this.frameDurations.push(this.now() - began);
  }

  /** Claim the earliest pending alert; no-op unless idle with alerts. */
  claim(): boolean {
    if (!canClaim(this.session, this.view)) return false;
    this.session = sessionOnClaimSent(this.session);
    this.sendRaw(claimMessage());
    this.onRender(this.view, this.session);
    return true;
  }

  /**
   * One key press. Emits exactly one takeover_step while steering;
   * unbound keys and unclaimed states emit nothing.
   */
  pressKey(key: string): boolean {
    const began = this.now();
    const sent = this.steer(key);
    this.inputDurations.push(this.now() - began);
    return sent;
  }

  private steer(key: string): boolean {
    const robotId = this.session.robotId;
    if (robotId === null || !maySteer(this.session, robotId)) return false;
    const resolved = actionForKey(key, this.session.grip);
    if (resolved === null) return false;
    this.session = { ...this.session, grip: resolved.grip };
    this.sendRaw(takeoverStepMessage(robotId, resolved.action));
    this.sentSteps += 1;
    return true;
  }

  /** Hand the claimed robot back to autonomy. */
  release(): boolean {
    if (this.session.status !== "steering") return false;
    this.sendRaw(releaseMessage());
    this.session = sessionOnRelease(this.session);
    this.onRender(this.view, this.session);
    return true;
  }

  /**
   * Flag the pending alert on `robotId` as a false alarm. A second
   * click for the same alert sequence is swallowed client-side; the
   * server's own per-episode latch backs this up.
   */
  markFalseAlarm(robotId: string): boolean {
    const alert = this.view.queue.find((a) => a.robot_id === robotId);
    if (alert !== undefined && alreadyMarked(this.session, alert.sequence)) {
      return false;
    }
    if (alert !== undefined) {
      this.session = sessionOnMark(this.session, alert.sequence);
    }
    this.sendRaw(markFalseAlarmMessage(robotId));
    this.onRender(this.view, this.session);
    return true;
  }
}

/** p-th percentile (0..1) of a sample, linear interpolation. */
export function percentile(samples: readonly number[], p: number): number {
  if (samples.length === 0) return 0;
  const sorted = [...samples].sort((a, b) => a - b);
  const pos = p * (sorted.length - 1);
  const lo = Math.floor(pos);
  const hi = Math.ceil(pos);
  const frac = pos - lo;
  return sorted[lo]! * (1 - frac) + sorted[hi]! * frac;
}
