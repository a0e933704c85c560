/**
 * Console wire protocol: schemas for every server message, builders for
 * every client message.
 *
 * Each message is one JSON object with a `type` discriminator. Unknown
 * fields are ignored on input (schemas strip them), so the console
 * tolerates servers that grew new fields. A message that fails to
 * parse is never fatal: `parseServerMessage` returns a diagnostic and
 * the caller drops the frame.
 */

import { z } from "zod";

export const PROTOCOL_VERSION = 1;

// ---------------------------------------------------------------- server

export const robotCardSchema = z.object({
  robot_id: z.string(),
  task: z.string(),
  phase: z.string(),
  episode: z.number().int().nullish(),
  steps: z.number().int().default(0),
  clock: z.number().int().nullish(),
  effector: z.array(z.number()).nullish(),
  index_value: z.number().nullish(),
  threshold: z.number().nullish(),
  delta: z.number().nullish(),
  index_trace: z.array(z.tuple([z.number(), z.number()])).default([]),
  pending_sequence: z.number().int().nullish(),
});

export const alertInfoSchema = z.object({
  robot_id: z.string(),
  sequence: z.number().int(),
  raise_timestep: z.number().int(),
  float_value: z.number(),
});

export const operatorInfoSchema = z.object({
  operator_id: z.string(),
  kind: z.string(),
  status: z.string(),
  robot_id: z.string().nullish(),
});

export const helloSchema = z.object({
  type: z.literal("hello"),
  version: z.number().int(),
  operator_id: z.string(),
  config_digest: z.string(),
  tasks: z.array(z.string()),
  robots: z.number().int(),
});

export const fleetStateSchema = z.object({
  type: z.literal("fleet_state"),
  seq: z.number().int(),
  clock: z.number().int(),
  episodes_done: z.number().int(),
  episode_budget: z.number().int(),
  finished: z.boolean(),
  robots: z.array(robotCardSchema),
  queue: z.array(alertInfoSchema),
  operators: z.array(operatorInfoSchema),
});

export const alertSchema = z.object({
  type: z.literal("alert"),
  robot_id: z.string(),
  sequence: z.number().int(),
  raise_timestep: z.number().int(),
  float_value: z.number(),
  threshold: z.number().nullish(),
});

export const assignSchema = z.object({
  type: z.literal("assign"),
  operator_id: z.string(),
  robot_id: z.string(),
  sequence: z.number().int(),
  rewind_target: z.number().int(),
});

export const rewoundSchema = z.object({
  type: z.literal("rewound"),
  robot_id: z.string(),
  from_step: z.number().int(),
  to_step: z.number().int(),
});

export const metricsTickSchema = z.object({
  type: z.literal("metrics_tick"),
  clock: z.number().int(),
  episodes_done: z.number().int(),
  delta: z.record(z.string(), z.number()),
  threshold: z.record(z.string(), z.number().nullable()),
  success_rate: z.number().nullish(),
  intervention_rate: z.number().nullish(),
});

export const errorSchema = z.object({
  type: z.literal("error"),
  code: z.string(),
  detail: z.string(),
});

export const serverMessageSchema = z.discriminatedUnion("type", [
  helloSchema,
  fleetStateSchema,
  alertSchema,
  assignSchema,
  rewoundSchema,
  metricsTickSchema,
  errorSchema,
]);

export type RobotCard = z.infer<typeof robotCardSchema>;
export type AlertInfo = z.infer<typeof alertInfoSchema>;
export type OperatorInfo = z.infer<typeof operatorInfoSchema>;
export type HelloMessage = z.infer<typeof helloSchema>;
export type FleetStateMessage = z.infer<typeof fleetStateSchema>;
export type AlertMessage = z.infer<typeof alertSchema>;
export type AssignMessage = z.infer<typeof assignSchema>;
export type RewoundMessage = z.infer<typeof rewoundSchema>;
export type MetricsTickMessage = z.infer<typeof metricsTickSchema>;
export type ErrorMessage = z.infer<typeof errorSchema>;
export type ServerMessage = z.infer<typeof serverMessageSchema>;

export type ParseResult =
  | { ok: true; message: ServerMessage }
  | { ok: false; diagnostic: string };

/** Parse one raw frame; malformed input yields a diagnostic, never a throw. */
export function parseServerMessage(raw: string): ParseResult {
  let data: unknown;
  try {
    data = JSON.parse(raw);
  } catch (err) {
    return { ok: false, diagnostic: `frame is not valid JSON: ${String(err)}` };
  }
  const parsed = serverMessageSchema.safeParse(data);
  if (!parsed.success) {
    const first = parsed.error.issues[0];
    const where = first && first.path.length ? first.path.join(".") : "message";
    const what = first ? first.message : "unknown shape";
    return { ok: false, diagnostic: `frame rejected (${where}: ${what})` };
  }
  return { ok: true, message: parsed.data };
}

// ---------------------------------------------------------------- client

export interface ClientHello {
  type: "hello";
  version: number;
}

export interface ClaimMessage {
  type: "claim";
}

export interface TakeoverStepMessage {
  type: "takeover_step";
  robot_id: string;
  action: [number, number, number, number];
}

export interface ReleaseMessage {
  type: "release";
}

export interface MarkFalseAlarmMessage {
  type: "mark_false_alarm";
  robot_id: string;
}

export type ClientMessage =
  | ClientHello
  | ClaimMessage
  | TakeoverStepMessage
  | ReleaseMessage
  | MarkFalseAlarmMessage;

export function helloMessage(): ClientHello {
  return { type: "hello", version: PROTOCOL_VERSION };
}

export function claimMessage(): ClaimMessage {
  return { type: "claim" };
}

export function takeoverStepMessage(
  robotId: string,
  action: [number, number, number, number],
): TakeoverStepMessage {
  return { type: "takeover_step", robot_id: robotId, action };
}

export function releaseMessage(): ReleaseMessage {
  return { type: "release" };
}

export function markFalseAlarmMessage(robotId: string): MarkFalseAlarmMessage {
  return { type: "mark_false_alarm", robot_id: robotId };
}
