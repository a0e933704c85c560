/**
 * Keyboard steering: fixed per-tick action deltas.
 *
 * The simulator integrates discrete steps, so analog input buys
 * nothing; each key press maps to exactly one takeover action
 * `[dx, dy, dspin, grip]`. The move delta is half the robot's own
 * step cap (0.08 per tick), giving the operator finer positioning
 * than autonomy; the spin delta is about a third of the spin cap.
 *
 * Binding table:
 *
 *   ArrowUp     +0.04 in y
 *   ArrowDown   -0.04 in y
 *   ArrowLeft   -0.04 in x
 *   ArrowRight  +0.04 in x
 *   q           +0.10 spin (counterclockwise)
 *   e           -0.10 spin (clockwise)
 *   g           toggle grip (affects this and all later actions)
 *   space       hold position (zero deltas, grip unchanged)
 *
 * Every bound key emits one action; unbound keys emit none.
 */

export const MOVE_DELTA = 0.04;
export const SPIN_DELTA = 0.1;

export type Action = [number, number, number, number];

export interface KeyBinding {
  key: string;
  label: string;
  dx: number;
  dy: number;
  dspin: number;
  togglesGrip: boolean;
}

export const KEY_BINDINGS: readonly KeyBinding[] = [
  { key: "ArrowUp", label: "nudge +y", dx: 0, dy: MOVE_DELTA, dspin: 0, togglesGrip: false },
  { key: "ArrowDown", label: "nudge -y", dx: 0, dy: -MOVE_DELTA, dspin: 0, togglesGrip: false },
  { key: "ArrowLeft", label: "nudge -x", dx: -MOVE_DELTA, dy: 0, dspin: 0, togglesGrip: false },
  { key: "ArrowRight", label: "nudge +x", dx: MOVE_DELTA, dy: 0, dspin: 0, togglesGrip: false },
  { key: "q", label: "spin ccw", dx: 0, dy: 0, dspin: SPIN_DELTA, togglesGrip: false },
  { key: "e", label: "spin cw", dx: 0, dy: 0, dspin: -SPIN_DELTA, togglesGrip: false },
  { key: "g", label: "toggle grip", dx: 0, dy: 0, dspin: 0, togglesGrip: true },
  { key: " ", label: "hold", dx: 0, dy: 0, dspin: 0, togglesGrip: false },
];

const byKey = new Map(KEY_BINDINGS.map((binding) => [binding.key, binding]));

export function isBoundKey(key: string): boolean {
  return byKey.has(key);
}

/**
 * Resolve one key press to a takeover action.
 *
 * Returns the action plus the grip bit to carry forward, or null for
 * keys outside the table.
 */
export function actionForKey(
  key: string,
  grip: number,
): { action: Action; grip: number } | null {
  const binding = byKey.get(key);
  if (binding === undefined) return null;
  const nextGrip = binding.togglesGrip ? (grip >= 0.5 ? 0 : 1) : grip;
  return {
    action: [binding.dx, binding.dy, binding.dspin, nextGrip],
    grip: nextGrip,
  };
}
