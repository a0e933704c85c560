/**
 * Tiny pure SVG helpers for the per-robot index trace.
 *
 * The sparkline plots the detector index over evaluated prefix
 * lengths with the threshold as a horizontal rule, both scaled into
 * one shared vertical range so "the trace crossed the line" reads
 * directly off the pixels.
 */

export interface SparklineGeometry {
  /** SVG path ("" when the trace is empty). */
  path: string;
  /** Pixel y of the threshold rule, or null without a threshold. */
  thresholdY: number | null;
  /** Upper bound of the value axis actually used. */
  scaleMax: number;
}

export function sparklineGeometry(
  trace: readonly (readonly [number, number])[],
  threshold: number | null | undefined,
  width: number,
  height: number,
): SparklineGeometry {
  const values = trace.map(([, value]) => value);
  const candidates = [...values, threshold ?? 0];
  // 10% headroom keeps the peak and the rule off the frame edge
  const scaleMax = Math.max(1e-9, ...candidates) * 1.1;

  const toY = (value: number) => height - (value / scaleMax) * height;

  let path = "";
  if (trace.length > 0) {
    const first = trace[0]![0];
    const last = trace[trace.length - 1]![0];
    const span = Math.max(1, last - first);
    const toX = (step: number) =>
      trace.length === 1 ? width / 2 : ((step - first) / span) * width;
    path = trace
      .map(([step, value], i) => {
        const cmd = i === 0 ? "M" : "L";
        return `${cmd}${toX(step).toFixed(2)},${toY(value).toFixed(2)}`;
      })
      .join(" ");
  }

  return {
    path,
    thresholdY: threshold == null ? null : toY(threshold),
    scaleMax,
  };
}

/** Scene miniature: workspace positions scaled into a pixel box. */
export function miniatureDot(
  position: readonly number[] | null | undefined,
  size: number,
): { x: number; y: number } | null {
  if (position == null || position.length < 2) return null;
  const clamp = (v: number) => Math.min(1, Math.max(0, v));
  // workspace y grows upward, pixels grow downward
  return {
    x: clamp(position[0]!) * size,
    y: (1 - clamp(position[1]!)) * size,
  };
}
