export interface Point {
  x: number;
  y: number;
}

export function dist(a: Point, b: Point): number {
  return Math.hypot(a.x - b.x, a.y - b.y);
}

/** Cumulative arc length along a polyline; index 0 is always 0. */
export function arcLengths(points: Point[]): number[] {
  const acc = [0];
  for (let i = 1; i < points.length; i++) {
    acc.push(acc[i - 1] + dist(points[i - 1], points[i]));
  }
  return acc;
}

/**
 * Resample a polyline to tR points spaced uniformly in arc length.
 * Endpoints are preserved exactly. A degenerate (zero-length) polyline
 * resamples to tR copies of its first point.
 */
export function resampleStroke(points: Point[], tR: number): Point[] {
  if (points.length < 2) {
    throw new Error(`stroke needs at least 2 points, got ${points.length}`);
  }
  if (tR < 2) {
    throw new Error(`resample target must be >= 2, got ${tR}`);
  }
  const acc = arcLengths(points);
  const total = acc[acc.length - 1];
  if (total === 0) {
    return Array.from({ length: tR }, () => ({ ...points[0] }));
  }
  const out: Point[] = [{ ...points[0] }];
  let seg = 0;
  for (let i = 1; i < tR - 1; i++) {
    const target = (total * i) / (tR - 1);
    while (seg < points.length - 2 && acc[seg + 1] < target) seg++;
    const span = acc[seg + 1] - acc[seg];
    const t = span === 0 ? 0 : (target - acc[seg]) / span;
    out.push({
      x: points[seg].x + t * (points[seg + 1].x - points[seg].x),
      y: points[seg].y + t * (points[seg + 1].y - points[seg].y),
    });
  }
  out.push({ ...points[points.length - 1] });
  return out;
}
