import { Point, resampleStroke } from "./geometry.js";
import { END_EFFECTORS, JOINT_COUNT } from "./skeleton.js";

export type Direction = "from-keypose" | "to-keypose";

export interface CameraPreset {
  scale: number;
  pitch: number;
  yaw: number;
  roll: number;
}

export interface Stroke {
  points: Point[];
  joint: number;
  direction: Direction;
}

export interface CanvasSketch {
  joints: Point[]; // 22 screen-space joint positions
  strokes: Stroke[];
  actionWord: string;
  camera: CameraPreset;
}

/** Affine screen<->model map; screen y grows downward. */
export interface ViewTransform {
  scale: number;
  offsetX: number;
  offsetY: number;
}

export function toModel(p: Point, view: ViewTransform): Point {
  return { x: (p.x - view.offsetX) / view.scale, y: -(p.y - view.offsetY) / view.scale };
}

export function toScreen(p: Point, view: ViewTransform): Point {
  return { x: view.offsetX + view.scale * p.x, y: view.offsetY - view.scale * p.y };
}

export interface TrajectoryCell {
  frame: number;
  joint: number;
  value: number[];
}

export interface BundleDoc {
  action_word: string;
  n: number;
  j: number;
  dims: "2D" | "3D";
  direction: Direction;
  camera: CameraPreset | null;
  keypose_frame: number;
  keypose: number[][];
  trajectory_cells: TrajectoryCell[];
}

export class SketchError extends Error {
  constructor(public fieldPath: string, message: string) {
    super(`${fieldPath}: ${message}`);
  }
}

export interface BuildOptions {
  nFrames?: number; // clip length the server generates
  tR?: number; // frames each stroke resamples to
  view: ViewTransform;
}

const round8 = (v: number) => Math.round(v * 1e8) / 1e8;

export function validateSketch(sketch: CanvasSketch): void {
  if (sketch.joints.length !== JOINT_COUNT) {
    throw new SketchError("joints", `expected ${JOINT_COUNT} joints, got ${sketch.joints.length}`);
  }
  if (!sketch.actionWord.trim()) {
    throw new SketchError("actionWord", "action word is empty");
  }
  if (!sketch.camera) {
    throw new SketchError("camera", "camera preset missing");
  }
  const dirs = new Set(sketch.strokes.map((s) => s.direction));
  if (dirs.size > 1) {
    throw new SketchError("strokes", "all strokes must share one direction");
  }
  sketch.strokes.forEach((s, i) => {
    if (s.points.length < 2) {
      throw new SketchError(`strokes[${i}].points`, "stroke needs at least 2 points");
    }
    if (!END_EFFECTORS.includes(s.joint)) {
      throw new SketchError(`strokes[${i}].joint`, `joint ${s.joint} is not an end-effector`);
    }
  });
  const joints = new Set(sketch.strokes.map((s) => s.joint));
  if (joints.size !== sketch.strokes.length) {
    throw new SketchError("strokes", "each joint may carry at most one stroke");
  }
}

/**
 * Convert a screen-space sketch into the 2D condition document the
 * generation API accepts: root-relative keypose at the direction's anchor
 * frame, plus arc-length resampled trajectory cells anchored at that end.
 */
export function buildBundle(sketch: CanvasSketch, opts: BuildOptions): BundleDoc {
  validateSketch(sketch);
  const n = opts.nFrames ?? 40;
  const tR = opts.tR ?? 12;
  if (tR < 2 || tR > n) {
    throw new SketchError("tR", `resample target must be in [2, ${n}], got ${tR}`);
  }
  const direction: Direction = sketch.strokes[0]?.direction ?? "from-keypose";
  const keyposeFrame = direction === "from-keypose" ? 0 : n - 1;

  const model = sketch.joints.map((p) => toModel(p, opts.view));
  const root = model[0];
  const keypose = model.map((p) => [round8(p.x - root.x), round8(p.y - root.y)]);

  const cells: TrajectoryCell[] = [];
  for (const stroke of sketch.strokes) {
    const pts = resampleStroke(stroke.points, tR).map((p) => toModel(p, opts.view));
    pts.forEach((p, i) => {
      const frame = direction === "from-keypose" ? i : n - tR + i;
      cells.push({ frame, joint: stroke.joint, value: [round8(p.x), round8(p.y)] });
    });
  }
  cells.sort((a, b) => a.frame - b.frame || a.joint - b.joint);

  return {
    action_word: sketch.actionWord.trim(),
    n,
    j: JOINT_COUNT,
    dims: "2D",
    direction,
    camera: sketch.camera,
    keypose_frame: keyposeFrame,
    keypose,
    trajectory_cells: cells,
  };
}

/**
 * Build the 3D edit document from a generated clip's returned trajectory
 * samples (absolute positions per end-effector) and its joint positions at
 * the keypose frame. Only the joints in `editedJoints` are constrained.
 */
export function buildEditBundle(
  positions: number[][][], // (n, 22, 3) from the clip payload
  trajectory3d: Record<string, number[][]>,
  editedJoints: number[],
  direction: Direction,
  actionWord: string,
): BundleDoc {
  const n = positions.length;
  const keyposeFrame = direction === "from-keypose" ? 0 : n - 1;
  const pose = positions[keyposeFrame];
  const root = pose[0];
  const keypose = pose.map((p) => p.map((v, c) => round8(v - root[c])));

  const cells: TrajectoryCell[] = [];
  for (const joint of editedJoints) {
    if (!END_EFFECTORS.includes(joint)) {
      throw new SketchError("editedJoints", `joint ${joint} is not an end-effector`);
    }
    const samples = trajectory3d[String(joint)];
    if (!samples || samples.length !== n) {
      throw new SketchError("trajectory3d", `joint ${joint} needs ${n} samples`);
    }
    samples.forEach((p, frame) => {
      cells.push({ frame, joint, value: p.map(round8) });
    });
  }
  cells.sort((a, b) => a.frame - b.frame || a.joint - b.joint);

  return {
    action_word: actionWord,
    n,
    j: JOINT_COUNT,
    dims: "3D",
    direction,
    camera: null,
    keypose_frame: keyposeFrame,
    keypose,
    trajectory_cells: cells,
  };
}
