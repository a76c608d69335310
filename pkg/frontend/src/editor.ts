import { CameraPreset, CanvasSketch, Direction, Stroke, ViewTransform, toScreen } from "./bundle.js";
import { Point, dist } from "./geometry.js";
import { END_EFFECTORS, BONES, JOINT_COUNT, TEMPLATE_POSE } from "./skeleton.js";
import { DrawContext } from "./viewer.js";

export type Tool = "pose" | "pen";

export interface EditorOptions {
  width: number;
  height: number;
  view: ViewTransform;
  hitRadius?: number;
}

const DEFAULT_CAMERA: CameraPreset = { scale: 1.0, pitch: 15.0, yaw: 0.0, roll: 0.0 };

/** Canvas-side sketch authoring: drag the 22 template joints with the pose
 * tool, draw a trajectory with the pen (it attaches to the closest
 * end-effector at the stroke's first point). */
export class SketchEditor {
  joints: Point[];
  strokes: Stroke[] = [];
  actionWord = "";
  camera: CameraPreset = { ...DEFAULT_CAMERA };
  tool: Tool = "pose";
  penDirection: Direction = "from-keypose";

  private dragging: number | null = null;
  private activeStroke: Point[] | null = null;
  onChange: (() => void) | null = null;

  constructor(private opts: EditorOptions) {
    this.joints = TEMPLATE_POSE.map(([x, y]) => toScreen({ x, y }, opts.view));
  }

  private changed(): void {
    this.onChange?.();
  }

  /** Index of the joint within hit radius of p, preferring the closest. */
  hitJoint(p: Point, candidates?: readonly number[]): number | null {
    const radius = this.opts.hitRadius ?? 12;
    let best: number | null = null;
    let bestD = radius;
    const idx = candidates ?? this.joints.map((_, i) => i);
    for (const i of idx) {
      const d = dist(this.joints[i], p);
      if (d <= bestD) {
        best = i;
        bestD = d;
      }
    }
    return best;
  }

  /** Closest end-effector to p regardless of distance (attachment rule). */
  closestEndEffector(p: Point): number {
    let best = END_EFFECTORS[0];
    let bestD = Infinity;
    for (const j of END_EFFECTORS) {
      const d = dist(this.joints[j], p);
      if (d < bestD) {
        best = j;
        bestD = d;
      }
    }
    return best;
  }

  pointerDown(p: Point): void {
    if (this.tool === "pose") {
      this.dragging = this.hitJoint(p);
    } else {
      this.activeStroke = [{ ...p }];
    }
  }

  pointerMove(p: Point): void {
    if (this.tool === "pose" && this.dragging !== null) {
      this.joints[this.dragging] = { ...p };
      this.changed();
    } else if (this.tool === "pen" && this.activeStroke) {
      const last = this.activeStroke[this.activeStroke.length - 1];
      if (dist(last, p) >= 1) this.activeStroke.push({ ...p });
    }
  }

  pointerUp(): void {
    if (this.tool === "pose") {
      this.dragging = null;
      return;
    }
    if (this.activeStroke && this.activeStroke.length >= 2) {
      const joint = this.closestEndEffector(this.activeStroke[0]);
      // one stroke per joint: a new stroke replaces the old one
      this.strokes = this.strokes.filter((s) => s.joint !== joint);
      this.strokes.push({ points: this.activeStroke, joint, direction: this.penDirection });
      this.changed();
    }
    this.activeStroke = null;
  }

  clearStrokes(): void {
    this.strokes = [];
    this.changed();
  }

  sketch(): CanvasSketch {
    return {
      joints: this.joints.map((p) => ({ ...p })),
      strokes: this.strokes.map((s) => ({ ...s, points: s.points.map((p) => ({ ...p })) })),
      actionWord: this.actionWord,
      camera: { ...this.camera },
    };
  }

  render(ctx: DrawContext): void {
    ctx.clearRect(0, 0, this.opts.width, this.opts.height);
    ctx.strokeStyle = "#555";
    ctx.lineWidth = 2;
    for (const [child, parent] of BONES) {
      ctx.beginPath();
      ctx.moveTo(this.joints[child].x, this.joints[child].y);
      ctx.lineTo(this.joints[parent].x, this.joints[parent].y);
      ctx.stroke();
    }
    for (let j = 0; j < JOINT_COUNT; j++) {
      ctx.fillStyle = END_EFFECTORS.includes(j) ? "#c03434" : "#3a6ea5";
      ctx.beginPath();
      ctx.arc(this.joints[j].x, this.joints[j].y, 5, 0, 2 * Math.PI);
      ctx.fill();
    }
    ctx.strokeStyle = "#2e8b57";
    for (const stroke of [...this.strokes, ...(this.activeStroke ? [{ points: this.activeStroke }] : [])]) {
      const pts = stroke.points;
      if (pts.length < 2) continue;
      ctx.beginPath();
      ctx.moveTo(pts[0].x, pts[0].y);
      for (let i = 1; i < pts.length; i++) ctx.lineTo(pts[i].x, pts[i].y);
      ctx.stroke();
    }
  }
}
