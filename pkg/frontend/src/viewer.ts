import { CameraPreset } from "./bundle.js";
import { BONES } from "./skeleton.js";

export type Vec3 = readonly [number, number, number] | number[];

const DEG = Math.PI / 180;

/** Orthographic camera rotation: Rz(roll) * Rx(pitch) * Ry(yaw), matching
 * the projection the generation service trains against. */
export function rotationMatrix(cam: CameraPreset): number[][] {
  const [cr, sr] = [Math.cos(cam.roll * DEG), Math.sin(cam.roll * DEG)];
  const [cp, sp] = [Math.cos(cam.pitch * DEG), Math.sin(cam.pitch * DEG)];
  const [cy, sy] = [Math.cos(cam.yaw * DEG), Math.sin(cam.yaw * DEG)];
  const rz = [
    [cr, -sr, 0],
    [sr, cr, 0],
    [0, 0, 1],
  ];
  const rx = [
    [1, 0, 0],
    [0, cp, -sp],
    [0, sp, cp],
  ];
  const ry = [
    [cy, 0, sy],
    [0, 1, 0],
    [-sy, 0, cy],
  ];
  const mul = (a: number[][], b: number[][]) =>
    a.map((row) => [0, 1, 2].map((j) => row[0] * b[0][j] + row[1] * b[1][j] + row[2] * b[2][j]));
  return mul(mul(rz, rx), ry);
}

/** Project one 3D point to the camera plane: scale * (R p).xy. */
export function projectPoint(p: Vec3, cam: CameraPreset, rot?: number[][]): [number, number] {
  const r = rot ?? rotationMatrix(cam);
  const x = r[0][0] * p[0] + r[0][1] * p[1] + r[0][2] * p[2];
  const y = r[1][0] * p[0] + r[1][1] * p[1] + r[1][2] * p[2];
  return [cam.scale * x, cam.scale * y];
}

/** Minimal 2D drawing surface; a recording stub satisfies it in tests. */
export interface DrawContext {
  beginPath(): void;
  moveTo(x: number, y: number): void;
  lineTo(x: number, y: number): void;
  stroke(): void;
  arc(x: number, y: number, r: number, a0: number, a1: number): void;
  fill(): void;
  clearRect(x: number, y: number, w: number, h: number): void;
  strokeStyle: string | CanvasGradient | CanvasPattern;
  fillStyle: string | CanvasGradient | CanvasPattern;
  lineWidth: number;
}

export interface ViewerOptions {
  width: number;
  height: number;
  pixelsPerMeter?: number;
  jointRadius?: number;
}

/** Orthographic skeleton playback over a clip's recovered joint positions. */
export class SkeletonViewer {
  frame = 0;
  playing = false;
  private positions: number[][][] = [];
  private fps = 20;
  private clock = 0;

  constructor(
    private ctx: DrawContext,
    private camera: CameraPreset,
    private opts: ViewerOptions,
  ) {}

  setCamera(camera: CameraPreset): void {
    this.camera = camera;
  }

  load(positions: number[][][], fps: number): void {
    this.positions = positions;
    this.fps = fps;
    this.frame = 0;
    this.clock = 0;
  }

  get frameCount(): number {
    return this.positions.length;
  }

  play(): void {
    this.playing = this.positions.length > 0;
  }

  pause(): void {
    this.playing = false;
  }

  /** Advance playback by dt seconds, wrapping at the clip end. */
  tick(dt: number): void {
    if (!this.playing || this.positions.length === 0) return;
    this.clock += dt;
    this.frame = Math.floor(this.clock * this.fps) % this.positions.length;
  }

  private toScreen(p: Vec3, rot: number[][]): [number, number] {
    const [px, py] = projectPoint(p, this.camera, rot);
    const ppm = this.opts.pixelsPerMeter ?? 120;
    return [this.opts.width / 2 + px * ppm, this.opts.height * 0.9 - py * ppm];
  }

  /** Draw one frame; returns the number of bones drawn. */
  renderFrame(index?: number): number {
    const i = index ?? this.frame;
    const pose = this.positions[i];
    this.ctx.clearRect(0, 0, this.opts.width, this.opts.height);
    if (!pose) return 0;
    const rot = rotationMatrix(this.camera);
    this.ctx.strokeStyle = "#2a2a2a";
    this.ctx.lineWidth = 2;
    let drawn = 0;
    for (const [child, parent] of BONES) {
      const a = this.toScreen(pose[child], rot);
      const b = this.toScreen(pose[parent], rot);
      this.ctx.beginPath();
      this.ctx.moveTo(a[0], a[1]);
      this.ctx.lineTo(b[0], b[1]);
      this.ctx.stroke();
      drawn++;
    }
    this.ctx.fillStyle = "#c03434";
    const r = this.opts.jointRadius ?? 3;
    for (const p of pose) {
      const [x, y] = this.toScreen(p, rot);
      this.ctx.beginPath();
      this.ctx.arc(x, y, r, 0, 2 * Math.PI);
      this.ctx.fill();
    }
    return drawn;
  }
}
