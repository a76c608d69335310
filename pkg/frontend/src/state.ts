import { ApiClient, GenerateResponse } from "./api.js";
import { BundleDoc, CanvasSketch, Direction, buildBundle, buildEditBundle, BuildOptions } from "./bundle.js";

/** Per-frame editing lifecycle. Every state stays live: a sketch change
 * always falls back to draft, and edits can loop through regeneration. */
export type FrameState = "draft" | "generated" | "edited" | "regenerated";

export type FrameEvent = "generate" | "edit" | "regenerate" | "sketch-changed";

export const TRANSITIONS: Record<FrameState, Partial<Record<FrameEvent, FrameState>>> = {
  draft: { generate: "generated" },
  generated: { edit: "edited", generate: "generated", "sketch-changed": "draft" },
  edited: { edit: "edited", regenerate: "regenerated", "sketch-changed": "draft" },
  regenerated: { edit: "edited", generate: "generated", "sketch-changed": "draft" },
};

export const INITIAL_STATE: FrameState = "draft";

/** States in which the frame owns a clip the storyboard can blend. */
export const BLENDABLE_STATES: ReadonlySet<FrameState> = new Set(["generated", "regenerated"]);

export class FrameMachine {
  state: FrameState = INITIAL_STATE;

  can(event: FrameEvent): boolean {
    return TRANSITIONS[this.state][event] !== undefined;
  }

  step(event: FrameEvent): FrameState {
    const next = TRANSITIONS[this.state][event];
    if (next === undefined) {
      throw new Error(`event ${event} not allowed in state ${this.state}`);
    }
    this.state = next;
    return next;
  }
}

export interface FrameEntry {
  machine: FrameMachine;
  sketch: CanvasSketch | null;
  activeClipId: string | null;
  response: GenerateResponse | null;
  /** Pending 3D conditions accumulated by trajectory drags. */
  editBundle: BundleDoc | null;
  pending: boolean;
}

function newFrame(): FrameEntry {
  return {
    machine: new FrameMachine(),
    sketch: null,
    activeClipId: null,
    response: null,
    editBundle: null,
    pending: false,
  };
}

export class StoryboardController {
  frames: FrameEntry[] = [];
  blendClipId: string | null = null;
  private sessionId: string | null = null;

  constructor(
    private api: ApiClient,
    private buildOpts: BuildOptions,
  ) {}

  async session(): Promise<string> {
    if (this.sessionId === null) {
      this.sessionId = (await this.api.createSession()).id;
    }
    return this.sessionId;
  }

  addFrame(): number {
    this.frames.push(newFrame());
    return this.frames.length - 1;
  }

  setSketch(k: number, sketch: CanvasSketch): void {
    const frame = this.frames[k];
    frame.sketch = sketch;
    if (frame.machine.state !== "draft") {
      frame.machine.step("sketch-changed");
      frame.activeClipId = null;
      frame.response = null;
      frame.editBundle = null;
    }
  }

  async generate(k: number, seed = 0): Promise<GenerateResponse> {
    const frame = this.frames[k];
    if (frame.pending) throw new Error(`frame ${k} has a request in flight`);
    if (!frame.sketch) throw new Error(`frame ${k} has no sketch`);
    if (!frame.machine.can("generate")) {
      throw new Error(`cannot generate in state ${frame.machine.state}`);
    }
    const bundle = buildBundle(frame.sketch, this.buildOpts);
    frame.pending = true;
    try {
      const res = await this.api.generateFrame(
        await this.session(), k, bundle, bundle.action_word, seed,
      );
      frame.response = res;
      frame.activeClipId = res.clip_id;
      frame.editBundle = null;
      frame.machine.step("generate");
      return res;
    } finally {
      frame.pending = false;
    }
  }

  /** Drag one returned 3D trajectory sample to a new position. */
  editTrajectoryPoint(k: number, joint: number, frameIdx: number, pos: [number, number, number]): void {
    const frame = this.frames[k];
    if (!frame.response) throw new Error(`frame ${k} has no generated clip`);
    if (!frame.machine.can("edit")) {
      throw new Error(`cannot edit in state ${frame.machine.state}`);
    }
    const direction = (frame.sketch?.strokes[0]?.direction ?? "from-keypose") as Direction;
    const trajectory = structuredClone(frame.response.trajectory3d);
    if (frame.editBundle) {
      for (const cell of frame.editBundle.trajectory_cells) {
        trajectory[String(cell.joint)][cell.frame] = cell.value;
      }
    }
    trajectory[String(joint)][frameIdx] = [...pos];
    const edited = new Set(frame.editBundle?.trajectory_cells.map((c) => c.joint) ?? []);
    edited.add(joint);
    frame.editBundle = buildEditBundle(
      frame.response.motion.positions,
      trajectory,
      [...edited].sort((a, b) => a - b),
      direction,
      frame.response ? frame.sketch!.actionWord : "",
    );
    frame.machine.step("edit");
  }

  async regenerate(k: number, seed = 0): Promise<string> {
    const frame = this.frames[k];
    if (frame.pending) throw new Error(`frame ${k} has a request in flight`);
    if (!frame.machine.can("regenerate") || !frame.editBundle || !frame.activeClipId) {
      throw new Error(`cannot regenerate in state ${frame.machine.state}`);
    }
    frame.pending = true;
    try {
      const res = await this.api.editClip(
        frame.activeClipId, frame.editBundle, frame.editBundle.action_word, seed,
      );
      frame.activeClipId = res.clip_id;
      if (frame.response) {
        frame.response = {
          ...frame.response,
          clip_id: res.clip_id,
          motion: res.motion,
          trajectory3d: res.trajectory3d,
        };
      }
      frame.machine.step("regenerate");
      return res.clip_id;
    } finally {
      frame.pending = false;
    }
  }

  blendEnabled(): boolean {
    return (
      this.frames.length > 0 &&
      this.frames.every((f) => BLENDABLE_STATES.has(f.machine.state) && f.activeClipId !== null)
    );
  }

  async blend(ladder = 20): Promise<string> {
    if (!this.blendEnabled()) throw new Error("blend requires every frame generated");
    const res = await this.api.blendSession(await this.session(), ladder);
    this.blendClipId = res.clip_id;
    return res.clip_id;
  }
}
