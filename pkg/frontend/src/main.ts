import { ApiClient } from "./api.js";
import { ViewTransform } from "./bundle.js";
import { SketchEditor } from "./editor.js";
import { StoryboardController } from "./state.js";
import { SkeletonViewer } from "./viewer.js";

const VIEW: ViewTransform = { scale: 180, offsetX: 240, offsetY: 420 };

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing #${id}`);
  return node as T;
}

export function boot(): void {
  const sketchCanvas = el<HTMLCanvasElement>("sketch");
  const playCanvas = el<HTMLCanvasElement>("playback");
  const sketchCtx = sketchCanvas.getContext("2d")!;
  const playCtx = playCanvas.getContext("2d")!;

  const api = new ApiClient(window.location.origin);
  const editor = new SketchEditor({ width: sketchCanvas.width, height: sketchCanvas.height, view: VIEW });
  const board = new StoryboardController(api, { view: VIEW });
  const viewer = new SkeletonViewer(playCtx, editor.camera, {
    width: playCanvas.width,
    height: playCanvas.height,
  });
  const frame = board.addFrame();

  const status = el<HTMLSpanElement>("status");
  const generateBtn = el<HTMLButtonElement>("generate");
  const regenerateBtn = el<HTMLButtonElement>("regenerate");
  const blendBtn = el<HTMLButtonElement>("blend");
  const actionInput = el<HTMLInputElement>("action");
  const toolSelect = el<HTMLSelectElement>("tool");
  const directionSelect = el<HTMLSelectElement>("direction");

  const sync = () => {
    const f = board.frames[frame];
    status.textContent = f.machine.state;
    generateBtn.disabled = f.pending || !f.machine.can("generate");
    regenerateBtn.disabled = f.pending || !f.machine.can("regenerate");
    blendBtn.disabled = !board.blendEnabled();
    editor.render(sketchCtx);
  };

  editor.onChange = () => {
    board.setSketch(frame, editor.sketch());
    sync();
  };

  const pointer = (ev: PointerEvent) => {
    const rect = sketchCanvas.getBoundingClientRect();
    return { x: ev.clientX - rect.left, y: ev.clientY - rect.top };
  };
  sketchCanvas.addEventListener("pointerdown", (ev) => {
    editor.pointerDown(pointer(ev));
    editor.render(sketchCtx);
  });
  sketchCanvas.addEventListener("pointermove", (ev) => {
    editor.pointerMove(pointer(ev));
    editor.render(sketchCtx);
  });
  sketchCanvas.addEventListener("pointerup", () => {
    editor.pointerUp();
    sync();
  });

  actionInput.addEventListener("input", () => {
    editor.actionWord = actionInput.value;
    editor.onChange?.();
  });
  toolSelect.addEventListener("change", () => {
    editor.tool = toolSelect.value as "pose" | "pen";
  });
  directionSelect.addEventListener("change", () => {
    editor.penDirection = directionSelect.value as "from-keypose" | "to-keypose";
  });

  generateBtn.addEventListener("click", async () => {
    sync();
    try {
      const res = await board.generate(frame);
      viewer.setCamera(editor.camera);
      viewer.load(res.motion.positions, res.motion.fps);
      viewer.play();
      status.textContent = `generated ${res.clip_id.slice(0, 8)}`;
    } catch (err) {
      status.textContent = String(err);
    }
    sync();
  });

  regenerateBtn.addEventListener("click", async () => {
    try {
      await board.regenerate(frame);
      const f = board.frames[frame];
      if (f.response) {
        viewer.load(f.response.motion.positions, f.response.motion.fps);
        viewer.play();
      }
    } catch (err) {
      status.textContent = String(err);
    }
    sync();
  });

  blendBtn.addEventListener("click", async () => {
    try {
      const clipId = await board.blend();
      const clip = await api.getClip(clipId);
      viewer.load(clip.positions, clip.fps);
      viewer.play();
      status.textContent = `blended ${clipId.slice(0, 8)}`;
    } catch (err) {
      status.textContent = String(err);
    }
  });

  let last = performance.now();
  const loop = (now: number) => {
    viewer.tick((now - last) / 1000);
    last = now;
    viewer.renderFrame();
    requestAnimationFrame(loop);
  };
  requestAnimationFrame(loop);
  sync();
}

if (typeof document !== "undefined" && document.getElementById("sketch")) {
  boot();
}
