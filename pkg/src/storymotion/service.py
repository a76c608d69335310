"""HTTP facade: session CRUD, sketch-conditioned generation, 3D trajectory
and keypose editing, storyboard blending, and clip retrieval.

Persistence is plain files: content-addressed clip payloads plus one JSON
document per session, both committed with write-then-rename so a crash
between requests never loses acknowledged state. Model inference runs on a
single worker guarded by a lock; /health reports the waiting-queue depth.
"""

from __future__ import annotations

import hashlib
import json
import os
import threading
import time
import uuid

import numpy as np
from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from .conditions import BundleValidationError, ConditionBundle
from .guidance import BlendConfig, GuidanceConfig, compose_storyboard
from .motion import ContractViolation, MotionClip, project, recover_joint_positions
from .sampling import generate, generate_from_2d
from .skeleton import default_skeleton


class Store:
    """On-disk persistence: clips/<sha>.json (motion JSON) and
    sessions/<id>.json, all written atomically."""

    def __init__(self, root: str):
        self.root = root
        os.makedirs(os.path.join(root, "clips"), exist_ok=True)
        os.makedirs(os.path.join(root, "sessions"), exist_ok=True)

    def _atomic_write(self, path: str, payload: bytes) -> None:
        tmp = path + f".tmp.{os.getpid()}.{threading.get_ident()}"
        with open(tmp, "wb") as fh:
            fh.write(payload)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)

    def put_clip(self, clip: MotionClip) -> str:
        doc = motion_json(clip)
        payload = json.dumps(doc, sort_keys=True).encode()
        clip_id = hashlib.sha256(payload).hexdigest()[:24]
        self._atomic_write(os.path.join(self.root, "clips", clip_id + ".json"), payload)
        return clip_id

    def get_clip(self, clip_id: str) -> dict | None:
        path = os.path.join(self.root, "clips", clip_id + ".json")
        if not os.path.exists(path):
            return None
        with open(path) as fh:
            return json.load(fh)

    def clip_motion(self, clip_id: str) -> MotionClip | None:
        doc = self.get_clip(clip_id)
        if doc is None:
            return None
        return MotionClip(np.asarray(doc["features"], dtype=np.float32), fps=doc["fps"])

    def put_session(self, session: dict) -> None:
        session["updated"] = time.time()
        payload = json.dumps(session, sort_keys=True).encode()
        self._atomic_write(os.path.join(self.root, "sessions", session["id"] + ".json"), payload)

    def get_session(self, session_id: str) -> dict | None:
        path = os.path.join(self.root, "sessions", session_id + ".json")
        if not os.path.exists(path):
            return None
        with open(path) as fh:
            return json.load(fh)


def motion_json(clip: MotionClip) -> dict:
    # joint positions ride along so viewers need no feature recovery
    pos = np.asarray(recover_joint_positions(clip))
    return {
        "n": clip.n_frames,
        "d": clip.features.shape[1],
        "fps": clip.fps,
        "features": [[float(v) for v in row] for row in clip.features],
        "positions": [[[round(float(v), 6) for v in p] for p in frame] for frame in pos],
    }


class ModelWorker:
    """Serializes inference behind one lock and counts waiting requests."""

    def __init__(self, state):
        self.state = state
        self._lock = threading.Lock()
        self._waiting = 0
        self._count_lock = threading.Lock()

    @property
    def queue_depth(self) -> int:
        with self._count_lock:
            return self._waiting

    def run(self, fn):
        with self._count_lock:
            self._waiting += 1
        try:
            with self._lock:
                return fn()
        finally:
            with self._count_lock:
                self._waiting -= 1


def _error(status: int, code: str, message: str, **extra) -> JSONResponse:
    return JSONResponse(status_code=status, content={"error": code, "message": message, **extra})


def create_app(state, store_root: str, sample_steps: int = 50) -> FastAPI:
    app = FastAPI(title="storymotion service", version="1")
    store = Store(store_root)
    worker = ModelWorker(state)
    skeleton = default_skeleton()
    session_locks: dict = {}
    locks_guard = threading.Lock()

    def session_lock(sid: str) -> threading.Lock:
        with locks_guard:
            return session_locks.setdefault(sid, threading.Lock())

    @app.exception_handler(BundleValidationError)
    async def _bundle_error(request: Request, exc: BundleValidationError):
        return _error(422, "invalid_bundle", str(exc), field_path=exc.field_path)

    @app.exception_handler(ContractViolation)
    async def _contract_error(request: Request, exc: ContractViolation):
        return _error(422, "contract_violation", str(exc))

    @app.get("/v1/health")
    def health():
        return {"status": "ok", "queue_depth": worker.queue_depth}

    @app.post("/v1/sessions")
    def create_session():
        session = {"id": uuid.uuid4().hex, "frames": [], "blend_id": None,
                   "created": time.time(), "updated": time.time()}
        store.put_session(session)
        return {"id": session["id"]}

    @app.get("/v1/sessions/{session_id}")
    def get_session(session_id: str):
        session = store.get_session(session_id)
        if session is None:
            return _error(404, "not_found", f"unknown session {session_id}")
        return session

    @app.get("/v1/clips/{clip_id}")
    def get_clip(clip_id: str):
        doc = store.get_clip(clip_id)
        if doc is None:
            return _error(404, "not_found", f"unknown clip {clip_id}")
        return doc

    def _guidance_from(body: dict) -> GuidanceConfig:
        g = body.get("guidance") or {}
        return GuidanceConfig(
            w_c=g.get("w_c", 7.5), tau2=g.get("tau2", 0.05),
            k_iters=g.get("k_iters", 4), lbfgs_history=g.get("lbfgs_history", 10),
        )

    def _trajectory_samples(clip: MotionClip, joints) -> dict:
        pos = np.asarray(recover_joint_positions(clip))
        return {str(j): [[float(v) for v in p] for p in pos[:, j]] for j in joints}

    @app.post("/v1/sessions/{session_id}/frames/{k}/generate")
    async def generate_frame(session_id: str, k: int, request: Request):
        body = await request.json()
        session = store.get_session(session_id)
        if session is None:
            return _error(404, "not_found", f"unknown session {session_id}")
        bundle = ConditionBundle.from_dict(body["bundle"])
        bundle.action_word = body["action"]
        bundle.validate(end_effectors=skeleton.end_effectors)
        seed = int(body.get("seed", 0))
        gcfg = _guidance_from(body)

        clip = worker.run(
            lambda: generate_from_2d(bundle, body["action"], worker.state,
                                     seed=seed, guidance=gcfg, steps=sample_steps)
        )
        clip_id = store.put_clip(clip)
        with session_lock(session_id):
            session = store.get_session(session_id)
            while len(session["frames"]) <= k:
                session["frames"].append(None)
            session["frames"][k] = {"bundle": body["bundle"], "action": body["action"],
                                    "clip_id": clip_id, "seed": seed}
            store.put_session(session)

        traj_joints = sorted(
            int(j) for j in np.flatnonzero(bundle.trajectory_mask.any(axis=0))
        ) or list(skeleton.end_effectors)
        pos = np.asarray(recover_joint_positions(clip))
        projected = np.asarray(project(pos, bundle.camera))
        return {
            "clip_id": clip_id,
            "motion": motion_json(clip),
            "keypose_frame": bundle.keypose_frame,
            "projected_trajectory": {
                str(j): [[float(v) for v in p] for p in projected[:, j]] for j in traj_joints
            },
            "trajectory3d": _trajectory_samples(clip, skeleton.end_effectors),
        }

    @app.post("/v1/clips/{clip_id}/edit")
    async def edit_clip(clip_id: str, request: Request):
        body = await request.json()
        if store.get_clip(clip_id) is None:
            return _error(404, "not_found", f"unknown clip {clip_id}")
        bundle = ConditionBundle.from_dict(body["bundle"])
        if bundle.dims != "3D":
            raise BundleValidationError("dims", "editing regenerates through 3D conditions")
        bundle.action_word = body["action"]
        bundle.validate(end_effectors=skeleton.end_effectors)
        seed = int(body.get("seed", 0))
        gcfg = _guidance_from(body)
        clip = worker.run(
            lambda: generate(worker.state, body["action"], bundle=bundle,
                             seed=seed, guidance=gcfg, steps=sample_steps)[0]
        )
        new_id = store.put_clip(clip)
        return {"clip_id": new_id, "motion": motion_json(clip),
                "trajectory3d": _trajectory_samples(clip, skeleton.end_effectors)}

    @app.post("/v1/sessions/{session_id}/blend")
    async def blend_session(session_id: str, request: Request):
        body = await request.json() if await request.body() else {}
        session = store.get_session(session_id)
        if session is None:
            return _error(404, "not_found", f"unknown session {session_id}")
        frames = session["frames"]
        if not frames:
            return _error(409, "conflict", "session has no frames")
        for i, frame in enumerate(frames):
            if frame is None or not frame.get("clip_id"):
                return _error(409, "conflict", f"frame {i} has no generated clip", frame=i)
        clips = [store.clip_motion(f["clip_id"]) for f in frames]
        actions = [f["action"] for f in frames]
        if len(clips) == 1:
            blend_id = frames[0]["clip_id"]
        else:
            bcfg = BlendConfig(ladder=int(body.get("ladder", 20)))
            result = worker.run(
                lambda: compose_storyboard(clips, actions, bcfg, worker.state)
            )
            blend_id = store.put_clip(result)
        with session_lock(session_id):
            session = store.get_session(session_id)
            session["blend_id"] = blend_id
            store.put_session(session)
        return {"clip_id": blend_id}

    app.state.store = store
    app.state.worker = worker
    return app


def app_from_env() -> FastAPI:
    """Build the app from environment variables: STORYMOTION_CHECKPOINT,
    STORYMOTION_STORE (and optionally STORYMOTION_STEPS)."""
    from .models import GeneratorState, load_checkpoint

    ckpt = os.environ["STORYMOTION_CHECKPOINT"]
    store_root = os.environ.get("STORYMOTION_STORE", "./store")
    state = GeneratorState()
    load_checkpoint(ckpt, state)
    state.eval()
    return create_app(state, store_root, sample_steps=int(os.environ.get("STORYMOTION_STEPS", 50)))
