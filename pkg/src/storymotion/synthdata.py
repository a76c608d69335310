"""Procedural motion generation and condition extraction at desk scale.

Eight parametric action generators stand in for mocap data. Each generator
drives a small set of joint-angle curves through forward kinematics, so bone
lengths are constant by construction and every clip is a deterministic
function of (action, seed).
"""

from __future__ import annotations

import hashlib
import json
import os
import zlib
from dataclasses import dataclass, field

import numpy as np

from .conditions import DIR_FROM_KEYPOSE, DIR_TO_KEYPOSE, ConditionBundle
from .motion import (
    CameraView,
    ContractViolation,
    MotionClip,
    DEFAULT_FRAMES,
    canonicalize,
    encode_features,
    project,
    read_clip,
    recover_joint_positions,
    to_root_relative,
    write_clip,
)
from .skeleton import Skeleton, default_skeleton, forward_kinematics, rot_x, rot_y, rot_z

VOCABULARY = ("walk", "jump", "wave", "kick", "bow", "squat", "raise", "sit")

L_HIP, R_HIP, SPINE1 = 1, 2, 3
L_KNEE, R_KNEE = 4, 5
L_ANKLE, R_ANKLE = 7, 8
L_FOOT, R_FOOT = 10, 11
HEAD = 15
L_SHOULDER, R_SHOULDER = 16, 17
L_ELBOW, R_ELBOW = 18, 19
L_WRIST, R_WRIST = 20, 21

# body-part chains for the proportion augmentation
BODY_PARTS = {
    "legs": [L_HIP, R_HIP, L_KNEE, R_KNEE, L_ANKLE, R_ANKLE, L_FOOT, R_FOOT],
    "spine": [SPINE1, 6, 9, 12, HEAD],
    "arms": [13, 14, L_SHOULDER, R_SHOULDER, L_ELBOW, R_ELBOW, L_WRIST, R_WRIST],
}


def _rng_for(action: str, seed: int) -> np.random.Generator:
    return np.random.default_rng([seed, zlib.crc32(action.encode())])


def _identity_rotations(n: int, j: int) -> np.ndarray:
    rot = np.zeros((n, j, 3, 3))
    rot[:, :, 0, 0] = rot[:, :, 1, 1] = rot[:, :, 2, 2] = 1.0
    return rot


def _pose_clip(skeleton, rotations, root_positions, fps=20.0) -> MotionClip:
    positions = forward_kinematics(skeleton, rotations, root_positions)
    return encode_features(positions, skeleton, fps=fps)


def synth_motion(action: str, seed: int, skeleton: Skeleton | None = None,
                 n_frames: int = DEFAULT_FRAMES) -> MotionClip:
    """Deterministic synthetic clip for an action word.

    Unknown actions raise with the available vocabulary.
    """
    if action not in VOCABULARY:
        raise ContractViolation(
            f"unknown action {action!r}; vocabulary: {', '.join(VOCABULARY)}"
        )
    skeleton = skeleton or default_skeleton()
    rng = _rng_for(action, seed)
    n, j = n_frames, skeleton.joint_count
    t = np.arange(n, dtype=np.float64)
    rest_h = skeleton.offsets[0][1]

    rot = _identity_rotations(n, j)
    root = np.zeros((n, 3))
    root[:, 1] = rest_h

    if action == "walk":
        speed = rng.uniform(0.025, 0.05)          # m/frame
        turn = rng.uniform(-0.012, 0.012)         # rad/frame
        amp = rng.uniform(0.35, 0.65)
        freq = rng.uniform(0.28, 0.38)
        phase = rng.uniform(0, 2 * np.pi)
        yaw = turn * t
        root[:, 0] = np.cumsum(np.sin(yaw) * speed) - np.sin(yaw[0]) * speed
        root[:, 2] = np.cumsum(np.cos(yaw) * speed) - np.cos(yaw[0]) * speed
        root[:, 1] = rest_h + 0.02 * np.sin(2 * (freq * 2 * np.pi * t + phase))
        swing = amp * np.sin(freq * 2 * np.pi * t + phase)
        rot[:, 0] = rot_y(yaw)
        rot[:, L_HIP] = rot_x(-swing)
        rot[:, R_HIP] = rot_x(swing)
        rot[:, L_KNEE] = rot_x(np.clip(swing, 0, None) * 1.2)
        rot[:, R_KNEE] = rot_x(np.clip(-swing, 0, None) * 1.2)
        rot[:, L_SHOULDER] = rot_x(0.5 * swing)
        rot[:, R_SHOULDER] = rot_x(-0.5 * swing)
    elif action == "jump":
        height = rng.uniform(0.25, 0.6)
        hop = rng.uniform(0.0, 0.45)
        peak = rng.uniform(0.45, 0.6)
        width = rng.uniform(0.14, 0.2)
        phase01 = t / (n - 1)
        arc = np.exp(-((phase01 - peak) ** 2) / (2 * width**2))
        crouch = 0.18 * np.exp(-((phase01 - (peak - 2.2 * width)) ** 2) / (2 * (width * 0.6) ** 2))
        crouch += 0.12 * np.exp(-((phase01 - (peak + 2.2 * width)) ** 2) / (2 * (width * 0.6) ** 2))
        root[:, 1] = rest_h + height * arc - crouch
        root[:, 2] = hop * np.clip((phase01 - (peak - width)) / (2 * width), 0, 1)
        bend = np.arccos(np.clip(1.0 - crouch / 0.82, -1, 1))
        rot[:, L_HIP] = rot[:, R_HIP] = rot_x(-bend)
        rot[:, L_KNEE] = rot[:, R_KNEE] = rot_x(2 * bend)
        lift = 1.8 * height * arc
        rot[:, L_SHOULDER] = rot_z(np.clip(lift, 0, 2.4))
        rot[:, R_SHOULDER] = rot_z(-np.clip(lift, 0, 2.4))
    elif action == "wave":
        side = rng.integers(0, 2)
        amp = rng.uniform(0.35, 0.8)
        freq = rng.uniform(0.25, 0.45)
        raise_peak = rng.uniform(0.35, 0.75)
        phase01 = t / (n - 1)
        lift = np.clip(phase01 / raise_peak, 0, 1) * (np.pi * 0.55)
        osc = amp * np.sin(2 * np.pi * freq * t) * (lift / lift.max())
        sh, el, sign = (L_SHOULDER, L_ELBOW, 1.0) if side == 0 else (R_SHOULDER, R_ELBOW, -1.0)
        rot[:, sh] = rot_z(sign * lift)
        rot[:, el] = rot_z(sign * (0.5 + 0.4 * np.sin(2 * np.pi * freq * t)) * (lift / lift.max())) @ rot_x(osc * 0.3)
    elif action == "kick":
        side = rng.integers(0, 2)
        amp = rng.uniform(0.9, 1.5)
        peak = rng.uniform(0.4, 0.7)
        width = rng.uniform(0.06, 0.1)
        phase01 = t / (n - 1)
        swing = amp * np.exp(-((phase01 - peak) ** 2) / (2 * width**2))
        hip, knee, other_hip = (L_HIP, L_KNEE, R_HIP) if side == 0 else (R_HIP, R_KNEE, L_HIP)
        rot[:, hip] = rot_x(-swing)
        rot[:, knee] = rot_x(np.clip(0.8 * np.gradient(swing), 0, None) * 6)
        rot[:, other_hip] = rot_x(0.15 * swing)
        rot[:, SPINE1] = rot_x(-0.2 * swing)
        root[:, 1] = rest_h - 0.02 * swing
    elif action == "bow":
        depth = rng.uniform(0.5, 1.1)
        hold = rng.uniform(0.35, 0.6)
        phase01 = t / (n - 1)
        curve = depth * np.clip(np.minimum(phase01 / hold, (1 - phase01) / (1 - hold - 1e-9)) * 1.6, 0, 1)
        rot[:, SPINE1] = rot_x(curve * 0.6)
        rot[:, 6] = rot_x(curve * 0.4)
        rot[:, 9] = rot_x(curve * 0.2)
        rot[:, L_HIP] = rot[:, R_HIP] = rot_x(-curve * 0.12)
        root[:, 1] = rest_h - 0.03 * curve
    elif action == "squat":
        depth = rng.uniform(0.25, 0.45)
        hold = rng.uniform(0.4, 0.6)
        phase01 = t / (n - 1)
        curve = np.clip(np.minimum(phase01 / hold, (1 - phase01) / (1 - hold - 1e-9)) * 1.8, 0, 1)
        d = depth * curve
        theta = np.arccos(np.clip(1.0 - d / 0.82, -1, 1))
        root[:, 1] = rest_h - d
        rot[:, L_HIP] = rot[:, R_HIP] = rot_x(-theta)
        rot[:, L_KNEE] = rot[:, R_KNEE] = rot_x(2 * theta)
        arm = rng.uniform(0.6, 1.3)
        rot[:, L_SHOULDER] = rot_x(-arm * curve)
        rot[:, R_SHOULDER] = rot_x(-arm * curve)
    elif action == "raise":
        speed = rng.uniform(0.35, 0.7)
        top = rng.uniform(2.2, 2.9)
        phase01 = t / (n - 1)
        lift = top * np.clip(phase01 / speed, 0, 1)
        rot[:, L_SHOULDER] = rot_z(lift)
        rot[:, R_SHOULDER] = rot_z(-lift)
    elif action == "sit":
        depth = rng.uniform(0.35, 0.5)
        settle = rng.uniform(0.35, 0.55)
        phase01 = t / (n - 1)
        curve = np.clip(phase01 / settle, 0, 1)
        curve = curve * curve * (3 - 2 * curve)  # smoothstep
        d = depth * curve
        theta = np.arccos(np.clip(1.0 - d / 0.82, -1, 1))
        root[:, 1] = rest_h - d
        root[:, 2] = -0.12 * curve
        rot[:, L_HIP] = rot[:, R_HIP] = rot_x(-theta * 1.15)
        rot[:, L_KNEE] = rot[:, R_KNEE] = rot_x(2 * theta)
        rot[:, SPINE1] = rot_x(0.18 * curve)

    return _pose_clip(skeleton, rot, root)


def select_keypose(clip: MotionClip, action: str, skeleton: Skeleton | None = None) -> int:
    """Deterministic representative frame for an action (earliest on ties)."""
    if action not in VOCABULARY:
        raise ContractViolation(f"unknown action {action!r}; vocabulary: {', '.join(VOCABULARY)}")
    skeleton = skeleton or default_skeleton()
    feats = clip.features
    if action == "jump":
        return int(np.argmax(feats[:, 3]))
    if action in ("squat", "sit"):
        return int(np.argmin(feats[:, 3]))
    positions = recover_joint_positions(clip, skeleton)
    if action in ("wave", "raise"):
        wrist_y = positions[:, [L_WRIST, R_WRIST], 1].max(axis=1)
        return int(np.argmax(wrist_y))
    if action == "bow":
        return int(np.argmin(positions[:, HEAD, 1]))
    if action == "kick":
        foot = positions[:, [L_FOOT, R_FOOT]]
        speed = np.linalg.norm(np.diff(foot, axis=0), axis=-1).max(axis=1)
        speed = np.concatenate([[0.0], speed])
        return int(np.argmax(speed))
    # walk: fastest planar root motion
    planar = np.linalg.norm(feats[:, 1:3], axis=1)
    return int(np.argmax(planar))


def extract_conditions(
    clip: MotionClip,
    skeleton: Skeleton,
    camera: CameraView,
    direction: str,
    traj_joints,
    t_r: int,
    keypose_source_frame: int | None = None,
):
    """Build the paired (3D, 2D) condition bundles for one clip.

    The keypose is root-relative and placed at the direction's anchor frame;
    trajectories are absolute positions of the requested end-effectors over
    the first (or last) t_r frames. The 2D bundle is the orthographic
    projection of the same entries under `camera`.
    """
    n = clip.n_frames
    if not 1 <= t_r <= n:
        raise ContractViolation(f"t_r must be in [1, {n}], got {t_r}")
    for jj in traj_joints:
        if jj not in skeleton.end_effectors:
            raise ContractViolation(f"joint {jj} is not an end-effector")
    positions = recover_joint_positions(clip, skeleton)
    rel = to_root_relative(positions)
    j = skeleton.joint_count

    anchor = 0 if direction == DIR_FROM_KEYPOSE else n - 1
    src = anchor if keypose_source_frame is None else int(np.clip(keypose_source_frame, 0, n - 1))
    frames = np.arange(t_r) if direction == DIR_FROM_KEYPOSE else np.arange(n - t_r, n)

    def build(dims: str) -> ConditionBundle:
        c = 2 if dims == "2D" else 3
        kp = np.zeros((n, j, c), dtype=np.float32)
        kp_mask = np.zeros(n, dtype=np.float32)
        kp_mask[anchor] = 1.0
        pose = rel[src]
        kp[anchor] = project(pose, camera) if dims == "2D" else pose
        tr = np.zeros((n, j, c), dtype=np.float32)
        tr_mask = np.zeros((n, j), dtype=np.float32)
        for jj in traj_joints:
            pts = positions[frames, jj]
            tr[frames, jj] = project(pts, camera) if dims == "2D" else pts
            tr_mask[frames, jj] = 1.0
        return ConditionBundle(
            action_word="",
            keypose=kp,
            keypose_mask=kp_mask,
            trajectory=tr,
            trajectory_mask=tr_mask,
            direction=direction,
            dims=dims,
            camera=camera if dims == "2D" else None,
        )

    b3, b2 = build("3D"), build("2D")
    return b3, b2


@dataclass
class AugmentConfig:
    """Ranges for sketch-style condition augmentation."""

    pitch_range: tuple = (0.0, 30.0)
    yaw_range: tuple = (-45.0, 45.0)
    scale_range: tuple = (0.8, 1.2)
    joint_noise_std: float = 0.02
    proportion_range: tuple = (0.6, 1.6)
    resample_camera: bool = True
    perturb_joints: bool = True
    perturb_proportions: bool = True


def _scale_part_2d(pose2d: np.ndarray, part_joints, factor: float, skeleton: Skeleton) -> np.ndarray:
    """Scale a body-part chain in 2D about each joint's parent anchor."""
    out = pose2d.copy()
    part = set(part_joints)
    # process in topological order so parents are already displaced
    for jj in range(skeleton.joint_count):
        if jj not in part:
            continue
        p = skeleton.parent[jj]
        bone = pose2d[jj] - pose2d[p]
        out[jj] = out[p] + factor * bone
    return out


def augment(
    bundle2d: ConditionBundle,
    rng: np.random.Generator,
    config: AugmentConfig | None = None,
    bundle3d: ConditionBundle | None = None,
    skeleton: Skeleton | None = None,
) -> ConditionBundle:
    """Sketch-style augmentation of a 2D bundle: camera resample (needs the
    paired 3D bundle), Gaussian keypose jitter, and per-part proportion
    rescale. Masks are never moved."""
    if bundle2d.dims != "2D":
        raise ContractViolation("augment expects a 2D bundle")
    config = config or AugmentConfig()
    skeleton = skeleton or default_skeleton()

    camera = bundle2d.camera
    keypose = bundle2d.keypose.copy()
    trajectory = bundle2d.trajectory.copy()
    kf = bundle2d.keypose_frame

    if config.resample_camera and bundle3d is not None:
        camera = CameraView(
            scale=float(rng.uniform(*config.scale_range)),
            pitch=float(rng.uniform(*config.pitch_range)),
            yaw=float(rng.uniform(*config.yaw_range)),
            roll=0.0,
        )
        keypose = np.zeros_like(keypose)
        keypose[kf] = project(bundle3d.keypose[kf], camera)
        trajectory = project(bundle3d.trajectory, camera) * bundle3d.trajectory_mask[:, :, None]

    if config.perturb_proportions:
        pose = keypose[kf]
        for part, joints in BODY_PARTS.items():
            factor = float(rng.uniform(*config.proportion_range))
            pose = _scale_part_2d(pose, joints, factor, skeleton)
        keypose[kf] = pose

    if config.perturb_joints and config.joint_noise_std > 0:
        noise = rng.normal(0.0, config.joint_noise_std, size=keypose[kf].shape)
        keypose[kf] = keypose[kf] + noise.astype(np.float32)

    return ConditionBundle(
        action_word=bundle2d.action_word,
        keypose=keypose,
        keypose_mask=bundle2d.keypose_mask.copy(),
        trajectory=trajectory,
        trajectory_mask=bundle2d.trajectory_mask.copy(),
        direction=bundle2d.direction,
        dims="2D",
        camera=camera,
    )


# ---------------------------------------------------------------------------
# dataset build / read
# ---------------------------------------------------------------------------

@dataclass
class DatasetManifest:
    seed: int
    config: dict
    entries: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"seed": self.seed, "config": self.config, "entries": self.entries}

    @classmethod
    def from_dict(cls, d: dict) -> "DatasetManifest":
        return cls(seed=d["seed"], config=d["config"], entries=d["entries"])


def build_dataset(
    root: str,
    seed: int = 0,
    actions=VOCABULARY,
    clips_per_action: int = 64,
    test_fraction: float = 0.125,
    augment_config: AugmentConfig | None = None,
    skeleton: Skeleton | None = None,
) -> DatasetManifest:
    """Generate clips + paired condition bundles and write them to `root`.

    Fully reproducible from (config, seed): the directory digest is stable.
    """
    skeleton = skeleton or default_skeleton()
    augment_config = augment_config or AugmentConfig()
    os.makedirs(os.path.join(root, "clips"), exist_ok=True)
    os.makedirs(os.path.join(root, "conditions"), exist_ok=True)

    manifest = DatasetManifest(
        seed=seed,
        config={
            "actions": list(actions),
            "clips_per_action": clips_per_action,
            "test_fraction": test_fraction,
            "augment": vars(augment_config).copy(),
        },
    )
    manifest.config["augment"] = {
        k: list(v) if isinstance(v, tuple) else v for k, v in manifest.config["augment"].items()
    }

    rng = np.random.default_rng(seed)
    n_test = max(1, int(round(clips_per_action * test_fraction)))
    for action in actions:
        for i in range(clips_per_action):
            clip_seed = int(rng.integers(0, 2**31 - 1))
            clip = synth_motion(action, clip_seed, skeleton)
            kf = select_keypose(clip, action, skeleton)
            direction = DIR_FROM_KEYPOSE if rng.random() < 0.5 else DIR_TO_KEYPOSE
            t_r = int(rng.integers(10, clip.n_frames + 1))
            n_joints = int(rng.integers(1, 7))
            traj_joints = sorted(
                rng.choice(skeleton.end_effectors, size=n_joints, replace=False).tolist()
            )
            camera = CameraView(
                scale=float(rng.uniform(*augment_config.scale_range)),
                pitch=float(rng.uniform(*augment_config.pitch_range)),
                yaw=float(rng.uniform(*augment_config.yaw_range)),
                roll=0.0,
            )
            b3, b2 = extract_conditions(clip, skeleton, camera, direction, traj_joints, t_r)
            b3.action_word = b2.action_word = action
            b2 = augment(b2, rng, augment_config, bundle3d=b3, skeleton=skeleton)

            clip_id = f"{action}_{i:04d}"
            clip_file = os.path.join("clips", clip_id + ".mclip")
            cond_file = os.path.join("conditions", clip_id + ".json")
            write_clip(os.path.join(root, clip_file), clip)
            with open(os.path.join(root, cond_file), "w") as fh:
                json.dump(
                    {"bundle3d": b3.to_dict(), "bundle2d": b2.to_dict()},
                    fh,
                    sort_keys=True,
                    separators=(",", ":"),
                )
            manifest.entries.append(
                {
                    "id": clip_id,
                    "action_word": action,
                    "file": clip_file,
                    "condition_file": cond_file,
                    "keypose_frame": kf,
                    "split": "test" if i >= clips_per_action - n_test else "train",
                }
            )
    with open(os.path.join(root, "manifest.json"), "w") as fh:
        json.dump(manifest.to_dict(), fh, sort_keys=True, indent=1)
    return manifest


def read_manifest(root: str) -> DatasetManifest:
    with open(os.path.join(root, "manifest.json")) as fh:
        manifest = DatasetManifest.from_dict(json.load(fh))
    for entry in manifest.entries:
        if not os.path.exists(os.path.join(root, entry["file"])):
            raise ContractViolation(f"missing clip file for id {entry['id']}")
    return manifest


def load_entry(root: str, entry: dict):
    """Read one manifest entry -> (clip, bundle3d, bundle2d)."""
    try:
        clip = read_clip(os.path.join(root, entry["file"]))
    except ContractViolation as exc:
        raise ContractViolation(f"clip {entry['id']}: {exc}") from exc
    with open(os.path.join(root, entry["condition_file"])) as fh:
        conds = json.load(fh)
    return (
        clip,
        ConditionBundle.from_dict(conds["bundle3d"]),
        ConditionBundle.from_dict(conds["bundle2d"]),
    )


def dataset_digest(root: str) -> str:
    """SHA-256 over every file in the dataset directory (sorted paths)."""
    digest = hashlib.sha256()
    for dirpath, dirnames, filenames in sorted(os.walk(root)):
        dirnames.sort()
        for name in sorted(filenames):
            path = os.path.join(dirpath, name)
            digest.update(os.path.relpath(path, root).encode())
            with open(path, "rb") as fh:
                digest.update(fh.read())
    return digest.hexdigest()
