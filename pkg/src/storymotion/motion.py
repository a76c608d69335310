"""Redundant per-frame motion features and their geometric codec.

A motion clip is an (N, 263) float32 matrix. Channel layout:

    [0]       root yaw angular velocity, rad/frame
    [1:3]     root planar (x, z) velocity in the root's heading frame, m/frame
    [3]       root height (y), m
    [4:67]    heading-local positions of joints 1..21 relative to the root
    [67:193]  6D bone-frame parameterization of joints 1..21
    [193:259] world-frame velocities of all 22 joints, m/frame
    [259:263] foot-contact labels (left ankle, right ankle, left foot, right foot)

`recover_joint_positions` (the features -> positions map) only consumes
channels [0:67]; the rest is redundant context for learned models.
Geometric ops run on torch tensors so they stay differentiable; numpy
arrays are accepted and returned transparently.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
import torch

from .skeleton import Skeleton, default_skeleton

FEATURE_DIM = 263
DEFAULT_FRAMES = 40
DEFAULT_FPS = 20.0

CH_YAWVEL = 0
CH_VEL = slice(1, 3)
CH_HEIGHT = 3
CH_LOCALPOS = slice(4, 67)
CH_ROT6D = slice(67, 193)
CH_JOINTVEL = slice(193, 259)
CH_CONTACT = slice(259, 263)

CONTACT_JOINTS = (7, 8, 10, 11)
CONTACT_HEIGHT_THRESH = 0.05   # m
CONTACT_SPEED_THRESH = 0.01    # m/frame


class ContractViolation(ValueError):
    """An input broke a documented precondition or invariant."""


@dataclass
class MotionClip:
    """Fixed-rate motion clip in the redundant feature representation."""

    features: np.ndarray
    fps: float = DEFAULT_FPS

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float32)
        if self.features.ndim != 2 or self.features.shape[1] != FEATURE_DIM:
            raise ContractViolation(
                f"features must be (N, {FEATURE_DIM}), got {self.features.shape}"
            )

    @property
    def n_frames(self) -> int:
        return self.features.shape[0]

    def validate(self) -> "MotionClip":
        if not np.isfinite(self.features).all():
            raise ContractViolation("non-finite feature values")
        contacts = self.features[:, CH_CONTACT]
        if contacts.min() < 0.0 or contacts.max() > 1.0:
            raise ContractViolation("contact channels must lie in [0, 1]")
        return self

    def copy(self) -> "MotionClip":
        return MotionClip(self.features.copy(), self.fps)


def from_decoded(features, fps: float = DEFAULT_FPS) -> MotionClip:
    """Wrap raw decoder output as a clip; contact logits land in [0, 1]."""
    feats = np.asarray(features, dtype=np.float32).copy()
    feats[:, CH_CONTACT] = np.clip(feats[:, CH_CONTACT], 0.0, 1.0)
    return MotionClip(feats, fps)


@dataclass
class CameraView:
    """Orthographic camera: uniform scale plus yaw/pitch/roll in degrees."""

    scale: float = 1.0
    pitch: float = 0.0
    yaw: float = 0.0
    roll: float = 0.0

    def __post_init__(self):
        if self.scale <= 0:
            raise ContractViolation("camera scale must be positive")

    def to_dict(self) -> dict:
        return {"scale": self.scale, "pitch": self.pitch, "yaw": self.yaw, "roll": self.roll}

    @classmethod
    def from_dict(cls, d: dict) -> "CameraView":
        return cls(scale=d["scale"], pitch=d["pitch"], yaw=d["yaw"], roll=d["roll"])


def _wrap(tensor: "np.ndarray | torch.Tensor"):
    if isinstance(tensor, torch.Tensor):
        return tensor, False
    return torch.as_tensor(np.asarray(tensor), dtype=torch.float32), True


def _unwrap(t: torch.Tensor, was_numpy: bool):
    return t.detach().cpu().numpy() if was_numpy else t


def _yaw_matrices(yaw: torch.Tensor) -> torch.Tensor:
    """(..., 3, 3) rotation about y for each yaw angle."""
    c, s = torch.cos(yaw), torch.sin(yaw)
    zero = torch.zeros_like(c)
    one = torch.ones_like(c)
    rows = [
        torch.stack([c, zero, s], dim=-1),
        torch.stack([zero, one, zero], dim=-1),
        torch.stack([-s, zero, c], dim=-1),
    ]
    return torch.stack(rows, dim=-2)


def recover_joint_positions(features, skeleton: Skeleton | None = None):
    """Integrate root channels and place local joints in the world (R form).

    Accepts an (N, 263) feature matrix (torch or numpy) or a MotionClip.
    Frame 0 starts at the world origin with identity heading. Returns
    (N, J, 3) positions.
    """
    if isinstance(features, MotionClip):
        features = features.features
    skeleton = skeleton or default_skeleton()
    f, was_numpy = _wrap(features)
    if f.ndim != 2 or f.shape[1] != FEATURE_DIM:
        raise ContractViolation(f"expected (N, {FEATURE_DIM}) features, got {tuple(f.shape)}")
    n = f.shape[0]
    j = skeleton.joint_count

    yawvel = f[:, CH_YAWVEL]
    yaw = torch.cat([torch.zeros(1, dtype=f.dtype, device=f.device), torch.cumsum(yawvel[:-1], 0)])
    rot = _yaw_matrices(yaw)  # (N, 3, 3)

    vel_local = f[:, CH_VEL]  # (N, 2) -> (x, z)
    vel3 = torch.stack(
        [vel_local[:, 0], torch.zeros_like(vel_local[:, 0]), vel_local[:, 1]], dim=-1
    )
    vel_world = torch.einsum("nab,nb->na", rot, vel3)
    root_xz = torch.cumsum(
        torch.cat([torch.zeros(1, 3, dtype=f.dtype, device=f.device), vel_world[:-1]]), dim=0
    )
    root = torch.stack([root_xz[:, 0], f[:, CH_HEIGHT], root_xz[:, 2]], dim=-1)

    local = f[:, CH_LOCALPOS].reshape(n, j - 1, 3)
    world = torch.einsum("nab,nkb->nka", rot, local) + root[:, None, :]
    positions = torch.cat([root[:, None, :], world], dim=1)
    return _unwrap(positions, was_numpy)


def to_root_relative(positions, root_index: int = 0):
    """Subtract the per-frame root position from every joint (R' form)."""
    p, was_numpy = _wrap(positions)
    rel = p - p[..., root_index : root_index + 1, :]
    return _unwrap(rel, was_numpy)


def project(positions, cam: CameraView):
    """Orthographic projection: rotate by R_roll @ R_pitch @ R_yaw, drop depth, scale.

    Works on any (..., 3) tensor; returns (..., 2) screen coordinates
    (horizontal, vertical).
    """
    p, was_numpy = _wrap(positions)
    yaw, pitch, roll = (np.deg2rad(a) for a in (cam.yaw, cam.pitch, cam.roll))

    def _m(arr):
        return torch.as_tensor(np.asarray(arr), dtype=p.dtype, device=p.device)

    cy, sy = np.cos(yaw), np.sin(yaw)
    cp, sp = np.cos(pitch), np.sin(pitch)
    cr, sr = np.cos(roll), np.sin(roll)
    r_yaw = _m([[cy, 0, sy], [0, 1, 0], [-sy, 0, cy]])
    r_pitch = _m([[1, 0, 0], [0, cp, -sp], [0, sp, cp]])
    r_roll = _m([[cr, -sr, 0], [sr, cr, 0], [0, 0, 1]])
    rot = r_roll @ r_pitch @ r_yaw
    rotated = p @ rot.T
    return _unwrap(cam.scale * rotated[..., :2], was_numpy)


def _heading_yaw(positions: torch.Tensor) -> torch.Tensor:
    """Per-frame heading angle from the hip axis; unwrapped over time."""
    across = positions[:, 1] - positions[:, 2]  # left hip - right hip
    forward = torch.stack([-across[:, 2], torch.zeros_like(across[:, 0]), across[:, 0]], dim=-1)
    yaw = torch.atan2(forward[:, 0], forward[:, 2])
    # unwrap so cumulative differences stay small
    d = torch.diff(yaw)
    d = (d + np.pi) % (2 * np.pi) - np.pi
    return torch.cat([yaw[:1], yaw[0] + torch.cumsum(d, 0)])


def canonicalize(positions, skeleton: Skeleton | None = None):
    """Translate/rotate a motion so frame 0 has the root on the origin (xz)
    with identity heading. This is the frame `recover_joint_positions`
    reconstructs in."""
    p, was_numpy = _wrap(positions)
    root0 = p[0, 0]
    shift = torch.stack([root0[0], torch.zeros_like(root0[1]), root0[2]])
    p = p - shift
    yaw0 = _heading_yaw(p)[0]
    rot = _yaw_matrices(-yaw0)
    return _unwrap(torch.einsum("ab,nkb->nka", rot, p), was_numpy)


def _bone_frames_6d(local_pos: torch.Tensor, skeleton: Skeleton) -> torch.Tensor:
    """6D orthonormal frame per non-root joint from its bone direction."""
    n = local_pos.shape[0]
    full = torch.cat([torch.zeros(n, 1, 3, dtype=local_pos.dtype), local_pos], dim=1)
    out = []
    up = torch.tensor([0.0, 1.0, 0.0], dtype=local_pos.dtype)
    for j in range(1, skeleton.joint_count):
        parent = skeleton.parent[j]
        bone = full[:, j] - full[:, parent]
        b = bone / (bone.norm(dim=-1, keepdim=True) + 1e-8)
        u = up - (b * up).sum(-1, keepdim=True) * b
        small = u.norm(dim=-1, keepdim=True) < 1e-4
        fallback = torch.tensor([1.0, 0.0, 0.0], dtype=local_pos.dtype).expand_as(u)
        u = torch.where(small, fallback - (b * fallback).sum(-1, keepdim=True) * b, u)
        u = u / (u.norm(dim=-1, keepdim=True) + 1e-8)
        out.append(torch.cat([b, u], dim=-1))
    return torch.stack(out, dim=1)  # (N, J-1, 6)


def encode_features(
    positions,
    skeleton: Skeleton | None = None,
    fps: float = DEFAULT_FPS,
    contact_height: float = CONTACT_HEIGHT_THRESH,
    contact_speed: float = CONTACT_SPEED_THRESH,
) -> MotionClip:
    """Inverse codec: world joint positions -> (N, 263) features.

    The input is canonicalized first, so recover(encode(p)) reproduces
    canonicalize(p). Needs at least 2 frames for the velocity channels.
    """
    skeleton = skeleton or default_skeleton()
    p, _ = _wrap(positions)
    if p.ndim != 3 or p.shape[1] != skeleton.joint_count or p.shape[2] != 3:
        raise ContractViolation(f"expected (N, {skeleton.joint_count}, 3), got {tuple(p.shape)}")
    if p.shape[0] < 2:
        raise ContractViolation("need >= 2 frames to encode velocities")
    p = canonicalize(p, skeleton) if isinstance(p, torch.Tensor) else p
    p, _ = _wrap(p)
    n = p.shape[0]

    yaw = _heading_yaw(p)
    yawvel = torch.diff(yaw)
    yawvel = torch.cat([yawvel, yawvel[-1:]])

    root = p[:, 0]
    d_xz = torch.diff(root[:, [0, 2]], dim=0)
    inv_rot = _yaw_matrices(-yaw[:-1])
    d3 = torch.stack([d_xz[:, 0], torch.zeros_like(d_xz[:, 0]), d_xz[:, 1]], dim=-1)
    vel_local = torch.einsum("nab,nb->na", inv_rot, d3)[:, [0, 2]]
    vel_local = torch.cat([vel_local, vel_local[-1:]])

    inv_rot_all = _yaw_matrices(-yaw)
    rel = p[:, 1:] - root[:, None, :]
    local = torch.einsum("nab,nkb->nka", inv_rot_all, rel)

    rot6d = _bone_frames_6d(local, skeleton)

    jvel = torch.diff(p, dim=0)
    jvel = torch.cat([jvel, jvel[-1:]])

    foot = p[:, list(CONTACT_JOINTS)]
    heights = foot[..., 1]
    speeds = torch.cat([torch.diff(foot, dim=0).norm(dim=-1), torch.zeros(1, 4)], dim=0)
    speeds[-1] = speeds[-2]
    contacts = ((heights < contact_height) & (speeds < contact_speed)).to(p.dtype)

    features = torch.zeros(n, FEATURE_DIM, dtype=p.dtype)
    features[:, CH_YAWVEL] = yawvel
    features[:, CH_VEL] = vel_local
    features[:, CH_HEIGHT] = root[:, 1]
    features[:, CH_LOCALPOS] = local.reshape(n, -1)
    features[:, CH_ROT6D] = rot6d.reshape(n, -1)
    features[:, CH_JOINTVEL] = jvel.reshape(n, -1)
    features[:, CH_CONTACT] = contacts
    return MotionClip(features.numpy(), fps=fps)


# ---------------------------------------------------------------------------
# clip file format: one JSON header line + raw little-endian float32 payload
# ---------------------------------------------------------------------------

def write_clip(path, clip: MotionClip) -> None:
    header = {
        "n": clip.n_frames,
        "d": FEATURE_DIM,
        "fps": clip.fps,
        "dtype": "f32le",
    }
    payload = np.ascontiguousarray(clip.features, dtype="<f4").tobytes()
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode("utf-8"))
        fh.write(b"\n")
        fh.write(payload)


def read_clip(path) -> MotionClip:
    with open(path, "rb") as fh:
        header_line = fh.readline()
        payload = fh.read()
    header = json.loads(header_line.decode("utf-8"))
    n, d = header["n"], header["d"]
    expected = n * d * 4
    if len(payload) != expected:
        raise ContractViolation(
            f"clip payload length {len(payload)} != expected {expected} ({path})"
        )
    feats = np.frombuffer(payload, dtype="<f4").reshape(n, d).copy()
    return MotionClip(feats, fps=header["fps"])


def export_bvh(path, clip: MotionClip, skeleton: Skeleton | None = None) -> None:
    """Positional BVH export: every joint carries X/Y/Zposition channels
    holding world coordinates (documented interop format; no joint angles)."""
    skeleton = skeleton or default_skeleton()
    from .skeleton import JOINT_NAMES

    positions = recover_joint_positions(clip.features, skeleton)
    children = {j: skeleton.children(j) for j in range(skeleton.joint_count)}

    lines = ["HIERARCHY"]

    def emit(j: int, indent: int, root: bool) -> None:
        pad = "  " * indent
        tag = "ROOT" if root else "JOINT"
        lines.append(f"{pad}{tag} {JOINT_NAMES[j]}")
        lines.append(pad + "{")
        off = skeleton.offsets[j]
        lines.append(f"{pad}  OFFSET {off[0]:.6f} {off[1]:.6f} {off[2]:.6f}")
        lines.append(f"{pad}  CHANNELS 3 Xposition Yposition Zposition")
        kids = children[j]
        if kids:
            for c in kids:
                emit(c, indent + 1, False)
        else:
            lines.append(f"{pad}  End Site")
            lines.append(pad + "  {")
            lines.append(f"{pad}    OFFSET 0.0 0.0 0.0")
            lines.append(pad + "  }")
        lines.append(pad + "}")

    emit(skeleton.root, 0, True)
    lines.append("MOTION")
    lines.append(f"Frames: {clip.n_frames}")
    lines.append(f"Frame Time: {1.0 / clip.fps:.6f}")

    order = _bvh_joint_order(skeleton)
    for i in range(clip.n_frames):
        vals = []
        for j in order:
            vals.extend(f"{v:.6f}" for v in positions[i, j])
        lines.append(" ".join(vals))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def _bvh_joint_order(skeleton: Skeleton) -> list:
    order = []

    def walk(j):
        order.append(j)
        for c in skeleton.children(j):
            walk(c)

    walk(skeleton.root)
    return order
