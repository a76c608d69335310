"""22-joint kinematic tree used throughout the library.

Joint order follows the SMPL convention (pelvis root, alternating
left/right chains). All offsets are in meters, world frame is y-up.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

JOINT_NAMES = [
    "pelvis",        # 0
    "left_hip",      # 1
    "right_hip",     # 2
    "spine1",        # 3
    "left_knee",     # 4
    "right_knee",    # 5
    "spine2",        # 6
    "left_ankle",    # 7
    "right_ankle",   # 8
    "spine3",        # 9
    "left_foot",     # 10
    "right_foot",    # 11
    "neck",          # 12
    "left_collar",   # 13
    "right_collar",  # 14
    "head",          # 15
    "left_shoulder",   # 16
    "right_shoulder",  # 17
    "left_elbow",    # 18
    "right_elbow",   # 19
    "left_wrist",    # 20
    "right_wrist",   # 21
]

_PARENTS = [-1, 0, 0, 0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 9, 9, 12, 13, 14, 16, 17, 18, 19]

# Bone offsets from parent, meters. Hand-tuned to a ~1.7 m figure.
_OFFSETS = np.array(
    [
        [0.00, 0.95, 0.00],    # pelvis (root height in rest pose)
        [0.09, -0.05, 0.00],   # left_hip
        [-0.09, -0.05, 0.00],  # right_hip
        [0.00, 0.11, 0.00],    # spine1
        [0.00, -0.40, 0.00],   # left_knee
        [0.00, -0.40, 0.00],   # right_knee
        [0.00, 0.13, 0.00],    # spine2
        [0.00, -0.42, 0.00],   # left_ankle
        [0.00, -0.42, 0.00],   # right_ankle
        [0.00, 0.05, 0.00],    # spine3
        [0.00, -0.06, 0.13],   # left_foot
        [0.00, -0.06, 0.13],   # right_foot
        [0.00, 0.21, 0.00],    # neck
        [0.07, 0.18, 0.00],    # left_collar
        [-0.07, 0.18, 0.00],   # right_collar
        [0.00, 0.12, 0.00],    # head
        [0.10, 0.00, 0.00],    # left_shoulder
        [-0.10, 0.00, 0.00],   # right_shoulder
        [0.26, 0.00, 0.00],    # left_elbow
        [-0.26, 0.00, 0.00],   # right_elbow
        [0.25, 0.00, 0.00],    # left_wrist
        [-0.25, 0.00, 0.00],   # right_wrist
    ],
    dtype=np.float32,
)

END_EFFECTORS = (0, 10, 11, 15, 20, 21)  # pelvis, feet, head, wrists
FOOT_JOINTS = (7, 8, 10, 11)  # ankles + feet


@dataclass(frozen=True)
class Skeleton:
    """Single-rooted kinematic tree with fixed bone offsets."""

    joint_count: int = 22
    parent: tuple = tuple(_PARENTS)
    offsets: np.ndarray = field(default_factory=lambda: _OFFSETS.copy())
    end_effectors: tuple = END_EFFECTORS
    foot_joints: tuple = FOOT_JOINTS

    def __post_init__(self):
        parents = list(self.parent)
        if len(parents) != self.joint_count:
            raise ValueError("parent array length != joint_count")
        if parents.count(-1) != 1:
            raise ValueError("tree must have exactly one root")
        for j, p in enumerate(parents):
            if p >= j and p != -1:
                raise ValueError("parents must precede children (no cycles)")
        if len(self.end_effectors) != 6:
            raise ValueError("expected 6 end-effector joints")
        for j in self.end_effectors:
            if not 0 <= j < self.joint_count:
                raise ValueError(f"end-effector id {j} out of range")

    @property
    def root(self) -> int:
        return self.parent.index(-1)

    def children(self, j: int) -> list:
        return [c for c, p in enumerate(self.parent) if p == j]

    def chain_from(self, j: int) -> list:
        """Joints in the subtree rooted at j (including j), topological order."""
        out = [j]
        for c in range(self.joint_count):
            if self.parent[c] in out and c not in out:
                out.append(c)
        return out

    def rest_pose(self) -> np.ndarray:
        """World-space joint positions of the rest pose, (J, 3)."""
        pos = np.zeros((self.joint_count, 3), dtype=np.float32)
        for j in range(self.joint_count):
            p = self.parent[j]
            base = pos[p] if p >= 0 else np.zeros(3, dtype=np.float32)
            pos[j] = base + self.offsets[j]
        return pos


def default_skeleton() -> Skeleton:
    return Skeleton()


def forward_kinematics(
    skeleton: Skeleton,
    rotations: np.ndarray,
    root_positions: np.ndarray,
) -> np.ndarray:
    """Pose the skeleton from per-joint local rotation matrices.

    rotations: (N, J, 3, 3) local joint rotations, root rotation included.
    root_positions: (N, 3) world root positions.
    Returns world joint positions (N, J, 3). Bone lengths are preserved by
    construction.
    """
    n, j = rotations.shape[:2]
    if j != skeleton.joint_count:
        raise ValueError("rotation count != joint_count")
    world_rot = np.zeros_like(rotations)
    pos = np.zeros((n, j, 3), dtype=np.float64)
    for jj in range(j):
        p = skeleton.parent[jj]
        if p < 0:
            world_rot[:, jj] = rotations[:, jj]
            pos[:, jj] = root_positions
        else:
            world_rot[:, jj] = world_rot[:, p] @ rotations[:, jj]
            off = skeleton.offsets[jj].astype(np.float64)
            pos[:, jj] = pos[:, p] + np.einsum("nab,b->na", world_rot[:, p], off)
    return pos.astype(np.float32)


def rot_y(angle: np.ndarray) -> np.ndarray:
    """Rotation matrices about the y (up) axis, broadcast over angle shape."""
    a = np.asarray(angle, dtype=np.float64)
    c, s = np.cos(a), np.sin(a)
    out = np.zeros(a.shape + (3, 3))
    out[..., 0, 0] = c
    out[..., 0, 2] = s
    out[..., 1, 1] = 1.0
    out[..., 2, 0] = -s
    out[..., 2, 2] = c
    return out


def rot_x(angle: np.ndarray) -> np.ndarray:
    a = np.asarray(angle, dtype=np.float64)
    c, s = np.cos(a), np.sin(a)
    out = np.zeros(a.shape + (3, 3))
    out[..., 0, 0] = 1.0
    out[..., 1, 1] = c
    out[..., 1, 2] = -s
    out[..., 2, 1] = s
    out[..., 2, 2] = c
    return out


def rot_z(angle: np.ndarray) -> np.ndarray:
    a = np.asarray(angle, dtype=np.float64)
    c, s = np.cos(a), np.sin(a)
    out = np.zeros(a.shape + (3, 3))
    out[..., 0, 0] = c
    out[..., 0, 1] = -s
    out[..., 1, 0] = s
    out[..., 1, 1] = c
    out[..., 2, 2] = 1.0
    return out
