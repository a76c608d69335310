"""Condition carrier for generation: action word + keypose + trajectories.

A bundle holds dense (N, J, C) matrices with explicit binary masks; entries
outside the masks are zero. The placement rule ties everything to the
trajectory direction: strokes leaving the keypose put the keypose at frame 0
and trajectories on the first t_r frames, strokes arriving at the keypose
mirror that at the clip's end.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .motion import CameraView, ContractViolation

DIR_FROM_KEYPOSE = "from-keypose"
DIR_TO_KEYPOSE = "to-keypose"


class BundleValidationError(ContractViolation):
    """A ConditionBundle invariant failed; `.field_path` names the offender."""

    def __init__(self, field_path: str, message: str):
        self.field_path = field_path
        super().__init__(f"{field_path}: {message}")


@dataclass
class ConditionBundle:
    """Keypose + trajectory conditions for one clip, 2D or 3D flavored."""

    action_word: str
    keypose: np.ndarray          # (N, J, C)
    keypose_mask: np.ndarray     # (N,)
    trajectory: np.ndarray       # (N, J, C)
    trajectory_mask: np.ndarray  # (N, J)
    direction: str = DIR_FROM_KEYPOSE
    dims: str = "3D"
    camera: CameraView | None = None

    def __post_init__(self):
        self.keypose = np.asarray(self.keypose, dtype=np.float32)
        self.trajectory = np.asarray(self.trajectory, dtype=np.float32)
        self.keypose_mask = np.asarray(self.keypose_mask, dtype=np.float32)
        self.trajectory_mask = np.asarray(self.trajectory_mask, dtype=np.float32)

    @property
    def n_frames(self) -> int:
        return self.keypose.shape[0]

    @property
    def n_joints(self) -> int:
        return self.keypose.shape[1]

    @property
    def channels(self) -> int:
        return self.keypose.shape[2]

    @property
    def keypose_frame(self) -> int:
        return int(np.argmax(self.keypose_mask))

    def validate(self, end_effectors=None) -> "ConditionBundle":
        n, j, c = self.keypose.shape
        if self.dims not in ("2D", "3D"):
            raise BundleValidationError("dims", f"unknown dims tag {self.dims!r}")
        if c != (2 if self.dims == "2D" else 3):
            raise BundleValidationError("keypose", f"dims={self.dims} expects C={2 if self.dims == '2D' else 3}, got {c}")
        if self.dims == "2D" and self.camera is None:
            raise BundleValidationError("camera", "2D bundles must carry their camera view")
        if self.dims == "3D" and self.camera is not None:
            raise BundleValidationError("camera", "3D bundles must not carry a camera view")
        if self.trajectory.shape != (n, j, c):
            raise BundleValidationError("trajectory", f"shape {self.trajectory.shape} != {(n, j, c)}")
        if self.keypose_mask.shape != (n,):
            raise BundleValidationError("keypose_mask", f"shape {self.keypose_mask.shape} != ({n},)")
        if self.trajectory_mask.shape != (n, j):
            raise BundleValidationError("trajectory_mask", f"shape {self.trajectory_mask.shape} != {(n, j)}")
        for name, mask in (("keypose_mask", self.keypose_mask), ("trajectory_mask", self.trajectory_mask)):
            if not np.isin(mask, (0.0, 1.0)).all():
                raise BundleValidationError(name, "mask entries must be binary")
        if self.keypose_mask.sum() != 1:
            raise BundleValidationError("keypose_mask", "exactly one frame must be marked")
        if self.direction not in (DIR_FROM_KEYPOSE, DIR_TO_KEYPOSE):
            raise BundleValidationError("direction", f"unknown direction {self.direction!r}")
        kf = self.keypose_frame
        expected_kf = 0 if self.direction == DIR_FROM_KEYPOSE else n - 1
        if kf != expected_kf:
            raise BundleValidationError(
                "keypose_mask", f"direction {self.direction} places the keypose at frame {expected_kf}, got {kf}"
            )
        # trajectories occupy a contiguous run anchored at the keypose end
        used_frames = np.flatnonzero(self.trajectory_mask.any(axis=1))
        if used_frames.size:
            t_r = used_frames.size
            if self.direction == DIR_FROM_KEYPOSE:
                anchored = np.arange(t_r)
            else:
                anchored = np.arange(n - t_r, n)
            if not np.array_equal(used_frames, anchored):
                raise BundleValidationError(
                    "trajectory_mask", "trajectory frames must be contiguous and anchored at the keypose end"
                )
        if end_effectors is not None:
            bad = [jj for jj in np.flatnonzero(self.trajectory_mask.any(axis=0)) if jj not in end_effectors]
            if bad:
                raise BundleValidationError("trajectory_mask", f"joints {bad} are not end-effectors")
        # zero outside masks
        kp_out = self.keypose * (1.0 - self.keypose_mask)[:, None, None]
        if np.abs(kp_out).max(initial=0.0) != 0.0:
            raise BundleValidationError("keypose", "entries outside the keypose mask must be zero")
        tr_out = self.trajectory * (1.0 - self.trajectory_mask)[:, :, None]
        if np.abs(tr_out).max(initial=0.0) != 0.0:
            raise BundleValidationError("trajectory", "entries outside the trajectory mask must be zero")
        return self

    # -- serialization (sparse: only masked entries are stored) -------------

    def to_dict(self) -> dict:
        kf = self.keypose_frame
        traj_cells = np.argwhere(self.trajectory_mask > 0)
        return {
            "action_word": self.action_word,
            "n": int(self.n_frames),
            "j": int(self.n_joints),
            "dims": self.dims,
            "direction": self.direction,
            "camera": self.camera.to_dict() if self.camera else None,
            "keypose_frame": kf,
            "keypose": [[round(float(v), 8) for v in row] for row in self.keypose[kf]],
            "trajectory_cells": [
                {
                    "frame": int(i),
                    "joint": int(j),
                    "value": [round(float(v), 8) for v in self.trajectory[i, j]],
                }
                for i, j in traj_cells
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ConditionBundle":
        n, j = d["n"], d["j"]
        c = 2 if d["dims"] == "2D" else 3
        keypose = np.zeros((n, j, c), dtype=np.float32)
        keypose_mask = np.zeros(n, dtype=np.float32)
        try:
            keypose_mask[d["keypose_frame"]] = 1.0
        except IndexError:
            raise BundleValidationError("keypose_frame", f"outside [0, {n})") from None
        try:
            keypose[d["keypose_frame"]] = np.asarray(d["keypose"], dtype=np.float32)
        except (TypeError, ValueError):
            raise BundleValidationError("keypose", f"expected {j} rows of {c} numbers") from None
        trajectory = np.zeros((n, j, c), dtype=np.float32)
        trajectory_mask = np.zeros((n, j), dtype=np.float32)
        for i, cell in enumerate(d["trajectory_cells"]):
            try:
                trajectory[cell["frame"], cell["joint"]] = np.asarray(cell["value"], dtype=np.float32)
            except (TypeError, ValueError, IndexError):
                raise BundleValidationError(f"trajectory_cells[{i}]",
                                            "expected in-range frame/joint and a "
                                            f"{c}-number value") from None
            trajectory_mask[cell["frame"], cell["joint"]] = 1.0
        cam = CameraView.from_dict(d["camera"]) if d.get("camera") else None
        return cls(
            action_word=d["action_word"],
            keypose=keypose,
            keypose_mask=keypose_mask,
            trajectory=trajectory,
            trajectory_mask=trajectory_mask,
            direction=d["direction"],
            dims=d["dims"],
            camera=cam,
        )


def empty_bundle(
    action_word: str,
    n: int,
    j: int,
    dims: str = "3D",
    direction: str = DIR_FROM_KEYPOSE,
    camera: CameraView | None = None,
) -> ConditionBundle:
    """Bundle with a zero keypose at the placement frame and no trajectories."""
    c = 2 if dims == "2D" else 3
    keypose_mask = np.zeros(n, dtype=np.float32)
    keypose_mask[0 if direction == DIR_FROM_KEYPOSE else n - 1] = 1.0
    return ConditionBundle(
        action_word=action_word,
        keypose=np.zeros((n, j, c), dtype=np.float32),
        keypose_mask=keypose_mask,
        trajectory=np.zeros((n, j, c), dtype=np.float32),
        trajectory_mask=np.zeros((n, j), dtype=np.float32),
        direction=direction,
        dims=dims,
        camera=camera,
    )
