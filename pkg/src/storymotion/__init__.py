"""Storyboard-to-motion toolkit: conditional latent diffusion over short
motion clips with trajectory and keypose control, sketch-to-3D condition
mapping, guided sampling, clip blending, and an evaluation suite."""

__version__ = "0.1.0"

from .motion import (
    FEATURE_DIM,
    CameraView,
    ContractViolation,
    MotionClip,
    encode_features,
    export_bvh,
    project,
    read_clip,
    recover_joint_positions,
    to_root_relative,
    write_clip,
)
from .conditions import (
    DIR_FROM_KEYPOSE,
    DIR_TO_KEYPOSE,
    BundleValidationError,
    ConditionBundle,
    empty_bundle,
)
from .skeleton import Skeleton, default_skeleton, forward_kinematics
from .synthdata import VOCABULARY, build_dataset, read_manifest, synth_motion

__all__ = [
    "FEATURE_DIM",
    "CameraView",
    "ContractViolation",
    "MotionClip",
    "ConditionBundle",
    "BundleValidationError",
    "DIR_FROM_KEYPOSE",
    "DIR_TO_KEYPOSE",
    "Skeleton",
    "VOCABULARY",
    "build_dataset",
    "default_skeleton",
    "empty_bundle",
    "encode_features",
    "export_bvh",
    "forward_kinematics",
    "project",
    "read_clip",
    "read_manifest",
    "recover_joint_positions",
    "synth_motion",
    "to_root_relative",
    "write_clip",
]
