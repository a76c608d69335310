import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st
from scipy.spatial.transform import Rotation

from storymotion import synth_motion
from storymotion.motion import (
    CH_CONTACT,
    CH_HEIGHT,
    CH_JOINTVEL,
    CH_LOCALPOS,
    CH_ROT6D,
    CH_VEL,
    CH_YAWVEL,
    FEATURE_DIM,
    CameraView,
    ContractViolation,
    MotionClip,
    canonicalize,
    encode_features,
    export_bvh,
    project,
    read_clip,
    recover_joint_positions,
    to_root_relative,
    write_clip,
)
from storymotion.skeleton import forward_kinematics, rot_y


def _random_motion(rng, n=12):
    """Bone-length-preserving random motion via forward kinematics."""
    sk = __import__("storymotion").default_skeleton()
    angles = rng.uniform(-0.4, 0.4, size=(n, 22))
    rots = np.asarray(rot_y(angles))
    root = np.cumsum(rng.uniform(-0.05, 0.05, size=(n, 3)), axis=0)
    root[:, 1] += 0.95
    return forward_kinematics(sk, rots, root)


class TestFeatureLayout:
    def test_channel_slices_partition_263(self):
        assert CH_YAWVEL == 0
        assert (CH_VEL.start, CH_VEL.stop) == (1, 3)
        assert CH_HEIGHT == 3
        assert (CH_LOCALPOS.start, CH_LOCALPOS.stop) == (4, 67)
        assert (CH_ROT6D.start, CH_ROT6D.stop) == (67, 193)
        assert (CH_JOINTVEL.start, CH_JOINTVEL.stop) == (193, 259)
        assert (CH_CONTACT.start, CH_CONTACT.stop) == (259, 263)
        assert CH_CONTACT.stop == FEATURE_DIM

    def test_clip_shape_enforced(self):
        with pytest.raises(ContractViolation):
            MotionClip(np.zeros((10, 100)))

    def test_validate_rejects_nonfinite(self):
        feats = np.zeros((4, FEATURE_DIM), dtype=np.float32)
        feats[1, 5] = np.nan
        with pytest.raises(ContractViolation):
            MotionClip(feats).validate()

    def test_validate_rejects_bad_contacts(self):
        feats = np.zeros((4, FEATURE_DIM), dtype=np.float32)
        feats[:, 260] = 2.0
        with pytest.raises(ContractViolation):
            MotionClip(feats).validate()


class TestRecoverEncode:
    def test_round_trip_on_synthetic_clips(self, skeleton):
        for action in ("walk", "jump", "wave", "squat"):
            clip = synth_motion(action, 7)
            pos = recover_joint_positions(clip.features, skeleton)
            clip2 = encode_features(pos, skeleton)
            pos2 = recover_joint_positions(clip2.features, skeleton)
            err = np.linalg.norm(pos - pos2, axis=-1).mean()
            assert err < 1e-3, f"{action}: round-trip MPJPE {err}"

    def test_recover_equals_canonicalize_of_input(self, skeleton, rng):
        pos = _random_motion(rng)
        clip = encode_features(pos, skeleton)
        rec = recover_joint_positions(clip.features, skeleton)
        canon = np.asarray(canonicalize(pos, skeleton))
        assert np.abs(rec - canon).max() < 2e-3

    def test_frame0_canonical(self, skeleton, rng):
        pos = _random_motion(rng)
        rec = recover_joint_positions(encode_features(pos, skeleton).features, skeleton)
        assert abs(rec[0, 0, 0]) < 1e-5
        assert abs(rec[0, 0, 2]) < 1e-5

    def test_world_yaw_invariance(self, skeleton, rng):
        """Pre-rotating the whole motion about the up axis changes nothing
        after canonical re-encoding."""
        pos = _random_motion(rng)
        rot = np.asarray(rot_y(1.1))
        turned = pos @ rot.T
        a = encode_features(pos, skeleton).features
        b = encode_features(turned, skeleton).features
        assert np.abs(a - b).max() < 1e-3

    def test_differentiable_recover(self, skeleton):
        feats = torch.randn(6, FEATURE_DIM, requires_grad=True) * 0.1
        feats.retain_grad()
        pos = recover_joint_positions(feats, skeleton)
        pos.sum().backward()
        assert feats.grad is not None
        assert torch.isfinite(feats.grad).all()

    def test_min_frames(self, skeleton):
        with pytest.raises(ContractViolation):
            encode_features(np.zeros((1, 22, 3)), skeleton)

    def test_bad_shape(self, skeleton):
        with pytest.raises(ContractViolation):
            recover_joint_positions(np.zeros((5, 100)), skeleton)

    def test_contacts_on_grounded_feet(self, skeleton):
        # foot joints (last two contact columns) stay planted through a wave;
        # ankles sit above the height gate by construction
        clip = synth_motion("wave", 3, skeleton)
        contacts = clip.features[:, CH_CONTACT]
        assert contacts[:, 2:].mean() > 0.9


class TestRootRelative:
    def test_root_is_zero(self, rng):
        pos = _random_motion(rng)
        rel = np.asarray(to_root_relative(pos))
        np.testing.assert_allclose(rel[:, 0], 0.0, atol=1e-7)

    def test_translation_invariant(self, rng):
        pos = _random_motion(rng)
        shifted = pos + np.array([3.0, -1.0, 2.0])
        np.testing.assert_allclose(
            np.asarray(to_root_relative(pos)), np.asarray(to_root_relative(shifted)), atol=1e-5
        )


class TestProjection:
    def test_scale_linearity(self, rng):
        pos = rng.normal(size=(5, 22, 3))
        base = np.asarray(project(pos, CameraView(1.0, 20.0, 30.0, 10.0)))
        scaled = np.asarray(project(pos, CameraView(2.5, 20.0, 30.0, 10.0)))
        np.testing.assert_allclose(scaled, 2.5 * base, atol=1e-6)

    def test_rotation_oracle(self, rng):
        pos = rng.normal(size=(7, 3))
        cam = CameraView(1.3, 25.0, -40.0, 15.0)
        ry = Rotation.from_euler("y", np.deg2rad(cam.yaw)).as_matrix()
        rx = Rotation.from_euler("x", np.deg2rad(cam.pitch)).as_matrix()
        rz = Rotation.from_euler("z", np.deg2rad(cam.roll)).as_matrix()
        expected = cam.scale * (pos @ (rz @ rx @ ry).T)[:, :2]
        np.testing.assert_allclose(np.asarray(project(pos, cam)), expected, atol=1e-6)

    def test_identity_camera_drops_depth(self, rng):
        pos = rng.normal(size=(4, 3))
        np.testing.assert_allclose(
            np.asarray(project(pos, CameraView())), pos[:, :2], atol=1e-7
        )

    def test_zero_scale_rejected(self):
        with pytest.raises(ContractViolation):
            CameraView(scale=0.0)

    @settings(max_examples=25, deadline=None)
    @given(
        scale=st.floats(0.1, 5.0),
        pitch=st.floats(-80, 80),
        yaw=st.floats(-180, 180),
    )
    def test_projection_is_linear_in_positions(self, scale, pitch, yaw):
        cam = CameraView(scale, pitch, yaw, 0.0)
        a = np.random.default_rng(1).normal(size=(6, 3))
        b = np.random.default_rng(2).normal(size=(6, 3))
        lhs = np.asarray(project(a + b, cam))
        rhs = np.asarray(project(a, cam)) + np.asarray(project(b, cam))
        np.testing.assert_allclose(lhs, rhs, atol=1e-5)


class TestClipIO:
    def test_round_trip(self, tmp_path):
        clip = synth_motion("kick", 5)
        path = tmp_path / "clip.mclip"
        write_clip(path, clip)
        back = read_clip(path)
        np.testing.assert_array_equal(back.features, clip.features)
        assert back.fps == clip.fps

    def test_header_is_json_line(self, tmp_path):
        import json

        path = tmp_path / "c.mclip"
        write_clip(path, synth_motion("bow", 1))
        with open(path, "rb") as fh:
            header = json.loads(fh.readline())
        assert header["n"] == 40 and header["d"] == FEATURE_DIM
        assert header["dtype"] == "f32le"

    def test_truncated_payload_names_path(self, tmp_path):
        path = tmp_path / "broken.mclip"
        write_clip(path, synth_motion("sit", 2))
        data = path.read_bytes()
        path.write_bytes(data[:-8])
        with pytest.raises(ContractViolation, match="broken.mclip"):
            read_clip(path)

    def test_bvh_export(self, tmp_path, skeleton):
        clip = synth_motion("walk", 9)
        path = tmp_path / "out.bvh"
        export_bvh(path, clip, skeleton)
        text = path.read_text()
        assert text.startswith("HIERARCHY")
        assert "MOTION" in text
        assert f"Frames: {clip.n_frames}" in text
        # positional channels only
        assert "Xposition Yposition Zposition" in text
        assert "Xrotation" not in text
