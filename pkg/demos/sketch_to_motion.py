"""A 2D sketch steering 3D generation: take one synthetic clip, pretend its
projected keypose and foot trajectories are a user sketch, and compare
generation with and without those conditions (and with guided sampling).

    python3 demos/sketch_to_motion.py [--ckpt state.ckpt]

Without a checkpoint this trains a small stack first (~4 min CPU).
"""

import argparse
import tempfile

import numpy as np
import torch

import storymotion as sm
from storymotion import metrics, sampling, synthdata, training
from storymotion.conditions import DIR_FROM_KEYPOSE
from storymotion.guidance import GuidanceConfig
from storymotion.models import GeneratorState, load_checkpoint


def quick_state(root):
    manifest = synthdata.build_dataset(root, seed=0, clips_per_action=8)
    feats, b3s, b2s, actions = training.load_training_set(root, manifest)
    torch.manual_seed(0)
    state = GeneratorState()
    cfg = training.TrainConfig(lr=1e-3, steps=400, batch_size=16)
    training.train_codec(feats, state, cfg)
    training.train_base(feats, actions, state, cfg)
    training.train_generator(feats, b3s, actions, state, cfg)
    training.train_mapper(feats, b3s, b2s, actions, state, cfg)
    state.eval()
    return state


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--ckpt", default=None)
    parser.add_argument("--action", default="walk")
    parser.add_argument("--seed", type=int, default=3)
    args = parser.parse_args()

    with tempfile.TemporaryDirectory() as root:
        if args.ckpt:
            state = GeneratorState()
            load_checkpoint(args.ckpt, state)
            state.eval()
        else:
            print("no checkpoint given; training a small stack first...")
            state = quick_state(root)

        skeleton = sm.default_skeleton()
        camera = sm.CameraView(scale=1.0, pitch=15.0, yaw=0.0, roll=0.0)

        # the "sketch": keypose + both-feet trajectories of a reference clip,
        # projected to the camera plane like strokes on a canvas
        reference = synthdata.synth_motion(args.action, seed=99, skeleton=skeleton)
        _, sketch2d = synthdata.extract_conditions(
            reference, skeleton, camera, DIR_FROM_KEYPOSE,
            traj_joints=(10, 11), t_r=20,
        )
        sketch2d.action_word = args.action
        print(f"sketch: action={args.action!r}, keypose at frame 0, "
              f"2 foot trajectories over 20 frames")

        runs = {
            "action word only": dict(bundle=None, guidance=None),
            "sketch-conditioned": dict(bundle=sketch2d,
                                       guidance=GuidanceConfig(w_c=1.5, k_iters=0)),
            "sketch + guided sampling": dict(bundle=sketch2d,
                                             guidance=GuidanceConfig(w_c=1.5, tau2=1.0,
                                                                     k_iters=4)),
        }
        print(f"{'setup':28s} {'keypose MPJPE':>14s} {'traj Avg.Err':>13s}")
        for name, kw in runs.items():
            if kw["bundle"] is None:
                clip = sampling.generate(state, args.action, seed=args.seed, steps=50)[0]
            else:
                clip = sampling.generate_from_2d(kw["bundle"], args.action, state,
                                                 seed=args.seed, steps=50,
                                                 guidance=kw["guidance"])
            key_err = metrics.mpjpe(clip, reference, sketch2d.keypose_mask)
            traj_err = metrics.avg_traj_err(clip, sketch2d)
            print(f"{name:28s} {key_err:14.4f} {traj_err:13.4f}")
        print("(lower is better; the sketch pins the pose, guidance pins the path)")


if __name__ == "__main__":
    main()
