"""End-to-end walkthrough: build a synthetic corpus, train the full stack,
generate one clip per storyboard frame, blend them into a single animation,
and export BVH for any standard viewer.

    python3 demos/storyboard_to_animation.py            # quick (~4 min CPU)
    python3 demos/storyboard_to_animation.py --full     # benchmark-size training
    python3 demos/storyboard_to_animation.py --ckpt state.ckpt   # skip training
"""

import argparse
import os
import tempfile
import time

import torch

import storymotion as sm
from storymotion import sampling, synthdata, training
from storymotion.guidance import BlendConfig, GuidanceConfig, compose_storyboard
from storymotion.models import GeneratorState, load_checkpoint, save_checkpoint
from storymotion.motion import export_bvh, write_clip

QUICK = [("codec", 400), ("base", 400), ("generator", 400), ("mapper", 300)]
FULL = [("codec", 6000), ("base", 2500), ("generator", 4500), ("mapper", 2500)]


def train_stack(root, manifest, budgets):
    feats, b3s, b2s, actions = training.load_training_set(root, manifest)
    torch.manual_seed(0)
    state = GeneratorState()
    for stage, steps in budgets:
        cfg = training.TrainConfig(lr=1e-3, steps=steps, batch_size=16)
        t0 = time.time()
        if stage == "codec":
            training.train_codec(feats, state, cfg)
        elif stage == "base":
            training.train_base(feats, actions, state, cfg)
        elif stage == "generator":
            training.train_generator(feats, b3s, actions, state, cfg)
        else:
            training.train_mapper(feats, b3s, b2s, actions, state, cfg)
        print(f"  {stage}: {steps} steps in {time.time() - t0:.0f}s")
    state.eval()
    return state


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--ckpt", default=None, help="reuse a trained checkpoint")
    parser.add_argument("--full", action="store_true", help="benchmark-size training")
    parser.add_argument("--out", default="demo_out", help="output directory")
    args = parser.parse_args()
    os.makedirs(args.out, exist_ok=True)

    with tempfile.TemporaryDirectory() as data_root:
        if args.ckpt:
            state = GeneratorState()
            load_checkpoint(args.ckpt, state)
            state.eval()
            print(f"loaded {args.ckpt}")
        else:
            print("building synthetic corpus (8 actions x 8 clips)...")
            manifest = synthdata.build_dataset(data_root, seed=0, clips_per_action=8)
            print("training the four stages...")
            state = train_stack(data_root, manifest, FULL if args.full else QUICK)
            save_checkpoint(os.path.join(args.out, "state.ckpt"), state,
                            {"model": vars(state.cfg)})

        # a three-beat storyboard: walk in, jump, bow out
        storyboard = ["walk", "jump", "bow"]
        print(f"storyboard: {' -> '.join(storyboard)}")
        guidance = GuidanceConfig(w_c=1.5, k_iters=0)
        clips = []
        for i, action in enumerate(storyboard):
            clip = sampling.generate(state, action, seed=10 + i, steps=50,
                                     guidance=guidance)[0]
            clips.append(clip)
            path = os.path.join(args.out, f"frame{i}_{action}.clip")
            write_clip(path, clip)
            print(f"  frame {i}: {action} -> {path} ({clip.n_frames} frames)")

        print("blending transitions through latent inversion...")
        blended = compose_storyboard(clips, storyboard, BlendConfig(ladder=25), state)
        bvh_path = os.path.join(args.out, "storyboard.bvh")
        export_bvh(bvh_path, blended, sm.default_skeleton())
        write_clip(os.path.join(args.out, "storyboard.clip"), blended)
        print(f"done: {blended.n_frames} frames -> {bvh_path}")


if __name__ == "__main__":
    main()
