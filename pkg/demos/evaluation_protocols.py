"""Run the two evaluation protocols over a held-out split and print the
metric tables: Average conditions on all six end-effectors, Cross draws
random end-effector subsets per sample.

    python3 demos/evaluation_protocols.py [--ckpt state.ckpt] [--samples 16]
"""

import argparse
import tempfile

import torch

from storymotion import metrics, synthdata, training
from storymotion.models import GeneratorState, load_checkpoint


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--ckpt", default=None)
    parser.add_argument("--samples", type=int, default=16)
    parser.add_argument("--steps", type=int, default=25)
    parser.add_argument("--with-extractor", action="store_true",
                        help="also train a feature extractor for FID/R-precision")
    args = parser.parse_args()

    with tempfile.TemporaryDirectory() as root:
        manifest = synthdata.build_dataset(root, seed=0, clips_per_action=8)
        feats, _, _, actions = training.load_training_set(root, manifest)

        state = GeneratorState()
        if args.ckpt:
            load_checkpoint(args.ckpt, state)
        else:
            print("no checkpoint given; training a small stack first...")
            torch.manual_seed(0)
            cfg = training.TrainConfig(lr=1e-3, steps=400, batch_size=16)
            training.train_codec(feats, state, cfg)
            training.train_base(feats, actions, state, cfg)
            b3s = training.load_training_set(root, manifest)[1]
            b2s = training.load_training_set(root, manifest)[2]
            training.train_generator(feats, b3s, actions, state, cfg)
            training.train_mapper(feats, b3s, b2s, actions, state, cfg)
        state.eval()

        extractor = None
        if args.with_extractor:
            print("training the evaluation feature extractor...")
            extractor = metrics.train_extractor(feats, actions, steps=400)

        for protocol in ("Average", "Cross"):
            report = metrics.run_protocol(state, root, manifest, protocol=protocol,
                                          seed=0, max_samples=args.samples,
                                          extractor=extractor, steps=args.steps)
            print()
            print(report.render_table())


if __name__ == "__main__":
    main()
