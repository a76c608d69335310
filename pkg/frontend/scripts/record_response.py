"""Record fixtures/golden_response.json: POST the golden bundle to the real
generation service and store the accepted response verbatim.

Usage: python3 record_response.py [--ckpt path/to/state.ckpt]
Without --ckpt a small seeded training run provides the model.
"""

import argparse
import json
import os
import tempfile

from fastapi.testclient import TestClient

HERE = os.path.dirname(os.path.abspath(__file__))
FIXTURES = os.path.join(HERE, "..", "fixtures")


def make_state(ckpt):
    import torch

    from storymotion import synthdata, training
    from storymotion.models import GeneratorState, load_checkpoint

    state = GeneratorState()
    if ckpt:
        load_checkpoint(ckpt, state)
    else:
        torch.manual_seed(1234)
        with tempfile.TemporaryDirectory() as root:
            manifest = synthdata.build_dataset(root, seed=0, clips_per_action=4)
            feats, b3s, b2s, actions = training.load_training_set(root, manifest)
            cfg = training.TrainConfig(lr=1e-3, steps=200, batch_size=8)
            training.train_codec(feats, state, cfg)
            training.train_base(feats, actions, state, cfg)
            training.train_generator(feats, b3s, actions, state, cfg)
            training.train_mapper(feats, b3s, b2s, actions, state, cfg)
    state.eval()
    return state


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--ckpt", default=None)
    parser.add_argument("--steps", type=int, default=25)
    args = parser.parse_args()

    from storymotion.service import create_app

    with open(os.path.join(FIXTURES, "golden_bundle.json")) as fh:
        bundle = json.load(fh)

    state = make_state(args.ckpt)
    with tempfile.TemporaryDirectory() as store:
        client = TestClient(create_app(state, store, sample_steps=args.steps))
        sid = client.post("/v1/sessions").json()["id"]
        r = client.post(
            f"/v1/sessions/{sid}/frames/0/generate",
            json={"bundle": bundle, "action": bundle["action_word"], "seed": 7},
        )
        r.raise_for_status()
        with open(os.path.join(FIXTURES, "golden_response.json"), "w") as out:
            json.dump(r.json(), out)
        print("accepted; wrote golden_response.json, clip", r.json()["clip_id"])


if __name__ == "__main__":
    main()
