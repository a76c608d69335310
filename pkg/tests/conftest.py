import numpy as np
import pytest
import torch

import storymotion as sm
from storymotion import models, synthdata, training


@pytest.fixture(scope="session")
def skeleton():
    return sm.default_skeleton()


@pytest.fixture(scope="session")
def dataset(tmp_path_factory):
    """Small synthetic dataset shared by unit tests: 8 actions x 4 clips."""
    root = str(tmp_path_factory.mktemp("data"))
    manifest = synthdata.build_dataset(root, seed=0, clips_per_action=4)
    return root, manifest


@pytest.fixture(scope="session")
def train_set(dataset):
    root, manifest = dataset
    feats, b3s, b2s, actions = training.load_training_set(root, manifest)
    return {"root": root, "manifest": manifest, "feats": feats,
            "b3s": b3s, "b2s": b2s, "actions": actions}


@pytest.fixture(scope="session")
def micro_state(train_set):
    """Minimally trained pipeline: all stage flags set, quality irrelevant.
    Used by tests that exercise mechanics rather than model quality."""
    torch.manual_seed(1234)
    state = models.GeneratorState()
    cfg = training.TrainConfig(lr=1e-3, steps=40, batch_size=8)
    training.train_codec(train_set["feats"], state, cfg)
    training.train_base(train_set["feats"], train_set["actions"], state, cfg)
    training.train_generator(train_set["feats"], train_set["b3s"], train_set["actions"], state, cfg)
    training.train_mapper(train_set["feats"], train_set["b3s"], train_set["b2s"],
                          train_set["actions"], state, cfg)
    state.eval()
    return state


@pytest.fixture()
def rng():
    return np.random.default_rng(0)
