"""Shared fixtures: small seeded bundles and fast configs."""
import numpy as np
import pytest

from synthgen import DenseSceneSpec, SynthSpec, make_image_wide
from uno_config import DenseConfig, TrainConfig


@pytest.fixture
def rng():
    return np.random.default_rng(42)


@pytest.fixture
def toy_spec():
    return SynthSpec(seed=0, n_train=120, n_val=60, n_test=60, n_negatives=120, n_near=60, n_far=60)


@pytest.fixture
def toy_bundle(toy_spec):
    return make_image_wide(toy_spec)


@pytest.fixture
def dense_spec():
    return SynthSpec(
        seed=0, n_train=30, n_val=15, n_test=15, n_negatives=30, n_near=15, n_far=15,
        dense=DenseSceneSpec(height=8, width=8, patch_side=(2, 3), n_train=6, n_test=4),
    )


@pytest.fixture
def fast_cfg():
    return TrainConfig(
        seed=0, hidden=[16], feature_dim=8, batch_size=24,
        closed_steps=60, finetune_steps=40, joint_steps=20, step2_steps=20, naive_steps=20, ood_head_steps=20,
        flow_layers=2, flow_hidden=16, flow_pretrain_steps=10, flow_batch_size=32,
        log_every=10, collapse_samples=64,
    )


@pytest.fixture
def fast_dense_cfg():
    return DenseConfig(
        seed=0, num_queries=4, pixel_hidden=8, embed_dim=8, mask_dim=8,
        closed_steps=6, finetune_steps=6, scenes_per_step=1,
        flow_layers=2, flow_hidden=8, flow_steps=4, flow_batch_size=32, log_every=0,
    )
