"""Shared helpers for building small simulation scenarios."""

import pytest

from confed.config import build_config
from confed.harness import build_learners, genesis_for
from confed.node import join_all
from confed.transport import Bus

BASE_PAIRS = {
    "seed": "42",
    "learners": "5",
    "rounds": "4",
    "train.epochs": "2",
    "train.learning_rate": "0.3",
    "train.batch_size": "16",
    "tolerance": "2.0",
    "metric": "accuracy",
    "net.layers": "8,16,3",
    "net.head": "softmax",
    "data.kind": "blobs",
    "data.classes": "3",
    "data.samples_per_class": "150",
    "data.dim": "8",
    "data.spread": "0.08",
    "data.seed": "1",
    "partition.kind": "iid",
}


def make_config(**overrides):
    pairs = dict(BASE_PAIRS)
    for key, value in overrides.items():
        key = key.replace("__", ".")
        if value is None:
            pairs.pop(key, None)
        else:
            pairs[key] = str(value)
    return build_config(pairs)


def boot(config, baseline=False, record_path=None):
    """Learners joined and ready for round 1."""
    bus = Bus(record_path=record_path)
    learners = build_learners(config, bus, baseline=baseline)
    genesis_params, spec_digest = genesis_for(config)
    join_all(learners, genesis_params, spec_digest)
    return bus, learners


@pytest.fixture
def small_config():
    return make_config()
