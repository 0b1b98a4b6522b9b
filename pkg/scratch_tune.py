"""Scratch exploration of acceptance-criteria dynamics (not part of the package)."""

import sys
import time

import numpy as np

from confed.config import build_config
from confed.harness import build_learners, genesis_for
from confed.node import join_all, run_round
from confed.transport import Bus


def run(pairs, rounds, baseline=False):
    config = build_config({k: str(v) for k, v in pairs.items()})
    bus = Bus()
    learners = build_learners(config, bus, baseline=baseline)
    gp, digest = genesis_for(config)
    join_all(learners, gp, digest)
    history = []
    for round_no in range(1, rounds + 1):
        outcomes = run_round(learners, round_no)
        history.append(outcomes)
    return config, learners, history


def crit5_pairs(seed, tol, lr, dseed, spread=0.12, epochs=2):
    return dict(
        seed=seed, learners=9, rounds=25, tolerance=tol, metric="accuracy",
        **{
            "train.epochs": epochs, "train.learning_rate": lr, "train.batch_size": 16,
            "net.layers": "8,24,9", "net.head": "softmax",
            "data.kind": "blobs", "data.classes": 9, "data.samples_per_class": 300,
            "data.dim": 8, "data.spread": spread, "data.seed": dseed,
            "partition.kind": "class_subsets", "partition.subsets": 3,
        },
    )


def crit5_scan():
    print("== criterion 5 scan: varying geometry and tolerance ==")
    hits = []
    for dseed in [11, 21, 31, 41, 51]:
        for tol in [1.1, 1.25, 1.5, 1.75]:
            for lr in [0.5, 0.7]:
                for seed in [1, 2]:
                    pairs = crit5_pairs(seed, tol, lr, dseed)
                    _, learners, history = run(pairs, 25)
                    actives = [h[0].active_model_count for h in history]
                    tail = actives[-5:]
                    final_acc = [m.value for o in history[-1] for m in o.metrics]
                    tag = f"dseed={dseed} tol={tol} lr={lr} seed={seed}"
                    if all(a == 3 for a in tail):
                        hits.append(tag)
                        print(f"HIT  {tag}: {actives} min={min(final_acc):.2f}")
                    else:
                        print(f"     {tag}: tail={tail} min={min(final_acc):.2f}")
    print("hits:", hits)


if __name__ == "__main__":
    crit5_scan()
