"""Aggregation and selection rules.

This module holds the four decisions every learner makes each round:

* ``fedavg`` — sample-count-weighted averaging of parameter vectors.
* ``weight_divergence`` — relative L2 distance between a peer's update
  and the local one, normalized by the local update's norm.
* ``select_updates`` — keep the updates whose divergence falls below a
  dynamic threshold of median + tolerance * stddev; the learner's own
  update is always kept, so nobody can be excluded from the network.
* ``select_best_models`` — rank candidate models by metric scaled with
  the square root of their popularity and keep the top sqrt(n).

All functions are pure and deterministic; combined with a fixed summation
order they let every learner replicate every peer's aggregation bit for
bit without exchanging the aggregated models themselves.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import TYPE_CHECKING, Sequence

import numpy as np

if TYPE_CHECKING:  # pragma: no cover
    from .dag import UpdateRecord


@dataclass(frozen=True)
class ScoredModel:
    """A selection candidate: higher metric is better, popularity is the
    number of updates aggregated into the model."""

    model_id: str
    metric: float
    popularity: int

    def __post_init__(self):
        if not math.isfinite(self.metric):
            raise ValueError(f"metric must be finite, got {self.metric}")
        if self.popularity < 1:
            raise ValueError(f"popularity must be >= 1, got {self.popularity}")


def fedavg(updates: Sequence[np.ndarray], weights: Sequence[float]) -> np.ndarray:
    """Weighted elementwise mean of parameter vectors.

    Sums left to right in the order given; callers that need bit-exact
    replication across machines must pass updates in a canonical order
    (the DAG sorts by ascending update id).
    """
    if len(updates) == 0:
        raise ValueError("fedavg needs at least one update")
    if len(weights) != len(updates):
        raise ValueError(f"{len(updates)} updates but {len(weights)} weights")
    length = updates[0].shape
    total = 0.0
    for w in weights:
        if not (w > 0 and math.isfinite(w)):
            raise ValueError(f"weights must be positive and finite, got {w}")
        total += float(w)
    result = np.zeros_like(updates[0], dtype=np.float64)
    for vec, w in zip(updates, weights):
        if vec.shape != length:
            raise ValueError(f"update length {vec.shape} != {length}")
        result += vec * (float(w) / total)
    return result


def weight_divergence(local: np.ndarray, peer: np.ndarray) -> float:
    """||peer - local||_2 / ||local||_2."""
    if local.shape != peer.shape:
        raise ValueError(f"length mismatch: {local.shape} vs {peer.shape}")
    local_norm = float(np.linalg.norm(local))
    if local_norm == 0.0:
        raise ValueError("local update has zero norm; divergence undefined")
    return float(np.linalg.norm(peer - local)) / local_norm


def divergence_threshold(divergences: Sequence[float], tolerance: float) -> float:
    """median + population stddev * tolerance over the peer divergences."""
    values = np.asarray(divergences, dtype=np.float64)
    return float(np.median(values)) + float(values.std()) * tolerance


def select_updates(
    my_update: "UpdateRecord",
    peer_updates: Sequence["UpdateRecord"],
    tolerance: float,
) -> list["UpdateRecord"]:
    """Filter peer updates by weight divergence from the local update.

    The local update comes first and is always included. Peers follow in
    received order when their divergence is strictly below the threshold.
    A peer at divergence exactly 0 is byte-identical to the local update
    and is always kept (otherwise the all-identical case, where the
    threshold degenerates to 0, would reject copies of our own model).
    """
    if tolerance < 0:
        raise ValueError(f"tolerance must be >= 0, got {tolerance}")
    selected = [my_update]
    if not peer_updates:
        return selected
    divergences = [weight_divergence(my_update.params, p.params) for p in peer_updates]
    max_div = divergence_threshold(divergences, tolerance)
    for peer, div in zip(peer_updates, divergences):
        if div == 0.0 or div < max_div:
            selected.append(peer)
    return selected


def select_best_models(candidates: Sequence[ScoredModel]) -> list[str]:
    """Top max(1, floor(sqrt(n))) model ids by metric * sqrt(popularity).

    Ties break on ascending model id so every learner ranks identically
    without coordination.
    """
    if not candidates:
        raise ValueError("no candidate models to select from")
    scored = sorted(
        candidates,
        key=lambda c: (-(c.metric * math.sqrt(c.popularity)), c.model_id),
    )
    keep = max(1, math.isqrt(len(candidates)))
    return [c.model_id for c in scored[:keep]]


def normalize_metric(raw: float, kind: str) -> float:
    """Map a raw metric to higher-is-better for model scoring.

    Accuracy passes through; mse maps to 1 / (1 + mse) so 0 error scores
    1.0 and larger errors shrink toward 0.
    """
    if not math.isfinite(raw):
        raise ValueError(f"metric must be finite, got {raw}")
    if kind == "accuracy":
        return raw
    if kind == "mse":
        if raw < 0:
            raise ValueError(f"mse must be >= 0, got {raw}")
        return 1.0 / (1.0 + raw)
    raise ValueError(f"unknown metric kind {kind!r}")
